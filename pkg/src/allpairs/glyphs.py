"""The 18 symbol families: variation spaces, instantiation, rasterization.

Each family is a small set of stroke primitives (segments, circles, arcs,
dots) in a local frame. A variation index enumerates, row-major, the
family's discrete (rotation, scale, shape...) grid. Instantiation rotates
the base geometry, then rescales it so the tight ink bounding box (geometry
plus stroke half-width) has its longest side exactly equal to the chosen
target size in [scale_min, scale_max] pixels, and finally translates the
box's min corner to (0, 0). Stroke width and dot radius are fixed ink
constants that do not scale with the symbol.

Rasterization is anti-aliased: analytic signed-distance coverage for
circles, arcs and dots, capsule-distance coverage with a 1-pixel falloff
for segments. Rotation always happens in continuous coordinates, never by
image resampling. Everything here is pure and deterministic.

Default step counts reproduce the cardinality of every family in the
benchmark's published table (circle 165, line 174, ..., triangle 11.8k);
all counts can be overridden through :class:`GlyphConfig` or a JSON file,
see `load_glyph_config`.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .rng import Stream

SYMBOL_NAMES = (
    "circle", "line", "cross", "angle", "3-star", "theta", "phi",
    "2-circle", "circle-3star", "box", "box-diagonal", "barbell",
    "dot-line", "z", "triangle-lid", "dot-mid-line", "hourglass",
    "triangle",
)

NUM_SYMBOLS = len(SYMBOL_NAMES)  # 18

_TWO_PI = 2.0 * math.pi


class VariationIndexError(ValueError):
    """Variation index outside [0, cardinality)."""

    def __init__(self, type_id: int, index: int, cardinality: int):
        self.type_id = type_id
        self.index = index
        self.cardinality = cardinality
        super().__init__(
            f"variation index {index} out of range for symbol {type_id} "
            f"({SYMBOL_NAMES[type_id - 1]}): cardinality {cardinality}"
        )


class PlacementError(ValueError):
    """Glyph does not fit on the canvas at the requested origin."""


@dataclass(frozen=True)
class SymbolType:
    id: int
    name: str


def symbol_type(type_id: int) -> SymbolType:
    if not 1 <= type_id <= NUM_SYMBOLS:
        raise ValueError(f"symbol id must be in 1..{NUM_SYMBOLS}, got {type_id}")
    return SymbolType(type_id, SYMBOL_NAMES[type_id - 1])


# --------------------------------------------------------------------------
# Stroke primitives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StrokePrimitive:
    """One stroke: kind in {segment, arc, full-circle, dot}.

    geometry:
      segment     (x0, y0, x1, y1)
      full-circle (cx, cy, r)
      arc         (cx, cy, r, a0, a1)   angles in radians, CCW from a0 to a1
      dot         (cx, cy, r)           filled disk
    """

    kind: str
    geometry: tuple[float, ...]
    stroke_width: float

    def __post_init__(self):
        if self.stroke_width <= 0:
            raise ValueError(f"stroke_width must be > 0, got {self.stroke_width}")
        if self.kind in ("full-circle", "arc") and self.geometry[2] <= 0:
            raise ValueError(f"{self.kind} radius must be > 0, got {self.geometry[2]}")
        if self.kind == "dot" and self.geometry[2] < 1.0:
            raise ValueError(f"dot radius must be >= 1 px, got {self.geometry[2]}")
        if self.kind not in ("segment", "arc", "full-circle", "dot"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")


def _seg(x0, y0, x1, y1, w) -> StrokePrimitive:
    return StrokePrimitive("segment", (x0, y0, x1, y1), w)


def _rotate(p: StrokePrimitive, theta: float) -> StrokePrimitive:
    c, s = math.cos(theta), math.sin(theta)

    def rot(x, y):
        return (c * x - s * y, s * x + c * y)

    g = p.geometry
    if p.kind == "segment":
        return StrokePrimitive(p.kind, rot(g[0], g[1]) + rot(g[2], g[3]), p.stroke_width)
    if p.kind in ("full-circle", "dot"):
        return StrokePrimitive(p.kind, rot(g[0], g[1]) + (g[2],), p.stroke_width)
    # arc: rotate center, shift angular span
    return StrokePrimitive(p.kind, rot(g[0], g[1]) + (g[2], g[3] + theta, g[4] + theta), p.stroke_width)


def _scale_geometry(p: StrokePrimitive, k: float) -> StrokePrimitive:
    """Scale coordinates and curve radii; ink constants stay fixed."""
    g = p.geometry
    if p.kind == "segment":
        return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k, g[3] * k), p.stroke_width)
    if p.kind == "full-circle":
        return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k), p.stroke_width)
    if p.kind == "dot":
        return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2]), p.stroke_width)
    return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k, g[3], g[4]), p.stroke_width)


def _scale_all(p: StrokePrimitive, k: float) -> StrokePrimitive:
    """Scale everything including stroke width and dot radius (for supersampling)."""
    g = p.geometry
    if p.kind == "segment":
        return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k, g[3] * k), p.stroke_width * k)
    if p.kind in ("full-circle", "dot"):
        return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k), p.stroke_width * k)
    return StrokePrimitive(p.kind, (g[0] * k, g[1] * k, g[2] * k, g[3], g[4]), p.stroke_width * k)


def _translate(p: StrokePrimitive, dx: float, dy: float) -> StrokePrimitive:
    g = p.geometry
    if p.kind == "segment":
        return StrokePrimitive(p.kind, (g[0] + dx, g[1] + dy, g[2] + dx, g[3] + dy), p.stroke_width)
    return StrokePrimitive(p.kind, (g[0] + dx, g[1] + dy) + g[2:], p.stroke_width)


def _arc_curve_bbox(cx, cy, r, a0, a1):
    """Tight bbox of the arc curve itself (no stroke padding)."""
    span = (a1 - a0) % _TWO_PI
    if span == 0.0:
        span = _TWO_PI
    xs = [cx + r * math.cos(a0), cx + r * math.cos(a0 + span)]
    ys = [cy + r * math.sin(a0), cy + r * math.sin(a0 + span)]
    # axis-aligned extremes reached inside the angular span
    k0 = math.ceil(a0 / (math.pi / 2))
    a = k0 * math.pi / 2
    while a <= a0 + span + 1e-12:
        xs.append(cx + r * math.cos(a))
        ys.append(cy + r * math.sin(a))
        a += math.pi / 2
    return min(xs), min(ys), max(xs), max(ys)


def primitive_bbox(p: StrokePrimitive):
    """Tight ink bounds: geometry extent plus stroke half-width."""
    h = p.stroke_width / 2.0
    g = p.geometry
    if p.kind == "segment":
        return (min(g[0], g[2]) - h, min(g[1], g[3]) - h,
                max(g[0], g[2]) + h, max(g[1], g[3]) + h)
    if p.kind == "full-circle":
        e = g[2] + h
        return (g[0] - e, g[1] - e, g[0] + e, g[1] + e)
    if p.kind == "dot":
        return (g[0] - g[2], g[1] - g[2], g[0] + g[2], g[1] + g[2])
    x0, y0, x1, y1 = _arc_curve_bbox(*g)
    return (x0 - h, y0 - h, x1 + h, y1 + h)


def _union_bbox(prims: Iterable[StrokePrimitive]):
    boxes = [primitive_bbox(p) for p in prims]
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


@dataclass(frozen=True)
class Glyph:
    """An instantiated symbol. bbox min corner is (0, 0); max side in [10, 18]."""

    primitives: tuple[StrokePrimitive, ...]
    bbox: tuple[float, float, float, float]

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]


EMPTY_GLYPH = Glyph((), (0.0, 0.0, 0.0, 0.0))


# --------------------------------------------------------------------------
# Family definitions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeParam:
    name: str
    steps: int
    lo: float
    hi: float

    def value(self, i: int) -> float:
        if self.steps == 1:
            return 0.5 * (self.lo + self.hi)
        return self.lo + (self.hi - self.lo) * i / (self.steps - 1)


@dataclass(frozen=True)
class Family:
    id: int
    name: str
    rotation_steps: int
    rotation_period: float  # radians covered by the rotation grid
    scale_steps: int
    shape_params: tuple[ShapeParam, ...]
    builder: Callable[..., list]


def _deg(d):
    return math.radians(d)


# Builders get (config, values-dict) and return primitives in a local frame.
# sw = stroke width; dr = dot radius (both in final pixels, size-invariant).

def _b_circle(cfg, v):
    return [StrokePrimitive("full-circle", (0.0, 0.0, 0.5), cfg.stroke_width)]


def _b_line(cfg, v):
    return [_seg(-0.5, 0.0, 0.5, 0.0, cfg.stroke_width)]


def _b_cross(cfg, v):
    d = v["arm-angle"]
    return [_seg(-0.5, 0.0, 0.5, 0.0, cfg.stroke_width),
            _seg(-0.5 * math.cos(d), -0.5 * math.sin(d),
                 0.5 * math.cos(d), 0.5 * math.sin(d), cfg.stroke_width)]


def _b_angle(cfg, v):
    d = v["opening"] / 2.0
    return [_seg(0.0, 0.0, math.cos(d), math.sin(d), cfg.stroke_width),
            _seg(0.0, 0.0, math.cos(-d), math.sin(-d), cfg.stroke_width)]


def _rays(angles, r, w):
    return [_seg(0.0, 0.0, r * math.cos(a), r * math.sin(a), w) for a in angles]


def _b_3star(cfg, v):
    g1, g2 = v["gap-1"], v["gap-2"]
    return _rays((0.0, g1, g1 + g2), 0.5, cfg.stroke_width)


def _b_theta(cfg, v):
    o = v["chord-offset"]
    xc = math.sqrt(max(0.25 - o * o, 1e-9))
    return [StrokePrimitive("full-circle", (0.0, 0.0, 0.5), cfg.stroke_width),
            _seg(-xc, o, xc, o, cfg.stroke_width)]


def _b_phi(cfg, v):
    r = v["ring-radius"]
    return [StrokePrimitive("full-circle", (0.0, 0.0, r), cfg.stroke_width),
            _seg(0.0, -0.5, 0.0, 0.5, cfg.stroke_width)]


def _b_2circle(cfg, v):
    q = v["radius-split"]
    r1, r2 = 0.5 * q, 0.5 * (1.0 - q)
    return [StrokePrimitive("full-circle", (-0.5 + r1, 0.0, r1), cfg.stroke_width),
            StrokePrimitive("full-circle", (0.5 - r2, 0.0, r2), cfg.stroke_width)]


def _b_circle3star(cfg, v):
    g1, g2 = v["gap-1"], v["gap-2"]
    prims = [StrokePrimitive("full-circle", (0.0, 0.0, 0.5), cfg.stroke_width)]
    prims += _rays((0.0, g1, g1 + g2), 0.5, cfg.stroke_width)
    return prims


def _poly(points, w, close=True):
    segs = []
    n = len(points)
    last = n if close else n - 1
    for i in range(last):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        segs.append(_seg(x0, y0, x1, y1, w))
    return segs


def _b_box(cfg, v):
    return _poly([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)], cfg.stroke_width)


def _b_box_diagonal(cfg, v):
    return _b_box(cfg, v) + [_seg(-0.5, -0.5, 0.5, 0.5, cfg.stroke_width)]


def _b_barbell(cfg, v):
    return [_seg(-0.5, 0.0, 0.5, 0.0, cfg.stroke_width),
            StrokePrimitive("dot", (-0.5, 0.0, cfg.dot_radius), 2 * cfg.dot_radius),
            StrokePrimitive("dot", (0.5, 0.0, cfg.dot_radius), 2 * cfg.dot_radius)]


def _b_dot_line(cfg, v):
    return [_seg(-0.5, 0.0, 0.5, 0.0, cfg.stroke_width),
            StrokePrimitive("dot", (0.5, 0.0, cfg.dot_radius), 2 * cfg.dot_radius)]


def _b_z(cfg, v):
    return [_seg(-0.5, 0.35, 0.5, 0.35, cfg.stroke_width),
            _seg(0.5, 0.35, -0.5, -0.35, cfg.stroke_width),
            _seg(-0.5, -0.35, 0.5, -0.35, cfg.stroke_width)]


def _b_triangle_lid(cfg, v):
    tri = _poly([(0.0, 0.38), (-0.5, -0.45), (0.5, -0.45)], cfg.stroke_width)
    return tri + [_seg(-0.33, 0.55, 0.33, 0.55, cfg.stroke_width)]


def _b_dot_mid_line(cfg, v):
    return [_seg(-0.5, 0.0, 0.5, 0.0, cfg.stroke_width),
            StrokePrimitive("dot", (0.0, 0.0, cfg.dot_radius), 2 * cfg.dot_radius)]


def _b_hourglass(cfg, v):
    return [_seg(-0.5, 0.4, 0.5, 0.4, cfg.stroke_width),
            _seg(-0.5, -0.4, 0.5, -0.4, cfg.stroke_width),
            _seg(-0.5, 0.4, 0.5, -0.4, cfg.stroke_width),
            _seg(0.5, 0.4, -0.5, -0.4, cfg.stroke_width)]


def _b_triangle(cfg, v):
    w = math.tan(v["apex-angle"] / 2.0)
    return _poly([(0.0, 0.5), (-w, -0.5), (w, -0.5)], cfg.stroke_width)


# Step counts are chosen so the per-family cardinality (rotations x scales
# x shape steps) matches the benchmark table exactly:
#   165, 174, 45.3k, 39k, 1.43M, 20k, 20k, 7k, 7.15M,
#   480, 518, 78, 156, 518, 1036, 78, 518, 11.8k
FAMILIES: tuple[Family, ...] = (
    Family(1, "circle", 1, _TWO_PI, 165, (), _b_circle),
    Family(2, "line", 29, math.pi, 6, (), _b_line),
    Family(3, "cross", 151, math.pi, 10,
           (ShapeParam("arm-angle", 30, _deg(50), _deg(130)),), _b_cross),
    Family(4, "angle", 100, _TWO_PI, 10,
           (ShapeParam("opening", 39, _deg(30), _deg(120)),), _b_angle),
    Family(5, "3-star", 100, _TWO_PI, 10,
           (ShapeParam("gap-1", 26, _deg(40), _deg(140)),
            ShapeParam("gap-2", 55, _deg(40), _deg(140))), _b_3star),
    Family(6, "theta", 100, _TWO_PI, 10,
           (ShapeParam("chord-offset", 20, -0.15, 0.15),), _b_theta),
    Family(7, "phi", 100, _TWO_PI, 10,
           (ShapeParam("ring-radius", 20, 0.25, 0.40),), _b_phi),
    Family(8, "2-circle", 50, _TWO_PI, 10,
           (ShapeParam("radius-split", 14, 0.35, 0.65),), _b_2circle),
    Family(9, "circle-3star", 100, _TWO_PI, 10,
           (ShapeParam("gap-1", 55, _deg(40), _deg(140)),
            ShapeParam("gap-2", 130, _deg(40), _deg(140))), _b_circle3star),
    Family(10, "box", 48, math.pi / 2, 10, (), _b_box),
    Family(11, "box-diagonal", 74, math.pi, 7, (), _b_box_diagonal),
    Family(12, "barbell", 13, math.pi, 6, (), _b_barbell),
    Family(13, "dot-line", 26, _TWO_PI, 6, (), _b_dot_line),
    Family(14, "z", 74, math.pi, 7, (), _b_z),
    Family(15, "triangle-lid", 148, _TWO_PI, 7, (), _b_triangle_lid),
    Family(16, "dot-mid-line", 13, math.pi, 6, (), _b_dot_mid_line),
    Family(17, "hourglass", 74, math.pi, 7, (), _b_hourglass),
    Family(18, "triangle", 59, _TWO_PI, 10,
           (ShapeParam("apex-angle", 20, _deg(40), _deg(80)),), _b_triangle),
)

assert tuple(f.name for f in FAMILIES) == SYMBOL_NAMES


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySteps:
    rotation_steps: int
    scale_steps: int
    shape_steps: tuple[int, ...]


@dataclass(frozen=True)
class GlyphConfig:
    """All tunable generator constants. Hashable; safe as a cache key.

    JSON override file keys (all optional):
      stroke_width, dot_radius, scale_min, scale_max  -- floats
      families: {"<name>": {"rotation_steps": int, "scale_steps": int,
                            "shape_steps": {"<param>": int, ...}}}
    """

    stroke_width: float = 1.5
    dot_radius: float = 1.4
    scale_min: float = 10.0
    scale_max: float = 18.0
    family_steps: tuple[FamilySteps, ...] = tuple(
        FamilySteps(f.rotation_steps, f.scale_steps, tuple(p.steps for p in f.shape_params))
        for f in FAMILIES
    )

    def steps_for(self, type_id: int) -> FamilySteps:
        return self.family_steps[type_id - 1]


DEFAULT_CONFIG = GlyphConfig()


def load_glyph_config(path) -> GlyphConfig:
    """Build a GlyphConfig from a JSON override file (defaults filled in)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return glyph_config_from_dict(raw)


def glyph_config_from_dict(raw: dict) -> GlyphConfig:
    base = DEFAULT_CONFIG
    fam_over = raw.get("families", {})
    unknown = set(fam_over) - set(SYMBOL_NAMES)
    if unknown:
        raise ValueError(f"unknown family names in glyph config: {sorted(unknown)}")
    steps = []
    for fam, cur in zip(FAMILIES, base.family_steps):
        o = fam_over.get(fam.name, {})
        shape = list(cur.shape_steps)
        for pname, count in o.get("shape_steps", {}).items():
            names = [p.name for p in fam.shape_params]
            if pname not in names:
                raise ValueError(f"family {fam.name} has no shape param {pname!r}")
            shape[names.index(pname)] = int(count)
        steps.append(FamilySteps(int(o.get("rotation_steps", cur.rotation_steps)),
                                 int(o.get("scale_steps", cur.scale_steps)),
                                 tuple(shape)))
    return GlyphConfig(
        stroke_width=float(raw.get("stroke_width", base.stroke_width)),
        dot_radius=float(raw.get("dot_radius", base.dot_radius)),
        scale_min=float(raw.get("scale_min", base.scale_min)),
        scale_max=float(raw.get("scale_max", base.scale_max)),
        family_steps=tuple(steps),
    )


def glyph_config_to_dict(cfg: GlyphConfig) -> dict:
    return {
        "stroke_width": cfg.stroke_width,
        "dot_radius": cfg.dot_radius,
        "scale_min": cfg.scale_min,
        "scale_max": cfg.scale_max,
        "families": {
            fam.name: {
                "rotation_steps": st.rotation_steps,
                "scale_steps": st.scale_steps,
                "shape_steps": {p.name: n for p, n in zip(fam.shape_params, st.shape_steps)},
            }
            for fam, st in zip(FAMILIES, cfg.family_steps)
        },
    }


# --------------------------------------------------------------------------
# Variation space and instantiation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VariationSpace:
    """Discrete variation grid of one family.

    Enumeration is row-major over [rotation, scale, shape params...] with
    rotation slowest: index = ((rot * S + scale) * P1 + p1) * P2 + p2 ...
    """

    type_id: int
    rotation_steps: int
    scale_steps: int
    shape_params: tuple[tuple[str, int], ...]

    @property
    def cardinality(self) -> int:
        n = self.rotation_steps * self.scale_steps
        for _, s in self.shape_params:
            n *= s
        return n

    def decompose(self, index: int) -> tuple[int, int, tuple[int, ...]]:
        if not 0 <= index < self.cardinality:
            raise VariationIndexError(self.type_id, index, self.cardinality)
        shape_idx = []
        for _, s in reversed(self.shape_params):
            index, i = divmod(index, s)
            shape_idx.append(i)
        index, i_scale = divmod(index, self.scale_steps)
        return index, i_scale, tuple(reversed(shape_idx))


def variation_space(type_id: int, config: GlyphConfig = DEFAULT_CONFIG) -> VariationSpace:
    symbol_type(type_id)  # validates id
    fam = FAMILIES[type_id - 1]
    st = config.steps_for(type_id)
    return VariationSpace(
        type_id,
        st.rotation_steps,
        st.scale_steps,
        tuple((p.name, n) for p, n in zip(fam.shape_params, st.shape_steps)),
    )


def cardinality(type_id: int, config: GlyphConfig = DEFAULT_CONFIG) -> int:
    return variation_space(type_id, config).cardinality


def _bbox_maxdim(prims) -> float:
    x0, y0, x1, y1 = _union_bbox(prims)
    return max(x1 - x0, y1 - y0)


def _normalize(prims, target: float):
    """Scale geometry so the ink bbox max side == target; min corner -> (0,0).

    Ink margins (stroke half-width, dot radius) do not scale, so the size
    is solved by bisection on the geometry scale factor; the extent is
    strictly increasing in it.
    """
    lo, hi = 1e-9, 1.0
    while _bbox_maxdim([_scale_geometry(p, hi) for p in prims]) < target:
        hi *= 2.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if _bbox_maxdim([_scale_geometry(p, mid) for p in prims]) < target:
            lo = mid
        else:
            hi = mid
    k = 0.5 * (lo + hi)
    scaled = [_scale_geometry(p, k) for p in prims]
    x0, y0, x1, y1 = _union_bbox(scaled)
    moved = tuple(_translate(p, -x0, -y0) for p in scaled)
    return Glyph(moved, (0.0, 0.0, x1 - x0, y1 - y0))


@functools.lru_cache(maxsize=100_000)
def _instantiate_cached(type_id: int, index: int, config: GlyphConfig) -> Glyph:
    fam = FAMILIES[type_id - 1]
    space = variation_space(type_id, config)
    i_rot, i_scale, shape_idx = space.decompose(index)

    st = config.steps_for(type_id)
    values = {}
    for p, n, i in zip(fam.shape_params, st.shape_steps, shape_idx):
        values[p.name] = ShapeParam(p.name, n, p.lo, p.hi).value(i)

    prims = fam.builder(config, values)
    theta = fam.rotation_period * i_rot / st.rotation_steps
    if theta != 0.0:
        prims = [_rotate(p, theta) for p in prims]

    if st.scale_steps == 1:
        target = 0.5 * (config.scale_min + config.scale_max)
    else:
        target = config.scale_min + (config.scale_max - config.scale_min) * i_scale / (st.scale_steps - 1)
    return _normalize(prims, target)


def instantiate(type_id: int, index: int, config: GlyphConfig = DEFAULT_CONFIG) -> Glyph:
    """Pure map (type, variation index) -> Glyph."""
    symbol_type(type_id)
    return _instantiate_cached(type_id, index, config)


# --------------------------------------------------------------------------
# Rasterization
# --------------------------------------------------------------------------

def _ink_distance(p: StrokePrimitive, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Signed distance from pixel centers to the primitive's ink boundary.

    Negative inside the ink. For strokes this is distance-to-centerline
    minus the stroke half-width; for dots, distance-to-center minus radius.
    """
    g = p.geometry
    h = p.stroke_width / 2.0
    if p.kind == "segment":
        x0, y0, x1, y1 = g
        dx, dy = x1 - x0, y1 - y0
        den = dx * dx + dy * dy
        px, py = xs - x0, ys - y0
        if den == 0.0:
            d = np.hypot(px, py)
        else:
            t = np.clip((px * dx + py * dy) / den, 0.0, 1.0)
            d = np.hypot(px - t * dx, py - t * dy)
        return d - h
    if p.kind == "full-circle":
        return np.abs(np.hypot(xs - g[0], ys - g[1]) - g[2]) - h
    if p.kind == "dot":
        return np.hypot(xs - g[0], ys - g[1]) - g[2]
    # arc
    cx, cy, r, a0, a1 = g
    span = (a1 - a0) % _TWO_PI
    if span == 0.0:
        span = _TWO_PI
    px, py = xs - cx, ys - cy
    rho = np.hypot(px, py)
    ang = (np.arctan2(py, px) - a0) % _TWO_PI
    d_curve = np.abs(rho - r)
    e0x, e0y = cx + r * math.cos(a0), cy + r * math.sin(a0)
    e1x, e1y = cx + r * math.cos(a0 + span), cy + r * math.sin(a0 + span)
    d_ends = np.minimum(np.hypot(xs - e0x, ys - e0y), np.hypot(xs - e1x, ys - e1y))
    return np.where(ang <= span, d_curve, d_ends) - h


# Pixel-area integration grid: distance-based coverage with a 1-pixel
# falloff at quarter-pixel scale, averaged over a 4x4 subpixel grid. This
# keeps the kernel analytic and deterministic while making it stable under
# supersampling refinement (caps and curved edges included).
_SUBPIXEL = (-0.375, -0.125, 0.125, 0.375)


def _coverage(p: StrokePrimitive, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Per-pixel ink coverage in [0,1]; xs/ys are pixel-center coordinate grids."""
    acc = np.zeros_like(xs)
    for oy in _SUBPIXEL:
        for ox in _SUBPIXEL:
            d = _ink_distance(p, xs + ox, ys + oy)
            acc += np.clip(0.5 - 4.0 * d, 0.0, 1.0)
    return acc / 16.0


def rasterize(glyph: Glyph, canvas: np.ndarray, origin: tuple[int, int]) -> None:
    """Max-composite a glyph onto `canvas` with its bbox corner at `origin`.

    origin is (x, y) in integer pixels. Only pixels inside the glyph bbox
    padded by 1 px are touched. Raises PlacementError if the bbox does not
    fit on the canvas.
    """
    if not glyph.primitives:
        return
    H, W = canvas.shape
    ix, iy = origin
    if ix != int(ix) or iy != int(iy):
        raise PlacementError(f"origin must be integer pixels, got {origin}")
    ix, iy = int(ix), int(iy)
    if ix < 0 or iy < 0 or ix + glyph.width > W + 1e-9 or iy + glyph.height > H + 1e-9:
        raise PlacementError(
            f"glyph bbox {glyph.width:.2f}x{glyph.height:.2f} at {origin} "
            f"does not fit canvas {W}x{H}"
        )
    patch = render_patch(glyph)
    _paste_max(canvas, patch, ix - 1, iy - 1)


def render_patch(glyph: Glyph) -> np.ndarray:
    """Render a glyph into its own minimal patch (bbox padded by 1 px).

    The patch origin is at bbox corner minus (1, 1); pasting the patch with
    np.maximum at (origin - 1) is exactly equivalent to direct rasterization
    because placement is integer-aligned.

    Per-primitive coverage is evaluated on one 4x fine grid and
    box-reduced, which is the same integral as the subpixel form of
    `_coverage` but in a single vector pass.
    """
    pw = int(math.ceil(glyph.width - 1e-9)) + 2
    ph = int(math.ceil(glyph.height - 1e-9)) + 2
    f = 4
    xs = (np.arange(pw * f, dtype=np.float64) + 0.5) / f - 1.0
    ys = (np.arange(ph * f, dtype=np.float64) + 0.5) / f - 1.0
    X, Y = np.meshgrid(xs, ys)
    patch = np.zeros((ph, pw), dtype=np.float64)
    for p in glyph.primitives:
        cov = np.clip(0.5 - f * _ink_distance(p, X, Y), 0.0, 1.0)
        np.maximum(patch, cov.reshape(ph, f, pw, f).mean(axis=(1, 3)), out=patch)
    return patch.astype(np.float32)


@functools.lru_cache(maxsize=150_000)
def _render_patch_cached(type_id: int, index: int, config: GlyphConfig) -> np.ndarray:
    patch = render_patch(instantiate(type_id, index, config))
    patch.flags.writeable = False
    return patch


def _paste_max(canvas: np.ndarray, patch: np.ndarray, x: int, y: int) -> None:
    ph, pw = patch.shape
    H, W = canvas.shape
    sy, sx = max(0, -y), max(0, -x)
    ey, ex = min(ph, H - y), min(pw, W - x)
    if sy >= ey or sx >= ex:
        return
    region = canvas[y + sy:y + ey, x + sx:x + ex]
    np.maximum(region, patch[sy:ey, sx:ex], out=region)


def render_symbol(canvas: np.ndarray, type_id: int, index: int,
                  origin: tuple[int, int], config: GlyphConfig = DEFAULT_CONFIG) -> None:
    """Cached-glyph fast path used by the scene generator."""
    patch = _render_patch_cached(type_id, index, config)
    _paste_max(canvas, patch, origin[0] - 1, origin[1] - 1)


def supersampled_reference(glyph: Glyph, factor: int = 4) -> np.ndarray:
    """AA oracle: render each primitive at `factor`x resolution with the
    same renderer, box-downsample its coverage, then max-composite at the
    coarse level exactly as `rasterize` does.

    Composition happens per primitive because the production renderer's
    contract is per-pixel max over strokes; supersampling the whole glyph
    instead would measure the (different) union composition at stroke
    junctions rather than the kernel's accuracy.
    """
    pw = int(math.ceil(glyph.width - 1e-9)) + 2
    ph = int(math.ceil(glyph.height - 1e-9)) + 2
    # the coarse patch spans [-1, pw-1] in glyph coordinates, so the glyph
    # origin is at fine pixel (factor, factor)
    xs = np.arange(pw * factor, dtype=np.float64) + 0.5 - factor
    ys = np.arange(ph * factor, dtype=np.float64) + 0.5 - factor
    X, Y = np.meshgrid(xs, ys)
    out = np.zeros((ph, pw), dtype=np.float64)
    for p in glyph.primitives:
        fine = _coverage(_scale_all(p, factor), X, Y)
        coarse = fine.reshape(ph, factor, pw, factor).mean(axis=(1, 3))
        np.maximum(out, coarse, out=out)
    return out


# --------------------------------------------------------------------------
# Contact sheets
# --------------------------------------------------------------------------

def render_sheet(type_ids: list[int], per_type: int, seed: int,
                 config: GlyphConfig = DEFAULT_CONFIG, cell: int = 24) -> np.ndarray:
    """Grid of sampled variations, one row per type: uint8 grayscale image."""
    sheet = np.zeros((len(type_ids) * cell, per_type * cell), dtype=np.float32)
    for row, t in enumerate(type_ids):
        card = cardinality(t, config)
        stream = Stream("sheet", seed, t)
        for col in range(per_type):
            v = stream.randint(card)
            glyph = instantiate(t, v, config)
            cw = int(math.ceil(glyph.width - 1e-9))
            ch = int(math.ceil(glyph.height - 1e-9))
            ox = col * cell + (cell - cw) // 2
            oy = row * cell + (cell - ch) // 2
            rasterize(glyph, sheet, (ox, oy))
    return np.rint(sheet * 255.0).astype(np.uint8)
