"""Labeled scene sampling for the pairing benchmark.

A scene for the N-K problem holds 2N non-overlapping symbols drawn from
types 1..K on a square canvas (76 px for N < 6, 96 px otherwise). The
label is true iff every type occurs an even number of times, i.e. the
symbols can be paired up by type without reuse.

Everything is a pure function of (spec, seed, index): a sample can be
regenerated bit-identically at any time from its provenance, which is what
makes seed-list datasets, parallel workers and error inspection work.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import glyphs
from .glyphs import DEFAULT_CONFIG, GlyphConfig, PlacementError
from .rng import Stream

# Domain tags keep the per-purpose streams of one (seed, index) disjoint.
_DOMAIN_SCENE = 101
_DOMAIN_CROP = 202

MAX_GLYPH_PX = 18
CROP_SIZE = 24


def derive_image_size(n_pairs: int) -> int:
    return 76 if n_pairs < 6 else 96


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters for the N-K problem."""

    n_pairs: int
    k_types: int
    image_size: int = 0  # 0 -> derived from n_pairs
    margin: int = 1
    # Fixed by Monte-Carlo: 8 max-size glyphs on 76x76 at margin 1 place
    # within this budget in > 99.99% of 20k trials (0 failures observed).
    max_place_attempts: int = 4000
    glyph_config: GlyphConfig = field(default=DEFAULT_CONFIG)

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if not 1 <= self.k_types <= glyphs.NUM_SYMBOLS:
            raise ValueError(f"k_types must be in 1..{glyphs.NUM_SYMBOLS}, got {self.k_types}")
        if self.image_size == 0:
            object.__setattr__(self, "image_size", derive_image_size(self.n_pairs))
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        # Feasibility: 2N worst-case glyphs (18 px + margin) must fit by area.
        cell = MAX_GLYPH_PX + self.margin
        usable = self.image_size - 2 * self.margin
        if usable < MAX_GLYPH_PX or 2 * self.n_pairs * cell * cell > usable * usable:
            raise ValueError(
                f"image_size {self.image_size} cannot hold {2 * self.n_pairs} "
                f"glyphs of {MAX_GLYPH_PX} px with margin {self.margin}"
            )


@dataclass(frozen=True)
class Sample:
    """One rendered scene plus full provenance."""

    image: np.ndarray  # (H, W) float32 in [0, 1]
    label: int  # 1 = pairable, 0 = not
    placements: tuple[tuple[int, int, tuple[int, int]], ...]  # (type, variation, (x, y))
    seed: int
    index: int


def is_pairable(types) -> bool:
    """True iff the type multiset admits a perfect same-type pairing.

    Equivalent to every multiplicity being even (pair greedily within each
    type).
    """
    types = list(types)
    if len(types) % 2 != 0:
        raise ValueError(f"multiset size must be even, got {len(types)}")
    return all(c % 2 == 0 for c in Counter(types).values())


def sample_types(spec: SceneSpec, label: bool, stream: Stream) -> list[int]:
    """Draw a 2N-type multiset whose pairability equals `label`.

    True scenes: N i.i.d. uniform types, each duplicated. False scenes:
    2N i.i.d. uniform types, redrawn until some count is odd.
    """
    k, n = spec.k_types, spec.n_pairs
    if label:
        picked = [1 + stream.randint(k) for _ in range(n)]
        return [t for t in picked for _ in (0, 1)]
    if k < 2:
        raise ValueError("a false scene needs k_types >= 2")
    while True:
        types = [1 + stream.randint(k) for _ in range(2 * n)]
        if not is_pairable(types):
            return types


# A glyph that fails this many draws in a row likely has no free region
# left; placement starts over from an empty canvas (still within budget).
_STUCK_LIMIT = 64


def place(bbox_dims: list[tuple[int, int]], spec: SceneSpec, stream: Stream) -> list[tuple[int, int]]:
    """Place integer bbox rectangles uniformly with >= margin separation.

    Rejection sampling with a per-scene attempt budget. Dead-end partial
    layouts are discarded and placement restarts, so the result is uniform
    over layouts reachable by sequential uniform placement. Raises
    PlacementError when the budget runs out (the caller resamples the whole
    scene).
    """
    size, m = spec.image_size, spec.margin
    budget = spec.max_place_attempts
    for w, h in bbox_dims:
        if size - m - w < m or size - m - h < m:
            raise PlacementError(f"bbox {w}x{h} cannot fit canvas {size} with margin {m}")
    attempts = 0
    while True:
        placed: list[tuple[int, int, int, int]] = []
        restart = False
        for w, h in bbox_dims:
            fails = 0
            while True:
                if attempts >= budget:
                    raise PlacementError(
                        f"placement budget {budget} exhausted after "
                        f"{len(placed)} of {len(bbox_dims)} glyphs"
                    )
                attempts += 1
                x = m + stream.randint(size - 2 * m - w + 1)
                y = m + stream.randint(size - 2 * m - h + 1)
                ok = True
                for (px, py, pw, ph) in placed:
                    if x < px + pw + m and px < x + w + m and y < py + ph + m and py < y + h + m:
                        ok = False
                        break
                if ok:
                    placed.append((x, y, w, h))
                    break
                fails += 1
                if fails >= _STUCK_LIMIT:
                    restart = True
                    break
            if restart:
                break
        if not restart:
            return [(x, y) for (x, y, _, _) in placed]


def _int_dims(glyph: glyphs.Glyph) -> tuple[int, int]:
    return (int(math.ceil(glyph.width - 1e-9)), int(math.ceil(glyph.height - 1e-9)))


def generate_sample(spec: SceneSpec, seed: int, index: int) -> Sample:
    """Pure map (spec, seed, index) -> Sample; label balanced 50/50."""
    stream = Stream(_DOMAIN_SCENE, seed, index)
    label = stream.bernoulli(0.5)
    cfg = spec.glyph_config
    while True:
        types = sample_types(spec, label, stream)
        chosen = [(t, stream.randint(glyphs.cardinality(t, cfg))) for t in types]
        gs = [glyphs.instantiate(t, v, cfg) for t, v in chosen]
        try:
            positions = place([_int_dims(g) for g in gs], spec, stream)
        except PlacementError:
            continue  # resample the whole scene from the same stream
        image = np.zeros((spec.image_size, spec.image_size), dtype=np.float32)
        for (t, v), pos in zip(chosen, positions):
            glyphs.render_symbol(image, t, v, pos, cfg)
        placements = tuple((t, v, pos) for (t, v), pos in zip(chosen, positions))
        return Sample(image, int(label), placements, seed, index)


def sample_batch(spec: SceneSpec, seed: int, start_index: int, count: int):
    """Images/labels arrays for indices [start, start+count)."""
    images = np.zeros((count, spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        s = generate_sample(spec, seed, start_index + i)
        images[i] = s.image
        labels[i] = s.label
    return images, labels


# --------------------------------------------------------------------------
# Single-symbol crops (the separability probe's data)
# --------------------------------------------------------------------------

def crop_sample(seed: int, index: int, config: GlyphConfig = DEFAULT_CONFIG):
    """One centered single-symbol 24x24 crop: (image, type id in 1..18)."""
    stream = Stream(_DOMAIN_CROP, seed, index)
    t = 1 + stream.randint(glyphs.NUM_SYMBOLS)
    v = stream.randint(glyphs.cardinality(t, config))
    glyph = glyphs.instantiate(t, v, config)
    w, h = _int_dims(glyph)
    image = np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.float32)
    glyphs.render_symbol(image, t, v, ((CROP_SIZE - w) // 2, (CROP_SIZE - h) // 2), config)
    return image, t


def symbol_crop_stream(seed: int, config: GlyphConfig = DEFAULT_CONFIG,
                       start: int = 0) -> Iterator[tuple[np.ndarray, int]]:
    """Infinite deterministic stream of (crop image, type id)."""
    index = start
    while True:
        yield crop_sample(seed, index, config)
        index += 1


def crop_batch(seed: int, start_index: int, count: int,
               config: GlyphConfig = DEFAULT_CONFIG):
    images = np.zeros((count, CROP_SIZE, CROP_SIZE), dtype=np.float32)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        img, t = crop_sample(seed, start_index + i, config)
        images[i] = img
        labels[i] = t - 1  # class index
    return images, labels


# --------------------------------------------------------------------------
# Uniqueness audit
# --------------------------------------------------------------------------

def uniqueness_log10_lower_bound(spec: SceneSpec) -> float:
    """log10 of a conservative lower bound on distinct samples.

    Counts one maximally-diverse pairable type multiset (types 1..min(N,K)
    duplicated), its variation tuples treated as unordered (divide by
    (2N)!), times non-overlapping placements on a coarse grid of cells
    (choosing distinct cell sets guarantees distinct images).
    """
    cfg = spec.glyph_config
    n_glyphs = 2 * spec.n_pairs
    types = []
    for i in range(spec.n_pairs):
        t = 1 + (i % spec.k_types)
        types += [t, t]
    log_variations = sum(math.log10(glyphs.cardinality(t, cfg)) for t in types)
    cell = MAX_GLYPH_PX + spec.margin
    g = ((spec.image_size - 2 * spec.margin) // cell) ** 2
    if g < n_glyphs:
        return 0.0
    log_positions = (math.lgamma(g + 1) - math.lgamma(n_glyphs + 1)
                     - math.lgamma(g - n_glyphs + 1)) / math.log(10)
    log_order = math.lgamma(n_glyphs + 1) / math.log(10)
    return log_variations + log_positions - log_order
