"""The spatial type-histogram network and its flatten ablation.

The model scores every receptive field against learned "type" kernels via
1x1 convolutions, superposes the branch outputs, applies a set of spatial
diversity operations (identity / pooling), sums each result over the
spatial extent, and classifies the concatenated per-channel totals with a
small fully-connected stack:

    conv stack (Elu + batch norm, no conv bias)
    T = sum_i A_i(Conv1x1_i(C))
    Y = concat([sum_{w,h} Spatial_i(T) for each spatial op])
    fc stack (Elu + batch norm; final layer is width-2 identity)
    probabilities = softmax(Y)

The flatten ablation replaces the type/aggregation stage by flattening the
conv output straight into the fc stack (with the third conv forced to
stride 2), which makes the parameter count input-size dependent; the
histogram model's does not.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .neural import (Activation, BatchNorm, Conv2d, Dense, Flatten, Layer,
                     Param, Pool, ShapeError, SpatialSum, softmax)
from .rng import Stream

SPATIAL_OPS = ("identity", "maxpool3", "maxpool5", "avgpool3", "avgpool5")

DEFAULT_CONV_SPEC = ((128, 3, 1), (128, 5, 2), (128, 5, 1), (128, 3, 1))


def _make_spatial(name: str) -> Layer | None:
    if name not in SPATIAL_OPS:
        raise ValueError(f"unknown spatial op {name!r}; choose from {SPATIAL_OPS}")
    if name == "identity":
        return None
    return Pool(name[:3], int(name[-1]), stride=1, pad=0, name=name)


@dataclass(frozen=True)
class TypeNetConfig:
    """Complete architecture description.

    fc widths follow m, m//2, m//4, ..., 2 with m = n_spatial * n_features,
    regardless of ablation (the flatten ablation only changes the first fc
    layer's input width).
    """

    conv_spec: tuple[tuple[int, int, int], ...] = DEFAULT_CONV_SPEC
    n_fc_layers: int = 4
    type_branches: int = 2
    n_features: int = 64
    branch_activation: str = "identity"
    conv_activation: str = "elu"
    fc_activation: str = "elu"
    spatial_ops: tuple[str, ...] = ("identity", "maxpool3", "maxpool5")
    wide: bool = False
    ablation: str = "typenet"
    input_channels: int = 1
    output_classes: int = 2

    def __post_init__(self):
        if self.ablation not in ("typenet", "flatten_convnet"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.n_fc_layers < 1:
            raise ValueError("need at least one fc layer")
        for op in self.spatial_ops:
            if op not in SPATIAL_OPS:
                raise ValueError(f"unknown spatial op {op!r}")
        if len(self.conv_spec) < 1:
            raise ValueError("need at least one conv layer")

    @property
    def n_conv_layers(self) -> int:
        return len(self.conv_spec)

    @property
    def n_spatial(self) -> int:
        return len(self.spatial_ops)

    @property
    def feature_width(self) -> int:
        """m = N_s x n, the aggregated feature width."""
        return self.n_spatial * self.n_features

    @property
    def fc_widths(self) -> tuple[int, ...]:
        m = self.feature_width
        return tuple(m // (2 ** i) for i in range(self.n_fc_layers - 1)) + (self.output_classes,)

    @property
    def effective_conv_spec(self) -> tuple[tuple[int, int, int], ...]:
        """conv_spec with the wide / ablation stride-2 rule applied to Conv3."""
        spec = [list(s) for s in self.conv_spec]
        if (self.wide or self.ablation == "flatten_convnet") and len(spec) >= 3:
            spec[2][2] = 2
        return tuple(tuple(s) for s in spec)

    def to_dict(self) -> dict:
        return {
            "conv_spec": [list(s) for s in self.conv_spec],
            "n_fc_layers": self.n_fc_layers,
            "type_branches": self.type_branches,
            "n_features": self.n_features,
            "branch_activation": self.branch_activation,
            "conv_activation": self.conv_activation,
            "fc_activation": self.fc_activation,
            "spatial_ops": list(self.spatial_ops),
            "wide": self.wide,
            "ablation": self.ablation,
            "input_channels": self.input_channels,
            "output_classes": self.output_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TypeNetConfig":
        return cls(
            conv_spec=tuple(tuple(s) for s in d["conv_spec"]),
            n_fc_layers=d["n_fc_layers"],
            type_branches=d["type_branches"],
            n_features=d["n_features"],
            branch_activation=d["branch_activation"],
            conv_activation=d["conv_activation"],
            fc_activation=d["fc_activation"],
            spatial_ops=tuple(d["spatial_ops"]),
            wide=d["wide"],
            ablation=d["ablation"],
            input_channels=d["input_channels"],
            output_classes=d.get("output_classes", 2),
        )


def _out_size(size: int, stride: int) -> int:
    return -(-size // stride)


def conv_shape_trace(cfg: TypeNetConfig, image_hw: tuple[int, int]) -> list[tuple[str, tuple[int, ...]]]:
    """Per-layer (name, output shape) for the conv stack; raises ShapeError
    with the full trace if a dimension collapses."""
    h, w = image_hw
    c = cfg.input_channels
    trace: list[tuple[str, tuple[int, ...]]] = [("input", (c, h, w))]
    for i, (f, k, s) in enumerate(cfg.effective_conv_spec):
        h, w = _out_size(h, s), _out_size(w, s)
        trace.append((f"conv{i + 1}", (f, h, w)))
        if h < 1 or w < 1:
            raise ShapeError(f"conv stack collapsed the image: {trace}")
        c = f
    for op in cfg.spatial_ops:
        if op != "identity" and cfg.ablation == "typenet":
            size = int(op[-1])
            if h < size or w < size:
                raise ShapeError(f"spatial op {op} window {size} exceeds map {h}x{w}: {trace}")
    return trace


class TypeNetModel:
    """Built network with explicit forward/backward, suitable for Adam."""

    def __init__(self, cfg: TypeNetConfig, image_hw: tuple[int, int], seed: int,
                 dtype=np.float32):
        self.cfg = cfg
        self.image_hw = tuple(image_hw)
        self.seed = seed
        self.dtype = dtype
        self.trace = conv_shape_trace(cfg, image_hw)

        def init_stream(name: str) -> Stream:
            return Stream("init", seed, name)

        self.conv_layers: list[tuple[Conv2d, Activation, BatchNorm]] = []
        c_in = cfg.input_channels
        for i, (f, k, s) in enumerate(cfg.effective_conv_spec):
            name = f"conv{i + 1}"
            self.conv_layers.append((
                Conv2d(name, c_in, f, k, s, init_stream(name), bias=False, dtype=dtype,
                       need_dx=i > 0),
                Activation(cfg.conv_activation, f"{name}.act"),
                BatchNorm(f"{name}.bn", f, dtype=dtype),
            ))
            c_in = f
        conv_c, conv_h, conv_w = self.trace[-1][1]

        self.flatten: Flatten | None = None
        self.branches: list[tuple[Conv2d, Activation]] = []
        self.spatial: list[tuple[Layer | None, SpatialSum]] = []
        if cfg.ablation == "flatten_convnet":
            self.flatten = Flatten()
            fc_in = conv_c * conv_h * conv_w
        else:
            for j in range(cfg.type_branches):
                name = f"type{j + 1}"
                self.branches.append((
                    Conv2d(name, conv_c, cfg.n_features, 1, 1, init_stream(name),
                           bias=True, dtype=dtype),
                    Activation(cfg.branch_activation, f"{name}.act"),
                ))
            for op in cfg.spatial_ops:
                self.spatial.append((_make_spatial(op), SpatialSum()))
            fc_in = cfg.feature_width

        self.fc_layers: list[tuple[Dense, Activation | None, BatchNorm | None]] = []
        widths = cfg.fc_widths
        prev = fc_in
        for i, width in enumerate(widths):
            name = f"fc{i + 1}"
            last = i == len(widths) - 1
            self.fc_layers.append((
                Dense(name, prev, width, init_stream(name), bias=True, dtype=dtype),
                None if last else Activation(cfg.fc_activation, f"{name}.act"),
                None if last else BatchNorm(f"{name}.bn", width, dtype=dtype),
            ))
            prev = width

    # -- parameter plumbing -------------------------------------------------

    def layers(self) -> list[Layer]:
        out: list[Layer] = []
        for conv, act, bn in self.conv_layers:
            out += [conv, act, bn]
        for conv, act in self.branches:
            out += [conv, act]
        for op, ssum in self.spatial:
            out += ([op] if op is not None else []) + [ssum]
        if self.flatten is not None:
            out.append(self.flatten)
        for dense, act, bn in self.fc_layers:
            out += [dense] + ([act] if act else []) + ([bn] if bn else [])
        return out

    def params(self) -> list[Param]:
        return [p for layer in self.layers() for p in layer.params()]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value for p in self.params()}
        for layer in self.layers():
            out.update(layer.state())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for p in self.params():
            p.value[...] = arrays[p.name]
        for layer in self.layers():
            for key, arr in layer.state().items():
                arr[...] = arrays[key]

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x):
        h, w = self.image_hw
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels or x.shape[2:] != (h, w):
            raise ShapeError(
                f"expected images (batch, {self.cfg.input_channels}, {h}, {w}), "
                f"got {x.shape}; conv trace {self.trace}")

    def forward_logits(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._check_input(x)
        x = x.astype(self.dtype, copy=False)
        # layers run channels-last; for 1-channel input this is a free reshape
        if x.shape[1] == 1:
            c = x.reshape(x.shape[0], x.shape[2], x.shape[3], 1)
        else:
            c = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        for conv, act, bn in self.conv_layers:
            c = bn.forward(act.forward(conv.forward(c, train), train), train)
        if self.flatten is not None:
            y = self.flatten.forward(c, train)
        else:
            t = None
            for conv, act in self.branches:
                z = act.forward(conv.forward(c, train), train)
                t = z if t is None else t + z
            self._t_shape = t.shape
            parts = []
            for op, ssum in self.spatial:
                z = op.forward(t, train) if op is not None else t
                parts.append(ssum.forward(z, train))
            y = np.concatenate(parts, axis=1)
        for dense, act, bn in self.fc_layers:
            y = dense.forward(y, train)
            if act is not None:
                y = bn.forward(act.forward(y, train), train)
        return y

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Class probabilities (batch, classes); rows sum to 1."""
        return softmax(self.forward_logits(x, train))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for dense, act, bn in reversed(self.fc_layers):
            if act is not None:
                d = act.backward(bn.backward(d))
            d = dense.backward(d)
        if self.flatten is not None:
            dc = self.flatten.backward(d)
        else:
            n = self.cfg.n_features
            dt = np.zeros(self._t_shape, dtype=d.dtype)
            for i, (op, ssum) in enumerate(self.spatial):
                dz = ssum.backward(d[:, i * n:(i + 1) * n])
                dt += op.backward(dz) if op is not None else dz
            dc = None
            for conv, act in self.branches:
                db = conv.backward(act.backward(dt))
                dc = db if dc is None else dc + db
        for conv, act, bn in reversed(self.conv_layers):
            dc = conv.backward(act.backward(bn.backward(dc)))
        return dc


def build(cfg: TypeNetConfig, image_hw: tuple[int, int], seed: int = 0,
          dtype=np.float32) -> TypeNetModel:
    return TypeNetModel(cfg, image_hw, seed, dtype)


def aggregate(t: np.ndarray, spatial_ops: tuple[str, ...]) -> np.ndarray:
    """Standalone aggregation: per spatial op, apply then sum over (h, w),
    and concatenate along channels. (B, n, h, w) -> (B, len(ops) * n)."""
    t = np.ascontiguousarray(np.asarray(t).transpose(0, 2, 3, 1))  # channels-last
    parts = []
    for name in spatial_ops:
        op = _make_spatial(name)
        z = op.forward(t, train=False) if op is not None else t
        parts.append(z.sum(axis=(1, 2)))
    return np.concatenate(parts, axis=1)


# --------------------------------------------------------------------------
# Independent parameter audit
# --------------------------------------------------------------------------

def audit_parameter_count(cfg: TypeNetConfig, image_hw: tuple[int, int]) -> int:
    """Closed-form trainable-parameter count from the config arithmetic.

    Kept independent of the built model: conv weights (no bias) + 2 BN
    terms per conv feature, 1x1 branch convs with bias, dense W+b, and 2 BN
    terms per hidden fc width.
    """
    total = 0
    c = cfg.input_channels
    h, w = image_hw
    for (f, k, s) in cfg.effective_conv_spec:
        total += f * c * k * k + 2 * f
        c = f
        h, w = _out_size(h, s), _out_size(w, s)
    if cfg.ablation == "flatten_convnet":
        fc_in = c * h * w
    else:
        total += cfg.type_branches * (cfg.n_features * c + cfg.n_features)
        fc_in = cfg.feature_width
    prev = fc_in
    widths = cfg.fc_widths
    for i, width in enumerate(widths):
        total += prev * width + width
        if i < len(widths) - 1:
            total += 2 * width
        prev = width
    return total


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------

_DESK_CONV = ((32, 3, 1), (32, 5, 2), (32, 5, 1), (32, 3, 1))


def presets() -> dict[str, TypeNetConfig]:
    base = TypeNetConfig()
    return {
        # published configurations: [n-]Activations[-w]
        "I": replace(base, type_branches=1, branch_activation="identity"),
        "II": base,
        "SmSm": replace(base, branch_activation="softmax"),
        "SeSe": replace(base, branch_activation="selu"),
        "96-II-w": replace(base, n_features=96, wide=True),
        "128-III": replace(base, n_features=128, type_branches=3),
        "flatten-convnet": replace(base, ablation="flatten_convnet"),
        "enhanced-parallel-pool": replace(
            base, spatial_ops=("identity", "maxpool3", "maxpool5", "maxpool3", "avgpool3")),
        # reduced configurations for cpu-scale runs
        "desk": replace(base, conv_spec=_DESK_CONV, n_features=16),
        "desk-flatten": replace(base, conv_spec=_DESK_CONV, n_features=16,
                                ablation="flatten_convnet"),
        "tiny": TypeNetConfig(conv_spec=((4, 3, 1), (4, 3, 2)), n_features=4,
                              spatial_ops=("identity", "maxpool3")),
        # 18-way single-symbol classifier for the separability probe
        "probe18": TypeNetConfig(conv_spec=((16, 3, 2), (24, 3, 2), (32, 3, 2)),
                                 ablation="flatten_convnet", n_fc_layers=2,
                                 n_features=32, spatial_ops=("identity",),
                                 output_classes=18),
    }


def get_preset(name: str) -> TypeNetConfig:
    table = presets()
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(table))}")
    return table[name]
