"""The three classifiers: MLP, Spline-KAN and RBF-KAN.

All parameters of a model live in one flat float64 vector; a layout table
maps named per-layer tensors to contiguous slices of it. Forward passes
return logits plus a cache; `backward` consumes the cache and returns the
flat parameter gradient (aligned with the layout) and the gradient w.r.t.
the input batch. Gradients are hand-derived, there is no autograd.

Layer equations
---------------
MLP layer:        y = relu_or_id(x) stacking of affine maps, ReLU hidden.
Spline-KAN layer: y = silu(x) @ Wb.T + B(x) @ (scaler * Ws).T
                  where B(x) stacks the 8 B-spline basis values per input
                  feature and the spline path reads the raw activation.
RBF-KAN layer:    z = layernorm(x); phi_j(z) = exp(-((z - c_j)/h)^2) over 8
                  fixed centers; y = phi(z) @ Wr.T + x @ Wa.T + b  (base
                  path is a plain affine map on the un-normalized input).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError, InternalError
from .numerics import RngStream, relu, relu_backward, silu, silu_backward
from .splines import (
    SplineGrid,
    basis_from_lower,
    bspline_basis_lower,
    derivative_from_lower,
)

KIND_MLP = "mlp"
KIND_SPLINE = "spline_kan"
KIND_RBF = "rbf_kan"
MODEL_KINDS = (KIND_MLP, KIND_SPLINE, KIND_RBF)

# Reference architectures for the three model kinds
MLP_WIDTHS = (784, 200, 200, 10)
KAN_WIDTHS = (784, 24, 24, 10)

_LN_EPS = 1e-12  # float64; keeps normalized variance exact to ~1e-12


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    layer_widths: tuple[int, ...]
    grid_size: int = 5
    spline_order: int = 3
    grid_range: tuple[float, float] = (-1.0, 1.0)
    num_centers: int = 8
    rbf_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if len(self.layer_widths) < 2:
            raise ConfigurationError("need at least input and output widths")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def spline_grid(self) -> SplineGrid:
        lo, hi = self.grid_range
        return SplineGrid(self.grid_size, self.spline_order, lo, hi)

    def rbf_centers(self) -> np.ndarray:
        lo, hi = self.rbf_range
        return np.linspace(lo, hi, self.num_centers)

    def rbf_bandwidth(self) -> float:
        lo, hi = self.rbf_range
        return (hi - lo) / (self.num_centers - 1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_widths": list(self.layer_widths),
            "grid_size": self.grid_size,
            "spline_order": self.spline_order,
            "grid_range": list(self.grid_range),
            "num_centers": self.num_centers,
            "rbf_range": list(self.rbf_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            kind=d["kind"],
            layer_widths=tuple(d["layer_widths"]),
            grid_size=int(d["grid_size"]),
            spline_order=int(d["spline_order"]),
            grid_range=tuple(d["grid_range"]),
            num_centers=int(d["num_centers"]),
            rbf_range=tuple(d["rbf_range"]),
        )


def default_config(kind: str) -> ModelConfig:
    """Reference architecture for `kind` (MLP [784,200,200,10], KANs [784,24,24,10])."""
    widths = MLP_WIDTHS if kind == KIND_MLP else KAN_WIDTHS
    return ModelConfig(kind=kind, layer_widths=widths)


def build_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """Ordered (name, shape, offset) table for the flat parameter vector."""
    layout = []
    offset = 0

    def add(name, shape):
        nonlocal offset
        layout.append((name, tuple(shape), offset))
        offset += int(np.prod(shape))

    c = config.grid_size + config.spline_order
    widths = config.layer_widths
    for l, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
        if config.kind == KIND_MLP:
            add(f"l{l}.weight", (o, i))
            add(f"l{l}.bias", (o,))
        elif config.kind == KIND_SPLINE:
            add(f"l{l}.base_weight", (o, i))
            add(f"l{l}.spline_weight", (o, i, c))
            add(f"l{l}.spline_scaler", (o, i))
        else:
            add(f"l{l}.ln_gain", (i,))
            add(f"l{l}.ln_bias", (i,))
            add(f"l{l}.rbf_weight", (o, i, config.num_centers))
            add(f"l{l}.base_weight", (o, i))
            add(f"l{l}.base_bias", (o,))
    return layout


def param_count(config: ModelConfig) -> int:
    layout = build_layout(config)
    name, shape, offset = layout[-1]
    return offset + int(np.prod(shape))


@dataclass
class ModelState:
    """Architecture descriptor plus flat parameter vector.

    `params` is the single source of truth; `view(name)` returns a reshaped
    view into it, so in-place updates of `params` are visible through views.
    """

    config: ModelConfig
    params: np.ndarray
    layout: list[tuple[str, tuple[int, ...], int]] = field(default=None)

    def __post_init__(self):
        if self.layout is None:
            self.layout = build_layout(self.config)
        expected = param_count(self.config)
        if self.params.shape != (expected,):
            raise InternalError(
                f"params length {self.params.shape} != expected ({expected},)"
            )
        self._index = {name: (shape, off) for name, shape, off in self.layout}

    def view(self, name: str) -> np.ndarray:
        shape, off = self._index[name]
        return self.params[off : off + int(np.prod(shape))].reshape(shape)

    def clone(self) -> "ModelState":
        return ModelState(self.config, self.params.copy(), list(self.layout))


class _GradWriter:
    """Accumulates named tensor gradients into one flat vector."""

    def __init__(self, state: ModelState):
        self.flat = np.zeros_like(state.params)
        self._index = state._index

    def set(self, name: str, value: np.ndarray):
        shape, off = self._index[name]
        self.flat[off : off + int(np.prod(shape))] = value.reshape(-1)


# ---------------------------------------------------------------------------
# initialization


def init_params(config: ModelConfig, rng: RngStream) -> ModelState:
    """Deterministic parameter initialization.

    MLP: Kaiming-uniform fan-in weights, zero bias. Spline-KAN: uniform
    1/sqrt(fan_in) base weights and scalers, small-noise spline coefficients.
    RBF-KAN: clipped-normal spline weights at 1/sqrt(fan_in*centers) scale,
    uniform base weights, zero biases, layernorm gain 1 / bias 0.
    """
    state = ModelState(config, np.zeros(param_count(config)))
    gen = rng.child("init", config.kind).gen
    widths = config.layer_widths
    for l, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
        if config.kind == KIND_MLP:
            bound = np.sqrt(6.0 / i)
            state.view(f"l{l}.weight")[:] = gen.uniform(-bound, bound, (o, i))
        elif config.kind == KIND_SPLINE:
            bound = 1.0 / np.sqrt(i)
            c = config.grid_size + config.spline_order
            state.view(f"l{l}.base_weight")[:] = gen.uniform(-bound, bound, (o, i))
            state.view(f"l{l}.spline_weight")[:] = gen.normal(
                0.0, 0.1 / np.sqrt(c), (o, i, c)
            )
            state.view(f"l{l}.spline_scaler")[:] = gen.uniform(-bound, bound, (o, i))
        else:
            state.view(f"l{l}.ln_gain")[:] = 1.0
            scale = 1.0 / np.sqrt(i * config.num_centers)
            raw = gen.normal(0.0, scale, (o, i, config.num_centers))
            state.view(f"l{l}.rbf_weight")[:] = np.clip(raw, -2 * scale, 2 * scale)
            bound = 1.0 / np.sqrt(i)
            state.view(f"l{l}.base_weight")[:] = gen.uniform(-bound, bound, (o, i))
    return state


# ---------------------------------------------------------------------------
# forward passes


def _check_batch(config: ModelConfig, batch: np.ndarray):
    if batch.ndim != 2 or batch.shape[1] != config.layer_widths[0]:
        raise ConfigurationError(
            f"batch shape {batch.shape} incompatible with input width "
            f"{config.layer_widths[0]}"
        )


def mlp_forward(state: ModelState, batch: np.ndarray):
    _check_batch(state.config, batch)
    x = batch
    layers = []
    n = state.config.n_layers
    for l in range(n):
        w = state.view(f"l{l}.weight")
        b = state.view(f"l{l}.bias")
        pre = x @ w.T + b
        layers.append({"x": x, "pre": pre})
        x = relu(pre) if l < n - 1 else pre
    return x, {"kind": KIND_MLP, "layers": layers, "state_id": id(state)}


def spline_kan_forward(state: ModelState, batch: np.ndarray):
    _check_batch(state.config, batch)
    grid = state.config.spline_grid()
    x = batch
    layers = []
    for l in range(state.config.n_layers):
        wb = state.view(f"l{l}.base_weight")
        ws = state.view(f"l{l}.spline_weight")
        sc = state.view(f"l{l}.spline_scaler")
        bsz, i = x.shape
        o, _, c = ws.shape
        lower = bspline_basis_lower(x, grid)  # degree order-1, reused by backward
        bas = basis_from_lower(x, grid, lower)  # (b, i, c)
        ws_scaled = ws * sc[:, :, None]
        y = silu(x) @ wb.T + bas.reshape(bsz, i * c) @ ws_scaled.reshape(o, i * c).T
        layers.append({"x": x, "basis": bas, "lower": lower})
        x = y
    return x, {"kind": KIND_SPLINE, "layers": layers, "state_id": id(state)}


def _layernorm(x: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    zhat = (x - mu) * inv
    return zhat, inv


def rbf_kan_forward(state: ModelState, batch: np.ndarray):
    _check_batch(state.config, batch)
    cfg = state.config
    centers = cfg.rbf_centers()
    h = cfg.rbf_bandwidth()
    x = batch
    layers = []
    for l in range(cfg.n_layers):
        gain = state.view(f"l{l}.ln_gain")
        lnb = state.view(f"l{l}.ln_bias")
        wr = state.view(f"l{l}.rbf_weight")
        wa = state.view(f"l{l}.base_weight")
        bb = state.view(f"l{l}.base_bias")
        bsz, i = x.shape
        o = wr.shape[0]
        zhat, inv = _layernorm(x)
        z = zhat * gain + lnb
        u = (z[:, :, None] - centers) / h
        phi = np.exp(-(u**2))  # (b, i, centers)
        y = phi.reshape(bsz, -1) @ wr.reshape(o, -1).T + x @ wa.T + bb
        layers.append({"x": x, "zhat": zhat, "inv": inv, "z": z, "phi": phi, "u": u})
        x = y
    return x, {"kind": KIND_RBF, "layers": layers, "state_id": id(state)}


_FORWARD = {
    KIND_MLP: mlp_forward,
    KIND_SPLINE: spline_kan_forward,
    KIND_RBF: rbf_kan_forward,
}


def forward(state: ModelState, batch: np.ndarray):
    """Dispatch to the forward pass for state.config.kind."""
    return _FORWARD[state.config.kind](state, batch)


# ---------------------------------------------------------------------------
# backward passes


def backward(state: ModelState, cache: dict, grad_logits: np.ndarray):
    """Gradient of the (already reduced) loss w.r.t. all parameters and input.

    `grad_logits` is dL/dlogits from the loss; returns (flat_param_grad,
    grad_input) with the flat gradient aligned with state.layout.
    """
    if cache.get("state_id") != id(state) or cache.get("kind") != state.config.kind:
        raise InternalError("cache does not belong to this model state")
    grads = _GradWriter(state)
    g = grad_logits
    n = state.config.n_layers
    if cache["kind"] == KIND_MLP:
        for l in range(n - 1, -1, -1):
            lay = cache["layers"][l]
            x = lay["x"]
            grads.set(f"l{l}.weight", g.T @ x)
            grads.set(f"l{l}.bias", g.sum(axis=0))
            g = g @ state.view(f"l{l}.weight")
            if l > 0:
                g = g * relu_backward(cache["layers"][l - 1]["pre"])
    elif cache["kind"] == KIND_SPLINE:
        grid = state.config.spline_grid()
        for l in range(n - 1, -1, -1):
            lay = cache["layers"][l]
            x, bas = lay["x"], lay["basis"]
            wb = state.view(f"l{l}.base_weight")
            ws = state.view(f"l{l}.spline_weight")
            sc = state.view(f"l{l}.spline_scaler")
            bsz, i = x.shape
            o, _, c = ws.shape
            grads.set(f"l{l}.base_weight", g.T @ silu(x))
            gw = (g.T @ bas.reshape(bsz, i * c)).reshape(o, i, c)
            grads.set(f"l{l}.spline_weight", gw * sc[:, :, None])
            grads.set(f"l{l}.spline_scaler", (gw * ws).sum(axis=2))
            ws_scaled = (ws * sc[:, :, None]).reshape(o, i * c)
            t = (g @ ws_scaled).reshape(bsz, i, c)
            dbas = derivative_from_lower(grid, lay["lower"])
            g = g @ wb * silu_backward(x) + (t * dbas).sum(axis=2)
    else:
        cfg = state.config
        centers = cfg.rbf_centers()
        h = cfg.rbf_bandwidth()
        for l in range(n - 1, -1, -1):
            lay = cache["layers"][l]
            x, zhat, inv, phi, u = lay["x"], lay["zhat"], lay["inv"], lay["phi"], lay["u"]
            wr = state.view(f"l{l}.rbf_weight")
            wa = state.view(f"l{l}.base_weight")
            gain = state.view(f"l{l}.ln_gain")
            bsz, i = x.shape
            o = wr.shape[0]
            grads.set(f"l{l}.rbf_weight", (g.T @ phi.reshape(bsz, -1)).reshape(o, i, -1))
            grads.set(f"l{l}.base_weight", g.T @ x)
            grads.set(f"l{l}.base_bias", g.sum(axis=0))
            t = (g @ wr.reshape(o, -1)).reshape(bsz, i, -1)
            dz = (t * phi * (-2.0 * u / h)).sum(axis=2)
            grads.set(f"l{l}.ln_gain", (dz * zhat).sum(axis=0))
            grads.set(f"l{l}.ln_bias", dz.sum(axis=0))
            dzhat = dz * gain
            # layernorm backward with biased variance
            g_ln = inv * (
                dzhat
                - dzhat.mean(axis=1, keepdims=True)
                - zhat * (dzhat * zhat).mean(axis=1, keepdims=True)
            )
            g = g_ln + g @ wa
    return grads.flat, g


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"KANFEDCK"
_VERSION = 1


def save_state(state: ModelState, path) -> None:
    """Write a versioned binary checkpoint; round-trips byte-exactly."""
    header = json.dumps(
        {
            "version": _VERSION,
            "config": state.config.to_dict(),
            "layout": [[n, list(s), o] for n, s, o in state.layout],
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(state.params.astype("<f8").tobytes())


def load_state(path) -> ModelState:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise DataError(f"bad checkpoint magic {magic!r} in {path}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        if header["version"] != _VERSION:
            raise DataError(f"unsupported checkpoint version {header['version']}")
        config = ModelConfig.from_dict(header["config"])
        params = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    state = ModelState(config, params)
    expected_layout = [[n, list(s), o] for n, s, o in state.layout]
    if header["layout"] != expected_layout:
        raise DataError("checkpoint layout does not match its config")
    return state
