"""Self-contained dense network engine on numpy arrays.

Implements exactly what the proxy model needs and nothing more: a
residual-skip MLP (identity skip joining equal-width layers every
``skip_period`` hidden layers, ReLU everywhere hidden), hand-written
reverse-mode gradients for the mean-squared-error objective, AdamW with
decoupled weight decay, a geometric learning-rate schedule, and min/max
feature normalization to [-1, 1].

Training math runs in float32; pass ``dtype=np.float64`` to ``init_params``
for the shadow mode used by gradient checks. All functions are deterministic;
weight init draws from a counter-based stream keyed by the config seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._util import STREAM_WEIGHT_INIT, atomic_write_bytes, keyed_rng

CHECKPOINT_MAGIC = b"R2RW"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIIIIIBq")

_ACTIVATIONS = {"relu": 0}


class CheckpointFormatError(ValueError):
    """Corrupt or incompatible checkpoint file."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 4
    output_dim: int = 4
    hidden_width: int = 256
    hidden_layers: int = 6
    skip_period: int = 3
    activation: str = "relu"
    weight_init_seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if self.skip_period < 1:
            raise ValueError("skip_period must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if min(self.input_dim, self.output_dim, self.hidden_width) < 1:
            raise ValueError("dimensions must be >= 1")


@dataclass
class Normalization:
    """Per-feature affine map: normalized = (v - offset) * scale."""

    offset: np.ndarray
    scale: np.ndarray

    def normalize(self, v: np.ndarray) -> np.ndarray:
        return (v - self.offset) * self.scale

    def denormalize(self, v: np.ndarray) -> np.ndarray:
        return v / self.scale + self.offset

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))


def fit_normalization(features: np.ndarray) -> Normalization:
    """Affine map sending each feature's [min, max] over the data to [-1, 1].

    Degenerate features (max == min) map to 0 with unit scale.
    """
    lo = features.min(axis=0).astype(np.float64)
    hi = features.max(axis=0).astype(np.float64)
    span = hi - lo
    degenerate = span == 0
    offset = np.where(degenerate, lo, (hi + lo) / 2.0)
    scale = np.where(degenerate, 1.0, 2.0 / np.where(degenerate, 1.0, span))
    return Normalization(offset, scale)


@dataclass
class MlpParams:
    """Layer weights/biases plus the input/output normalizations.

    weights[0] is the input projection (input_dim, width); weights[1:-1] are
    the hidden layers (width, width); weights[-1] is the output projection.
    Biases match. Arrays share one float dtype.
    """

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_norm: Normalization
    output_norm: Normalization

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list (W0, b0, W1, b1, ...) for optimizers."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(
            config=self.config,
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            input_norm=self.input_norm,
            output_norm=self.output_norm,
        )

    def copy(self) -> "MlpParams":
        return MlpParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            input_norm=Normalization(self.input_norm.offset.copy(), self.input_norm.scale.copy()),
            output_norm=Normalization(self.output_norm.offset.copy(), self.output_norm.scale.copy()),
        )


def layer_dims(config: MlpConfig) -> list[tuple[int, int]]:
    dims = [(config.input_dim, config.hidden_width)]
    dims += [(config.hidden_width, config.hidden_width)] * config.hidden_layers
    dims.append((config.hidden_width, config.output_dim))
    return dims


def init_params(config: MlpConfig, dtype=np.float32) -> MlpParams:
    """Kaiming-uniform fan-in init (bound sqrt(6/fan_in), right for ReLU);
    biases start at zero, normalizations at identity."""
    rng = keyed_rng(config.weight_init_seed, STREAM_WEIGHT_INIT)
    weights, biases = [], []
    for fan_in, fan_out in layer_dims(config):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(config, weights, biases,
                     Normalization.identity(config.input_dim),
                     Normalization.identity(config.output_dim))


def _forward_normalized(params: MlpParams, xn: np.ndarray, want_cache: bool):
    W, b = params.weights, params.biases
    skip = params.config.skip_period
    n_hidden = params.config.hidden_layers

    z = xn @ W[0] + b[0]
    h = np.maximum(z, 0)
    acts = [h]
    masks = [z > 0]
    block_in = h
    for i in range(n_hidden):
        if i % skip == 0:
            block_in = h
        z = h @ W[1 + i] + b[1 + i]
        h = np.maximum(z, 0)
        if (i + 1) % skip == 0:
            h = h + block_in
        if want_cache:
            acts.append(h)
            masks.append(z > 0)
    yn = h @ W[-1] + b[-1]
    if want_cache:
        return yn, acts, masks
    return yn


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batch forward pass on raw (denormalized) inputs; returns raw outputs."""
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != params.config.input_dim:
        raise ValueError(f"expected {params.config.input_dim} input features, got {x.shape[1]}")
    xn = params.input_norm.normalize(x).astype(params.dtype)
    yn = _forward_normalized(params, xn, want_cache=False)
    return params.output_norm.denormalize(yn.astype(np.float64))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch and features of squared error."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - target
    return float(np.mean(diff * diff))


def loss_and_grads(params: MlpParams, x: np.ndarray, y: np.ndarray):
    """MSE in normalized output space and its exact reverse-mode gradients.

    Returns (loss, grads) with grads ordered like ``params.arrays()``. The
    ReLU subgradient at exactly zero is taken as zero.
    """
    cfg = params.config
    dtype = params.dtype
    xn = params.input_norm.normalize(np.atleast_2d(x)).astype(dtype)
    yn_target = params.output_norm.normalize(np.atleast_2d(y)).astype(dtype)
    if xn.shape[0] != yn_target.shape[0]:
        raise ValueError("batch size mismatch between inputs and targets")

    yn, acts, masks = _forward_normalized(params, xn, want_cache=True)
    diff = yn - yn_target
    loss = float(np.mean(diff.astype(np.float64) ** 2))

    W = params.weights
    skip = cfg.skip_period
    n_hidden = cfg.hidden_layers
    gw = [None] * len(W)
    gb = [None] * len(W)

    g = (2.0 / diff.size) * diff
    g = g.astype(dtype)
    gw[-1] = acts[n_hidden].T @ g
    gb[-1] = g.sum(axis=0)
    g = g @ W[-1].T

    pending_skip = None
    for i in reversed(range(n_hidden)):
        if (i + 1) % skip == 0:
            pending_skip = g  # identity branch of the residual add
        gz = g * masks[i + 1]
        gw[1 + i] = acts[i].T @ gz
        gb[1 + i] = gz.sum(axis=0)
        g = gz @ W[1 + i].T
        if i % skip == 0 and pending_skip is not None:
            g = g + pending_skip
            pending_skip = None

    gz = g * masks[0]
    gw[0] = xn.T @ gz
    gb[0] = gz.sum(axis=0)

    grads = []
    for w_g, b_g in zip(gw, gb):
        grads.append(w_g)
        grads.append(b_g)
    return loss, grads


def backward(params: MlpParams, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Gradients only; see loss_and_grads."""
    return loss_and_grads(params, x, y)[1]


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    base_lr: float = 5e-4
    final_lr: float = 1e-5


def init_optimizer(
    params: MlpParams,
    base_lr: float = 5e-4,
    final_lr: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-2,
) -> OptimizerState:
    arrs = params.arrays()
    return OptimizerState(
        m=[np.zeros_like(a) for a in arrs],
        v=[np.zeros_like(a) for a in arrs],
        beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        base_lr=base_lr, final_lr=final_lr,
    )


def adamw_step(state: OptimizerState, params: MlpParams, grads: list[np.ndarray], lr: float | None = None):
    """One decoupled-weight-decay Adam update, in place.

    p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p). Aborts on any
    non-finite gradient, leaving params and state untouched.
    """
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in parameter {k} at step {state.step + 1}; update aborted"
            )
    if lr is None:
        lr = state.base_lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, m, v, g in zip(params.arrays(), state.m, state.v, grads):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)).astype(p.dtype)
    return params, state


def lr_at(state: OptimizerState, epoch: int, total_epochs: int) -> float:
    """Geometric decay from base_lr at epoch 0 to final_lr at the last epoch."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return state.base_lr * (state.final_lr / state.base_lr) ** (epoch / total_epochs)


def save_checkpoint(params: MlpParams, path) -> None:
    """Serialize params (little-endian): header with config, float64
    normalization tables, then per-layer row-major float32 weights and biases."""
    cfg = params.config
    out = [_CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.input_dim, cfg.output_dim, cfg.hidden_width, cfg.hidden_layers,
        cfg.skip_period, _ACTIVATIONS[cfg.activation], cfg.weight_init_seed,
    )]
    for arr in (params.input_norm.offset, params.input_norm.scale,
                params.output_norm.offset, params.output_norm.scale):
        out.append(np.asarray(arr, dtype="<f8").tobytes())
    for w, b in zip(params.weights, params.biases):
        out.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(out))


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKPT_HEADER.size:
        raise CheckpointFormatError(f"header truncated: {len(blob)} bytes")
    magic, version, in_d, out_d, width, layers, skip, act, seed = _CKPT_HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r} at byte 0")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    act_name = {v: k for k, v in _ACTIVATIONS.items()}.get(act)
    if act_name is None:
        raise CheckpointFormatError(f"unknown activation code {act}")
    cfg = MlpConfig(input_dim=in_d, output_dim=out_d, hidden_width=width,
                    hidden_layers=layers, skip_period=skip, activation=act_name,
                    weight_init_seed=seed)
    off = _CKPT_HEADER.size

    def take(count, np_dtype):
        nonlocal off
        nbytes = count * np.dtype(np_dtype).itemsize
        if off + nbytes > len(blob):
            raise CheckpointFormatError(f"truncated at byte {off}: need {nbytes} more bytes")
        arr = np.frombuffer(blob, dtype=np_dtype, count=count, offset=off)
        off += nbytes
        return arr

    in_norm = Normalization(take(in_d, "<f8").astype(np.float64),
                            take(in_d, "<f8").astype(np.float64))
    out_norm = Normalization(take(out_d, "<f8").astype(np.float64),
                             take(out_d, "<f8").astype(np.float64))
    weights, biases = [], []
    for fan_in, fan_out in layer_dims(cfg):
        weights.append(take(fan_in * fan_out, "<f4").astype(np.float32).reshape(fan_in, fan_out))
        biases.append(take(fan_out, "<f4").astype(np.float32))
    if off != len(blob):
        raise CheckpointFormatError(f"{len(blob) - off} unexpected trailing bytes at byte {off}")
    return MlpParams(cfg, weights, biases, in_norm, out_norm)
