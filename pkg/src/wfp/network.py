"""Two-branch gated network with hand-written backprop and Adam.

    y = (W2 act(W1 z + b1) + b2) * sigmoid(W3 z + b3)

All arrays are float64 numpy; a batch is a 2-D array with one token per row.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

CHECKPOINT_MAGIC = b"WFPM"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, msg, epoch=None, batch=None):
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch


class ActivationKind(str, Enum):
    OSC = "osc"
    TANH = "tanh"
    LEAKY_RELU = "lrelu"


@dataclass(frozen=True)
class ActivationSpec:
    kind: ActivationKind = ActivationKind.OSC
    A: float = 1.0
    B: float = 20.0
    C: float = 10 * math.pi
    leak: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivationKind(self.kind))
        if self.kind is ActivationKind.OSC and not self.B > 0:
            raise ValueError("oscillatory activation needs B > 0")

    @classmethod
    def parse(cls, text: str) -> "ActivationSpec":
        """``osc``, ``osc:A,B,C``, ``tanh``, ``lrelu`` or ``lrelu:slope``.

        Constants accept ``pi`` products such as ``10pi`` or ``3*pi``.
        """
        name, _, args = text.partition(":")
        name = name.strip().lower()
        if name == "osc":
            if not args:
                return cls()
            vals = [_parse_const(a) for a in args.split(",")]
            if len(vals) != 3:
                raise ValueError("osc activation takes A,B,C")
            return cls(ActivationKind.OSC, *vals)
        if name == "tanh":
            return cls(ActivationKind.TANH)
        if name in ("lrelu", "leaky_relu"):
            return cls(ActivationKind.LEAKY_RELU, leak=_parse_const(args) if args else 0.05)
        raise ValueError(f"unknown activation {text!r}")

    def label(self) -> str:
        if self.kind is ActivationKind.OSC:
            return f"osc:{_fmt_const(self.A)},{_fmt_const(self.B)},{_fmt_const(self.C)}"
        if self.kind is ActivationKind.LEAKY_RELU:
            return f"lrelu:{self.leak:g}"
        return "tanh"


def _fmt_const(x: float) -> str:
    # multiples of pi print as "3pi" so labels parse back to the same float
    q = x / math.pi
    if x != 0 and q == round(q, 6) and round(q, 6) * math.pi == x:
        return f"{round(q, 6):g}pi"
    return repr(float(x))


def _parse_const(s: str) -> float:
    s = s.strip().replace("*", "")
    if s.endswith("pi"):
        head = s[:-2]
        return (float(head) if head else 1.0) * math.pi
    return float(s)


def activation(x, spec: ActivationSpec):
    """Value and derivative of the hidden-layer nonlinearity."""
    x = np.asarray(x, dtype=float)
    if spec.kind is ActivationKind.OSC:
        env = spec.A * np.exp(-spec.B * x * x)
        s, c = np.sin(spec.C * x), np.cos(spec.C * x)
        return env * s, env * (spec.C * c - 2 * spec.B * x * s)
    if spec.kind is ActivationKind.TANH:
        t = np.tanh(x)
        return t, 1 - t * t
    slope = np.where(x > 0, 1.0, spec.leak)
    return x * slope, slope


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


@dataclass
class GatedNetParams:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray
    W2: np.ndarray  # (out, hidden)
    b2: np.ndarray
    W3: np.ndarray  # (out, in)
    b3: np.ndarray
    act: ActivationSpec = field(default_factory=ActivationSpec)

    def __post_init__(self):
        h, i = self.W1.shape
        o = self.W2.shape[0]
        expected = {"b1": (h,), "W2": (o, h), "b2": (o,), "W3": (o, i), "b3": (o,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "GatedNetParams":
        return replace(self, **{n: getattr(self, n).copy() for n in PARAM_NAMES})

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    @classmethod
    def zeros(cls, in_dim, hidden, out_dim, act=None) -> "GatedNetParams":
        return cls(
            np.zeros((hidden, in_dim)), np.zeros(hidden),
            np.zeros((out_dim, hidden)), np.zeros(out_dim),
            np.zeros((out_dim, in_dim)), np.zeros(out_dim),
            act or ActivationSpec(),
        )

    @classmethod
    def init(cls, in_dim, hidden, out_dim, act=None, seed=0, gate_bias=2.0) -> "GatedNetParams":
        """Glorot-uniform weights, zero main biases, gate bias ``gate_bias``."""
        rng = np.random.default_rng(seed)

        def glorot(fan_out, fan_in):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_out, fan_in))

        return cls(
            glorot(hidden, in_dim), np.zeros(hidden),
            glorot(out_dim, hidden), np.zeros(out_dim),
            glorot(out_dim, in_dim), np.full(out_dim, float(gate_bias)),
            act or ActivationSpec(),
        )


@dataclass
class Cache:
    z: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    dact: np.ndarray
    main: np.ndarray
    gate: np.ndarray


def _check_tokens(params: GatedNetParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.dims[0]:
        raise ShapeMismatch(f"token length {z.shape[-1]} != network input {params.dims[0]}")
    return z


def forward(params: GatedNetParams, tokens, return_cache: bool = False):
    """Network output for one token (1-D) or a batch (2-D)."""
    z = _check_tokens(params, tokens)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    pre = z2 @ params.W1.T + params.b1
    hidden, dact = activation(pre, params.act)
    main = hidden @ params.W2.T + params.b2
    gate = sigmoid(z2 @ params.W3.T + params.b3)
    y = main * gate
    if single:
        y = y[0]
    if return_cache:
        return y, Cache(z2, pre, hidden, dact, main, gate)
    return y


def backward(params: GatedNetParams, tokens, grad_out, cache: Cache | None = None) -> dict:
    """Gradients of ``sum(grad_out * forward(tokens))`` w.r.t. every parameter."""
    if cache is None:
        _, cache = forward(params, tokens, return_cache=True)
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if g.shape != cache.main.shape:
        raise ShapeMismatch(f"grad_out shape {g.shape} != output shape {cache.main.shape}")
    d_main = g * cache.gate
    d_gate_pre = g * cache.main * cache.gate * (1 - cache.gate)
    d_pre = (d_main @ params.W2) * cache.dact
    return {
        "W1": d_pre.T @ cache.z,
        "b1": d_pre.sum(axis=0),
        "W2": d_main.T @ cache.hidden,
        "b2": d_main.sum(axis=0),
        "W3": d_gate_pre.T @ cache.z,
        "b3": d_gate_pre.sum(axis=0),
    }


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 4000
    batch: int = 100
    epochs: int = 2000
    hidden: int = 256
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 1

    def __post_init__(self):
        if self.lr0 <= 0 or self.decay_factor <= 0 or self.decay_every <= 0:
            raise ValueError("learning-rate schedule values must be positive")
        if self.batch <= 0 or self.hidden <= 0 or self.epochs < 0:
            raise ValueError("batch and hidden must be positive, epochs non-negative")

    def lr(self, step: int) -> float:
        return self.lr0 * self.decay_factor ** (step // self.decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def like(cls, params: GatedNetParams) -> "AdamState":
        return cls(
            {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES},
            {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES},
        )


def optimizer_step(params: GatedNetParams, grads: dict, state: AdamState, cfg: TrainConfig) -> GatedNetParams:
    """One Adam update in place; returns ``params`` for chaining."""
    lr = cfg.lr(state.step)
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for n in PARAM_NAMES:
        g = grads[n]
        p = getattr(params, n)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {n} has shape {g.shape}, expected {p.shape}")
        m, v = state.m[n], state.v[n]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params


def masked_mse(pred, target, mask=None) -> tuple[float, np.ndarray]:
    """Mean squared error over unmasked entries and its gradient w.r.t. ``pred``."""
    diff = pred - target
    if mask is None:
        mask = np.ones_like(diff)
    count = max(float(mask.sum()), 1.0)
    loss = float(np.sum(mask * diff * diff) / count)
    return loss, 2 * mask * diff / count


@dataclass
class TrainResult:
    params: GatedNetParams
    history: list  # (epoch, train_mse, test_mse)


def evaluate(params: GatedNetParams, x, y, mask=None, chunk: int = 4096) -> float:
    if len(x) == 0:
        return float("nan")
    total, count = 0.0, 0.0
    for s in range(0, len(x), chunk):
        pred = forward(params, x[s : s + chunk])
        m = np.ones_like(pred) if mask is None else mask[s : s + chunk]
        total += float(np.sum(m * (pred - y[s : s + chunk]) ** 2))
        count += float(m.sum())
    return total / max(count, 1.0)


def train(
    x,
    y,
    cfg: TrainConfig,
    act: ActivationSpec | None = None,
    mask=None,
    test=None,
    params: GatedNetParams | None = None,
) -> TrainResult:
    """Minibatch Adam on masked MSE.

    ``test`` is an optional ``(x, y, mask)`` triple evaluated alongside the
    training loss every ``cfg.log_every`` epochs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ShapeMismatch("x and y have different lengths")
    mask = np.ones_like(y) if mask is None else np.asarray(mask, dtype=float)
    if params is None:
        params = GatedNetParams.init(x.shape[1], cfg.hidden, y.shape[1], act, seed=cfg.seed)
    else:
        params = params.copy()
    state = AdamState.like(params)
    rng = np.random.default_rng([cfg.seed, 1])
    history = []
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for b, s in enumerate(range(0, n, cfg.batch)):
            idx = order[s : s + cfg.batch]
            pred, cache = forward(params, x[idx], return_cache=True)
            loss, grad = masked_mse(pred, y[idx], mask[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            optimizer_step(params, backward(params, x[idx], grad, cache), state, cfg)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            tr = evaluate(params, x, y, mask)
            te = evaluate(params, *test) if test is not None else float("nan")
            history.append((epoch, tr, te))
    return TrainResult(params, history)


def write_history_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_mse,test_mse\n")
        for e, tr, te in history:
            fh.write(f"{e},{tr:.10e},{te:.10e}\n")


# ---------------------------------------------------------------------------
# token and target layout

@dataclass(frozen=True)
class ModelMeta:
    """What a trained network was trained for; stored in the checkpoint."""

    dim: int
    r_c: int
    r_w: int
    t_step: float
    tau: float = 0.1
    domain_len: float = 1.0
    k_scale: float = 96.0
    k_min: int = 16
    k_max: int = 96

    def __post_init__(self):
        if self.dim not in (1, 2) or self.r_c < 0 or self.r_w < 0:
            raise ValueError("invalid dim or window radius")
        if not self.t_step > 0 or not self.domain_len > 0 or not self.k_scale > 0:
            raise ValueError("t_step, domain_len and k_scale must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    @property
    def in_dim(self) -> int:
        return self.dim + 2 * (2 * self.r_c + 1) ** self.dim

    @property
    def out_dim(self) -> int:
        return 4 * (2 * self.r_w + 1) ** self.dim

    def omega(self, k) -> np.ndarray:
        """Homogeneous angular frequency ``2 pi |k| / L`` per row of ``k``."""
        k = np.atleast_2d(np.asarray(k, dtype=float))
        return 2 * np.pi * np.linalg.norm(k, axis=1) / self.domain_len

    @classmethod
    def for_dataset(cls, ds, **kw) -> "ModelMeta":
        return cls(ds.dim, ds.r_c, ds.r_w, ds.t_final, **kw)


def encode_tokens(k, feat, meta: ModelMeta) -> np.ndarray:
    """``[k / k_scale] ++ medium feature`` for each row of ``k``.

    ``feat`` is either one feature vector shared by all rows or one per row.
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    feat = np.asarray(feat, dtype=float)
    if feat.ndim == 1:
        feat = np.broadcast_to(feat, (len(k), feat.size))
    if k.shape[1] != meta.dim or feat.shape[1] != meta.in_dim - meta.dim:
        raise ShapeMismatch("token parts do not match model dimensions")
    return np.concatenate([k / meta.k_scale, feat], axis=1)


def encode_targets(target_u, target_v, k, meta: ModelMeta, amplitude: complex) -> np.ndarray:
    """Network targets from raw solver windows.

    Windows are divided by the initial coefficient ``amplitude`` so that they
    describe a unit driving wave, and the velocity window is further divided
    by ``omega(k)`` to bring both heads to the same scale.
    """
    from .datagen import to_complex, to_real

    w = meta.omega(k)[:, None]
    du = to_complex(target_u) / amplitude
    dv = to_complex(target_v) / amplitude / w
    return np.concatenate([to_real(du), to_real(dv)], axis=1)


def decode_outputs(y, k, meta: ModelMeta) -> tuple[np.ndarray, np.ndarray]:
    """Complex ``(u_window, v_window)`` rows from raw network outputs."""
    from .datagen import to_complex

    y = np.atleast_2d(y)
    half = y.shape[1] // 2
    w = meta.omega(k)[:, None]
    return to_complex(y[:, :half]), to_complex(y[:, half:]) * w


def training_arrays(ds, meta: ModelMeta | None = None):
    """``(x, y, mask, meta)`` for a plane-wave dataset."""
    from .datagen import SINE_AMPLITUDE

    meta = meta or ModelMeta.for_dataset(ds)
    if (ds.dim, ds.r_c, ds.r_w) != (meta.dim, meta.r_c, meta.r_w):
        raise ShapeMismatch("dataset layout does not match model metadata")
    x = encode_tokens(ds.k0, ds.medium_feat, meta)
    y = encode_targets(ds.target_u, ds.target_v, ds.k0, meta, SINE_AMPLITUDE)
    m = np.repeat(ds.mask.astype(float), 2, axis=1)
    return x, y, np.concatenate([m, m], axis=1), meta


def fit_dataset(train_ds, cfg: TrainConfig, act: ActivationSpec | None = None, test_ds=None, meta=None):
    """Train on a dataset; returns ``(params, meta, history)``."""
    x, y, m, meta = training_arrays(train_ds, meta)
    test = None
    if test_ds is not None and len(test_ds):
        xt, yt, mt, _ = training_arrays(test_ds, meta)
        test = (xt, yt, mt)
    res = train(x, y, cfg, act, mask=m, test=test)
    return res.params, meta, res.history


# ---------------------------------------------------------------------------
# checkpoint

_ACT_CODES = {ActivationKind.OSC: 0, ActivationKind.TANH: 1, ActivationKind.LEAKY_RELU: 2}
_NET_HEADER = struct.Struct("<4sIIIIBdddd")
_META = struct.Struct("<IIIIIdddd")


def pack_checkpoint(params: GatedNetParams, meta: ModelMeta) -> bytes:
    i, h, o = params.dims
    if (i, o) != (meta.in_dim, meta.out_dim):
        raise ShapeMismatch(f"network dims {(i, o)} do not match metadata {(meta.in_dim, meta.out_dim)}")
    a = params.act
    head = _NET_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, i, h, o, _ACT_CODES[a.kind], a.A, a.B, a.C, a.leak)
    m = _META.pack(
        meta.dim, meta.r_c, meta.r_w, meta.k_min, meta.k_max,
        meta.t_step, meta.tau, meta.domain_len, meta.k_scale,
    )
    blob = np.concatenate([p.ravel() for p in params.arrays()]).astype("<f8")
    return head + m + blob.tobytes()


def unpack_checkpoint(raw: bytes) -> tuple[GatedNetParams, ModelMeta]:
    if len(raw) < _NET_HEADER.size + _META.size:
        raise ValueError("checkpoint truncated")
    magic, version, i, h, o, code, A, B, C, leak = _NET_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a network checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    codes = {v: k for k, v in _ACT_CODES.items()}
    if code not in codes:
        raise ValueError(f"unknown activation code {code}")
    dim, r_c, r_w, kmin, kmax, t_step, tau, length, k_scale = _META.unpack_from(raw, _NET_HEADER.size)
    meta = ModelMeta(dim, r_c, r_w, t_step, tau, length, k_scale, kmin, kmax)
    shapes = [(h, i), (h,), (o, h), (o,), (o, i), (o,)]
    total = sum(math.prod(s) for s in shapes)
    start = _NET_HEADER.size + _META.size
    if len(raw) != start + 8 * total:
        raise ValueError("checkpoint size does not match its header")
    blob = np.frombuffer(raw, dtype="<f8", count=total, offset=start).astype(float)
    arrays, pos = [], 0
    for s in shapes:
        size = math.prod(s)
        arrays.append(blob[pos : pos + size].reshape(s).copy())
        pos += size
    params = GatedNetParams(*arrays, act=ActivationSpec(codes[code], A, B, C, leak))
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("checkpoint contains non-finite parameters")
    if (i, o) != (meta.in_dim, meta.out_dim):
        raise ShapeMismatch("checkpoint dims inconsistent with its metadata")
    return params, meta


def save_checkpoint(path, params: GatedNetParams, meta: ModelMeta) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[GatedNetParams, ModelMeta]:
    with open(path, "rb") as fh:
        return unpack_checkpoint(fh.read())
