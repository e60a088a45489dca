"""Recurrent network core: LSTM, ReLU stack, sigmoid head, hand-derived
backpropagation through time, RMSprop, and checkpoint serialization.

All math is 64-bit.  The batched code path is time-major ``(T, B, dim)``
and is the single implementation; the per-sequence functions wrap it with
a batch axis of one.  Gate blocks inside ``lstm_W``/``lstm_b`` are stacked
in the order input, forget, candidate, output, and the LSTM input is the
concatenation ``[x; h]`` (feature columns first).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from eosnet.errors import CheckpointError, NumericalFault

DEFAULT_INPUT_DIM = 13
DEFAULT_HIDDEN_SIZE = 400
FORGET_BIAS = 1.0

# strict-(0,1) clamp for emitted probabilities
_PROB_LO = 1e-300
_PROB_HI = float(np.nextafter(1.0, 0.0))

CHECKPOINT_MAGIC = b"EOS1"
# header: input dim, hidden size, two dense sizes, then the tensor count
# of each layer group (weights + bias = 2, repeated four times)
_LAYER_MARKERS = (2, 2, 2, 2)
_HEADER_STRUCT = struct.Struct("<8I")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(slots=True)
class ModelParams:
    """All weights of the network (also reused as a gradient container).

    Shapes, with D input features and H hidden units:
    lstm_W (4H, D+H), lstm_b (4H,), dense1_W (H1, H), dense1_b (H1,),
    dense2_W (H2, H1), dense2_b (H2,), out_W (1, H2), out_b (1,).
    """

    lstm_W: np.ndarray
    lstm_b: np.ndarray
    dense1_W: np.ndarray
    dense1_b: np.ndarray
    dense2_W: np.ndarray
    dense2_b: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray

    FIELDS = (
        "lstm_W", "lstm_b", "dense1_W", "dense1_b",
        "dense2_W", "dense2_b", "out_W", "out_b",
    )

    @property
    def hidden_size(self) -> int:
        return self.lstm_b.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.lstm_W.shape[1] - self.hidden_size

    @property
    def dense1_size(self) -> int:
        return self.dense1_b.shape[0]

    @property
    def dense2_size(self) -> int:
        return self.dense2_b.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in self.FIELDS)

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(slots=True)
class LstmState:
    """Recurrent state: hidden and cell vectors, length H."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(h=np.zeros(hidden_size), c=np.zeros(hidden_size))


def fan_in_sizes(hidden_size: int) -> tuple[int, int]:
    """Dense layer widths: each layer halves its predecessor."""
    return max(1, hidden_size // 2), max(1, hidden_size // 4)


def init_params(seed: int, input_dim: int = DEFAULT_INPUT_DIM,
                hidden_size: int = DEFAULT_HIDDEN_SIZE) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.0.

    Matrices are drawn in field order from one seeded generator, so the
    result is a pure function of the seed and the sizes.
    """
    h1, h2 = fan_in_sizes(hidden_size)
    rng = np.random.default_rng(seed)

    def glorot(rows: int, cols: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    lstm_b = np.zeros(4 * hidden_size)
    lstm_b[hidden_size:2 * hidden_size] = FORGET_BIAS
    return ModelParams(
        lstm_W=glorot(4 * hidden_size, input_dim + hidden_size),
        lstm_b=lstm_b,
        dense1_W=glorot(h1, hidden_size),
        dense1_b=np.zeros(h1),
        dense2_W=glorot(h2, h1),
        dense2_b=np.zeros(h2),
        out_W=glorot(1, h2),
        out_b=np.zeros(1),
    )


def lstm_step(params: ModelParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One LSTM step; pure function of its inputs."""
    hidden = params.hidden_size
    z = params.lstm_W @ np.concatenate([np.asarray(x, dtype=np.float64), state.h])
    z += params.lstm_b
    i = sigmoid(z[:hidden])
    f = sigmoid(z[hidden:2 * hidden])
    g = np.tanh(z[2 * hidden:3 * hidden])
    o = sigmoid(z[3 * hidden:])
    c_new = f * state.c + i * g
    return LstmState(h=o * np.tanh(c_new), c=c_new)


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class _ForwardCache:
    X: np.ndarray        # (T, B, D)
    resets: np.ndarray   # (T, B) bool
    gates: np.ndarray    # (T, B, 4H) post-activation, blocks i|f|g|o
    c: np.ndarray        # (T, B, H)
    h: np.ndarray        # (T, B, H)
    h0: np.ndarray
    c0: np.ndarray
    m0: Optional[np.ndarray]
    m1: Optional[np.ndarray]
    m2: Optional[np.ndarray]
    a1: np.ndarray       # (T, B, H1) post-ReLU
    a2: np.ndarray       # (T, B, H2) post-ReLU
    probs: np.ndarray    # (T, B)


@dataclass(slots=True)
class BatchForward:
    probs: np.ndarray    # (T, B), strictly inside (0, 1)
    h: np.ndarray        # (B, H) final hidden state
    c: np.ndarray        # (B, H) final cell state
    cache: Optional[_ForwardCache]


def forward_batch(params: ModelParams, X: np.ndarray, resets: np.ndarray,
                  h0: np.ndarray, c0: np.ndarray, dropout_p: float = 0.0,
                  rng: Optional[np.random.Generator] = None,
                  want_cache: bool = False) -> BatchForward:
    """Run the full pipeline over a time-major batch.

    ``resets[t, b]`` zeroes lane b's state before step t.  Dropout
    (inverted, scale 1/(1-p)) is applied to the LSTM output and both
    dense outputs only when an RNG is supplied and p > 0; inference mode
    applies no masks and no scaling.
    """
    T, B, D = X.shape
    hidden = params.hidden_size
    if D != params.input_dim:
        raise ValueError(f"feature dim {D} != model input dim {params.input_dim}")

    Wx = params.lstm_W[:, :D]
    Wh = params.lstm_W[:, D:]
    zx = X.reshape(T * B, D) @ Wx.T
    zx = zx.reshape(T, B, 4 * hidden) + params.lstm_b

    train = rng is not None and dropout_p > 0.0
    if train:
        keep = 1.0 - dropout_p
        h1, h2 = params.dense1_size, params.dense2_size
        m0 = (rng.random((T, B, hidden)) < keep) / keep
        m1 = (rng.random((T, B, h1)) < keep) / keep
        m2 = (rng.random((T, B, h2)) < keep) / keep
    else:
        m0 = m1 = m2 = None

    gates = np.empty((T, B, 4 * hidden))
    cs = np.empty((T, B, hidden))
    hs = np.empty((T, B, hidden))
    h = np.asarray(h0, dtype=np.float64).copy()
    c = np.asarray(c0, dtype=np.float64).copy()
    for t in range(T):
        live = ~resets[t]
        if not live.all():
            h = h * live[:, None]
            c = c * live[:, None]
        z = zx[t] + h @ Wh.T
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = sigmoid(z[:, 3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :hidden] = i
        gates[t, :, hidden:2 * hidden] = f
        gates[t, :, 2 * hidden:3 * hidden] = g
        gates[t, :, 3 * hidden:] = o
        cs[t] = c
        hs[t] = h

    flat_h = hs.reshape(T * B, hidden)
    if train:
        flat_h = flat_h * m0.reshape(T * B, hidden)
    a1 = np.maximum(flat_h @ params.dense1_W.T + params.dense1_b, 0.0)
    a1d = a1 * m1.reshape(T * B, -1) if train else a1
    a2 = np.maximum(a1d @ params.dense2_W.T + params.dense2_b, 0.0)
    a2d = a2 * m2.reshape(T * B, -1) if train else a2
    z_out = a2d @ params.out_W.T + params.out_b
    probs = np.clip(sigmoid(z_out[:, 0]), _PROB_LO, _PROB_HI).reshape(T, B)

    if not np.isfinite(probs).all():
        bad = np.argwhere(~np.isfinite(probs))
        raise NumericalFault("non-finite activation", step=int(bad[0][0]))

    cache = None
    if want_cache:
        cache = _ForwardCache(
            X=X, resets=resets, gates=gates, c=cs, h=hs,
            h0=np.asarray(h0, dtype=np.float64), c0=np.asarray(c0, dtype=np.float64),
            m0=m0, m1=m1, m2=m2,
            a1=a1.reshape(T, B, -1), a2=a2.reshape(T, B, -1), probs=probs,
        )
    return BatchForward(probs=probs, h=h, c=c, cache=cache)


def backward_batch(params: ModelParams, cache: _ForwardCache, labels: np.ndarray,
                   weights: np.ndarray, valid: np.ndarray) -> tuple[ModelParams, float, float]:
    """Exact gradient of the weight-normalized BCE over the cached window.

    Returns ``(grads, loss_numerator, weight_sum)`` where the window loss
    is ``loss_numerator / weight_sum``.  Invalid (padding) steps carry
    zero weight; gradients stop at the window boundary (the initial state
    is treated as a constant) and at every reset.
    """
    T, B, D = cache.X.shape
    hidden = params.hidden_size
    Wh = params.lstm_W[:, D:]

    w_eff = np.where(valid, weights, 0.0)
    w_sum = float(w_eff.sum())
    grads = params.zeros_like()
    if T == 0 or w_sum == 0.0:
        return grads, 0.0, w_sum

    p = cache.probs
    y = labels
    ln_p = np.log(np.where(valid, p, 0.5))
    ln_1mp = np.log1p(-np.where(valid, p, 0.5))
    loss_num = float((w_eff * -(y * ln_p + (1 - y) * ln_1mp)).sum())

    train = cache.m0 is not None
    TB = T * B

    # output head and dense stack, batched over all steps
    dz_out = (w_eff * (p - y) / w_sum).reshape(TB, 1)
    a2d = cache.a2 * cache.m2 if train else cache.a2
    a1d = cache.a1 * cache.m1 if train else cache.a1
    a2d = a2d.reshape(TB, -1)
    a1d = a1d.reshape(TB, -1)
    grads.out_W += dz_out.T @ a2d
    grads.out_b += dz_out.sum(axis=0)

    da2 = dz_out @ params.out_W
    if train:
        da2 = da2 * cache.m2.reshape(TB, -1)
    dz2 = da2 * (cache.a2.reshape(TB, -1) > 0.0)
    grads.dense2_W += dz2.T @ a1d
    grads.dense2_b += dz2.sum(axis=0)

    da1 = dz2 @ params.dense2_W
    if train:
        da1 = da1 * cache.m1.reshape(TB, -1)
    dz1 = da1 * (cache.a1.reshape(TB, -1) > 0.0)
    hs_flat = cache.h.reshape(TB, hidden)
    hd = hs_flat * cache.m0.reshape(TB, hidden) if train else hs_flat
    grads.dense1_W += dz1.T @ hd
    grads.dense1_b += dz1.sum(axis=0)

    dh_top = (dz1 @ params.dense1_W).reshape(T, B, hidden)
    if train:
        dh_top = dh_top * cache.m0

    # state pre-step (after any reset), for gate gradients and dWh
    live = ~cache.resets[..., None]
    h_prev = np.empty_like(cache.h)
    c_prev = np.empty_like(cache.c)
    h_prev[0] = cache.h0
    c_prev[0] = cache.c0
    h_prev[1:] = cache.h[:-1]
    c_prev[1:] = cache.c[:-1]
    h_prev *= live
    c_prev *= live

    dz4 = np.empty((T, B, 4 * hidden))
    dh_carry = np.zeros((B, hidden))
    dc_carry = np.zeros((B, hidden))
    for t in range(T - 1, -1, -1):
        i = cache.gates[t, :, :hidden]
        f = cache.gates[t, :, hidden:2 * hidden]
        g = cache.gates[t, :, 2 * hidden:3 * hidden]
        o = cache.gates[t, :, 3 * hidden:]
        tc = np.tanh(cache.c[t])

        dh = dh_top[t] + dh_carry
        dc = dh * o * (1.0 - tc * tc) + dc_carry
        dz4[t, :, :hidden] = dc * g * i * (1.0 - i)
        dz4[t, :, hidden:2 * hidden] = dc * c_prev[t] * f * (1.0 - f)
        dz4[t, :, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
        dz4[t, :, 3 * hidden:] = dh * tc * o * (1.0 - o)

        dh_carry = (dz4[t] @ Wh) * live[t]
        dc_carry = dc * f * live[t]

    dz4_flat = dz4.reshape(TB, 4 * hidden)
    grads.lstm_W[:, :D] += dz4_flat.T @ cache.X.reshape(TB, D)
    grads.lstm_W[:, D:] += dz4_flat.T @ h_prev.reshape(TB, hidden)
    grads.lstm_b += dz4_flat.sum(axis=0)

    if not grads.all_finite():
        raise NumericalFault("non-finite gradient")
    return grads, loss_num, w_sum


# ---------------------------------------------------------------------------
# per-sequence wrappers
# ---------------------------------------------------------------------------

def _as_batch(frames, reset_mask):
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(frames), -1)
    T = X.shape[0]
    if reset_mask is None:
        resets = np.zeros((T, 1), dtype=bool)
    else:
        resets = np.asarray(reset_mask, dtype=bool).reshape(T, 1)
    return X[:, None, :], resets


def forward(params: ModelParams, frames, reset_mask=None, dropout_p: float = 0.0,
            rng_seed: Optional[int] = None) -> tuple[np.ndarray, LstmState]:
    """Score one sequence; returns per-step probabilities and final state.

    Training mode (dropout applied) is selected by passing ``rng_seed``;
    without it the pass is deterministic inference.
    """
    T = len(frames)
    hidden = params.hidden_size
    if T == 0:
        return np.zeros(0), LstmState.zeros(hidden)
    X, resets = _as_batch(frames, reset_mask)
    rng = np.random.default_rng(rng_seed) if rng_seed is not None else None
    out = forward_batch(params, X, resets, np.zeros((1, hidden)), np.zeros((1, hidden)),
                        dropout_p=dropout_p, rng=rng)
    return out.probs[:, 0], LstmState(h=out.h[0].copy(), c=out.c[0].copy())


def backward(params: ModelParams, frames, reset_mask, labels, weights,
             dropout_p: float = 0.0, rng_seed: Optional[int] = None) -> ModelParams:
    """Analytic gradient of ``loss_weighted_bce(forward(...))`` for one
    sequence.  With the same ``rng_seed`` the dropout masks match the
    paired forward pass exactly."""
    T = len(frames)
    if T == 0:
        return params.zeros_like()
    X, resets = _as_batch(frames, reset_mask)
    rng = np.random.default_rng(rng_seed) if rng_seed is not None else None
    out = forward_batch(params, X, resets,
                        np.zeros((1, params.hidden_size)), np.zeros((1, params.hidden_size)),
                        dropout_p=dropout_p, rng=rng, want_cache=True)
    labels = np.asarray(labels, dtype=np.float64).reshape(T, 1)
    weights = np.asarray(weights, dtype=np.float64).reshape(T, 1)
    grads, _, _ = backward_batch(params, out.cache, labels, weights,
                                 np.ones((T, 1), dtype=bool))
    return grads


def loss_weighted_bce(probs, labels, weights) -> float:
    """Weight-normalized binary cross entropy:
    sum(w * bce) / sum(w), with probabilities strictly inside (0, 1)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not (p.shape == y.shape == w.shape):
        raise ValueError(f"length mismatch: {p.shape}, {y.shape}, {w.shape}")
    if p.size == 0:
        return 0.0
    per_step = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float((w * per_step).sum() / w.sum())


def infer_step(params: ModelParams, frame, state: LstmState) -> tuple[float, LstmState]:
    """Inference for a single action: one LSTM step plus the dense head.

    Matches ``forward`` in inference mode step for step; used by the
    streaming scorer where actions arrive one at a time.
    """
    new_state = lstm_step(params, frame, state)
    a1 = np.maximum(params.dense1_W @ new_state.h + params.dense1_b, 0.0)
    a2 = np.maximum(params.dense2_W @ a1 + params.dense2_b, 0.0)
    prob = sigmoid(params.out_W @ a2 + params.out_b)[0]
    return float(np.clip(prob, _PROB_LO, _PROB_HI)), new_state


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class OptState:
    """RMSprop state: running mean of squared gradients per parameter."""

    sq: ModelParams
    rho: float = 0.9
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, rho: float = 0.9,
                   eps: float = 1e-8) -> "OptState":
        return cls(sq=params.zeros_like(), rho=rho, eps=eps)


def rmsprop_update(params: ModelParams, grads: ModelParams, opt: OptState,
                   lr: float = 0.001) -> tuple[ModelParams, OptState]:
    """s <- rho*s + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(s)+eps)."""
    new_sq = []
    new_params = []
    for theta, g, s in zip(params.arrays(), grads.arrays(), opt.sq.arrays()):
        s2 = opt.rho * s + (1.0 - opt.rho) * g * g
        new_sq.append(s2)
        new_params.append(theta - lr * g / (np.sqrt(s2) + opt.eps))
    return (ModelParams(*new_params),
            OptState(sq=ModelParams(*new_sq), rho=opt.rho, eps=opt.eps))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """Write magic, the 8-dim header, then tensors row-major as little-
    endian float64, atomically (write-then-rename)."""
    header = _HEADER_STRUCT.pack(
        params.input_dim, params.hidden_size,
        params.dense1_size, params.dense2_size, *_LAYER_MARKERS,
    )
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays()
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(CHECKPOINT_MAGIC)
            handle.write(header)
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_checkpoint(path) -> ModelParams:
    """Inverse of :func:`save_checkpoint`; bit-identical round trip."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic (not an {CHECKPOINT_MAGIC.decode()} checkpoint)")
    if len(blob) < 4 + _HEADER_STRUCT.size:
        raise CheckpointError(f"{path}: truncated header")
    dims = _HEADER_STRUCT.unpack(blob[4:4 + _HEADER_STRUCT.size])
    input_dim, hidden, h1, h2 = dims[:4]
    if dims[4:] != _LAYER_MARKERS:
        raise CheckpointError(f"{path}: bad layer markers {dims[4:]}")
    if min(input_dim, hidden, h1, h2) < 1:
        raise CheckpointError(f"{path}: bad dimensions {dims[:4]}")
    shapes = (
        (4 * hidden, input_dim + hidden), (4 * hidden,),
        (h1, hidden), (h1,), (h2, h1), (h2,), (1, h2), (1,),
    )
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    body = blob[4 + _HEADER_STRUCT.size:]
    if len(body) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(body)} bytes, expected {expected}"
        )
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        arrays.append(arr.astype(np.float64).reshape(shape))
        offset += count * 8
    return ModelParams(*arrays)
