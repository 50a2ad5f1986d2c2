"""Dense networks with hand-written backpropagation, a Gaussian policy head,
an Adam optimizer and the binary checkpoint format."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"VIVRL1"


def _tanh(z):
    return np.tanh(z)


def _dtanh(z, a):
    return 1.0 - a * a


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z, a):
    return (z > 0).astype(z.dtype)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _dsoftplus(z, a):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _identity(z):
    return z


def _didentity(z, a):
    return np.ones_like(z)


ACTIVATIONS = {
    "tanh": (_tanh, _dtanh),
    "relu": (_relu, _drelu),
    "softplus": (_softplus, _dsoftplus),
    "identity": (_identity, _didentity),
}


@dataclass
class DenseNet:
    """Fully connected net; weights are stored ``(out, in)``."""

    layer_dims: tuple
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError(f"layer {i}: expected {shape}, got {w.shape}/{b.shape}")

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.activation)


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_dense(layer_dims, rng, activation="tanh", hidden_gain=1.0, output_gain=1.0) -> DenseNet:
    """Orthogonal weights, zero biases."""
    dims = tuple(layer_dims)
    ws, bs = [], []
    for i in range(len(dims) - 1):
        gain = output_gain if i == len(dims) - 2 else hidden_gain
        ws.append(_orthogonal(rng, dims[i + 1], dims[i], gain))
        bs.append(np.zeros(dims[i + 1]))
    return DenseNet(dims, ws, bs, activation)


def zeros_like_net(net: DenseNet) -> DenseNet:
    return DenseNet(net.layer_dims, [np.zeros_like(w) for w in net.weights],
                    [np.zeros_like(b) for b in net.biases], net.activation)


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"expected input width {net.layer_dims[0]}, got shape {x.shape}")
    return xb, single


def forward_cache(net: DenseNet, x):
    """Forward pass that also returns the per-layer activations for backward."""
    act, _ = ACTIVATIONS[net.activation]
    xb, single = _as_batch(net, x)
    zs, acts = [], [xb]
    h = xb
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        zs.append(z)
        h = z if i == last else act(z)
        acts.append(h)
    return (h[0] if single else h), (zs, acts, single)


def forward(net: DenseNet, x) -> np.ndarray:
    return forward_cache(net, x)[0]


def backward(net: DenseNet, cache, upstream):
    """Gradients of ``sum(upstream * forward(x))`` w.r.t. parameters and input.

    Returns ``(param_grads, dx)`` with ``param_grads`` ordered like
    ``net.params``. Batched inputs are summed over the batch.
    """
    _, dact = ACTIVATIONS[net.activation]
    zs, acts, single = cache
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single else g
    if g.shape != acts[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {acts[-1].shape}")
    grads = [None] * (2 * len(net.weights))
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * dact(zs[i], acts[i + 1])
        grads[2 * i] = g.T @ acts[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i]
    return grads, (g[0] if single else g)


def gaussian_logprob(mean, log_std, a) -> np.ndarray | float:
    """Diagonal Gaussian log-density, summed over the last axis."""
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    a = np.asarray(a, dtype=float)
    z = (a - mean) * np.exp(-log_std)
    lp = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    return lp.sum(axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(np.asarray(log_std) + 0.5 * (LOG_2PI + 1.0)))


def sample_action(mean, log_std, rng, limit: float = 0.4):
    """Draw from N(mean, exp(log_std)^2) and clamp to ``[-limit, limit]``.

    Returns ``(clamped, raw, logprob)``; the log-probability is that of the
    raw draw.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.exp(np.asarray(log_std, dtype=float))
    raw = mean + std * rng.standard_normal(mean.shape)
    return np.clip(raw, -limit, limit), raw, float(gaussian_logprob(mean, log_std, raw))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(params, grads, state: AdamState, lr: float):
    """In-place bias-corrected Adam step; rejects non-finite gradients."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient; update rejected")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def gradient_check(net: DenseNet, x, upstream, h: float = 1e-5) -> float:
    """Max relative error between ``backward`` and central differences."""
    _, cache = forward_cache(net, x)
    analytic, dx = backward(net, cache, upstream)
    up = np.asarray(upstream, dtype=float)

    def objective():
        return float(np.sum(forward(net, x) * up))

    worst = 0.0
    for p, g in zip(net.params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = objective()
            flat[i] = old - h
            fm = objective()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(1e-6, abs(num) + abs(gflat[i])))
    return worst


# -- checkpoints -----------------------------------------------------------

def pack_net(net: DenseNet, log_std=None) -> bytes:
    """Serialize one network record.

    Layout (little endian): magic ``VIVRL1``, u32 layer count, u32 dims,
    u8 activation-tag length + ASCII tag, u32 log_std length, f64 log_std,
    then per layer the row-major weights followed by the biases as f64.
    """
    ls = np.zeros(0) if log_std is None else np.asarray(log_std, dtype="<f8").reshape(-1)
    tag = net.activation.encode("ascii")
    out = [CHECKPOINT_MAGIC, struct.pack("<I", len(net.layer_dims)),
           struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims),
           struct.pack("<B", len(tag)), tag, struct.pack("<I", ls.size), ls.astype("<f8").tobytes()]
    for w, b in zip(net.weights, net.biases):
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def unpack_net(buf: bytes, offset: int = 0):
    """Inverse of :func:`pack_net`; returns ``(net, log_std, new_offset)``."""
    if buf[offset:offset + 6] != CHECKPOINT_MAGIC:
        raise ShapeError("bad checkpoint magic")
    o = offset + 6
    (nd,) = struct.unpack_from("<I", buf, o)
    o += 4
    dims = struct.unpack_from(f"<{nd}I", buf, o)
    o += 4 * nd
    (tl,) = struct.unpack_from("<B", buf, o)
    o += 1
    tag = buf[o:o + tl].decode("ascii")
    o += tl
    (nls,) = struct.unpack_from("<I", buf, o)
    o += 4
    log_std = np.frombuffer(buf, dtype="<f8", count=nls, offset=o).astype(float)
    o += 8 * nls
    ws, bs = [], []
    for i in range(nd - 1):
        n_out, n_in = dims[i + 1], dims[i]
        ws.append(np.frombuffer(buf, "<f8", n_out * n_in, o).reshape(n_out, n_in).astype(float))
        o += 8 * n_out * n_in
        bs.append(np.frombuffer(buf, "<f8", n_out, o).astype(float))
        o += 8 * n_out
    return DenseNet(dims, ws, bs, tag), log_std, o
