"""Small MLP that maps a distribution summary vector to temperatures.

Forward and backward passes are written out by hand so the gradient path is
fully inspectable and checkable against finite differences.  The output head
is softplus(a) + t_min with a hard clamp at t_max, which keeps every
temperature strictly positive.  The head bias starts at softplus_inv(1 -
t_min) and the head weights at zero, so a fresh network outputs exactly 1.0
everywhere and training starts from the identity scaling.
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import BadMagicError, CascalError, TruncatedPayloadError, UnsupportedVersionError

T_MIN_DEFAULT = 0.05
T_MAX_DEFAULT = 20.0

_NET_MAGIC = b"CNET"
_NET_VERSION = 1


class DimensionMismatchError(CascalError, ValueError):
    """Input vector length does not match what the network was built for."""


class ChecksumError(CascalError, ValueError):
    """Stored checksum does not match the file contents."""


def softplus(a):
    return np.logaddexp(0.0, a)


def softplus_inv(y):
    # inverse on y > 0; written to stay stable for small and large y
    y = np.asarray(y, dtype=np.float64)
    return y + np.log1p(-np.exp(-y))


def sigmoid(a):
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine standardization fitted once on the training inputs."""

    mean: np.ndarray
    scale: np.ndarray  # stds floored: features with std <= 1e-8 pass through

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Normalizer":
        rows = np.asarray(rows, dtype=np.float64)
        mu = rows.mean(axis=0)
        std = rows.std(axis=0)
        return cls(mean=mu, scale=np.where(std > 1e-8, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass
class MlpNetwork:
    layer_sizes: tuple
    weights: list          # weights[l] has shape (layer_sizes[l], layer_sizes[l+1])
    biases: list
    t_min: float
    t_max: float
    normalizer: Normalizer

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden,
        output_dim: int,
        seed: int,
        t_min: float = T_MIN_DEFAULT,
        t_max: float = T_MAX_DEFAULT,
    ) -> "MlpNetwork":
        sizes = (int(input_dim), *(int(h) for h in hidden), int(output_dim))
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            fan_in, fan_out = sizes[l], sizes[l + 1]
            if l < len(sizes) - 2:
                weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
            else:
                # zero head weights + this bias give t == 1.0 at initialization
                weights.append(np.zeros((fan_in, fan_out)))
                biases.append(np.full(fan_out, float(softplus_inv(1.0 - t_min))))
        return cls(
            layer_sizes=sizes,
            weights=weights,
            biases=biases,
            t_min=float(t_min),
            t_max=float(t_max),
            normalizer=Normalizer.identity(sizes[0]),
        )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray):
        """Temperatures for one summary vector; returns (t, cache) for backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise DimensionMismatchError(
                f"expected input of shape ({self.input_dim},), got {x.shape}"
            )
        h = self.normalizer.apply(x)
        acts = [h]
        n_layers = len(self.weights)
        for l in range(n_layers - 1):
            a = h @ self.weights[l] + self.biases[l]
            h = np.maximum(a, 0.0)
            acts.append(h)
        head = h @ self.weights[-1] + self.biases[-1]
        t_raw = softplus(head) + self.t_min
        t = np.minimum(t_raw, self.t_max)
        cache = (acts, head, t_raw)
        return t, cache

    def backward(self, cache, g_t: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given d loss / d temperatures."""
        acts, head, t_raw = cache
        g = np.asarray(g_t, dtype=np.float64) * sigmoid(head)
        g = np.where(t_raw < self.t_max, g, 0.0)  # clamped outputs get no gradient
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = np.outer(acts[l], g)
            grads_b[l] = g.copy()
            if l > 0:
                g = (g @ self.weights[l].T) * (acts[l] > 0.0)
        return np.concatenate([np.concatenate((w.ravel(), b)) for w, b in zip(grads_w, grads_b)])

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate((w.ravel(), b)) for w, b in zip(self.weights, self.biases)]
        )

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise DimensionMismatchError(
                f"expected {self.n_params} parameters, got {flat.shape}"
            )
        off = 0
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = flat[off : off + w.size].reshape(w.shape).copy()
            off += w.size
            self.biases[l] = flat[off : off + b.size].copy()
            off += b.size


@dataclass
class AdamState:
    """Moment buffers for one parameter vector; stepping mutates the state."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step_count += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.v / (1.0 - state.beta2 ** state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- finite-difference checking ---------------------------------------------

FD_EPS = 1e-5
_ZERO_FLOOR = 1e-8  # gradient pairs both below this count as matching zeros


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_difference(f, params: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient of scalar f at params, one coordinate at a time."""
    params = np.asarray(params, dtype=np.float64)
    g = np.zeros_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] = params[i] + eps
        hi = f(p)
        p[i] = params[i] - eps
        lo = f(p)
        g[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale < _ZERO_FLOOR, 0.0, err / scale)
    return rel


def grad_check(net: MlpNetwork, x: np.ndarray, loss, eps: float = FD_EPS) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    ``loss`` maps a temperature vector to ``(value, d value / d t)``; it is
    re-evaluated inside the difference loop, so it must be deterministic.
    """
    p0 = net.get_params()
    t, cache = net.forward(x)
    _, g_t = loss(t)
    analytic = net.backward(cache, np.asarray(g_t, dtype=np.float64))

    def scalar(p):
        net.set_params(p)
        tv, _ = net.forward(x)
        value, _ = loss(tv)
        return float(value)

    try:
        numeric = finite_difference(scalar, p0, eps)
    finally:
        net.set_params(p0)
    rel = relative_errors(analytic, numeric)
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_error=float(rel[worst]),
        worst_index=worst,
        analytic=analytic,
        numeric=numeric,
    )


# --- checkpoints -------------------------------------------------------------
# magic, version, layer count, layer sizes, t bounds, normalizer, flat params,
# then a sha256 of everything before it.  Loading verifies the digest.


def network_to_bytes(net: MlpNetwork) -> bytes:
    head = _NET_MAGIC + struct.pack("<BB", _NET_VERSION, len(net.layer_sizes))
    head += struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes)
    head += struct.pack("<dd", net.t_min, net.t_max)
    body = (
        np.ascontiguousarray(net.normalizer.mean, dtype="<f8").tobytes()
        + np.ascontiguousarray(net.normalizer.scale, dtype="<f8").tobytes()
        + np.ascontiguousarray(net.get_params(), dtype="<f8").tobytes()
    )
    payload = head + body
    return payload + hashlib.sha256(payload).digest()


def network_from_bytes(blob: bytes) -> MlpNetwork:
    if len(blob) < 38:
        raise TruncatedPayloadError(f"checkpoint too short: {len(blob)} bytes")
    if blob[:4] != _NET_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {blob[:4]!r}")
    version, n_sizes = struct.unpack_from("<BB", blob, 4)
    if version != _NET_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, 6)
    off = 6 + 4 * n_sizes
    t_min, t_max = struct.unpack_from("<dd", blob, off)
    off += 16
    dim = sizes[0]
    mean = np.frombuffer(blob, "<f8", dim, off).copy()
    off += 8 * dim
    scale = np.frombuffer(blob, "<f8", dim, off).copy()
    off += 8 * dim
    net = MlpNetwork.create(sizes[0], sizes[1:-1], sizes[-1], seed=0, t_min=t_min, t_max=t_max)
    n_params = net.n_params
    if len(payload) != off + 8 * n_params:
        raise TruncatedPayloadError(
            f"expected {off + 8 * n_params + 32} bytes, got {len(blob)}"
        )
    net.set_params(np.frombuffer(blob, "<f8", n_params, off))
    net.normalizer = Normalizer(mean=mean, scale=scale)
    return net


def save_network(net: MlpNetwork, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(network_to_bytes(net))
    os.replace(tmp, path)


def load_network(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())
