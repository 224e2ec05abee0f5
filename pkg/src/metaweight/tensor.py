"""Numeric core: parameter storage, seeded RNG, elementary ops with gradients.

Everything is float64. Arrays are plain numpy arrays; ``ParamVector`` adds a
flat buffer with named, shaped segments so optimizers and checkpoints can
treat a model's parameters as one vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class GradientCheckError(ArithmeticError):
    """Raised when the finite-difference oracle sees a non-finite value."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox4x64-10 generator keyed by ``(seed, stream)``.

    Philox is counter-based, so the stream for a given key is identical on
    every platform. Distinct ``stream`` ids give independent sub-streams for
    data shuffling, initialization and sampling without coupling them.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sigmoid(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def open_unit(w):
    """Clamp probabilities into the open interval (0, 1) at float64 resolution."""
    return np.clip(w, np.finfo(DTYPE).tiny, 1.0 - np.finfo(DTYPE).epsneg)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[target]`` and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=DTYPE)
    if not 0 <= target < logits.shape[0]:
        raise IndexError(f"target {target} out of range for {logits.shape[0]} classes")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad


def softmax_cross_entropy_rows(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`softmax_cross_entropy` for an ``(n, k)`` block."""
    n, k = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ValueError("one target per row required")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise IndexError("target out of range")
    logp = log_softmax(logits)
    rows = np.arange(n)
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return -logp[rows, targets], grad


class ParamVector:
    """Flat float64 buffer partitioned into named, shaped segments.

    ``pv["W"]`` returns a writable view into the buffer. Arithmetic returns
    new vectors with the same layout; the layout itself is fixed at
    construction.
    """

    __slots__ = ("_layout", "_offsets", "values")

    def __init__(self, layout: Sequence[tuple[str, tuple[int, ...]]], values: np.ndarray | None = None):
        names = [name for name, _ in layout]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate segment names in {names}")
        self._layout = tuple((name, tuple(int(d) for d in shape)) for name, shape in layout)
        self._offsets = {}
        pos = 0
        for name, shape in self._layout:
            size = int(np.prod(shape, dtype=np.int64))
            self._offsets[name] = (pos, pos + size, shape)
            pos += size
        if values is None:
            values = np.zeros(pos, dtype=DTYPE)
        else:
            values = np.ascontiguousarray(values, dtype=DTYPE).reshape(-1)
            if values.shape[0] != pos:
                raise ValueError(f"expected {pos} values, got {values.shape[0]}")
        self.values = values

    @property
    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return self._layout

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self._layout]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, name: str) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        return self.values[lo:hi].reshape(shape)

    def __setitem__(self, name: str, value) -> None:
        self[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._offsets

    def segment_slice(self, name: str) -> slice:
        lo, hi, _ = self._offsets[name]
        return slice(lo, hi)

    def like(self, values: np.ndarray | None = None) -> "ParamVector":
        return ParamVector(self._layout, values)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self._layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self._layout, self.values.copy())

    def _check(self, other: "ParamVector") -> None:
        if other._layout != self._layout:
            raise ValueError("ParamVector layouts differ")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return self.like(self.values + other.values)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return self.like(self.values - other.values)

    def __mul__(self, scalar: float) -> "ParamVector":
        return self.like(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return self.like(-self.values)

    def axpy(self, alpha: float, other: "ParamVector") -> "ParamVector":
        """Return ``self + alpha * other``."""
        self._check(other)
        return self.like(self.values + alpha * other.values)

    def dot(self, other: "ParamVector") -> float:
        self._check(other)
        return float(self.values @ other.values)

    def allclose(self, other: "ParamVector", rtol=1e-7, atol=0.0) -> bool:
        return self._layout == other._layout and np.allclose(self.values, other.values, rtol=rtol, atol=atol)

    def __repr__(self) -> str:
        segs = ", ".join(f"{n}{list(s)}" for n, s in self._layout)
        return f"ParamVector({segs})"

    # checkpoint format: b"MWPV" | u32 version | u32 nseg |
    #   per segment: u16 name_len | name utf-8 | u32 ndim | u32 dims... |
    #   then all values as little-endian float64 in layout order
    _MAGIC = b"MWPV"
    _VERSION = 1

    def to_bytes(self) -> bytes:
        parts = [self._MAGIC, struct.pack("<II", self._VERSION, len(self._layout))]
        for name, shape in self._layout:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        parts.append(self.values.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamVector":
        if blob[:4] != cls._MAGIC:
            raise ValueError("not a parameter checkpoint")
        version, nseg = struct.unpack_from("<II", blob, 4)
        if version != cls._VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 12
        layout = []
        for _ in range(nseg):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            layout.append((name, tuple(shape)))
        values = np.frombuffer(blob, dtype="<f8", offset=pos).astype(DTYPE)
        return cls(layout, values)


def finite_difference_grad(f: Callable[[ParamVector], float], p: ParamVector, h: float = 1e-5,
                           coords: Iterable[int] | None = None) -> ParamVector:
    """Central-difference gradient of scalar ``f`` at ``p``.

    ``coords`` restricts the probe to a subset of flat indices (the rest of
    the result stays zero), which keeps checks on large models affordable.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    out = p.zeros_like()
    probe = p.copy()
    idx = range(p.size) if coords is None else coords
    for k in idx:
        orig = probe.values[k]
        probe.values[k] = orig + h
        fp = f(probe)
        probe.values[k] = orig - h
        fm = f(probe)
        probe.values[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientCheckError(f"non-finite objective at coordinate {k}")
        out.values[k] = (fp - fm) / (2.0 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)`` in the 2-norm; 0 when both vanish."""
    a = np.asarray(a, dtype=DTYPE).ravel()
    b = np.asarray(b, dtype=DTYPE).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size, dtype=DTYPE), np.zeros(size, dtype=DTYPE), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step)


def adam_step(p: ParamVector, grad: ParamVector, state: AdamState, lr: float = 1e-3,
              eps: float = 1e-8, beta1: float = 0.9, beta2: float = 0.999) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    p._check(grad)
    if state.m.shape != p.values.shape or state.v.shape != p.values.shape:
        raise ValueError("optimizer state does not match parameter shape")
    g = grad.values
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    new = p.like(p.values - lr * mhat / (np.sqrt(vhat) + eps))
    return new, AdamState(m, v, t)


@dataclass
class Adam:
    """Stateful convenience wrapper used by the training loops."""

    lr: float = 1e-3
    eps: float = 1e-8
    state: AdamState | None = field(default=None, repr=False)

    def step(self, p: ParamVector, grad: ParamVector) -> ParamVector:
        if self.state is None:
            self.state = AdamState.zeros(p.size)
        new, self.state = adam_step(p, grad, self.state, self.lr, self.eps)
        return new
