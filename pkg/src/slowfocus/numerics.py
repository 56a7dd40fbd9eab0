"""Dense float64 matrix helpers: products, softmax, the per-frequency FFN and a
finite-difference JVP used to check analytic derivatives.

Matrices are plain 2-D ``numpy.ndarray`` objects. ``as_matrix`` validates and
freezes them (read-only copy); every operation here returns a fresh array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from scipy.special import erf

from . import kernels


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_matrix(x) -> np.ndarray:
    m = np.array(x, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains NaN or Inf")
    m.setflags(write=False)
    return m


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return kernels.matmul(a, b)


def row_softmax(m, scale: float = 1.0) -> np.ndarray:
    """Row-wise ``softmax(m / scale)`` with max subtraction."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError(f"row_softmax needs a non-empty matrix, got shape {m.shape}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return kernels.row_softmax(m, scale)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


Activation = Literal["identity", "gelu"]


@dataclass(frozen=True)
class FfnParams:
    """Single affine d->d layer followed by an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = "gelu"

    def __post_init__(self):
        w = as_matrix(self.weight)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.shape[0] != w.shape[1]:
            raise ShapeError(f"FFN weight must be square, got {w.shape}")
        if b.shape[0] != w.shape[1]:
            raise ShapeError(f"bias length {b.shape[0]} != weight cols {w.shape[1]}")
        if self.activation not in ("identity", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, dim: int) -> FfnParams:
        return cls(np.eye(dim), np.zeros(dim), "identity")

    @classmethod
    def init(cls, dim: int, seed: int, activation: Activation = "gelu") -> FfnParams:
        rng = np.random.default_rng(seed)
        weight = rng.normal(0.0, 1.0 / math.sqrt(dim), size=(dim, dim))
        return cls(weight, np.zeros(dim), activation)


def _ffn_pre(m: np.ndarray, p: FfnParams) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != p.weight.shape[0]:
        raise ShapeError(f"input {m.shape} does not match FFN weight {p.weight.shape}")
    return kernels.matmul(m, p.weight) + p.bias


def ffn_apply(m, p: FfnParams) -> np.ndarray:
    if p.activation == "identity" and _is_identity(p):
        return np.array(m, dtype=np.float64)
    pre = _ffn_pre(m, p)
    return gelu(pre) if p.activation == "gelu" else pre


def ffn_jvp(m, tangent, p: FfnParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(ffn(m), d ffn(m)[tangent])``."""
    if p.activation == "identity" and _is_identity(p):
        return np.array(m, dtype=np.float64), np.array(tangent, dtype=np.float64)
    pre = _ffn_pre(m, p)
    dpre = kernels.matmul(np.asarray(tangent, dtype=np.float64), p.weight)
    if p.activation == "gelu":
        return gelu(pre), gelu_grad(pre) * dpre
    return pre, dpre


def _is_identity(p: FfnParams) -> bool:
    return not p.bias.any() and np.array_equal(p.weight, np.eye(p.dim))


def finite_diff_jvp(
    f: Callable[[np.ndarray], np.ndarray], x, v, h: float = 1e-6
) -> np.ndarray:
    """Central difference ``(f(x + h v) - f(x - h v)) / 2h``."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ShapeError(f"tangent shape {v.shape} != point shape {x.shape}")
    if not h > 0:
        raise ValueError("step h must be positive")
    plus = np.asarray(f(x + h * v), dtype=np.float64)
    minus = np.asarray(f(x - h * v), dtype=np.float64)
    out = (plus - minus) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite value in finite difference")
    return out


def format_matrix(m) -> str:
    m = as_matrix(m)
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in m)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2:
        raise ShapeError("matrix text is missing the 'rows cols' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise ShapeError(f"malformed matrix text: {exc}") from None
    if rows < 0 or cols < 0 or len(values) != rows * cols:
        raise ShapeError(f"header {rows}x{cols} does not match {len(values)} values")
    return as_matrix(np.array(values, dtype=np.float64).reshape(rows, cols))


def write_matrix(path: str | Path, m) -> None:
    Path(path).write_text(format_matrix(m))


def read_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())
