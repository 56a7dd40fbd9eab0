"""Multiple-frequency mixing attention.

High-frequency tokens query the low-frequency tokens of the whole video::

    L = ffn_low(h_low), H = ffn_high(h_high)
    out = softmax(H @ L.T / sqrt(d)) @ L

``mma_jvp`` is the analytic directional derivative of the same map; it is kept
free of any numerical differencing so that finite differences stay an
independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .encoding import TokenMatrix
from .numerics import FfnParams, ShapeError, ffn_apply, ffn_jvp


@dataclass(frozen=True)
class MmaParams:
    ffn_low: FfnParams
    ffn_high: FfnParams

    def __post_init__(self):
        if self.ffn_low.dim != self.ffn_high.dim:
            raise ShapeError("low and high FFNs must share the token width")

    @property
    def dim(self) -> int:
        return self.ffn_low.dim

    @classmethod
    def identity(cls, dim: int) -> MmaParams:
        return cls(FfnParams.identity(dim), FfnParams.identity(dim))

    @classmethod
    def init(cls, dim: int, seed: int) -> MmaParams:
        return cls(FfnParams.init(dim, seed), FfnParams.init(dim, seed + 1))


def _tokens(x) -> np.ndarray:
    if isinstance(x, TokenMatrix):
        return x.tokens
    return np.asarray(x, dtype=np.float64)


def _check(h_low: np.ndarray, h_high: np.ndarray, params: MmaParams) -> None:
    if h_low.ndim != 2 or h_high.ndim != 2:
        raise ShapeError("token inputs must be 2-D")
    if h_low.shape[0] < 1 or h_high.shape[0] < 1:
        raise ShapeError("both token sets must be non-empty")
    if h_low.shape[1] != params.dim or h_high.shape[1] != params.dim:
        raise ShapeError(
            f"token widths {h_low.shape[1]}/{h_high.shape[1]} != MMA width {params.dim}"
        )


def _canonical_order(low: np.ndarray) -> np.ndarray:
    # Keys are fed to the kernels in lexicographic row order, so any permutation
    # of h_low reaches them as the same array and the result is bit-identical.
    return np.lexsort(low.T[::-1])


def mma_attention_weights(h_low, h_high, params: MmaParams) -> np.ndarray:
    """``n_high x n_low`` weights; column j belongs to row j of ``h_low``."""
    low, high = _tokens(h_low), _tokens(h_high)
    _check(low, high, params)
    order = _canonical_order(low)
    keys = ffn_apply(low[order], params.ffn_low)
    queries = ffn_apply(high, params.ffn_high)
    sorted_w = kernels.row_softmax(kernels.matmul(queries, keys.T), math.sqrt(params.dim))
    weights = np.empty_like(sorted_w)
    weights[:, order] = sorted_w
    return weights


def mma_forward(h_low, h_high, params: MmaParams) -> np.ndarray:
    """Returns an ``n_high x d`` matrix; row i belongs to high-frequency token i."""
    low, high = _tokens(h_low), _tokens(h_high)
    _check(low, high, params)
    keys = ffn_apply(low[_canonical_order(low)], params.ffn_low)
    queries = ffn_apply(high, params.ffn_high)
    return kernels.attention(queries, keys, keys, math.sqrt(params.dim))


def mix(h_low: TokenMatrix, h_high: TokenMatrix, params: MmaParams) -> TokenMatrix:
    """``mma_forward`` wrapped as a token block carrying the high-frequency timestamps."""
    return TokenMatrix(mma_forward(h_low, h_high, params), h_high.timestamps_s, "mixed")


def mma_jvp(h_low, h_high, params: MmaParams, tangent_low, tangent_high) -> np.ndarray:
    low, high = _tokens(h_low), _tokens(h_high)
    _check(low, high, params)
    t_low = np.asarray(tangent_low, dtype=np.float64)
    t_high = np.asarray(tangent_high, dtype=np.float64)
    if t_low.shape != low.shape or t_high.shape != high.shape:
        raise ShapeError("tangents must match the shapes of their primals")
    order = _canonical_order(low)
    low, t_low = low[order], t_low[order]

    keys, d_keys = ffn_jvp(low, t_low, params.ffn_low)
    queries, d_queries = ffn_jvp(high, t_high, params.ffn_high)
    scale = math.sqrt(params.dim)

    weights = kernels.row_softmax(kernels.matmul(queries, keys.T), scale)
    d_scores = (d_queries @ keys.T + queries @ d_keys.T) / scale
    # per row: J_softmax = diag(s) - s s^T
    d_weights = weights * (d_scores - np.sum(weights * d_scores, axis=1, keepdims=True))
    return d_weights @ keys + weights @ d_keys
