"""Fallback implementations of the compiled kernels (numpy / plain Python).

Same names and signatures as the Cython module ``slowfocus._kernels``.
"""
from __future__ import annotations

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def row_softmax(x: np.ndarray, scale: float) -> np.ndarray:
    z = x / scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    return row_softmax(q @ k.T, scale) @ v


def block_mean(x: np.ndarray, out_rows: int) -> np.ndarray:
    rows, c = x.shape
    return x.reshape(out_rows, rows // out_rows, c).mean(axis=1)


def adjacent_cosine_distance(f: np.ndarray) -> np.ndarray:
    a, b = f[:-1], f[1:]
    dots = np.einsum("ij,ij->i", a, b)
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return 1.0 - dots / norms


def lcs_length(a, b) -> int:
    if len(a) == 0 or len(b) == 0:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        diag = 0
        for j, y in enumerate(b):
            up = row[j + 1]
            if x == y:
                row[j + 1] = diag + 1
            elif row[j] > up:
                row[j + 1] = row[j]
            diag = up
    return row[-1]
