"""Ground-truth attention forward/backward and a finite-difference oracle.

The forward pass is the plain three-step pipeline

    S = scale * Q K^T,   P = softmax_rows(S),   O = P V

with every intermediate materialized, and the backward pass is its
analytic derivative. Both serve as the correctness yardstick for the
tiled kernels, so nothing here models memory traffic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidRangeError, NumericsError, OracleError, ShapeError
from .tensor import DenseTensor


@dataclass(frozen=True)
class AttnParams:
    """Multiplier applied to Q K^T before the softmax (default 1.0)."""

    scale: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.scale) or self.scale <= 0:
            raise InvalidRangeError(f"scale must be finite and > 0, got {self.scale}")


@dataclass(frozen=True)
class AttnIntermediates:
    """Pre-softmax scores S and attention weights P cached by the forward pass."""

    S: DenseTensor
    P: DenseTensor

    def __post_init__(self):
        if self.S.ndim != 2 or self.S.shape != self.P.shape:
            raise ShapeError(
                f"S and P must be equal 2-D shapes, got {self.S.shape} and {self.P.shape}"
            )


def softmax_rows(S: DenseTensor) -> DenseTensor:
    """Row-wise softmax with the row max subtracted before exponentiation."""
    if S.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {S.shape}")
    s = S.array
    if not np.isfinite(s).all():
        raise NumericsError("softmax input contains non-finite entries")
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return DenseTensor(s.shape, e / e.sum(axis=1, keepdims=True))


def _check_qkv(q: DenseTensor, k: DenseTensor, v: DenseTensor) -> tuple[int, int]:
    if q.ndim != 2:
        raise ShapeError(f"Q/K/V must be 2-D, got {q.shape}")
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    return q.shape


def naive_forward(
    q: DenseTensor, k: DenseTensor, v: DenseTensor, params: AttnParams = AttnParams()
) -> tuple[DenseTensor, AttnIntermediates]:
    """Standard attention forward; returns the output and cached S, P."""
    _check_qkv(q, k, v)
    s = params.scale * (q.array @ k.array.T)
    S = DenseTensor(s.shape, s)
    P = softmax_rows(S)
    o = P.array @ v.array
    return DenseTensor(o.shape, o), AttnIntermediates(S=S, P=P)


def softmax_backward(P: DenseTensor, dP: DenseTensor) -> DenseTensor:
    """Pull dP back through the row softmax.

    dS[i][j] = P[i][j] * (dP[i][j] - sum_l P[i][l] * dP[i][l]); every row
    of the result sums to zero.
    """
    if P.ndim != 2 or P.shape != dP.shape:
        raise ShapeError(f"shape mismatch: P {P.shape} vs dP {dP.shape}")
    p, dp = P.array, dP.array
    row_dot = (p * dp).sum(axis=1, keepdims=True)
    return DenseTensor(p.shape, p * (dp - row_dot))


def naive_backward(
    q: DenseTensor,
    k: DenseTensor,
    v: DenseTensor,
    cache: AttnIntermediates,
    dO: DenseTensor,
    params: AttnParams = AttnParams(),
) -> tuple[DenseTensor, DenseTensor, DenseTensor]:
    """Analytic gradients (dQ, dK, dV) of standard attention.

    dV = P^T dO; dP = dO V^T; dS via :func:`softmax_backward`;
    dQ = scale * dS K; dK = scale * dS^T Q.
    """
    shape = _check_qkv(q, k, v)
    if dO.shape != shape:
        raise ShapeError(f"dO shape {dO.shape} does not match Q/K/V shape {shape}")
    if cache.P.shape != (shape[0], shape[0]):
        raise ShapeError(
            f"cache shape {cache.P.shape} inconsistent with sequence length {shape[0]}"
        )
    p = cache.P.array
    dv = p.T @ dO.array
    dp = dO.array @ v.array.T
    ds = softmax_backward(cache.P, DenseTensor(dp.shape, dp)).array
    dq = params.scale * (ds @ k.array)
    dk = params.scale * (ds.T @ q.array)
    return (
        DenseTensor(dq.shape, dq),
        DenseTensor(dk.shape, dk),
        DenseTensor(dv.shape, dv),
    )


def finite_diff_grad(
    f: Callable[[DenseTensor], float], x: DenseTensor, h: float = 1e-5
) -> DenseTensor:
    """Central-difference gradient of a scalar function, one probe per element."""
    if not (h > 0 and math.isfinite(h)):
        raise InvalidRangeError(f"step must be finite and > 0, got {h}")
    base = x.array.reshape(-1)
    grad = np.empty_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        f_plus = f(DenseTensor(x.shape, bumped))
        bumped[i] = base[i] - h
        f_minus = f(DenseTensor(x.shape, bumped))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise OracleError(f"non-finite evaluation at element {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return DenseTensor(x.shape, grad)
