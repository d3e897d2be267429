"""Dense float64 matrix ops, seeded RNG, and the finite-difference gradient checker.

Everything numeric in this package is a plain 2-D (or 1-D) ``numpy.ndarray``
of float64.  The helpers here add the shape contracts the rest of the code
relies on, plus the central-difference harness used to validate every
hand-derived backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(a) -> np.ndarray:
    """Coerce to a float64 array without copying when already one."""
    return np.asarray(a, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with sequential accumulation over the inner dimension.

    Accumulating rank-1 terms in index order makes the result bitwise equal
    to the classic triple loop, independent of the BLAS backend's blocking.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: need 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for t in range(a.shape[1]):
        out += a[:, t:t + 1] * b[t:t + 1, :]
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product; operands must have identical shapes."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise sum; operands must have identical shapes."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return a + b


def make_rng(seed: int | Sequence[int], stream: int = 0) -> np.random.Generator:
    """Seeded counter-based generator (Philox).

    Identical (seed, stream) pairs give bitwise-identical draw sequences, so
    every experiment in this package is reproducible from its seed alone.
    """
    if isinstance(seed, (int, np.integer)):
        key = [int(seed), int(stream)]
    else:
        key = [int(s) for s in seed] + [int(stream)]
    return np.random.Generator(np.random.Philox(key))


def grad_check(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between an analytic gradient and central differences.

    For each coordinate i the numeric gradient is
    ``(f(theta + h e_i) - f(theta - h e_i)) / (2 h)`` and the reported error is
    ``max_i |g_a[i] - g_n[i]| / max(1, |g_a[i]| + |g_n[i]|)``.

    ``f`` must be a pure function of ``theta``; it is evaluated 2 * len(theta)
    times on perturbed copies.
    """
    theta = as_matrix(theta).ravel()
    analytic_grad = as_matrix(analytic_grad).ravel()
    if theta.shape != analytic_grad.shape:
        raise ShapeError(
            f"grad_check: theta {theta.shape} vs gradient {analytic_grad.shape}"
        )
    worst = 0.0
    work = theta.copy()
    for i in range(theta.size):
        orig = work[i]
        work[i] = orig + h
        f_plus = float(f(work))
        work[i] = orig - h
        f_minus = float(f(work))
        work[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"grad_check: non-finite f at coordinate {i}")
        g_n = (f_plus - f_minus) / (2.0 * h)
        g_a = analytic_grad[i]
        err = abs(g_a - g_n) / max(1.0, abs(g_a) + abs(g_n))
        if err > worst:
            worst = err
    return worst
