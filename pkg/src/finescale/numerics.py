"""Dense SPD linear algebra and an unconstrained BFGS minimizer."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class FactorizationError(Exception):
    """Cholesky failed: the matrix is not positive definite."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class OptimizationError(Exception):
    """Non-finite objective or gradient encountered during optimization."""

    def __init__(self, message: str, point: np.ndarray | None = None):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T equal to the factored matrix."""

    L: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class OptimizeResult:
    argmin: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool


def cholesky(M: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix; caller applies jitter."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = np.abs(M).max()
    if scale > 0 and np.abs(M - M.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within 1e-10 relative")
    try:
        L = scipy.linalg.cholesky(M, lower=True)
    except scipy.linalg.LinAlgError as exc:
        m = re.search(r"(\d+)", str(exc))
        pivot = int(m.group(1)) if m else None
        raise FactorizationError(
            f"matrix not positive definite (pivot {pivot})", pivot=pivot
        ) from exc
    return CholeskyFactor(L=L)


def solve(F: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """M^-1 b via two triangular solves; b may be a vector or matrix."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError(f"shape mismatch: factor is {F.n}x{F.n}, b has leading dim {b.shape[0]}")
    return scipy.linalg.cho_solve((F.L, True), b)


def log_det(F: CholeskyFactor) -> float:
    """log det(M) = 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(F.L))))


def bfgs_minimize(
    f,
    x0: np.ndarray,
    gtol: float = 1e-6,
    ftol: float = 1e-10,
    max_iter: int = 500,
    armijo_c: float = 1e-4,
    backtrack_factor: float = 0.5,
    max_backtracks: int = 50,
) -> OptimizeResult:
    """Full BFGS with backtracking Armijo line search.

    ``f`` maps a parameter vector to ``(value, gradient)``. Stops when the
    infinity norm of the gradient falls below ``gtol``, the relative
    objective change falls below ``ftol``, or the iteration cap is hit.
    Line-search failure returns the best point so far with converged=False.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    fx, g = f(x)
    if not (np.isfinite(fx) and np.all(np.isfinite(g))):
        raise OptimizationError("non-finite objective or gradient at initial point", point=x)
    Hinv = np.eye(n)
    iterations = 0
    for iterations in range(max_iter + 1):
        gnorm = float(np.abs(g).max()) if n else 0.0
        if gnorm <= gtol:
            return OptimizeResult(x, float(fx), gnorm, iterations, True)
        if iterations == max_iter:
            break
        d = -Hinv @ g
        slope = float(g @ d)
        if slope >= 0:  # Hinv lost positive definiteness; reset to steepest descent
            Hinv = np.eye(n)
            d = -g
            slope = float(g @ d)
        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * d
            fx_new, g_new = f(x_new)
            if np.isfinite(fx_new) and fx_new <= fx + armijo_c * step * slope:
                if not np.all(np.isfinite(g_new)):
                    raise OptimizationError("non-finite gradient", point=x_new)
                accepted = True
                break
            step *= backtrack_factor
        if not accepted:
            return OptimizeResult(x, float(fx), gnorm, iterations, False)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * max(1.0, float(np.linalg.norm(s)) * float(np.linalg.norm(y))):
            rho = 1.0 / sy
            I = np.eye(n)
            V = I - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        rel_change = abs(fx - fx_new) / max(1.0, abs(fx))
        x, fx, g = x_new, fx_new, g_new
        if rel_change <= ftol:
            return OptimizeResult(x, float(fx), float(np.abs(g).max()), iterations + 1, True)
    return OptimizeResult(x, float(fx), float(np.abs(g).max()), iterations, False)


def grad_check(f, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    x = np.asarray(x, dtype=float)
    _, g = f(x)
    g = np.asarray(g, dtype=float)
    worst = 0.0
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fp, _ = f(x + e)
        fm, _ = f(x - e)
        numeric = (fp - fm) / (2 * h)
        err = abs(g[k] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
