"""Squared-exponential kernel and covariance matrices between centroid sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative jitter added to Gram diagonals before factorization; protects
# Cholesky against duplicate or near-duplicate centroids.
JITTER_REL = 1e-8


@dataclass(frozen=True)
class SEKernelParams:
    """Amplitude and length scale of the squared-exponential kernel.

    Both parameters are strictly positive; optimizers work on their
    logarithms, this container holds natural units.
    """

    alpha: float
    gamma: float

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")

    @property
    def log_params(self) -> np.ndarray:
        return np.array([np.log(self.alpha), np.log(self.gamma)])

    @classmethod
    def from_log(cls, log_alpha: float, log_gamma: float) -> "SEKernelParams":
        return cls(alpha=float(np.exp(log_alpha)), gamma=float(np.exp(log_gamma)))


def se_kernel(params: SEKernelParams, x, x2) -> float:
    """alpha^2 * exp(-||x - x2||^2 / (2 gamma^2)) for a single pair."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d2 = float(np.sum((x - x2) ** 2))
    return params.alpha**2 * float(np.exp(-0.5 * d2 / params.gamma**2))


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, |A| x |B|."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cov_matrix(params: SEKernelParams, A, B) -> np.ndarray:
    """Covariance matrix with entry (i, j) = se_kernel(params, A[i], B[j])."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("centroid lists must be nonempty")
    K = params.alpha**2 * np.exp(-0.5 * sq_dists(A, B) / params.gamma**2)
    if A.shape == B.shape and np.array_equal(A, B):
        K = 0.5 * (K + K.T)
    return K
