"""Per-auxiliary GP hyperparameter estimation and fine-centroid posteriors."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from finescale.geo import ArealDataset, Partition
from finescale.kernel import JITTER_REL, SEKernelParams, cov_matrix, sq_dists
from finescale.numerics import bfgs_minimize, cholesky, log_det, solve

SIGMA_FLOOR = 1e-6


class AuxFitError(RuntimeError):
    """Hyperparameter optimization failed for an auxiliary dataset."""


@dataclass(frozen=True)
class AuxGPModel:
    dataset_id: str
    params: SEKernelParams
    noise_sigma: float
    train_centroids: np.ndarray
    train_values: np.ndarray  # original (uncentered) values
    offset: float  # empirical mean removed before fitting
    scale: float  # unit-variance factor used during optimization
    log_marginal: float

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "log_alpha": float(np.log(self.params.alpha)),
            "log_gamma": float(np.log(self.params.gamma)),
            "log_sigma": float(np.log(self.noise_sigma)),
            "offset": float(self.offset),
            "scale": float(self.scale),
            "log_marginal": float(self.log_marginal),
        }

    @classmethod
    def from_dict(cls, d: dict, train_centroids, train_values) -> "AuxGPModel":
        return cls(
            dataset_id=d["dataset_id"],
            params=SEKernelParams.from_log(d["log_alpha"], d["log_gamma"]),
            noise_sigma=float(np.exp(d["log_sigma"])),
            train_centroids=np.asarray(train_centroids, dtype=float),
            train_values=np.asarray(train_values, dtype=float),
            offset=d["offset"],
            scale=d["scale"],
            log_marginal=d["log_marginal"],
        )


@dataclass(frozen=True)
class AuxPosterior:
    dataset_id: str
    mean: np.ndarray
    cov: np.ndarray

    @property
    def avg_variance(self) -> float:
        return float(np.mean(np.diag(self.cov)))


def _gram(params: SEKernelParams, sigma: float, X: np.ndarray) -> np.ndarray:
    K = cov_matrix(params, X, X)
    n = X.shape[0]
    return K + (sigma**2 + JITTER_REL * params.alpha**2) * np.eye(n)


def aux_log_marginal(params: SEKernelParams, sigma: float, X, y) -> float:
    """log N(y | 0, K + sigma^2 I) for a zero-mean GP at centroids X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    F = cholesky(_gram(params, sigma, X))
    beta = solve(F, y)
    n = y.size
    return float(-0.5 * y @ beta - 0.5 * log_det(F) - 0.5 * n * np.log(2 * np.pi))


def _nll_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, D2: np.ndarray):
    """Negative log marginal and gradient over (log alpha, log gamma, log sigma)."""
    log_alpha, log_gamma, log_sigma = theta
    if log_sigma < np.log(SIGMA_FLOOR) or np.abs(theta).max() > 20:
        return np.inf, np.zeros(3)
    alpha, gamma, sigma = np.exp(theta)
    n = y.size
    K = alpha**2 * np.exp(-0.5 * D2 / gamma**2)
    jitter = JITTER_REL * alpha**2
    A = K + (sigma**2 + jitter) * np.eye(n)
    try:
        F = cholesky(A)
    except Exception:
        return np.inf, np.zeros(3)
    beta = solve(F, y)
    nll = 0.5 * y @ beta + 0.5 * log_det(F) + 0.5 * n * np.log(2 * np.pi)
    Ainv = solve(F, np.eye(n))
    M = np.outer(beta, beta) - Ainv  # d logL / dA direction
    dA = [
        2.0 * (K + jitter * np.eye(n)),  # d/d log alpha
        K * (D2 / gamma**2),  # d/d log gamma
        2.0 * sigma**2 * np.eye(n),  # d/d log sigma
    ]
    grad = np.array([-0.5 * np.sum(M * dAk) for dAk in dA])
    return float(nll), grad


def median_pairwise_distance(X: np.ndarray) -> float:
    D2 = sq_dists(X, X)
    upper = D2[np.triu_indices(X.shape[0], k=1)]
    if upper.size == 0 or np.all(upper == 0):
        return 1.0
    return float(np.sqrt(np.median(upper[upper > 0])))


def fit_aux_gp(
    data: ArealDataset,
    restarts: int = 5,
    seed: int = 0,
    dataset_id: str | None = None,
    center: bool = True,
    gtol: float = 1e-6,
) -> AuxGPModel:
    """Maximize log N(y | 0, K + sigma^2 I) over log-hyperparameters.

    Values are centered by their empirical mean and scaled to unit variance
    before optimization; the fitted amplitude and noise are rescaled back so
    the stored model describes the centered data in original units.
    """
    X = data.partition.centroids
    y = np.asarray(data.values, dtype=float)
    if y.size < 2:
        raise AuxFitError("need at least 2 regions to fit a GP")
    offset = float(np.mean(y)) if center else 0.0
    yc = y - offset
    scale = float(np.std(yc))
    if scale == 0.0:
        scale = 1.0
    ys = yc / scale
    D2 = sq_dists(X, X)

    std_ys = float(np.std(ys))
    base = np.log(
        [
            max(std_ys, 1e-3),  # alpha
            median_pairwise_distance(X),  # gamma
            max(0.1 * std_ys, 10 * SIGMA_FLOOR),  # sigma
        ]
    )
    rng = np.random.default_rng(seed)
    short = base + np.array([0.0, -np.log(4.0), 0.0])  # quarter length scale
    inits = [base, short] + [
        base + rng.normal(0.0, 0.5, size=3) for _ in range(max(0, restarts - 1))
    ]

    best = None
    failures = []
    for theta0 in inits:
        try:
            res = bfgs_minimize(lambda t: _nll_and_grad(t, X, ys, D2), theta0, gtol=gtol)
        except Exception as exc:  # pragma: no cover - defensive
            failures.append(str(exc))
            continue
        if best is None or res.objective < best.objective:
            best = res
    if best is None:
        raise AuxFitError(f"all restarts failed: {failures}")
    log_alpha, log_gamma, log_sigma = best.argmin
    params = SEKernelParams(alpha=scale * float(np.exp(log_alpha)), gamma=float(np.exp(log_gamma)))
    sigma = scale * float(np.exp(log_sigma))
    # log-marginal of the centered data in original units
    lm = -best.objective - y.size * np.log(scale)
    return AuxGPModel(
        dataset_id=dataset_id or data.partition.name,
        params=params,
        noise_sigma=sigma,
        train_centroids=X,
        train_values=y,
        offset=offset,
        scale=scale,
        log_marginal=float(lm),
    )


def predict_aux(model: AuxGPModel, test_centroids) -> AuxPosterior:
    """Predictive mean and covariance at the test centroids.

    mean = offset + K*^T (K + sigma^2 I)^-1 (y - offset)
    cov  = K** - K*^T (K + sigma^2 I)^-1 K*
    """
    Xt = np.atleast_2d(np.asarray(test_centroids, dtype=float))
    X = model.train_centroids
    yc = model.train_values - model.offset
    F = cholesky(_gram(model.params, model.noise_sigma, X))
    Ks = cov_matrix(model.params, X, Xt)
    Kss = cov_matrix(model.params, Xt, Xt)
    mean = model.offset + Ks.T @ solve(F, yc)
    cov = Kss - Ks.T @ solve(F, Ks)
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    if d.min() < -1e-10:
        raise RuntimeError(f"predictive variance {d.min()} below clamp tolerance")
    np.fill_diagonal(cov, np.maximum(d, 0.0))
    return AuxPosterior(dataset_id=model.dataset_id, mean=mean, cov=cov)


def fit_all_aux(
    datasets: list[ArealDataset],
    fine: Partition,
    restarts: int = 5,
    seed: int = 0,
    dataset_ids: list[str] | None = None,
) -> list[tuple[AuxGPModel, AuxPosterior]]:
    """Fit every auxiliary GP and predict at the fine centroids.

    Fits are independent; each uses the same seed, so identical datasets
    yield identical results regardless of position or execution order.
    """
    if not datasets:
        return []
    ids = dataset_ids or [d.partition.name for d in datasets]
    Xf = fine.centroids

    def one(k: int):
        try:
            model = fit_aux_gp(datasets[k], restarts=restarts, seed=seed, dataset_id=ids[k])
            return model, predict_aux(model, Xf)
        except Exception as exc:
            raise AuxFitError(f"auxiliary {ids[k]!r}: {exc}") from exc

    threads = int(os.environ.get("DOWNSCALE_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(datasets))))
    return [one(k) for k in range(len(datasets))]
