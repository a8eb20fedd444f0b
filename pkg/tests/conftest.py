"""Shared fixtures and instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from finescale.downscale import DownscaleParams, build_design
from finescale.evaluate import grid_partition
from finescale.geo import Location, Partition, Region, build_aggregation
from finescale.gp_aux import AuxPosterior
from finescale.kernel import SEKernelParams, cov_matrix


def square_region(rid: str, x0: float, y0: float, side: float = 1.0) -> Region:
    ring = np.array(
        [
            [x0, y0],
            [x0 + side, y0],
            [x0 + side, y0 + side],
            [x0, y0 + side],
            [x0, y0],
        ]
    )
    return Region(
        id=rid,
        geometry=[[ring]],
        centroid=Location(x0 + side / 2, y0 + side / 2),
        area=side * side,
    )


def point_partition(name: str, centers: np.ndarray, side: float = 0.01) -> Partition:
    """Tiny disjoint square cells centered on the given points."""
    regions = [
        square_region(f"{name}_{k:03d}", cx - side / 2, cy - side / 2, side)
        for k, (cx, cy) in enumerate(np.atleast_2d(centers))
    ]
    return Partition(name=name, regions=tuple(regions))


def random_psd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    A = rng.normal(size=(n, n))
    M = scale * (A @ A.T) / n + 1e-6 * np.eye(n)
    return 0.5 * (M + M.T)


def random_posteriors(rng: np.random.Generator, n_fine: int, n_aux: int):
    return [
        AuxPosterior(
            dataset_id=f"aux{s}",
            mean=rng.normal(size=n_fine),
            cov=random_psd(rng, n_fine, scale=0.5),
        )
        for s in range(n_aux)
    ]


def random_H(rng: np.random.Generator, n_coarse: int, n_fine: int) -> np.ndarray:
    """Row-stochastic membership matrix with every coarse region non-empty."""
    assert n_fine >= n_coarse
    member = np.concatenate(
        [np.arange(n_coarse), rng.integers(0, n_coarse, size=n_fine - n_coarse)]
    )
    rng.shuffle(member)
    H = np.zeros((n_coarse, n_fine))
    for j, i in enumerate(member):
        H[i, j] = 1.0
    return H / H.sum(axis=1, keepdims=True)


def random_instance(rng: np.random.Generator, n_coarse: int, n_fine: int, n_aux: int):
    """Random coherent (params, a, design, posteriors, H, Xf) tuple."""
    Xf = rng.uniform(0.0, 1.0, size=(n_fine, 2))
    posteriors = random_posteriors(rng, n_fine, n_aux)
    H = random_H(rng, n_coarse, n_fine)
    params = DownscaleParams(
        w=rng.normal(size=n_aux + 1),
        kernel=SEKernelParams(
            alpha=float(rng.uniform(0.3, 2.0)), gamma=float(rng.uniform(0.2, 1.0))
        ),
        sigma=float(rng.uniform(0.05, 0.8)),
    )
    design = build_design(posteriors, n_fine=n_fine)
    a = rng.normal(size=n_coarse)
    return params, a, design, posteriors, H, Xf


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def unit_grid_4x4():
    return grid_partition(4, 4, "fine")


@pytest.fixture(scope="session")
def grid_amap_2x2_over_4x4():
    coarse = grid_partition(2, 2, "coarse")
    fine = grid_partition(4, 4, "fine")
    return build_aggregation(coarse, fine)
