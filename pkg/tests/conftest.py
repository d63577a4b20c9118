"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from tmmcmc import map_optimizer as mo
from tmmcmc import polybasis as pb
from tmmcmc import proposals as props
from tmmcmc import transport_map as tm
from tmmcmc.problems import BananaTarget


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def rng():
    return rng_for(20240811)


@pytest.fixture(scope="session")
def banana():
    return BananaTarget(curvature=1.0, scale=1.0)


@pytest.fixture(scope="session")
def banana_samples(banana):
    return banana.sample(rng_for(101), 50000)


@pytest.fixture(scope="session")
def fitted_banana_map(banana_samples):
    """Cubic total-order map fitted to banana samples."""
    sets = [pb.build_total_order(i, 3, 2) for i in (1, 2)]
    return mo.fit_map(banana_samples, sets, mo.OptimizerConfig())


def cubic_1d_map(coeffs=(0.0, 1.0, 0.0, 0.3), family="monomial", radius=None):
    """Monotone 1-D cubic helper used across modules."""
    iset = pb.build_diagonal(1, 3, 1)
    comp = tm.MapComponent(iset, np.asarray(coeffs, dtype=float), family)
    return tm.TriangularMap((comp,), radius=radius)


def build_mh_kernel_matrix(points, log_pi, tmap, prop, target):
    """Discrete MH kernel on a small state set, built from the package's own
    proposal densities. Detailed balance holds exactly for the discretized
    kernel, so pi K = pi is an oracle for the acceptance formulas.
    """
    m = len(points)
    spacing = 1.0
    k = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            q_fwd = np.exp(
                props.target_proposal_log_density(tmap, prop, points[j], points[i])
            ) * spacing
            log_alpha = min(
                0.0,
                props.mh_accept_log_ratio(target, tmap, prop, points[i], points[j]),
            )
            k[i, j] = q_fwd * np.exp(log_alpha)
        k[i, i] = 1.0 - k[i].sum()
        assert k[i, i] >= 0, "state spacing too coarse for a valid discrete kernel"
    return k


def build_dr_kernel_matrix(points, tmap, prop, target):
    """Discrete two-stage delayed-rejection kernel using the package's own
    stage densities and second-stage acceptance."""
    m = len(points)
    spacing = 1.0
    q1 = np.zeros((m, m))
    a1 = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            q1[i, j] = np.exp(
                props.target_proposal_log_density(tmap, prop, points[j], points[i], stage=1)
            ) * spacing
            a1[i, j] = np.exp(
                min(0.0, props.mh_accept_log_ratio(target, tmap, prop, points[i], points[j], stage=1))
            )
    k = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            k[i, j] = q1[i, j] * a1[i, j]
            for mid in range(m):
                if mid == i:
                    continue
                q2 = np.exp(
                    props.target_proposal_log_density(tmap, prop, points[j], points[i], stage=2)
                ) * spacing
                a2 = np.exp(
                    props.dr_two_stage_log_accept(target, tmap, prop, points[i], points[mid], points[j])
                )
                k[i, j] += q1[i, mid] * (1.0 - a1[i, mid]) * q2 * a2
        k[i, i] = 1.0 - k[i].sum()
        assert k[i, i] >= 0
    return k
