"""Reference-space proposal kernels and their map-induced target-space
densities.

Every kernel lives on the reference space; pulling it back through the
map yields a non-Gaussian proposal on the target space whose density is
needed for the Metropolis-Hastings ratio. Delayed-rejection kernels get a
dedicated two-stage acceptance rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import transport_map as tmod
from .transport_map import TriangularMap

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RandomWalk:
    """Gaussian step of scale ``sigma`` around the current reference point."""

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class Mala:
    """Langevin proposal: a gradient drift of step ``dtau`` plus noise."""

    dtau: float = 0.5

    def __post_init__(self):
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")


@dataclass(frozen=True)
class DelayedRejectionGlobal:
    """Stage one draws from the standard normal independence kernel, stage
    two falls back to a local walk of scale ``sigma2``."""

    sigma2: float = 0.5

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class DelayedRejectionLocal:
    """Two random-walk stages, bold then timid: ``sigma1 > sigma2``."""

    sigma1: float = 1.0
    sigma2: float = 0.25

    def __post_init__(self):
        if self.sigma2 <= 0 or self.sigma1 <= self.sigma2:
            raise ValueError("need sigma1 > sigma2 > 0")


@dataclass(frozen=True)
class Mixture:
    """Mixes the standard-normal independence kernel (weight ``w``) with a
    local walk; ``w`` shrinks as the map-discrepancy estimate grows."""

    w_max: float = 0.9
    w_scale: float = 1.0
    sigma: float = 0.5

    def __post_init__(self):
        if not 0 < self.w_max < 1:
            raise ValueError("w_max must lie in (0, 1)")
        if self.w_scale < 0 or self.sigma <= 0:
            raise ValueError("w_scale must be non-negative, sigma positive")

    def weight(self, discrepancy: float | None) -> float:
        if discrepancy is None:
            return 0.0
        return self.w_max / (1.0 + self.w_scale * discrepancy)


ReferenceProposal = RandomWalk | Mala | DelayedRejectionGlobal | DelayedRejectionLocal | Mixture


@dataclass(frozen=True)
class ProposalOutcome:
    r_new: np.ndarray
    stage: int
    log_forward: float
    log_reverse: float


def _gauss_logpdf(x: np.ndarray, mean: np.ndarray | float, sigma: float) -> float:
    d = np.asarray(x, dtype=float) - mean
    n = d.size
    return float(-0.5 * n * LOG_2PI - n * math.log(sigma) - 0.5 * (d @ d) / sigma**2)


def reference_log_density(
    prop: ReferenceProposal,
    r_new: np.ndarray,
    r_old: np.ndarray,
    discrepancy: float | None = None,
    grad_fn=None,
) -> float:
    """Log-density of moving ``r_old -> r_new`` under single-stage kernels.

    ``grad_fn`` maps a reference point to the pushforward log-density
    gradient there; it is required by the Langevin kernel.
    """
    r_new = np.asarray(r_new, dtype=float)
    r_old = np.asarray(r_old, dtype=float)
    if r_new.shape != r_old.shape:
        raise ValueError("proposal points have mismatched shapes")
    if isinstance(prop, RandomWalk):
        return _gauss_logpdf(r_new, r_old, prop.sigma)
    if isinstance(prop, Mala):
        if grad_fn is None:
            raise ValueError("Langevin proposal needs the pushforward gradient")
        mean = r_old + 0.5 * prop.dtau**2 * np.asarray(grad_fn(r_old), dtype=float)
        return _gauss_logpdf(r_new, mean, prop.dtau)
    if isinstance(prop, Mixture):
        w = prop.weight(discrepancy)
        global_part = _gauss_logpdf(r_new, 0.0, 1.0)
        local_part = _gauss_logpdf(r_new, r_old, prop.sigma)
        if w <= 0.0:
            return local_part
        if w >= 1.0:
            return global_part
        return float(np.logaddexp(math.log(w) + global_part, math.log1p(-w) + local_part))
    raise ValueError("delayed-rejection kernels are evaluated per stage, see stage_log_density")


def stage_log_density(prop: ReferenceProposal, stage: int, r_new, r_old) -> float:
    """Per-stage reference kernel density for the delayed-rejection variants."""
    r_new = np.asarray(r_new, dtype=float)
    r_old = np.asarray(r_old, dtype=float)
    if isinstance(prop, DelayedRejectionGlobal):
        if stage == 1:
            return _gauss_logpdf(r_new, 0.0, 1.0)
        return _gauss_logpdf(r_new, r_old, prop.sigma2)
    if isinstance(prop, DelayedRejectionLocal):
        return _gauss_logpdf(r_new, r_old, prop.sigma1 if stage == 1 else prop.sigma2)
    if stage != 1:
        raise ValueError(f"{type(prop).__name__} has a single stage")
    return reference_log_density(prop, r_new, r_old)


def propose(
    prop: ReferenceProposal,
    r: np.ndarray,
    rng: np.random.Generator,
    discrepancy: float | None = None,
    grad_fn=None,
    stage: int = 1,
) -> ProposalOutcome:
    """Draw a reference proposal and record both directional log-densities.

    For delayed-rejection kernels this draws the requested stage; the
    composite acceptance rule lives in :func:`dr_two_stage_log_accept`.
    """
    r = np.asarray(r, dtype=float)
    n = r.size
    noise = rng.standard_normal(n)
    if isinstance(prop, RandomWalk):
        r_new = r + prop.sigma * noise
    elif isinstance(prop, Mala):
        if grad_fn is None:
            raise ValueError("Langevin proposal needs the pushforward gradient")
        mean = r + 0.5 * prop.dtau**2 * np.asarray(grad_fn(r), dtype=float)
        r_new = mean + prop.dtau * noise
    elif isinstance(prop, Mixture):
        w = prop.weight(discrepancy)
        if rng.random() < w:
            r_new = noise
        else:
            r_new = r + prop.sigma * noise
    elif isinstance(prop, DelayedRejectionGlobal):
        r_new = noise if stage == 1 else r + prop.sigma2 * noise
    elif isinstance(prop, DelayedRejectionLocal):
        r_new = r + (prop.sigma1 if stage == 1 else prop.sigma2) * noise
    else:
        raise TypeError(f"unknown proposal {type(prop).__name__}")
    if isinstance(prop, (DelayedRejectionGlobal, DelayedRejectionLocal)):
        fwd = stage_log_density(prop, stage, r_new, r)
        rev = stage_log_density(prop, stage, r, r_new)
    else:
        fwd = reference_log_density(prop, r_new, r, discrepancy, grad_fn)
        rev = reference_log_density(prop, r, r_new, discrepancy, grad_fn)
    return ProposalOutcome(r_new=r_new, stage=stage, log_forward=fwd, log_reverse=rev)


def target_proposal_log_density(
    tmap: TriangularMap,
    prop: ReferenceProposal,
    theta_new: np.ndarray,
    theta_old: np.ndarray,
    discrepancy: float | None = None,
    grad_fn=None,
    stage: int | None = None,
) -> float:
    """Density of the map-induced proposal on the target space: the
    reference kernel evaluated at the mapped points times the Jacobian
    determinant at the proposed point."""
    r_new = tmod.forward(tmap, theta_new)
    r_old = tmod.forward(tmap, theta_old)
    if stage is not None:
        ref = stage_log_density(prop, stage, r_new, r_old)
    else:
        ref = reference_log_density(prop, r_new, r_old, discrepancy, grad_fn)
    return ref + tmod.log_det_jacobian(tmap, theta_new)


def mh_accept_log_ratio(
    target,
    tmap: TriangularMap,
    prop: ReferenceProposal,
    theta: np.ndarray,
    theta_new: np.ndarray,
    discrepancy: float | None = None,
    grad_fn=None,
    stage: int | None = None,
) -> float:
    """Log Metropolis-Hastings ratio; acceptance probability is
    ``min(1, exp(value))``."""
    lp_new = float(target.log_density(theta_new))
    if lp_new == -np.inf or np.isnan(lp_new):
        return -np.inf
    lp_old = float(target.log_density(theta))
    fwd = target_proposal_log_density(tmap, prop, theta_new, theta, discrepancy, grad_fn, stage)
    rev = target_proposal_log_density(tmap, prop, theta, theta_new, discrepancy, grad_fn, stage)
    return lp_new - lp_old + rev - fwd


def _log1mexp(log_p: float) -> float:
    """log(1 - exp(log_p)) for log_p <= 0."""
    if log_p >= 0.0:
        return -np.inf
    if log_p > -math.log(2.0):
        return math.log(-math.expm1(log_p))
    return math.log1p(-math.exp(log_p))


def _dr2_core(
    prop,
    lp_x: float,
    lp_y1: float,
    lp_y2: float,
    r_x: np.ndarray,
    r_y1: np.ndarray,
    r_y2: np.ndarray,
    logdet_x: float,
    logdet_y1: float,
    logdet_y2: float,
) -> float:
    """Two-stage delayed-rejection log acceptance from precomputed pieces.

    All kernel densities are target-space densities: reference value plus
    the log Jacobian determinant at the landing point.
    """

    def q1(r_to, logdet_to, r_from):
        return stage_log_density(prop, 1, r_to, r_from) + logdet_to

    def q2(r_to, logdet_to, r_from):
        return stage_log_density(prop, 2, r_to, r_from) + logdet_to

    # first-stage acceptance in both directions
    log_a1_fwd = min(0.0, (lp_y1 + q1(r_x, logdet_x, r_y1)) - (lp_x + q1(r_y1, logdet_y1, r_x)))
    log_a1_rev = min(0.0, (lp_y1 + q1(r_y2, logdet_y2, r_y1)) - (lp_y2 + q1(r_y1, logdet_y1, r_y2)))
    if log_a1_fwd == 0.0:
        # the first stage would always accept here; the path to stage two
        # has probability zero
        return -np.inf
    num = lp_y2 + q1(r_y1, logdet_y1, r_y2) + q2(r_x, logdet_x, r_y2) + _log1mexp(log_a1_rev)
    den = lp_x + q1(r_y1, logdet_y1, r_x) + q2(r_y2, logdet_y2, r_x) + _log1mexp(log_a1_fwd)
    if num == -np.inf:
        return -np.inf
    return min(0.0, num - den)


def dr_two_stage_log_accept(
    target,
    tmap: TriangularMap,
    prop: ReferenceProposal,
    theta: np.ndarray,
    theta_stage1: np.ndarray,
    theta_stage2: np.ndarray,
) -> float:
    """Log acceptance probability of the second-stage move, given that the
    first-stage proposal was rejected."""
    if not isinstance(prop, (DelayedRejectionGlobal, DelayedRejectionLocal)):
        raise TypeError("two-stage acceptance applies to delayed-rejection kernels")
    lp_x = float(target.log_density(theta))
    lp_y1 = float(target.log_density(theta_stage1))
    lp_y2 = float(target.log_density(theta_stage2))
    if np.isnan(lp_y2) or lp_y2 == -np.inf:
        return -np.inf
    r_x = tmod.forward(tmap, theta)
    r_y1 = tmod.forward(tmap, theta_stage1)
    r_y2 = tmod.forward(tmap, theta_stage2)
    ld_x = tmod.log_det_jacobian(tmap, theta)
    ld_y1 = tmod.log_det_jacobian(tmap, theta_stage1)
    ld_y2 = tmod.log_det_jacobian(tmap, theta_stage2)
    lp_y1 = -np.inf if np.isnan(lp_y1) else lp_y1
    return _dr2_core(prop, lp_x, lp_y1, lp_y2, r_x, r_y1, r_y2, ld_x, ld_y1, ld_y2)
