"""Metropolis-Hastings driver with adaptive transport-map proposals.

The chain alternates plain MH steps with periodic map refits on the full
chain history. Between refits the kernel is completely fixed, so each
segment is a valid MH chain; refits are warm-started from the previous
coefficients and the map-discrepancy estimate (the variance of the log
mismatch between target and pulled-back reference) is refreshed right
after every refit.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import map_optimizer as mopt
from . import proposals as props
from . import transport_map as tmod
from .polybasis import BasisSpec
from .proposals import (
    DelayedRejectionGlobal,
    DelayedRejectionLocal,
    Mala,
    Mixture,
    RandomWalk,
    ReferenceProposal,
)
from .transport_map import InversionError, MonotonicityError, TriangularMap

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TargetDensity:
    """Unnormalized log-density with an optional gradient."""

    dim: int
    log_density: Callable[[np.ndarray], float]
    grad_log_density: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""


@dataclass
class ChainConfig:
    total_steps: int
    burn_in: int = 0
    adapt_interval: int = 500
    adapt_start: int | None = None
    seed: int = 0
    proposal: ReferenceProposal = field(default_factory=RandomWalk)
    basis: BasisSpec = field(default_factory=BasisSpec)
    reg_weight: float = 1e-4
    deriv_floor: float = 1e-8
    radius: float | str | None = None
    tune_reference: bool = True
    tune_interval: int = 100
    tune_target_rate: float = 0.3
    discrepancy_window: int = 2000
    fit_jobs: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be positive")
        if not 0 <= self.burn_in < self.total_steps:
            raise ValueError("burn_in must be shorter than the chain")
        if self.adapt_start is None:
            self.adapt_start = max(self.adapt_interval, 500)

    def optimizer_config(self) -> mopt.OptimizerConfig:
        return mopt.OptimizerConfig(
            reg_weight=self.reg_weight, deriv_floor=self.deriv_floor, radius=self.radius
        )


@dataclass
class ChainResult:
    """Everything recorded along one chain."""

    samples: np.ndarray
    accepted: np.ndarray
    accept_stage: np.ndarray
    stage2_attempted: np.ndarray
    log_target: np.ndarray
    eval_counts: np.ndarray
    discrepancy_history: list[tuple[int, float]]
    map_snapshots: list[tuple[int, TriangularMap]]
    duration_seconds: float
    burn_in: int
    seed: int
    name: str = ""
    n_grad_evals: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)
    final_proposal: ReferenceProposal | None = None

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def total_evals(self) -> int:
        return int(self.eval_counts.sum())

    def acceptance_rate(self, stage: int | None = None, start: int = 1) -> float:
        """Fraction of accepted transitions; with ``stage`` given, the
        acceptance rate of that proposal stage among its attempts."""
        if stage is None:
            return float(self.accepted[start:].mean())
        attempted = (
            np.ones(self.n_steps, dtype=bool) if stage == 1 else self.stage2_attempted
        )[start:]
        if not attempted.any():
            return math.nan
        return float((self.accept_stage[start:][attempted] == stage).mean())

    def post_burn_in(self) -> np.ndarray:
        return self.samples[self.burn_in :]


class _CountingTarget:
    """Wraps a target so every fresh log-density evaluation is counted."""

    def __init__(self, target: TargetDensity):
        self._target = target
        self.evals = 0
        self.grad_evals = 0

    def log_density(self, theta: np.ndarray) -> float:
        self.evals += 1
        v = float(self._target.log_density(theta))
        if math.isnan(v) or v == np.inf:
            return -np.inf
        return v

    def grad(self, theta: np.ndarray) -> np.ndarray:
        if self._target.grad_log_density is None:
            raise ValueError(f"target {self._target.name!r} provides no gradient")
        self.grad_evals += 1
        return np.asarray(self._target.grad_log_density(theta), dtype=float)


def estimate_map_discrepancy(
    target,
    tmap: TriangularMap,
    states: np.ndarray,
    log_densities: np.ndarray | None = None,
) -> float:
    """Sample variance of ``log pi - log N(T(theta); 0, I) - log det DT``
    over the given states; zero exactly when the map is exact."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] < 2:
        raise ValueError("need at least two states to estimate the discrepancy")
    if log_densities is None:
        log_densities = np.array([float(target.log_density(s)) for s in states])
    mapped = tmod.forward_batch(tmap, states)
    ref_logpdf = -0.5 * states.shape[1] * LOG_2PI - 0.5 * (mapped**2).sum(axis=1)
    logdet = tmod.log_det_jacobian_batch(tmap, states)
    quantity = np.asarray(log_densities, dtype=float) - ref_logpdf - logdet
    return float(np.var(quantity, ddof=1))


@dataclass
class StepOutcome:
    accepted: bool
    stage: int
    proposed: np.ndarray | None
    log_alpha: float
    evals: int
    stage2_attempted: bool = False
    error: str | None = None


def _accept(rng: np.random.Generator, log_alpha: float) -> bool:
    if log_alpha >= 0.0:
        return True
    return rng.random() < math.exp(log_alpha)


def _transition(
    tmap: TriangularMap,
    prop: ReferenceProposal,
    counting: _CountingTarget,
    theta: np.ndarray,
    lp: float,
    rng: np.random.Generator,
    discrepancy: float | None,
) -> tuple[np.ndarray, float, StepOutcome]:
    """One MH transition from a cached state; fresh target evaluations only
    at proposed points."""

    def grad_fn(r, known=None):
        return tmod.pushforward_gradient(tmap, counting.grad, r, theta=known)

    try:
        r = tmod.forward(tmap, theta)
        logdet_cur = tmod.log_det_jacobian(tmap, theta)
        if isinstance(prop, (DelayedRejectionGlobal, DelayedRejectionLocal)):
            out1 = props.propose(prop, r, rng, stage=1)
            theta1 = tmod.inverse(tmap, out1.r_new, initial=theta)
            lp1 = counting.log_density(theta1)
            logdet1 = tmod.log_det_jacobian(tmap, theta1)
            log_a1 = min(0.0, lp1 - lp + (out1.log_reverse + logdet_cur) - (out1.log_forward + logdet1))
            if _accept(rng, log_a1):
                return theta1, lp1, StepOutcome(True, 1, theta1, log_a1, 1)
            out2 = props.propose(prop, r, rng, stage=2)
            theta2 = tmod.inverse(tmap, out2.r_new, initial=theta)
            lp2 = counting.log_density(theta2)
            logdet2 = tmod.log_det_jacobian(tmap, theta2)
            log_a2 = props._dr2_core(
                prop, lp, lp1, lp2, r, out1.r_new, out2.r_new, logdet_cur, logdet1, logdet2
            )
            if _accept(rng, log_a2):
                return theta2, lp2, StepOutcome(True, 2, theta2, log_a2, 2, stage2_attempted=True)
            return theta, lp, StepOutcome(False, 0, theta2, log_a2, 2, stage2_attempted=True)
        if isinstance(prop, Mala):
            grad_cur = grad_fn(r, known=theta)
            mean = r + 0.5 * prop.dtau**2 * grad_cur
            r_new = mean + prop.dtau * rng.standard_normal(len(r))
            theta_new = tmod.inverse(tmap, r_new, initial=theta)
            lp_new = counting.log_density(theta_new)
            logdet_new = tmod.log_det_jacobian(tmap, theta_new)
            fwd = props._gauss_logpdf(r_new, mean, prop.dtau)
            if lp_new == -np.inf:
                return theta, lp, StepOutcome(False, 0, theta_new, -np.inf, 1)
            grad_new = grad_fn(r_new, known=theta_new)
            rev = props._gauss_logpdf(r, r_new + 0.5 * prop.dtau**2 * grad_new, prop.dtau)
            log_alpha = lp_new - lp + (rev + logdet_cur) - (fwd + logdet_new)
        else:
            out = props.propose(prop, r, rng, discrepancy=discrepancy)
            theta_new = tmod.inverse(tmap, out.r_new, initial=theta)
            lp_new = counting.log_density(theta_new)
            logdet_new = tmod.log_det_jacobian(tmap, theta_new)
            log_alpha = lp_new - lp + (out.log_reverse + logdet_cur) - (out.log_forward + logdet_new)
        if _accept(rng, log_alpha):
            return theta_new, lp_new, StepOutcome(True, 1, theta_new, log_alpha, 1)
        return theta, lp, StepOutcome(False, 0, theta_new, log_alpha, 1)
    except (InversionError, MonotonicityError) as exc:
        return theta, lp, StepOutcome(False, 0, None, -np.inf, 0, error=str(exc))


def mh_step(
    theta: np.ndarray,
    tmap: TriangularMap,
    prop: ReferenceProposal,
    target,
    rng: np.random.Generator,
    discrepancy: float | None = None,
) -> tuple[np.ndarray, StepOutcome]:
    """Single MH step from scratch (no cached state); mostly useful for
    testing kernels in isolation."""
    wrapper = target if isinstance(target, _CountingTarget) else _CountingTarget(target)
    lp = wrapper.log_density(np.asarray(theta, dtype=float))
    if lp == -np.inf:
        raise ValueError("current state has zero target density")
    theta_new, _, outcome = _transition(tmap, prop, wrapper, np.asarray(theta, dtype=float), lp, rng, discrepancy)
    return theta_new, outcome


def _tuned(prop: ReferenceProposal, factor: float) -> ReferenceProposal:
    if isinstance(prop, RandomWalk):
        return dataclasses.replace(prop, sigma=prop.sigma * factor)
    if isinstance(prop, Mixture):
        return dataclasses.replace(prop, sigma=prop.sigma * factor)
    if isinstance(prop, Mala):
        return dataclasses.replace(prop, dtau=prop.dtau * factor)
    if isinstance(prop, DelayedRejectionLocal):
        return dataclasses.replace(prop, sigma1=prop.sigma1 * factor, sigma2=prop.sigma2 * factor)
    if isinstance(prop, DelayedRejectionGlobal):
        return dataclasses.replace(prop, sigma2=prop.sigma2 * factor)
    return prop


def run_adaptive(cfg: ChainConfig, target: TargetDensity, theta0: np.ndarray) -> ChainResult:
    """Adaptive transport-map MCMC.

    Starts from the identity map; every ``adapt_interval`` steps past
    ``adapt_start`` the map is refitted to all states so far and the
    discrepancy estimate is refreshed. Local proposal scales are tuned
    toward a target acceptance rate during burn-in only.
    """
    t_start = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    counting = _CountingTarget(target)
    n = target.dim
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (n,):
        raise ValueError("theta0 does not match the target dimension")
    lp = counting.log_density(theta0)
    if lp == -np.inf:
        raise ValueError("starting point has zero target density")

    sets = cfg.basis.build_sets(n)
    opt_cfg = cfg.optimizer_config()
    tmap = tmod.identity_map(n, sets, cfg.basis.family, deriv_floor=cfg.deriv_floor)
    workspaces = mopt.make_workspaces(sets, cfg.basis.family)

    L = cfg.total_steps
    samples = np.empty((L, n))
    accepted = np.zeros(L, dtype=bool)
    accept_stage = np.zeros(L, dtype=np.int8)
    stage2_attempted = np.zeros(L, dtype=bool)
    log_target = np.empty(L)
    eval_counts = np.zeros(L, dtype=np.int32)
    errors: list[tuple[int, str]] = []
    discrepancy_history: list[tuple[int, float]] = []
    map_snapshots: list[tuple[int, TriangularMap]] = []

    theta = theta0
    samples[0] = theta
    log_target[0] = lp
    accepted[0] = True
    eval_counts[0] = counting.evals

    distinct_states: list[np.ndarray] = [theta0.copy()]
    distinct_lp: list[float] = [lp]
    discrepancy: float | None = None
    prop = cfg.proposal
    pending_start = 0  # first chain index not yet appended to the workspaces
    window_accepts = 0
    window_steps = 0

    for k in range(1, L):
        evals_before = counting.evals
        theta, lp, outcome = _transition(tmap, prop, counting, theta, lp, rng, discrepancy)
        samples[k] = theta
        log_target[k] = lp
        accepted[k] = outcome.accepted
        accept_stage[k] = outcome.stage
        stage2_attempted[k] = outcome.stage2_attempted
        eval_counts[k] = counting.evals - evals_before
        if outcome.error is not None:
            errors.append((k, outcome.error))
            if len(errors) <= 10:
                log.debug("step %d rejected on map error: %s", k, outcome.error)
        if outcome.accepted:
            distinct_states.append(theta.copy())
            distinct_lp.append(lp)

        if cfg.tune_reference and k <= cfg.burn_in:
            window_steps += 1
            if isinstance(prop, DelayedRejectionGlobal):
                window_accepts += int(outcome.stage == 2)
            else:
                window_accepts += int(outcome.accepted)
            if window_steps >= cfg.tune_interval:
                if isinstance(prop, DelayedRejectionGlobal):
                    attempts = int(stage2_attempted[k - window_steps + 1 : k + 1].sum())
                    rate = window_accepts / attempts if attempts else cfg.tune_target_rate
                else:
                    rate = window_accepts / window_steps
                factor = math.exp(rate - cfg.tune_target_rate)
                prop = _tuned(prop, min(2.0, max(0.5, factor)))
                window_accepts = 0
                window_steps = 0

        if k >= cfg.adapt_start and k % cfg.adapt_interval == 0:
            for ws in workspaces:
                mopt.append_samples(ws, samples[pending_start : k + 1])
            pending_start = k + 1
            try:
                tmap_new, _ = mopt.solve_all(workspaces, opt_cfg, previous=tmap, jobs=cfg.fit_jobs)
                tmap = tmap_new
            except mopt.FitError as exc:
                log.warning("map refit failed at step %d, keeping previous map: %s", k, exc)
                errors.append((k, f"fit: {exc}"))
            else:
                recent = np.array(distinct_states[-cfg.discrepancy_window :])
                recent_lp = np.array(distinct_lp[-cfg.discrepancy_window :])
                if len(recent) >= 2:
                    try:
                        discrepancy = estimate_map_discrepancy(counting, tmap, recent, recent_lp)
                        discrepancy_history.append((k, discrepancy))
                    except MonotonicityError as exc:
                        log.warning("discrepancy estimate failed at step %d: %s", k, exc)
                map_snapshots.append((k, tmap))

    return ChainResult(
        samples=samples,
        accepted=accepted,
        accept_stage=accept_stage,
        stage2_attempted=stage2_attempted,
        log_target=log_target,
        eval_counts=eval_counts,
        discrepancy_history=discrepancy_history,
        map_snapshots=map_snapshots,
        duration_seconds=time.perf_counter() - t_start,
        burn_in=cfg.burn_in,
        seed=cfg.seed,
        name=cfg.name or target.name,
        n_grad_evals=counting.grad_evals,
        errors=errors,
        final_proposal=prop,
    )


def run_baseline_rwm(cfg: ChainConfig, target: TargetDensity, theta0: np.ndarray) -> ChainResult:
    """Adaptive-covariance random-walk Metropolis baseline.

    Isotropic walk with burn-in scale tuning; once past ``adapt_start`` the
    proposal covariance is refreshed every ``adapt_interval`` steps from the
    full history, scaled by the classic 2.38^2/n rule.
    """
    t_start = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    counting = _CountingTarget(target)
    n = target.dim
    theta = np.asarray(theta0, dtype=float)
    lp = counting.log_density(theta)
    if lp == -np.inf:
        raise ValueError("starting point has zero target density")

    L = cfg.total_steps
    samples = np.empty((L, n))
    accepted = np.zeros(L, dtype=bool)
    log_target = np.empty(L)
    eval_counts = np.zeros(L, dtype=np.int32)
    samples[0] = theta
    log_target[0] = lp
    accepted[0] = True
    eval_counts[0] = counting.evals

    sigma = 0.5
    chol: np.ndarray | None = None
    scale = 2.38**2 / n
    window_accepts = 0
    window_steps = 0

    for k in range(1, L):
        noise = rng.standard_normal(n)
        step = sigma * noise if chol is None else chol @ noise
        theta_new = theta + step
        lp_new = counting.log_density(theta_new)
        eval_counts[k] = 1
        if _accept(rng, lp_new - lp):
            theta, lp = theta_new, lp_new
            accepted[k] = True
        samples[k] = theta
        log_target[k] = lp

        if cfg.tune_reference and k <= cfg.burn_in and chol is None:
            window_steps += 1
            window_accepts += int(accepted[k])
            if window_steps >= cfg.tune_interval:
                rate = window_accepts / window_steps
                sigma *= min(2.0, max(0.5, math.exp(rate - cfg.tune_target_rate)))
                window_accepts = 0
                window_steps = 0

        if k >= cfg.adapt_start and k % cfg.adapt_interval == 0:
            cov = np.cov(samples[: k + 1].T)
            cov = np.atleast_2d(cov) * scale + 1e-10 * np.eye(n)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                chol = None

    return ChainResult(
        samples=samples,
        accepted=accepted,
        accept_stage=accepted.astype(np.int8),
        stage2_attempted=np.zeros(L, dtype=bool),
        log_target=log_target,
        eval_counts=eval_counts,
        discrepancy_history=[],
        map_snapshots=[],
        duration_seconds=time.perf_counter() - t_start,
        burn_in=cfg.burn_in,
        seed=cfg.seed,
        name=cfg.name or f"rwm-{target.name}",
        errors=[],
        final_proposal=RandomWalk(sigma=sigma),
    )
