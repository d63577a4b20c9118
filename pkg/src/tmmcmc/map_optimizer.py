"""Fitting map coefficients from samples.

Each component is fitted independently by minimizing a convex objective:
a quadratic Gram term, a log barrier on the diagonal derivative at every
sample, and a quadratic pull toward the identity coefficients. The solver
is a damped Newton method with a fraction-to-boundary step cap and
backtracking line search; workspaces accumulate basis rows incrementally
so refits on a growing sample set stay cheap.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import polybasis
from .polybasis import MultiIndexSet
from .transport_map import MapComponent, TriangularMap, identity_coefficients

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """A component solve failed; carries the 1-based component index."""

    def __init__(self, component_index: int, message: str):
        self.component_index = component_index
        super().__init__(f"component {component_index}: {message}")


@dataclass
class OptimizerConfig:
    reg_weight: float = 1e-4
    deriv_floor: float = 1e-8
    newton_tol: float = 1e-8
    max_newton_iters: int = 200
    backtrack_ratio: float = 0.5
    sufficient_decrease: float = 1e-4
    boundary_fraction: float = 0.995
    # each barrier slack keeps at least this fraction of its value per
    # iteration; prevents a far Newton step from collapsing the slack by
    # orders of magnitude past its optimal value, which stalls convergence
    slack_keep_fraction: float = 0.05
    radius: float | str | None = None  # None = unbounded, "auto" = 10x max sample norm

    def __post_init__(self) -> None:
        if self.reg_weight < 0 or self.deriv_floor <= 0 or self.newton_tol <= 0:
            raise ValueError("reg_weight must be non-negative; deriv_floor and newton_tol positive")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must be in (0, 1)")
        if not 0 < self.boundary_fraction < 1:
            raise ValueError("boundary_fraction must be in (0, 1)")
        if not 0 <= self.slack_keep_fraction < 1:
            raise ValueError("slack_keep_fraction must be in [0, 1)")


class ComponentWorkspace:
    """Growing basis/derivative rows for one component.

    ``basis_rows`` holds the basis evaluations at every sample seen so far,
    ``deriv_rows`` the diagonal-partial evaluations; ``gram`` accumulates
    ``basis_rows.T @ basis_rows`` so the quadratic term never rescans old
    rows.
    """

    def __init__(self, index_set: MultiIndexSet, family: str = polybasis.HERMITE):
        self.index_set = index_set
        self.family = family
        m = len(index_set)
        self._capacity = 1024
        self._basis = np.empty((self._capacity, m))
        self._deriv = np.empty((self._capacity, m))
        self.gram = np.zeros((m, m))
        self.count = 0
        self.max_sample_norm = 0.0

    @property
    def basis_rows(self) -> np.ndarray:
        return self._basis[: self.count]

    @property
    def deriv_rows(self) -> np.ndarray:
        return self._deriv[: self.count]

    def _grow(self, needed: int) -> None:
        if needed <= self._capacity:
            return
        new_cap = self._capacity
        while new_cap < needed:
            new_cap *= 2
        for name in ("_basis", "_deriv"):
            old = getattr(self, name)
            buf = np.empty((new_cap, old.shape[1]))
            buf[: self.count] = old[: self.count]
            setattr(self, name, buf)
        self._capacity = new_cap


def append_samples(ws: ComponentWorkspace, new_samples: np.ndarray) -> ComponentWorkspace:
    """Extend the workspace with one row per sample and fold the new rows
    into the Gram matrix."""
    new_samples = np.atleast_2d(np.asarray(new_samples, dtype=float))
    if new_samples.size == 0:
        return ws
    if new_samples.shape[1] != ws.index_set.ambient_dim:
        raise ValueError("samples do not match the ambient dimension of the index set")
    f = polybasis.basis_matrix(ws.family, ws.index_set, new_samples)
    g = polybasis.basis_partial_matrix(ws.family, ws.index_set, new_samples, ws.index_set.dim_index)
    k = new_samples.shape[0]
    ws._grow(ws.count + k)
    ws._basis[ws.count : ws.count + k] = f
    ws._deriv[ws.count : ws.count + k] = g
    ws.gram += f.T @ f
    ws.count += k
    ws.max_sample_norm = max(ws.max_sample_norm, float(np.linalg.norm(new_samples, axis=1).max()))
    return ws


def objective(
    ws: ComponentWorkspace, coeffs: np.ndarray, cfg: OptimizerConfig, identity: np.ndarray
) -> float:
    """Value of the per-component objective; +inf outside the barrier."""
    slack = ws.deriv_rows @ coeffs
    if slack.size and slack.min() <= 0.0:
        return np.inf
    quad = 0.5 * coeffs @ ws.gram @ coeffs
    reg = cfg.reg_weight * float(np.sum((coeffs - identity) ** 2))
    return float(quad - np.log(slack).sum() + reg)


def _gradient(ws, coeffs, cfg, identity, slack):
    return ws.gram @ coeffs - ws.deriv_rows.T @ (1.0 / slack) + 2.0 * cfg.reg_weight * (coeffs - identity)


def _hessian(ws, cfg, slack):
    g = ws.deriv_rows
    h = ws.gram + (g / slack[:, None] ** 2).T @ g
    h[np.diag_indices_from(h)] += 2.0 * cfg.reg_weight
    return h


@dataclass
class NewtonReport:
    iterations: int
    objective_values: list[float] = field(default_factory=list)
    grad_norm: float = np.inf
    warm_started: bool = False


def solve_component(
    ws: ComponentWorkspace,
    cfg: OptimizerConfig,
    warm_start: np.ndarray | None = None,
    report: NewtonReport | None = None,
) -> np.ndarray:
    """Newton solve of one component subproblem.

    Starts from ``warm_start`` when it is feasible on the current rows,
    otherwise from the identity coefficients (always feasible since their
    diagonal derivative is one everywhere). Convergence is declared when
    the gradient norm falls under ``newton_tol`` or when half the Newton
    decrement does; the decrement test is scale-invariant and terminates
    reliably once rounding noise in the sample sums dominates the
    gradient.
    """
    if ws.count < 1:
        raise FitError(ws.index_set.dim_index, "no samples")
    identity = identity_coefficients(ws.index_set)
    coeffs = identity.copy()
    warm = False
    if warm_start is not None:
        cand = np.asarray(warm_start, dtype=float)
        slack = ws.deriv_rows @ cand
        if slack.min() > cfg.deriv_floor:
            coeffs = cand.copy()
            warm = True
    slack = ws.deriv_rows @ coeffs
    obj = objective(ws, coeffs, cfg, identity)
    if report is not None:
        report.warm_started = warm
        report.objective_values.append(obj)
    for it in range(1, cfg.max_newton_iters + 1):
        grad = _gradient(ws, coeffs, cfg, identity, slack)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= cfg.newton_tol:
            if report is not None:
                report.iterations = it - 1
                report.grad_norm = gnorm
            return coeffs
        hess = _hessian(ws, cfg, slack)
        try:
            chol = scipy.linalg.cho_factor(hess, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise FitError(ws.index_set.dim_index, f"Hessian factorization failed: {exc}") from exc
        step = -scipy.linalg.cho_solve(chol, grad)
        decrement_half = -0.5 * float(grad @ step)
        if decrement_half <= cfg.newton_tol:
            if report is not None:
                report.iterations = it - 1
                report.grad_norm = gnorm
            return coeffs
        dslack = ws.deriv_rows @ step
        shrinking = dslack < 0.0
        t = 1.0
        if shrinking.any():
            t_boundary = np.min((slack[shrinking] - cfg.deriv_floor) / -dslack[shrinking])
            t_keep = np.min(slack[shrinking] * (1.0 - cfg.slack_keep_fraction) / -dslack[shrinking])
            t = min(1.0, cfg.boundary_fraction * t_boundary, t_keep)
        descent = float(grad @ step)
        for _ in range(60):
            cand = coeffs + t * step
            cand_obj = objective(ws, cand, cfg, identity)
            if cand_obj <= obj + cfg.sufficient_decrease * t * descent:
                break
            t *= cfg.backtrack_ratio
        else:
            raise FitError(ws.index_set.dim_index, f"line search stalled at iteration {it}")
        if obj - cand_obj <= 1e-13 * max(1.0, abs(obj)):
            # progress is below floating-point resolution of the objective
            if report is not None:
                report.iterations = it - 1
                report.grad_norm = gnorm
            return coeffs
        coeffs = cand
        obj = cand_obj
        slack = ws.deriv_rows @ coeffs
        if report is not None:
            report.iterations = it
            report.grad_norm = gnorm
            report.objective_values.append(obj)
    raise FitError(
        ws.index_set.dim_index,
        f"Newton did not reach gradient norm {cfg.newton_tol:g} in "
        f"{cfg.max_newton_iters} iterations (last {gnorm:.3e})",
    )


@dataclass
class FitReport:
    newton: list[NewtonReport]
    objectives: list[float]

    @property
    def iterations(self) -> list[int]:
        return [r.iterations for r in self.newton]


def make_workspaces(sets: list[MultiIndexSet], family: str = polybasis.HERMITE) -> list[ComponentWorkspace]:
    return [ComponentWorkspace(s, family) for s in sets]


def solve_all(
    workspaces: list[ComponentWorkspace],
    cfg: OptimizerConfig,
    previous: TriangularMap | None = None,
    jobs: int = 1,
) -> tuple[TriangularMap, FitReport]:
    """Solve every component subproblem (optionally in a thread pool) and
    assemble the fitted map. Monotonicity at the fitted samples is verified
    from the solution slack."""
    n = len(workspaces)
    warm = [None] * n
    if previous is not None:
        if previous.dim != n:
            raise ValueError("previous map has a different dimension")
        warm = [c.coefficients for c in previous.components]

    reports = [NewtonReport(iterations=0) for _ in range(n)]

    def run(i0: int) -> np.ndarray:
        return solve_component(workspaces[i0], cfg, warm_start=warm[i0], report=reports[i0])

    if jobs > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, n)) as pool:
            coeffs = list(pool.map(run, range(n)))
    else:
        coeffs = [run(i0) for i0 in range(n)]

    for i0, ws in enumerate(workspaces):
        slack = ws.deriv_rows @ coeffs[i0]
        if slack.min() <= 0.0:
            raise FitError(i0 + 1, "fitted component is not increasing at every sample")

    if cfg.radius == "auto":
        radius = 10.0 * max(ws.max_sample_norm for ws in workspaces)
    else:
        radius = cfg.radius

    comps = tuple(
        MapComponent(ws.index_set, c, ws.family) for ws, c in zip(workspaces, coeffs)
    )
    tmap = TriangularMap(comps, deriv_floor=cfg.deriv_floor, radius=radius)
    identities = [identity_coefficients(ws.index_set) for ws in workspaces]
    finals = [objective(ws, c, cfg, ident) for ws, c, ident in zip(workspaces, coeffs, identities)]
    return tmap, FitReport(newton=reports, objectives=finals)


def fit_map(
    samples: np.ndarray,
    sets: list[MultiIndexSet],
    cfg: OptimizerConfig | None = None,
    previous: TriangularMap | None = None,
    family: str = polybasis.HERMITE,
    jobs: int = 1,
    return_report: bool = False,
):
    """Fit a triangular map to a sample matrix from scratch."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("cannot fit a map to an empty sample set")
    if samples.shape[1] != len(sets):
        raise ValueError("sample dimension does not match the number of index sets")
    cfg = cfg or OptimizerConfig()
    workspaces = make_workspaces(sets, family)
    for ws in workspaces:
        append_samples(ws, samples)
    tmap, rep = solve_all(workspaces, cfg, previous=previous, jobs=jobs)
    if return_report:
        return tmap, rep
    return tmap
