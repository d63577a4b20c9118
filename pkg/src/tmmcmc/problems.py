"""Built-in target densities.

A Gaussian oracle, a banana-shaped pushforward of a standard normal, a
biochemical-oxygen-demand posterior over two model parameters, and an
eight-parameter predator-prey posterior whose likelihood integrates an
ODE and whose prior keeps the dynamics on a limit cycle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mcmc import TargetDensity
from .ode import njit, integrate

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Gaussian

@dataclass
class GaussianTarget:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        self._chol = np.linalg.cholesky(self.cov)
        self._prec = np.linalg.inv(self.cov)
        self._log_norm = -0.5 * (self.mean.size * LOG_2PI + 2.0 * np.log(np.diag(self._chol)).sum())

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, theta: np.ndarray) -> float:
        d = np.asarray(theta, dtype=float) - self.mean
        return float(self._log_norm - 0.5 * d @ self._prec @ d)

    def grad_log_density(self, theta: np.ndarray) -> np.ndarray:
        return -self._prec @ (np.asarray(theta, dtype=float) - self.mean)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal((size, self.dim)) @ self._chol.T


# ---------------------------------------------------------------------------
# Banana

@dataclass
class BananaTarget:
    """Quadratic pushforward of a standard normal, so every moment is
    analytic: the second coordinate is ``z2 - curvature*(theta1^2 - scale^2)``
    with ``theta1 = scale*z1``."""

    curvature: float = 1.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.curvature) or self.scale <= 0:
            raise ValueError("curvature must be finite and scale positive")

    dim = 2

    def log_density(self, theta: np.ndarray) -> float:
        t1, t2 = float(theta[0]), float(theta[1])
        shift = t2 + self.curvature * (t1 * t1 - self.scale**2)
        return -0.5 * t1 * t1 / self.scale**2 - 0.5 * shift * shift

    def grad_log_density(self, theta: np.ndarray) -> np.ndarray:
        t1, t2 = float(theta[0]), float(theta[1])
        shift = t2 + self.curvature * (t1 * t1 - self.scale**2)
        return np.array([-t1 / self.scale**2 - shift * 2.0 * self.curvature * t1, -shift])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, 2))
        t1 = self.scale * z[:, 0]
        t2 = z[:, 1] - self.curvature * (t1**2 - self.scale**2)
        return np.column_stack([t1, t2])

    @property
    def var_theta2(self) -> float:
        return 1.0 + 2.0 * self.curvature**2 * self.scale**4

    def default_start(self) -> np.ndarray:
        return np.array([0.0, self.curvature * self.scale**2])


# ---------------------------------------------------------------------------
# Biochemical oxygen demand

BOD_TRUE_PARAMS = np.array([1.0, 0.1])
BOD_NOISE_VAR = 2e-4
# default noise realization: under the flat prior the posterior has a ridge
# theta0*theta1 ~ const whose reach varies a lot across draws; this one gives
# a compact, well-identified posterior
BOD_DATA_SEED = 44


def bod_model(theta0: float, theta1: float, times: np.ndarray) -> np.ndarray:
    return theta0 * (1.0 - np.exp(-theta1 * times))


@dataclass
class BodTarget:
    """Posterior of the two oxygen-demand parameters under a Gaussian
    observation model and a flat prior."""

    times: np.ndarray
    data: np.ndarray
    noise_var: float = BOD_NOISE_VAR

    dim = 2

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.times.shape != self.data.shape:
            raise ValueError("times and data must align")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")

    def log_density(self, theta: np.ndarray) -> float:
        res = bod_model(float(theta[0]), float(theta[1]), self.times) - self.data
        return float(-0.5 * (res @ res) / self.noise_var)

    def grad_log_density(self, theta: np.ndarray) -> np.ndarray:
        t0, t1 = float(theta[0]), float(theta[1])
        decay = np.exp(-t1 * self.times)
        res = t0 * (1.0 - decay) - self.data
        g0 = -(res @ (1.0 - decay)) / self.noise_var
        g1 = -(res @ (t0 * self.times * decay)) / self.noise_var
        return np.array([g0, g1])

    def default_start(self) -> np.ndarray:
        from scipy.optimize import minimize

        res = minimize(
            lambda th: -self.log_density(th), BOD_TRUE_PARAMS, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12},
        )
        return np.asarray(res.x, dtype=float)


def make_bod_target(seed: int = BOD_DATA_SEED, noise_var: float = BOD_NOISE_VAR) -> BodTarget:
    times, data = synthesize_data("bod", seed, noise_var=noise_var)
    return BodTarget(times=times, data=data, noise_var=noise_var)


# ---------------------------------------------------------------------------
# Predator-prey

PREDPREY_TRUE_PARAMS = np.array([50.0, 5.0, 0.6, 100.0, 1.2, 25.0, 0.5, 0.3])
PREDPREY_NOISE_VAR = 10.0
PREDPREY_BOX = (0.001, 50.0)
PREDPREY_OBS_TIMES = np.linspace(0.0, 50.0, 5)
PREDPREY_DATA_SEED = 3620
# analytic trace of the rate Jacobian vanishes exactly at the data-generating
# parameters (the coexistence point sits on the oscillation threshold), so the
# eigenvalue test needs a little slack to classify that boundary as cyclic
_CYCLIC_TOL = 1e-9


@njit(cache=True)
def _predprey_rhs(t, y, p):
    prey, pred = y[0], y[1]
    growth, capacity, attack, halfsat, conv, death = p[0], p[1], p[2], p[3], p[4], p[5]
    interact = prey * pred / (halfsat + prey)
    out = np.empty(2)
    out[0] = growth * prey * (1.0 - prey / capacity) - attack * interact
    out[1] = conv * interact - death * pred
    return out


def predprey_rhs(state: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Population growth rates. ``params`` is the full natural vector
    ``[P0, Q0, r, K, s, a, u, v]``; the initial conditions are ignored."""
    params = np.asarray(params, dtype=float)
    rates = params[2:] if params.size == 8 else params
    return _predprey_rhs(0.0, np.asarray(state, dtype=float), np.ascontiguousarray(rates))


def predprey_fixed_point(params: np.ndarray) -> tuple[float, float] | None:
    """Interior coexistence point, or None when it does not exist with
    positive populations."""
    params = np.asarray(params, dtype=float)
    r, k, s, a, u, v = (params[2:] if params.size == 8 else params)
    if u <= v:
        return None
    pf = a * v / (u - v)
    if pf <= 0.0 or pf >= k:
        return None
    qf = r * (1.0 - pf / k) * (a + pf) / s
    if qf <= 0.0:
        return None
    return float(pf), float(qf)


def predprey_is_cyclic(params: np.ndarray) -> bool:
    """Whether the dynamics oscillate: an interior fixed point exists and
    both eigenvalues of the rate Jacobian there have positive real part."""
    params = np.asarray(params, dtype=float)
    rates = params[2:] if params.size == 8 else params
    fp = predprey_fixed_point(rates)
    if fp is None:
        return False
    r, k, s, a, u, v = rates
    pf, qf = fp
    j11 = r * (1.0 - 2.0 * pf / k) - s * qf * a / (a + pf) ** 2
    j12 = -s * pf / (a + pf)
    j21 = u * qf * a / (a + pf) ** 2
    j22 = u * pf / (a + pf) - v
    tr = j11 + j22
    det = j11 * j22 - j12 * j21
    disc = tr * tr - 4.0 * det
    if disc < 0.0:
        re1 = re2 = 0.5 * tr
    else:
        root = math.sqrt(disc)
        re1 = 0.5 * (tr + root)
        re2 = 0.5 * (tr - root)
    return re1 > -_CYCLIC_TOL and re2 > -_CYCLIC_TOL


@dataclass
class PredatorPreyTarget:
    """Posterior over multiplicative perturbations of the true predator-prey
    parameters; the prior is a box intersected with the cyclic-dynamics
    region, the likelihood compares the integrated trajectory with noisy
    observations of both populations."""

    times: np.ndarray
    data: np.ndarray  # (n_times, 2) observed (prey, predator)
    noise_var: float = PREDPREY_NOISE_VAR
    box: tuple[float, float] = PREDPREY_BOX
    rtol: float = 1e-8
    atol: float = 1e-10

    dim = 8
    grad_log_density = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.times.size, 2):
            raise ValueError("data must hold both populations at every time")
        self._warned = 0

    def solve(self, natural_params: np.ndarray) -> tuple[np.ndarray, int]:
        y0 = np.ascontiguousarray(natural_params[:2])
        rates = np.ascontiguousarray(natural_params[2:])
        return integrate(_predprey_rhs, y0, rates, self.times, rtol=self.rtol, atol=self.atol)

    def log_density(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        lo, hi = self.box
        if (theta < lo).any() or (theta > hi).any():
            return -np.inf
        natural = theta * PREDPREY_TRUE_PARAMS
        if not predprey_is_cyclic(natural):
            return -np.inf
        traj, status = self.solve(natural)
        if status != 0:
            self._warned += 1
            if self._warned <= 5:
                log.warning("trajectory solve failed (status %d); treating density as zero", status)
            return -np.inf
        res = traj - self.data
        return float(-0.5 * np.sum(res * res) / self.noise_var)

    def default_start(self) -> np.ndarray:
        return np.ones(8)


def make_predprey_target(seed: int = PREDPREY_DATA_SEED, noise_var: float = PREDPREY_NOISE_VAR) -> PredatorPreyTarget:
    times, data = synthesize_data("predprey", seed, noise_var=noise_var)
    return PredatorPreyTarget(times=times, data=data, noise_var=noise_var)


# ---------------------------------------------------------------------------
# Synthetic data and the registry

def save_dataset(path, times: np.ndarray, data: np.ndarray) -> None:
    """Delimited text, one row per observation time: time then observables."""
    times = np.asarray(times, dtype=float)
    block = np.column_stack([times, np.atleast_2d(np.asarray(data, dtype=float).T).T])
    np.savetxt(path, block, fmt="%.17g", header="time observables", comments="# ")


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    block = np.loadtxt(path, ndmin=2)
    times = block[:, 0]
    data = block[:, 1:]
    return times, data[:, 0] if data.shape[1] == 1 else data


def synthesize_data(kind: str, seed: int, noise_var: float | None = None):
    """Deterministic synthetic dataset: model output at the true parameters
    plus Gaussian noise drawn from the given seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    if kind == "bod":
        var = BOD_NOISE_VAR if noise_var is None else noise_var
        times = np.linspace(1.0, 5.0, 20)
        clean = bod_model(BOD_TRUE_PARAMS[0], BOD_TRUE_PARAMS[1], times)
        return times, clean + math.sqrt(var) * rng.standard_normal(times.size)
    if kind == "predprey":
        var = PREDPREY_NOISE_VAR if noise_var is None else noise_var
        times = PREDPREY_OBS_TIMES.copy()
        traj, status = integrate(
            _predprey_rhs,
            PREDPREY_TRUE_PARAMS[:2],
            PREDPREY_TRUE_PARAMS[2:],
            times,
        )
        if status != 0:
            raise RuntimeError(f"reference trajectory solve failed with status {status}")
        return times, traj + math.sqrt(var) * rng.standard_normal(traj.shape)
    raise ValueError(f"unknown dataset kind {kind!r}")


def make_target(name: str, **params) -> TargetDensity:
    """Problem registry for the command line; unknown keys are rejected."""
    name = name.lower()
    if name == "gaussian":
        dim = int(params.pop("dim", 2))
        rho = float(params.pop("rho", 0.5))
        cov = np.eye(dim)
        for i in range(dim - 1):
            cov[i, i + 1] = cov[i + 1, i] = rho
        prob = GaussianTarget(mean=np.zeros(dim), cov=cov)
        _reject_unknown(name, params)
        start = prob.mean.copy()
    elif name == "banana":
        prob = BananaTarget(
            curvature=float(params.pop("curvature", 1.0)), scale=float(params.pop("scale", 1.0))
        )
        _reject_unknown(name, params)
        start = prob.default_start()
    elif name == "bod":
        prob = make_bod_target(seed=int(params.pop("data_seed", BOD_DATA_SEED)))
        _reject_unknown(name, params)
        start = prob.default_start()
    elif name == "predprey":
        prob = make_predprey_target(seed=int(params.pop("data_seed", PREDPREY_DATA_SEED)))
        _reject_unknown(name, params)
        start = prob.default_start()
    else:
        raise ValueError(f"unknown problem {name!r}")
    target = TargetDensity(
        dim=prob.dim,
        log_density=prob.log_density,
        grad_log_density=getattr(prob, "grad_log_density", None),
        name=name,
    )
    target.start = start  # type: ignore[attr-defined]
    target.problem = prob  # type: ignore[attr-defined]
    return target


def _reject_unknown(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"unknown parameters for problem {name!r}: {sorted(params)}")
