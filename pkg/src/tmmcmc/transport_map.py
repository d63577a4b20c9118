"""Lower-triangular transport maps.

A map is an ordered list of scalar components, the i-th depending only on
the first i coordinates and expanded in a polynomial basis. This module
evaluates maps and their Jacobians, inverts them by sequential
one-dimensional solves, applies the linear tail extension beyond an
evaluation radius, and exposes the pullback/pushforward log-densities and
the reference-space gradient used by Langevin-style proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import polybasis
from .polybasis import HERMITE, MultiIndexSet

LOG_2PI = math.log(2.0 * math.pi)


class MonotonicityError(RuntimeError):
    """A diagonal map derivative was non-positive where positivity is required."""

    def __init__(self, component_index: int, point: np.ndarray, value: float):
        self.component_index = component_index
        self.point = np.asarray(point, dtype=float)
        self.value = float(value)
        super().__init__(
            f"component {component_index} has non-positive diagonal derivative "
            f"{value:.3e} at {np.array2string(self.point, precision=4)}"
        )


class InversionError(RuntimeError):
    """A one-dimensional solve failed to bracket or converge."""


@dataclass(frozen=True)
class MapComponent:
    """One scalar component: an index set, its coefficient vector, and the
    polynomial family shared by the whole map."""

    index_set: MultiIndexSet
    coefficients: np.ndarray
    family: str = HERMITE

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.shape != (len(self.index_set),):
            raise ValueError(
                f"coefficient vector has length {coeffs.shape}, index set has {len(self.index_set)} members"
            )
        if not np.isfinite(coeffs).all():
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def dim_index(self) -> int:
        return self.index_set.dim_index


def identity_coefficients(index_set: MultiIndexSet) -> np.ndarray:
    """Coefficient vector reproducing the identity component: unit weight on
    the degree-1 diagonal index, zero elsewhere."""
    i = index_set.dim_index
    target = [0] * index_set.ambient_dim
    target[i - 1] = 1
    pos = index_set.member_position(tuple(target))
    if pos < 0:
        raise ValueError(f"index set for component {i} lacks the degree-1 diagonal index")
    coeffs = np.zeros(len(index_set))
    coeffs[pos] = 1.0
    return coeffs


@dataclass(frozen=True)
class TriangularMap:
    """Immutable triangular map with a derivative floor and an optional
    evaluation radius beyond which each component continues linearly."""

    components: tuple[MapComponent, ...]
    deriv_floor: float = 1e-8
    radius: float | None = None

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        for i, comp in enumerate(comps, start=1):
            if comp.dim_index != i:
                raise ValueError(f"component {i} carries index set for dimension {comp.dim_index}")
        if self.deriv_floor <= 0:
            raise ValueError("deriv_floor must be positive")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive when set")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def family(self) -> str:
        return self.components[0].family


def identity_map(
    n: int, sets: list[MultiIndexSet], family: str = HERMITE,
    deriv_floor: float = 1e-8, radius: float | None = None,
) -> TriangularMap:
    """Map whose components all reduce to their own coordinate."""
    if len(sets) != n:
        raise ValueError("need one index set per dimension")
    comps = tuple(
        MapComponent(index_set=s, coefficients=identity_coefficients(s), family=family) for s in sets
    )
    return TriangularMap(components=comps, deriv_floor=deriv_floor, radius=radius)


def _check_point(tmap: TriangularMap, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (tmap.dim,):
        raise ValueError(f"point has shape {theta.shape}, map dimension is {tmap.dim}")
    return theta


def _component_value(comp: MapComponent, point: np.ndarray) -> float:
    f = polybasis.basis_matrix(comp.family, comp.index_set, point[None, :])
    return float(f[0] @ comp.coefficients)


def _component_gradient(comp: MapComponent, point: np.ndarray) -> np.ndarray:
    """Gradient restricted to the component's own leading coordinates."""
    i = comp.dim_index
    g = np.empty(i)
    for m in range(1, i + 1):
        gm = polybasis.basis_partial_matrix(comp.family, comp.index_set, point[None, :], m)
        g[m - 1] = gm[0] @ comp.coefficients
    return g


def _component_hessian(comp: MapComponent, point: np.ndarray) -> np.ndarray:
    i = comp.dim_index
    h = np.empty((i, i))
    for a in range(1, i + 1):
        for b in range(a, i + 1):
            hab = polybasis.basis_second_partial_matrix(comp.family, comp.index_set, point[None, :], a, b)
            h[a - 1, b - 1] = h[b - 1, a - 1] = hab[0] @ comp.coefficients
    return h


def _extension_state(comp: MapComponent, theta: np.ndarray, radius: float):
    """Quantities of the tail extension for one component, or None inside
    the ball. The extension acts on the component's own leading block so the
    map stays triangular."""
    i = comp.dim_index
    x = theta[:i]
    rho = float(np.linalg.norm(x))
    if rho <= radius:
        return None
    u = x / rho
    w = np.zeros_like(theta)
    w[:i] = radius * u
    g = _component_gradient(comp, w)
    d = float(u @ g)
    return rho, u, w, g, d


def forward(tmap: TriangularMap, theta: np.ndarray) -> np.ndarray:
    """Evaluate the map. Beyond the radius each component continues linearly
    from the ball boundary along the incoming ray."""
    theta = _check_point(tmap, theta)
    out = np.empty(tmap.dim)
    for i0, comp in enumerate(tmap.components):
        if tmap.radius is None:
            out[i0] = _component_value(comp, theta)
        else:
            ext = _extension_state(comp, theta, tmap.radius)
            if ext is None:
                out[i0] = _component_value(comp, theta)
            else:
                rho, _, w, _, d = ext
                out[i0] = _component_value(comp, w) + d * (rho - tmap.radius)
    return out


def forward_batch(tmap: TriangularMap, thetas: np.ndarray) -> np.ndarray:
    """Map a whole sample matrix; rows are points."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != tmap.dim:
        raise ValueError("sample matrix does not match map dimension")
    if tmap.radius is not None:
        return np.array([forward(tmap, row) for row in thetas])
    out = np.empty_like(thetas)
    for i0, comp in enumerate(tmap.components):
        f = polybasis.basis_matrix(comp.family, comp.index_set, thetas)
        out[:, i0] = f @ comp.coefficients
    return out


def jacobian_diag(tmap: TriangularMap, theta: np.ndarray) -> np.ndarray:
    """Diagonal of the Jacobian, extension-aware outside the radius."""
    theta = _check_point(tmap, theta)
    out = np.empty(tmap.dim)
    for i0, comp in enumerate(tmap.components):
        ext = None if tmap.radius is None else _extension_state(comp, theta, tmap.radius)
        if ext is None:
            gm = polybasis.basis_partial_matrix(comp.family, comp.index_set, theta[None, :], i0 + 1)
            out[i0] = gm[0] @ comp.coefficients
        else:
            out[i0] = _extension_jacobian_row(comp, ext, tmap.radius)[i0]
    return out


def _extension_jacobian_row(comp: MapComponent, ext, radius: float) -> np.ndarray:
    """Exact gradient of the extended component; derivation collapses to
    grad T_i(w) plus a curvature correction proportional to (rho - R)."""
    rho, u, w, g, d = ext
    i = comp.dim_index
    hess = _component_hessian(comp, w)
    uh = u @ hess
    row = np.zeros(comp.index_set.ambient_dim)
    correction = (radius * (rho - radius) / rho) * (uh - float(uh @ u) * u)
    row[:i] = g + correction
    return row


def jacobian_diag_batch(tmap: TriangularMap, thetas: np.ndarray) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if tmap.radius is not None:
        return np.array([jacobian_diag(tmap, row) for row in thetas])
    out = np.empty_like(thetas)
    for i0, comp in enumerate(tmap.components):
        gm = polybasis.basis_partial_matrix(comp.family, comp.index_set, thetas, i0 + 1)
        out[:, i0] = gm @ comp.coefficients
    return out


def full_jacobian(tmap: TriangularMap, theta: np.ndarray) -> np.ndarray:
    """Dense lower-triangular Jacobian at one point."""
    theta = _check_point(tmap, theta)
    n = tmap.dim
    jac = np.zeros((n, n))
    for i0, comp in enumerate(tmap.components):
        ext = None if tmap.radius is None else _extension_state(comp, theta, tmap.radius)
        if ext is None:
            for m in range(1, i0 + 2):
                gm = polybasis.basis_partial_matrix(comp.family, comp.index_set, theta[None, :], m)
                jac[i0, m - 1] = gm[0] @ comp.coefficients
        else:
            jac[i0, :] = _extension_jacobian_row(comp, ext, tmap.radius)[:n]
    return jac


def log_det_jacobian(tmap: TriangularMap, theta: np.ndarray) -> float:
    """Sum of log diagonal derivatives; raises when any is non-positive."""
    diag = jacobian_diag(tmap, theta)
    for i0, v in enumerate(diag):
        if not v > 0.0:
            raise MonotonicityError(i0 + 1, theta, v)
    return float(np.log(diag).sum())


def log_det_jacobian_batch(tmap: TriangularMap, thetas: np.ndarray) -> np.ndarray:
    diag = jacobian_diag_batch(tmap, thetas)
    bad = np.nonzero(~(diag > 0.0))
    if bad[0].size:
        k, i0 = int(bad[0][0]), int(bad[1][0])
        raise MonotonicityError(i0 + 1, np.atleast_2d(thetas)[k], diag[k, i0])
    return np.log(diag).sum(axis=1)


def _horner(coeffs: list[float], x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _collapse_to_power(comp: MapComponent, values_1d: list[np.ndarray]) -> list[float]:
    """Collapse a component to a univariate power-basis polynomial in its own
    coordinate, given univariate family values of the solved prefix."""
    i0 = comp.dim_index - 1
    arr = comp.index_set.array
    weights = comp.coefficients.copy()
    for k in range(i0):
        col = arr[:, k]
        if col.any():
            weights = weights * values_1d[k][col]
    diag_deg = arr[:, i0]
    fam_coeffs = np.bincount(diag_deg, weights=weights, minlength=int(diag_deg.max(initial=0)) + 1)
    if comp.family == HERMITE:
        power = np.zeros_like(fam_coeffs)
        for d, c in enumerate(fam_coeffs):
            if c != 0.0:
                power[: d + 1] += c * polybasis.hermite_power_coefficients(d)
        return list(power)
    return list(fam_coeffs)


def _solve_monotone_1d(f, fprime, target: float, x0: float, component_index: int) -> float:
    """Solve f(x) = target for an increasing f.

    The bracket starts tight around the hint and grows geometrically so
    that roots inside a narrow monotone window are found before the search
    wanders onto a non-monotone branch; an expansion that moves the
    function value the wrong way reports a monotonicity violation.
    """
    span = 1e-3 * (1.0 + abs(x0))
    lo = x0 - span
    hi = x0 + span
    flo = f(lo) - target
    fhi = f(hi) - target
    if flo > fhi:
        raise MonotonicityError(component_index, np.array([x0]), fhi - flo)
    expansions = 0
    while flo > 0.0 or fhi < 0.0:
        expansions += 1
        if expansions > 90 or not (math.isfinite(flo) and math.isfinite(fhi)):
            raise InversionError(
                f"component {component_index}: no bracket for target {target!r} after {expansions} expansions"
            )
        span *= 2.0
        if flo > 0.0:
            lo_new = lo - span
            flo_new = f(lo_new) - target
            if flo_new > flo:
                raise MonotonicityError(component_index, np.array([lo_new]), flo - flo_new)
            lo, flo = lo_new, flo_new
        if fhi < 0.0:
            hi_new = hi + span
            fhi_new = f(hi_new) - target
            if fhi_new < fhi:
                raise MonotonicityError(component_index, np.array([hi_new]), fhi_new - fhi)
            hi, fhi = hi_new, fhi_new
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = f(mid) - target
        if fm == 0.0:
            return mid
        if fm < 0.0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if hi - lo < 1e-14 * (1.0 + abs(lo) + abs(hi)):
            break
    x = 0.5 * (lo + hi)
    for _ in range(8):
        fx = f(x) - target
        if fx == 0.0:
            return x
        dfx = fprime(x)
        if dfx <= 0.0:
            break
        step = fx / dfx
        xn = x - step
        if not lo <= xn <= hi:
            xn = 0.5 * (lo + hi)
        if fx > 0.0:
            hi = x
        else:
            lo = x
        if xn == x:
            break
        x = xn
    if abs(f(x) - target) > 1e-10 * max(1.0, abs(target)):
        raise InversionError(
            f"component {component_index}: residual {abs(f(x) - target):.3e} above tolerance at x={x!r}"
        )
    return x


def inverse(tmap: TriangularMap, r: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """Invert the map by n sequential one-dimensional solves.

    ``initial`` optionally seeds the bracket search (e.g. the current chain
    state during sampling).
    """
    r = _check_point(tmap, r)
    n = tmap.dim
    theta = np.zeros(n)
    values_1d: list[np.ndarray] = [np.empty(0)] * n
    max_degs = [int(c.index_set.array.max(initial=0)) for c in tmap.components]
    for i0, comp in enumerate(tmap.components):
        hint = float(initial[i0]) if initial is not None else float(r[i0])
        if tmap.radius is None:
            power = _collapse_to_power(comp, values_1d)
            dpower = [k * power[k] for k in range(1, len(power))]
            if len(power) <= 2:
                # constant or linear slice: closed form
                slope = power[1] if len(power) == 2 else 0.0
                if slope <= 0.0:
                    raise MonotonicityError(i0 + 1, theta[: i0 + 1], slope)
                theta[i0] = (float(r[i0]) - power[0]) / slope
            else:
                f = lambda x: _horner(power, x)
                fp = lambda x: _horner(dpower, x)
                theta[i0] = _solve_monotone_1d(f, fp, float(r[i0]), hint, i0 + 1)
        else:
            def f(x: float, _i0: int = i0) -> float:
                theta[_i0] = x
                comp_i = tmap.components[_i0]
                ext = _extension_state(comp_i, theta, tmap.radius)
                if ext is None:
                    return _component_value(comp_i, theta)
                rho, _, w, _, d = ext
                return _component_value(comp_i, w) + d * (rho - tmap.radius)

            def fp(x: float, _i0: int = i0) -> float:
                theta[_i0] = x
                return jacobian_diag(tmap, theta)[_i0]

            theta[i0] = _solve_monotone_1d(f, fp, float(r[i0]), hint, i0 + 1)
        values_1d[i0] = polybasis.univariate_values(tmap.family, max(max_degs), np.asarray(theta[i0]))
    return theta


def _standard_normal_logpdf(r: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    return float(-0.5 * len(r) * LOG_2PI - 0.5 * (r @ r))


def pullback_log_density(tmap: TriangularMap, theta: np.ndarray) -> float:
    """Log-density obtained by pulling the standard normal reference back
    through the map."""
    value = forward(tmap, theta)
    return _standard_normal_logpdf(value) + log_det_jacobian(tmap, theta)


def pullback_log_density_batch(tmap: TriangularMap, thetas: np.ndarray) -> np.ndarray:
    values = forward_batch(tmap, thetas)
    logdets = log_det_jacobian_batch(tmap, thetas)
    return -0.5 * values.shape[1] * LOG_2PI - 0.5 * (values**2).sum(axis=1) + logdets


def pushforward_log_density(tmap: TriangularMap, target, r: np.ndarray) -> float:
    """Log-density of the target pushed through the map, evaluated in
    reference coordinates. ``target`` supplies ``log_density``."""
    theta = inverse(tmap, r)
    return float(target.log_density(theta)) - log_det_jacobian(tmap, theta)


def _diag_second_partial_rows(tmap: TriangularMap, theta: np.ndarray) -> np.ndarray:
    """Row m of the result holds the second partials of component i in
    (theta_m, theta_i); only defined inside the evaluation radius."""
    n = tmap.dim
    rows = np.zeros((n, n))
    for i0, comp in enumerate(tmap.components):
        for m in range(1, i0 + 2):
            h = polybasis.basis_second_partial_matrix(comp.family, comp.index_set, theta[None, :], m, i0 + 1)
            rows[i0, m - 1] = h[0] @ comp.coefficients
    return rows


def pushforward_gradient(
    tmap: TriangularMap, grad_log_density, r: np.ndarray, theta: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of the pushforward log-density with respect to the reference
    coordinates, assembled from the target gradient, the inverse Jacobian,
    and the second-derivative rows of the determinant term."""
    if theta is None:
        theta = inverse(tmap, r)
    theta = _check_point(tmap, theta)
    if tmap.radius is not None:
        for comp in tmap.components:
            if np.linalg.norm(theta[: comp.dim_index]) > tmap.radius:
                raise InversionError(
                    "reference gradient needs the preimage inside the evaluation radius"
                )
    jac = full_jacobian(tmap, theta)
    diag = jac.diagonal()
    for i0, v in enumerate(diag):
        if not v > 0.0:
            raise MonotonicityError(i0 + 1, theta, v)
    hrows = _diag_second_partial_rows(tmap, theta)
    v = np.asarray(grad_log_density(theta), dtype=float) - (hrows / diag[:, None]).sum(axis=0)
    return solve_triangular(jac, v, trans="T", lower=True)


def serialize_map(tmap: TriangularMap) -> str:
    """Text form with full 17-digit coefficients for lossless round-trips."""
    lines = ["tmmcmc-map 1"]
    lines.append(f"family {tmap.family}")
    lines.append(f"dim {tmap.dim}")
    lines.append(f"deriv_floor {tmap.deriv_floor:.17g}")
    lines.append("radius " + ("inf" if tmap.radius is None else f"{tmap.radius:.17g}"))
    for comp in tmap.components:
        lines.append(f"component {comp.dim_index} terms {len(comp.index_set)}")
        for row, c in zip(comp.index_set.array, comp.coefficients):
            lines.append(" ".join(str(int(v)) for v in row) + f" {c:.17g}")
    return "\n".join(lines) + "\n"


def deserialize_map(text: str) -> TriangularMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("tmmcmc-map"):
        raise ValueError("not a serialized map")
    family = lines[1].split()[1]
    dim = int(lines[2].split()[1])
    deriv_floor = float(lines[3].split()[1])
    rad_tok = lines[4].split()[1]
    radius = None if rad_tok == "inf" else float(rad_tok)
    comps = []
    pos = 5
    for i in range(1, dim + 1):
        head = lines[pos].split()
        if head[0] != "component" or int(head[1]) != i:
            raise ValueError(f"malformed component header at line {pos + 1}")
        terms = int(head[3])
        rows, coeffs = [], []
        for ln in lines[pos + 1 : pos + 1 + terms]:
            parts = ln.split()
            rows.append(tuple(int(v) for v in parts[:dim]))
            coeffs.append(float(parts[dim]))
        order = sorted(range(terms), key=lambda k: (sum(rows[k]), rows[k]))
        iset = MultiIndexSet(i, dim, np.array([rows[k] for k in order], dtype=np.int64))
        comps.append(MapComponent(iset, np.array([coeffs[k] for k in order]), family))
        pos += 1 + terms
    return TriangularMap(tuple(comps), deriv_floor=deriv_floor, radius=radius)


def save_map(tmap: TriangularMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_map(tmap))


def load_map(path) -> TriangularMap:
    with open(path) as fh:
        return deserialize_map(fh.read())
