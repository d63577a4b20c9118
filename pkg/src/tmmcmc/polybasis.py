"""Univariate polynomial families and triangular tensor-product bases.

Provides probabilists' Hermite and plain monomial families, multivariate
basis functions built from multi-indices, and the constructors for the
lower-triangular multi-index sets used by the map components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITE = "hermite"
MONOMIAL = "monomial"
FAMILIES = (HERMITE, MONOMIAL)

_hermite_power_cache: list[np.ndarray] = [np.array([1.0]), np.array([0.0, 1.0])]


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown polynomial family {family!r}; expected one of {FAMILIES}")


def hermite_power_coefficients(degree: int) -> np.ndarray:
    """Power-basis coefficients (ascending) of the probabilists' Hermite
    polynomial of the given degree."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    while len(_hermite_power_cache) <= degree:
        k = len(_hermite_power_cache) - 1
        hk = _hermite_power_cache[k]
        hkm1 = _hermite_power_cache[k - 1]
        # He_{k+1}(x) = x He_k(x) - k He_{k-1}(x)
        nxt = np.zeros(k + 2)
        nxt[1:] = hk
        nxt[: k] -= k * hkm1
        _hermite_power_cache.append(nxt)
    return _hermite_power_cache[degree].copy()


def univariate_values(family: str, max_degree: int, x: np.ndarray) -> np.ndarray:
    """Table of family values, shape ``(len(x), max_degree + 1)``.

    Column ``d`` holds the degree-``d`` member evaluated at ``x``. Hermite
    values come from the three-term recurrence
    ``He_{k+1}(x) = x He_k(x) - k He_{k-1}(x)``.
    """
    _check_family(family)
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    if family == HERMITE:
        for k in range(1, max_degree):
            out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    else:
        for k in range(1, max_degree):
            out[..., k + 1] = x * out[..., k]
    return out


def univariate_deriv_values(family: str, max_degree: int, x: np.ndarray) -> np.ndarray:
    """First-derivative table matching :func:`univariate_values`."""
    _check_family(family)
    x = np.asarray(x, dtype=float)
    vals = univariate_values(family, max(max_degree - 1, 0), x)
    out = np.zeros(x.shape + (max_degree + 1,))
    # both families satisfy d/dx phi_k = k * phi_{k-1} with phi the same
    # family for Hermite and the monomials
    for k in range(1, max_degree + 1):
        out[..., k] = k * vals[..., k - 1]
    return out


def univariate_second_deriv_values(family: str, max_degree: int, x: np.ndarray) -> np.ndarray:
    """Second-derivative table matching :func:`univariate_values`."""
    _check_family(family)
    x = np.asarray(x, dtype=float)
    vals = univariate_values(family, max(max_degree - 2, 0), x)
    out = np.zeros(x.shape + (max_degree + 1,))
    for k in range(2, max_degree + 1):
        out[..., k] = k * (k - 1) * vals[..., k - 2]
    return out


def eval_univariate(family: str, degree: int, x: float) -> float:
    """Evaluate the degree-``degree`` member of the family at ``x``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return float(univariate_values(family, degree, np.asarray(x, dtype=float))[..., degree])


def eval_univariate_deriv(family: str, degree: int, x: float) -> float:
    """Evaluate the first derivative of the degree-``degree`` member at ``x``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree == 0:
        return 0.0
    return degree * eval_univariate(family, degree - 1, x)


def eval_multivariate(family: str, index: tuple[int, ...] | np.ndarray, theta: np.ndarray) -> float:
    """Tensor-product basis value: the product of univariate factors picked
    out by the multi-index."""
    index = np.asarray(index, dtype=np.int64)
    theta = np.asarray(theta, dtype=float)
    if index.shape != theta.shape:
        raise ValueError(f"multi-index length {index.shape} does not match point length {theta.shape}")
    out = 1.0
    for jk, tk in zip(index, theta):
        if jk > 0:
            out *= eval_univariate(family, int(jk), float(tk))
    return out


def eval_multivariate_partial(
    family: str, index: tuple[int, ...] | np.ndarray, theta: np.ndarray, dim_index: int
) -> float:
    """Partial derivative of the tensor-product basis function with respect
    to coordinate ``dim_index`` (1-based)."""
    index = np.asarray(index, dtype=np.int64)
    theta = np.asarray(theta, dtype=float)
    if index.shape != theta.shape:
        raise ValueError("multi-index length does not match point length")
    if not 1 <= dim_index <= len(theta):
        raise ValueError(f"dim_index {dim_index} out of range for dimension {len(theta)}")
    d0 = dim_index - 1
    out = eval_univariate_deriv(family, int(index[d0]), float(theta[d0]))
    if out == 0.0:
        return 0.0
    for k, (jk, tk) in enumerate(zip(index, theta)):
        if k != d0 and jk > 0:
            out *= eval_univariate(family, int(jk), float(tk))
    return out


def _grlex_sorted(rows: list[tuple[int, ...]], ambient_dim: int) -> np.ndarray:
    uniq = sorted(set(rows), key=lambda j: (sum(j), j))
    return np.array(uniq, dtype=np.int64).reshape(len(uniq), ambient_dim)


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered set of multi-indices feeding one triangular map component.

    Members have zero entries beyond ``dim_index`` so that the component
    depends only on the leading coordinates. Ordering is graded
    lexicographic, which keeps coefficient vectors reproducible.
    """

    dim_index: int
    ambient_dim: int
    array: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.array, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != self.ambient_dim:
            raise ValueError("index array must be (M, ambient_dim)")
        if not 1 <= self.dim_index <= self.ambient_dim:
            raise ValueError("dim_index out of range")
        if (arr < 0).any():
            raise ValueError("multi-index entries must be non-negative")
        if arr[:, self.dim_index:].any():
            raise ValueError(
                f"indices for component {self.dim_index} must vanish beyond coordinate {self.dim_index}"
            )
        if len({tuple(r) for r in arr}) != len(arr):
            raise ValueError("duplicate multi-indices")
        object.__setattr__(self, "array", _grlex_sorted([tuple(r) for r in arr]))

    def __len__(self) -> int:
        return self.array.shape[0]

    @property
    def cardinality(self) -> int:
        return self.array.shape[0]

    @property
    def max_degree(self) -> int:
        return int(self.array.sum(axis=1).max(initial=0))

    def degrees_in(self, dim_index: int) -> np.ndarray:
        return self.array[:, dim_index - 1]

    def member_position(self, index: tuple[int, ...]) -> int:
        """Row of the given multi-index, or -1 if absent."""
        target = np.asarray(index, dtype=np.int64)
        hits = np.nonzero((self.array == target).all(axis=1))[0]
        return int(hits[0]) if hits.size else -1

    def to_text(self) -> str:
        return "\n".join(" ".join(str(v) for v in row) for row in self.array)

    @classmethod
    def from_text(cls, text: str, dim_index: int) -> "MultiIndexSet":
        rows = [tuple(int(v) for v in line.split()) for line in text.strip().splitlines() if line.strip()]
        if not rows:
            raise ValueError("empty multi-index text")
        return cls(dim_index=dim_index, ambient_dim=len(rows[0]), array=np.array(rows, dtype=np.int64))


def _degree_tuples(active: int, budget: int):
    """All tuples of `active` non-negative ints with sum <= budget."""
    if active == 0:
        yield ()
        return
    for lead in range(budget + 1):
        for rest in _degree_tuples(active - 1, budget - lead):
            yield (lead,) + rest


def build_total_order(dim_index: int, degree: int, ambient_dim: int) -> MultiIndexSet:
    """All multi-indices of total degree at most ``degree`` supported on the
    first ``dim_index`` coordinates."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rows = [head + (0,) * (ambient_dim - dim_index) for head in _degree_tuples(dim_index, degree)]
    return MultiIndexSet(dim_index, ambient_dim, np.array(rows, dtype=np.int64))


def build_no_mixed(dim_index: int, degree: int, ambient_dim: int) -> MultiIndexSet:
    """Total-order set with every mixed term removed: each member is a pure
    power of a single coordinate (or the constant)."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rows = [(0,) * ambient_dim]
    for k in range(dim_index):
        for d in range(1, degree + 1):
            row = [0] * ambient_dim
            row[k] = d
            rows.append(tuple(row))
    return MultiIndexSet(dim_index, ambient_dim, np.array(rows, dtype=np.int64))


def build_diagonal(dim_index: int, degree: int, ambient_dim: int) -> MultiIndexSet:
    """Pure powers of coordinate ``dim_index`` up to ``degree``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rows = []
    for d in range(degree + 1):
        row = [0] * ambient_dim
        row[dim_index - 1] = d
        rows.append(tuple(row))
    return MultiIndexSet(dim_index, ambient_dim, np.array(rows, dtype=np.int64))


def union_sets(a: MultiIndexSet, b: MultiIndexSet) -> MultiIndexSet:
    """Deduplicated union of two index sets for the same component."""
    if a.dim_index != b.dim_index or a.ambient_dim != b.ambient_dim:
        raise ValueError("cannot union index sets with different component or ambient dimension")
    rows = np.vstack([a.array, b.array])
    return MultiIndexSet(a.dim_index, a.ambient_dim, rows[np.unique(rows, axis=0, return_index=True)[1]])


@dataclass(frozen=True)
class BasisSpec:
    """Recipe for building one index set per map component.

    ``set_type`` is one of ``total_order``, ``no_mixed``, ``diagonal`` or
    ``union`` (total order of ``degree`` plus diagonal of ``diag_degree``).
    """

    family: str = HERMITE
    set_type: str = "total_order"
    degree: int = 3
    diag_degree: int | None = None

    def __post_init__(self) -> None:
        _check_family(self.family)
        if self.set_type not in ("total_order", "no_mixed", "diagonal", "union"):
            raise ValueError(f"unknown set_type {self.set_type!r}")
        if self.set_type == "union" and self.diag_degree is None:
            raise ValueError("union basis needs diag_degree")

    def build_sets(self, ambient_dim: int) -> list[MultiIndexSet]:
        sets = []
        for i in range(1, ambient_dim + 1):
            if self.set_type == "total_order":
                s = build_total_order(i, self.degree, ambient_dim)
            elif self.set_type == "no_mixed":
                s = build_no_mixed(i, self.degree, ambient_dim)
            elif self.set_type == "diagonal":
                s = build_diagonal(i, self.degree, ambient_dim)
            else:
                s = union_sets(
                    build_total_order(i, self.degree, ambient_dim),
                    build_diagonal(i, self.diag_degree, ambient_dim),
                )
            sets.append(s)
        return sets


def basis_matrix(family: str, index_set: MultiIndexSet, points: np.ndarray) -> np.ndarray:
    """Evaluate every basis function of the set at every point.

    ``points`` is ``(K, n)``; the result is ``(K, M)`` with one column per
    multi-index in set order.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != index_set.ambient_dim:
        raise ValueError("points do not match the ambient dimension of the index set")
    arr = index_set.array
    out = np.ones((points.shape[0], arr.shape[0]))
    for k in range(index_set.dim_index):
        col = arr[:, k]
        dmax = int(col.max(initial=0))
        if dmax == 0:
            continue
        table = univariate_values(family, dmax, points[:, k])
        out *= table[:, col]
    return out


def basis_partial_matrix(
    family: str, index_set: MultiIndexSet, points: np.ndarray, dim_index: int
) -> np.ndarray:
    """Like :func:`basis_matrix` but differentiated in coordinate
    ``dim_index`` (1-based)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != index_set.ambient_dim:
        raise ValueError("points do not match the ambient dimension of the index set")
    if not 1 <= dim_index <= index_set.ambient_dim:
        raise ValueError("dim_index out of range")
    arr = index_set.array
    out = np.ones((points.shape[0], arr.shape[0]))
    for k in range(index_set.dim_index):
        col = arr[:, k]
        dmax = int(col.max(initial=0))
        if k == dim_index - 1:
            table = univariate_deriv_values(family, dmax, points[:, k])
        elif dmax == 0:
            continue
        else:
            table = univariate_values(family, dmax, points[:, k])
        out *= table[:, col]
    if dim_index > index_set.dim_index:
        # the set has no dependence on trailing coordinates
        out[:] = 0.0
    return out


def basis_second_partial_matrix(
    family: str, index_set: MultiIndexSet, points: np.ndarray, dim_a: int, dim_b: int
) -> np.ndarray:
    """Second mixed partial of the basis functions in coordinates ``dim_a``
    and ``dim_b`` (1-based)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    arr = index_set.array
    if max(dim_a, dim_b) > index_set.dim_index:
        return np.zeros((points.shape[0], arr.shape[0]))
    out = np.ones((points.shape[0], arr.shape[0]))
    for k in range(index_set.dim_index):
        col = arr[:, k]
        dmax = int(col.max(initial=0))
        if dim_a == dim_b and k == dim_a - 1:
            table = univariate_second_deriv_values(family, dmax, points[:, k])
        elif k == dim_a - 1 or k == dim_b - 1:
            table = univariate_deriv_values(family, dmax, points[:, k])
        elif dmax == 0:
            continue
        else:
            table = univariate_values(family, dmax, points[:, k])
        out *= table[:, col]
    return out
