"""Pointwise exterior algebra on the 6-dimensional phase space R^3 x R^3.

Covector indices are 0-based: 0, 1, 2 are dx^1, dx^2, dx^3 and 3, 4, 5 are
dxbar^1, dxbar^2, dxbar^3.  A k-form is stored densely over the C(6, k)
strictly increasing multi-indices in lexicographic order, and forms are
evaluated on vectors with the determinant convention
``(dx^1 ^ dx^2)(e_1, e_2) = 1``.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

DIM = 6


@lru_cache(maxsize=None)
def basis(degree):
    """Lexicographically ordered multi-indices spanning the k-forms."""
    if not 0 <= degree <= DIM:
        raise ValueError(f"degree must lie in 0..{DIM}, got {degree}")
    return tuple(combinations(range(DIM), degree))


@lru_cache(maxsize=None)
def _position(degree):
    return {idx: n for n, idx in enumerate(basis(degree))}


def merge_sign(first, second):
    """Sign of the permutation sorting ``first + second``; 0 if they overlap."""
    if set(first) & set(second):
        return 0
    inversions = sum(1 for i in first for j in second if i > j)
    return -1 if inversions % 2 else 1


def permutation_sign(indices):
    """Return (sign, sorted tuple) for an arbitrary index sequence."""
    indices = tuple(indices)
    if len(set(indices)) != len(indices):
        return 0, tuple(sorted(indices))
    inversions = sum(
        1 for a in range(len(indices)) for b in range(a + 1, len(indices)) if indices[a] > indices[b]
    )
    return (-1 if inversions % 2 else 1), tuple(sorted(indices))


@lru_cache(maxsize=None)
def _wedge_table(p, q):
    # table[i, j, k] = sign placing basis_p[i] ^ basis_q[j] on basis_{p+q}[k]
    table = np.zeros((comb(DIM, p), comb(DIM, q), comb(DIM, p + q)))
    target = _position(p + q)
    for i, a in enumerate(basis(p)):
        for j, b in enumerate(basis(q)):
            s = merge_sign(a, b)
            if s:
                table[i, j, target[tuple(sorted(a + b))]] = s
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _interior_table(k):
    # table[m, i, l]: coefficient of basis_{k-1}[l] in iota_{e_m} basis_k[i]
    table = np.zeros((DIM, comb(DIM, k), comb(DIM, k - 1)))
    target = _position(k - 1)
    for i, idx in enumerate(basis(k)):
        for r, m in enumerate(idx):
            rest = idx[:r] + idx[r + 1:]
            table[m, i, target[rest]] = -1.0 if r % 2 else 1.0
    table.setflags(write=False)
    return table


@dataclass(frozen=True, eq=False)
class AltForm:
    """An alternating k-covector on R^6 with dense lexicographic coefficients."""

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 0 <= self.degree <= DIM:
            raise ValueError(f"degree must lie in 0..{DIM}, got {self.degree}")
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size != comb(DIM, self.degree):
            raise ValueError(
                f"a {self.degree}-form on R^{DIM} needs {comb(DIM, self.degree)} "
                f"coefficients, got {coeffs.size}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zero(cls, degree):
        return cls(degree, np.zeros(comb(DIM, degree)))

    @classmethod
    def from_terms(cls, degree, terms):
        """Build a form from ``{index_tuple: coefficient}``.

        Index tuples may be in any order; the permutation sign is applied and
        repeated indices contribute nothing.
        """
        coeffs = np.zeros(comb(DIM, degree))
        pos = _position(degree)
        for idx, value in terms.items():
            if len(idx) != degree:
                raise ValueError(f"index {idx} does not have length {degree}")
            sign, key = permutation_sign(idx)
            if sign:
                coeffs[pos[key]] += sign * value
        return cls(degree, coeffs)

    @classmethod
    def basis_form(cls, *indices):
        """The elementary form ``dz^{i1} ^ ... ^ dz^{ik}``."""
        return cls.from_terms(len(indices), {tuple(indices): 1.0})

    @classmethod
    def from_matrix(cls, matrix):
        """2-form with ``omega(e_i, e_j) = matrix[i, j]`` (antisymmetric part is used)."""
        m = np.asarray(matrix, dtype=float)
        a = 0.5 * (m - m.T)
        return cls(2, [a[i, j] for i, j in basis(2)])

    def to_matrix(self):
        """Antisymmetric 6x6 matrix of a 2-form."""
        if self.degree != 2:
            raise ValueError("to_matrix is only defined for 2-forms")
        m = np.zeros((DIM, DIM))
        for c, (i, j) in zip(self.coeffs, basis(2)):
            m[i, j] = c
            m[j, i] = -c
        return m

    def coefficient(self, *indices):
        sign, key = permutation_sign(indices)
        if len(key) != self.degree:
            raise ValueError(f"expected {self.degree} indices")
        return sign * self.coeffs[_position(self.degree)[key]] if sign else 0.0

    def terms(self):
        return {idx: c for idx, c in zip(basis(self.degree), self.coeffs) if c != 0.0}

    def __call__(self, *vectors):
        """Evaluate on k vectors: ``sum_I a_I det(V[:, I])``."""
        if len(vectors) != self.degree:
            raise ValueError(f"a {self.degree}-form takes {self.degree} vectors")
        if self.degree == 0:
            return float(self.coeffs[0])
        v = np.array(vectors, dtype=float).reshape(self.degree, DIM)
        minors = np.array([np.linalg.det(v[:, list(idx)]) for idx in basis(self.degree)])
        return float(self.coeffs @ minors)

    def max_abs(self):
        return float(np.max(np.abs(self.coeffs)))

    def _check_same(self, other):
        if not isinstance(other, AltForm) or other.degree != self.degree:
            raise ValueError("forms must have equal degree")

    def __add__(self, other):
        self._check_same(other)
        return AltForm(self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return AltForm(self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return AltForm(self.degree, -self.coeffs)

    def __mul__(self, scalar):
        return AltForm(self.degree, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __repr__(self):
        terms = ", ".join(f"{idx}: {c:.6g}" for idx, c in self.terms().items())
        return f"AltForm(degree={self.degree}, {{{terms}}})"


def wedge(a, b):
    """Exterior product of two forms on R^6."""
    if a.degree + b.degree > DIM:
        raise ValueError(f"degree overflow: {a.degree} + {b.degree} > {DIM}")
    table = _wedge_table(a.degree, b.degree)
    return AltForm(a.degree + b.degree, np.einsum("i,j,ijk->k", a.coeffs, b.coeffs, table))


def interior_product(v, a):
    """Contraction ``iota_v a``; lowers the degree by one."""
    if a.degree < 1:
        raise ValueError("cannot contract a 0-form")
    v = np.asarray(v, dtype=float).reshape(DIM)
    return AltForm(a.degree - 1, np.einsum("m,i,mil->l", v, a.coeffs, _interior_table(a.degree)))


@dataclass(frozen=True)
class GraphSection:
    """The graph x -> (x, T(x)) at one base point: T(x) and its Jacobian DT(x)."""

    map_value: np.ndarray
    jacobian: np.ndarray
    base_point: np.ndarray = None

    def __post_init__(self):
        jac = np.array(self.jacobian, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(jac)):
            raise ValueError("graph jacobian has non-finite entries")
        object.__setattr__(self, "jacobian", jac)
        object.__setattr__(self, "map_value", np.array(self.map_value, dtype=float).reshape(3))
        if self.base_point is not None:
            object.__setattr__(self, "base_point", np.array(self.base_point, dtype=float).reshape(3))

    def tangent_vectors(self):
        """Rows t_i = (e_i, DT e_i) spanning the tangent space of the graph."""
        return np.hstack([np.eye(3), self.jacobian.T])


def pullback_by_section(a, section):
    """Coefficient of dx^1 ^ dx^2 ^ dx^3 in the pullback of a 3-form along a graph."""
    if a.degree != 3:
        raise ValueError(f"pullback_by_section needs a 3-form, got degree {a.degree}")
    return a(*section.tangent_vectors())
