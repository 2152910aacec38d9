"""Monge-Ampere structures (omega, alpha) on R^3 x R^3 and the metric they induce.

The symplectic form comes from the cost's mixed Hessian, the effective
3-form from the two densities.  The metric g_alpha is extracted from the
contraction identity

    g(X1, X2) * omega^3 / 3! = iota_X1 alpha ^ iota_X2 alpha ^ omega

one basis pair at a time.
"""

from dataclasses import dataclass

import numpy as np

from otmageom.errors import DegenerateStructureError
from otmageom.exterior import AltForm, interior_product, pullback_by_section, wedge
from otmageom.fields import CostFunction, Density, cost_hessian_x, hessian, mixed_hessian
from otmageom.maps import transport_map_from_potential

DEGENERACY_TOL = 1e-12
SYMMETRY_TOL = 1e-12

SOURCE_VOLUME = (0, 1, 2)
TARGET_VOLUME = (3, 4, 5)


@dataclass(frozen=True)
class MAStructure:
    """Cost plus source and target densities; together they fix (omega_c, alpha)."""

    cost: CostFunction
    source_density: Density
    target_density: Density
    analytic: bool = True

    def mixed_hessian(self, x, xbar):
        return mixed_hessian(self.cost, x, xbar, analytic=self.analytic)


@dataclass(frozen=True)
class MetricAtPoint:
    matrix: np.ndarray
    base_point: tuple

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (6, 6):
            raise ValueError("metric matrices are 6x6")
        asym = np.max(np.abs(m - m.T))
        if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
            raise ValueError(f"metric matrix is not symmetric (defect {asym:.3e})")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __call__(self, v, w):
        return float(np.asarray(v) @ self.matrix @ np.asarray(w))


def canonical_symplectic_form():
    """sum_i dx^i ^ dxbar^i."""
    return AltForm.from_terms(2, {(i, i + 3): 1.0 for i in range(3)})


def symplectic_form_from_mixed(mixed):
    b = -np.asarray(mixed, dtype=float)
    return AltForm.from_terms(2, {(i, j + 3): b[i, j] for i in range(3) for j in range(3)})


def symplectic_form_at(s, x, xbar):
    """omega_c with omega(d/dx^i, d/dxbar^j) = -(D_x D_xbar c)_ij."""
    mixed = s.mixed_hessian(x, xbar)
    if abs(np.linalg.det(mixed)) <= DEGENERACY_TOL:
        raise DegenerateStructureError(
            "mixed Hessian of the cost is singular", point=(np.asarray(x), np.asarray(xbar))
        )
    return symplectic_form_from_mixed(mixed)


def effective_form_at(s, x, xbar):
    """alpha = rho_bar(xbar) dxbar^123 - rho(x) dx^123."""
    rho = s.source_density(x)
    rho_bar = s.target_density(xbar)
    return AltForm.from_terms(3, {TARGET_VOLUME: rho_bar, SOURCE_VOLUME: -rho})


def effectiveness_defect(omega, alpha):
    """Largest coefficient of omega ^ alpha; zero for an effective form."""
    return wedge(omega, alpha).max_abs()


def normalized_volume(omega):
    """Single coefficient of omega^3 / 3!."""
    return wedge(omega, wedge(omega, omega)).coeffs[0] / 6.0


def lr_metric_value(omega, alpha, v, w):
    """g_alpha(v, w) straight from the contraction identity, for arbitrary vectors."""
    vol = normalized_volume(omega)
    if abs(vol) <= DEGENERACY_TOL:
        raise DegenerateStructureError("omega^3 vanishes")
    top = wedge(wedge(interior_product(v, alpha), interior_product(w, alpha)), omega)
    return top.coeffs[0] / vol


def lr_metric_at(s, x, xbar):
    omega = symplectic_form_at(s, x, xbar)
    alpha = effective_form_at(s, x, xbar)
    vol = normalized_volume(omega)
    if abs(vol) <= DEGENERACY_TOL:
        raise DegenerateStructureError("omega^3 vanishes", point=(np.asarray(x), np.asarray(xbar)))
    eye = np.eye(6)
    contractions = [interior_product(e, alpha) for e in eye]
    g = np.zeros((6, 6))
    for i in range(6):
        for j in range(i, 6):
            g[i, j] = wedge(wedge(contractions[i], contractions[j]), omega).coeffs[0] / vol
            g[j, i] = g[i, j]
    return MetricAtPoint(g, (np.asarray(x, dtype=float), np.asarray(xbar, dtype=float)))


def ma_residual_at(s, u, x, with_support=False):
    """Coefficient of dx^123 in the pullback of alpha along x -> (x, T_u(x)).

    Vanishes exactly where ``u`` solves the Monge-Ampere equation.  If
    T_u(x) leaves the target box the target density is extended by its
    boundary value; pass ``with_support=True`` to also get the in-support flag.
    """
    x = np.asarray(x, dtype=float)
    section = transport_map_from_potential(s.cost, u, x)
    inside = bool(s.target_density.contains(section.map_value))
    rho_bar = s.target_density.extended(section.map_value)
    alpha = AltForm.from_terms(3, {TARGET_VOLUME: rho_bar, SOURCE_VOLUME: -s.source_density(x)})
    value = pullback_by_section(alpha, section)
    return (value, inside) if with_support else value


def ma_residual_direct(s, u, x):
    """Determinant form of the same residual, normalized by det(-D_x D_xbar c).

    rho_bar(T) det(D^2u + D_x^2 c) / det(-D_x D_xbar c) - rho(x)
    """
    x = np.asarray(x, dtype=float)
    t = transport_map_from_potential(s.cost, u, x).map_value
    mixed = s.mixed_hessian(x, t)
    a = hessian(u, x) + cost_hessian_x(s.cost, x, t, analytic=s.analytic)
    return (s.target_density.extended(t) * np.linalg.det(a) / np.linalg.det(-mixed)
            - s.source_density(x))
