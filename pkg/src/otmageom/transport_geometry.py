"""Kim-McCann-Warren metric, conformal comparison with g_alpha, and graph tests."""

from dataclasses import dataclass

import numpy as np

from otmageom.errors import DegenerateStructureError, DomainError
from otmageom.fields import mixed_hessian
from otmageom.ma_structure import (
    DEGENERACY_TOL,
    MetricAtPoint,
    lr_metric_at,
    symplectic_form_at,
)
from otmageom.maps import transport_map_from_potential

__all__ = [
    "ConformalReport",
    "GraphCheck",
    "conformal_defect_at",
    "graph_geometry_check",
    "kmw_metric_at",
    "metric_signature",
    "transport_map_from_potential",
]

SPACELIKE_TOL = 1e-10
DIMENSION = 3


@dataclass(frozen=True)
class ConformalReport:
    base_point: tuple
    conformal_factor: float
    relative_defect: float
    lr_matrix: MetricAtPoint
    kmw_matrix: MetricAtPoint


@dataclass(frozen=True)
class GraphCheck:
    lagrangian_defect: float
    spacelike: bool
    degenerate: bool
    restricted_metric: np.ndarray


def kmw_metric_from_parts(mixed, rho, rho_bar, base_point=None):
    det = np.linalg.det(mixed)
    if abs(det) <= DEGENERACY_TOL:
        raise DegenerateStructureError("mixed Hessian of the cost is singular", point=base_point)
    if rho <= 0 or rho_bar <= 0:
        raise DomainError(f"densities must be positive, got rho={rho}, rho_bar={rho_bar}")
    prefactor = (rho * rho_bar / abs(det)) ** (1.0 / DIMENSION)
    h = np.zeros((6, 6))
    h[:3, 3:] = -prefactor * mixed
    h[3:, :3] = -prefactor * mixed.T
    return MetricAtPoint(h, base_point)


def kmw_metric_at(c, rho, rho_bar, x, xbar, analytic=True):
    """h_c = (rho rho_bar / |det D_x D_xbar c|)^(1/3) [[0, -B], [-B^T, 0]], B = D_x D_xbar c."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    mixed = mixed_hessian(c, x, xbar, analytic=analytic)
    return kmw_metric_from_parts(mixed, rho(x), rho_bar(xbar), (x, xbar))


def conformal_defect_at(s, x, xbar):
    """Compare g_alpha with (rho rho_bar)^(2/3) h_c at one point, in relative max-norm."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    g = lr_metric_at(s, x, xbar)
    h = kmw_metric_at(s.cost, s.source_density, s.target_density, x, xbar, analytic=s.analytic)
    lam = (s.source_density(x) * s.target_density(xbar)) ** (2.0 / 3.0)
    scaled = lam * h.matrix
    defect = np.max(np.abs(g.matrix - scaled)) / np.max(np.abs(scaled))
    return ConformalReport((x, xbar), float(lam), float(defect), g, h)


def metric_signature(m, tol=1e-10):
    """(n_plus, n_minus, n_zero) eigenvalue counts of a symmetric matrix."""
    matrix = m.matrix if isinstance(m, MetricAtPoint) else np.asarray(m, dtype=float)
    ev = np.linalg.eigvalsh(matrix)
    return int(np.sum(ev > tol)), int(np.sum(ev < -tol)), int(np.sum(np.abs(ev) <= tol))


def graph_geometry_check(s, section, tol=SPACELIKE_TOL):
    """Lagrangian and space-like tests for the graph of a map at one point.

    The tangent plane is spanned by t_i = (e_i, DT e_i).  The Lagrangian defect
    is max |omega_c(t_i, t_j)|; the graph is space-like when h_c restricted to
    it is positive definite.
    """
    if section.base_point is None:
        raise ValueError("graph_geometry_check needs a section with a base point")
    x, xbar = section.base_point, section.map_value
    omega = symplectic_form_at(s, x, xbar).to_matrix()
    h = kmw_metric_at(s.cost, s.source_density.extended, s.target_density.extended, x, xbar,
                      analytic=s.analytic).matrix
    t = section.tangent_vectors()
    lagrangian = float(np.max(np.abs(t @ omega @ t.T)))
    restricted = t @ h @ t.T
    restricted = 0.5 * (restricted + restricted.T)
    ev = np.linalg.eigvalsh(restricted)
    return GraphCheck(
        lagrangian_defect=lagrangian,
        spacelike=bool(np.all(ev > tol)),
        degenerate=bool(np.any(np.abs(ev) <= tol)),
        restricted_metric=restricted,
    )
