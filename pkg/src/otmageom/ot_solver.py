"""Desk-scale discrete Monge-Kantorovich solvers and duality diagnostics.

Potentials follow the sign convention of the dual problem

    maximize  J[u, ubar] = -sum u_i rho_i - sum ubar_j rhobar_j
    s.t.      u_i + ubar_j >= -C_ij

Internally the solvers work with textbook potentials phi_i + psi_j <= C_ij and
convert once, (u, ubar) = (-phi, -psi).  Potentials are normalized so that
u vanishes at the first source point.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.special import logsumexp

from otmageom.fields import ScalarField
from otmageom.ma_structure import ma_residual_at

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteOTProblem:
    source_points: np.ndarray
    source_weights: np.ndarray
    target_points: np.ndarray
    target_weights: np.ndarray
    cost_matrix: np.ndarray

    def __post_init__(self):
        for name in ("source_points", "target_points"):
            pts = np.array(getattr(self, name), dtype=float)
            object.__setattr__(self, name, pts.reshape(pts.shape[0], -1))
        for name in ("source_weights", "target_weights"):
            w = np.array(getattr(self, name), dtype=float).reshape(-1)
            if np.any(w <= 0):
                raise ValueError(f"{name} must be strictly positive")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ValueError(f"{name} sum to {w.sum():.15g}, not 1")
            object.__setattr__(self, name, w)
        c = np.array(self.cost_matrix, dtype=float)
        if c.shape != (self.source_weights.size, self.target_weights.size):
            raise ValueError(f"cost matrix has shape {c.shape}, expected "
                             f"({self.source_weights.size}, {self.target_weights.size})")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix has non-finite entries")
        object.__setattr__(self, "cost_matrix", c)
        if self.source_points.shape[0] != self.source_weights.size:
            raise ValueError("source points and weights differ in length")
        if self.target_points.shape[0] != self.target_weights.size:
            raise ValueError("target points and weights differ in length")

    @classmethod
    def from_cost(cls, cost, source_points, target_points, source_weights=None, target_weights=None):
        xs = np.atleast_2d(np.asarray(source_points, dtype=float))
        ys = np.atleast_2d(np.asarray(target_points, dtype=float))
        a = np.full(len(xs), 1.0 / len(xs)) if source_weights is None else source_weights
        b = np.full(len(ys), 1.0 / len(ys)) if target_weights is None else target_weights
        return cls(xs, a, ys, b, cost.matrix(xs, ys))

    @classmethod
    def from_matrix(cls, cost_matrix, source_weights=None, target_weights=None):
        """Problem defined by a cost matrix alone; points are the integer labels."""
        c = np.asarray(cost_matrix, dtype=float)
        n, m = c.shape
        a = np.full(n, 1.0 / n) if source_weights is None else source_weights
        b = np.full(m, 1.0 / m) if target_weights is None else target_weights
        return cls(np.arange(n, dtype=float), a, np.arange(m, dtype=float), b, c)


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray

    def marginal_defect(self, problem):
        rows = np.max(np.abs(self.coupling.sum(axis=1) - problem.source_weights))
        cols = np.max(np.abs(self.coupling.sum(axis=0) - problem.target_weights))
        return float(max(rows, cols))


@dataclass(frozen=True)
class PotentialPair:
    u: np.ndarray
    u_bar: np.ndarray

    @classmethod
    def from_textbook(cls, phi, psi):
        """Convert phi_i + psi_j <= C_ij potentials and pin u at the first source point."""
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        shift = phi[0]
        return cls(-(phi - shift), -(psi + shift))

    def feasibility_violation(self, cost_matrix):
        slack = self.u[:, None] + self.u_bar[None, :] + cost_matrix
        return float(max(0.0, -np.min(slack)))


def load_points(path):
    """Read a point cloud: one row per point, coordinates then weight.

    Blank lines and ``#`` comments are ignored; commas or whitespace separate
    columns.  Weights are renormalized to sum to one.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.replace(",", " ").split()])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no points")
    if len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise ValueError(f"{path}: rows must all hold coordinates followed by one weight")
    data = np.array(rows)
    weights = data[:, -1]
    if np.any(weights <= 0):
        raise ValueError(f"{path}: weights must be positive")
    return data[:, :-1], weights / weights.sum()


# ---------------------------------------------------------------------------
# exact assignment


def hungarian(cost):
    """Shortest augmenting path Hungarian method on a square cost matrix.

    Returns ``(assignment, phi, psi)`` with ``assignment[i]`` the column matched
    to row ``i`` and dual potentials satisfying phi_i + psi_j <= C_ij, with
    equality on matched pairs.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("hungarian needs a square matrix")
    # 1-based arrays; column 0 is a virtual start node
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        assignment[match[j] - 1] = j - 1
    return assignment, u[1:].copy(), v[1:].copy()


def solve_assignment(problem):
    """Exact optimal plan and dual potentials for a square, uniform-weight problem."""
    n, m = problem.cost_matrix.shape
    if n != m:
        raise ValueError(f"assignment needs a square problem, got {n}x{m}")
    if (np.max(np.abs(problem.source_weights - 1.0 / n)) > WEIGHT_TOL
            or np.max(np.abs(problem.target_weights - 1.0 / n)) > WEIGHT_TOL):
        raise ValueError("assignment needs uniform weights 1/N; use sinkhorn for general weights")
    assignment, phi, psi = hungarian(problem.cost_matrix)
    coupling = np.zeros((n, n))
    coupling[np.arange(n), assignment] = 1.0 / n
    return TransportPlan(coupling), PotentialPair.from_textbook(phi, psi)


# ---------------------------------------------------------------------------
# entropic


@dataclass(frozen=True)
class SinkhornResult:
    plan: TransportPlan
    potentials: PotentialPair
    iterations: int
    converged: bool
    marginal_history: np.ndarray = field(repr=False)
    newton_steps: int = 0


def _row_update(psi, c, log_a, epsilon):
    return epsilon * (log_a - logsumexp((psi[None, :] - c) / epsilon, axis=1))


def _newton_polish(psi, c, a, b, epsilon, tol, max_steps=50):
    """Newton ascent on the semi-dual in psi, with phi eliminated by the row update.

    The gradient of the semi-dual is the column-marginal defect, so the loop
    ends with rows exact and columns within ``tol``.
    """
    log_a = np.log(a)

    def semi_dual(psi):
        return psi @ b + _row_update(psi, c, log_a, epsilon) @ a

    steps = 0
    for steps in range(1, max_steps + 1):
        phi = _row_update(psi, c, log_a, epsilon)
        p = np.exp((phi[:, None] + psi[None, :] - c) / epsilon)
        grad = b - p.sum(axis=0)
        if np.max(np.abs(grad)) <= tol:
            return psi, steps - 1
        hess = (np.diag(p.sum(axis=0)) - p.T @ (p / a[:, None])) / epsilon
        # the semi-dual is invariant under constant shifts of psi; pin psi[0]
        step = np.zeros_like(psi)
        step[1:] = np.linalg.solve(hess[1:, 1:], grad[1:])
        value = semi_dual(psi)
        t = 1.0
        while t > 1e-10 and semi_dual(psi + t * step) < value - 1e-15 * abs(value):
            t *= 0.5
        psi = psi + t * step
    return psi, steps


def sinkhorn(problem, epsilon, max_iter=2000, tol=1e-9, init=None, polish=True):
    """Entropic OT by log-domain Sinkhorn iterations.

    The plan is ``exp((phi_i + psi_j - C_ij) / epsilon)``.  Each sweep makes the
    column marginals exact; iteration stops once the row marginal defect
    (max abs) is at most ``tol``.  If ``max_iter`` sweeps are not enough and
    ``polish`` is set, Newton steps on the semi-dual finish the solve (small
    epsilon makes plain scaling very slow).  ``init`` warm-starts from a
    previous ``SinkhornResult``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    c = problem.cost_matrix
    a = problem.source_weights
    b = problem.target_weights
    log_a = np.log(a)
    log_b = np.log(b)
    if init is None:
        phi = np.zeros(c.shape[0])
        psi = epsilon * (log_b - logsumexp(-c / epsilon, axis=0))
    else:
        phi = -init.potentials.u
        psi = -init.potentials.u_bar
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        phi_new = _row_update(psi, c, log_a, epsilon)
        # row sums of the current plan are a * exp((phi - phi_new) / epsilon)
        defect = float(np.max(np.abs(a * np.expm1((phi - phi_new) / epsilon))))
        if not np.isfinite(defect):
            raise FloatingPointError(
                f"Sinkhorn produced non-finite values at epsilon={epsilon:g}; increase epsilon"
            )
        history.append(defect)
        if defect <= tol:
            converged = True
            break
        phi = phi_new
        psi = epsilon * (log_b - logsumexp((phi[:, None] - c) / epsilon, axis=0))
    newton_steps = 0
    if not converged and polish:
        psi, newton_steps = _newton_polish(psi, c, a, b, epsilon, tol)
        phi = _row_update(psi, c, log_a, epsilon)
        col = np.exp(logsumexp((phi[:, None] + psi[None, :] - c) / epsilon, axis=0))
        converged = bool(np.max(np.abs(col - b)) <= tol)
    coupling = np.exp((phi[:, None] + psi[None, :] - c) / epsilon)
    return SinkhornResult(
        plan=TransportPlan(coupling),
        potentials=PotentialPair.from_textbook(phi, psi),
        iterations=it,
        converged=converged,
        marginal_history=np.array(history),
        newton_steps=newton_steps,
    )


def sinkhorn_annealed(problem, epsilons, max_iter=2000, tol=1e-9):
    """Solve along a decreasing epsilon schedule, warm-starting each stage."""
    results = []
    prev = None
    for eps in epsilons:
        prev = sinkhorn(problem, eps, max_iter=max_iter, tol=tol, init=prev)
        results.append(prev)
    return results


# ---------------------------------------------------------------------------
# one dimension


@dataclass(frozen=True)
class MonotoneMap:
    """Monotone rearrangement T = Fbar^{-1} o F sampled on a grid."""

    grid: np.ndarray
    values: np.ndarray

    def interpolant(self):
        return PchipInterpolator(self.grid, self.values)

    def __call__(self, x):
        return self.interpolant()(x)


def _cdf(density, n_cells):
    lo, hi = density.domain_box[0]
    xs = np.linspace(lo, hi, n_cells + 1)
    cdf = cumulative_trapezoid(density(xs), xs, initial=0.0)
    return xs, cdf / cdf[-1]


def solve_monotone_1d(rho, rho_bar, grid_n, refine=64):
    """Monotone map pushing ``rho`` to ``rho_bar`` on ``grid_n`` evenly spaced points.

    Both CDFs come from trapezoidal quadrature on grids ``refine`` times finer
    than the output grid; the target CDF is inverted by linear interpolation.
    """
    if rho.dim != 1 or rho_bar.dim != 1:
        raise ValueError("solve_monotone_1d works with 1-D densities")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    cells = (grid_n - 1) * refine
    xs, cdf = _cdf(rho, cells)
    ys, cdf_bar = _cdf(rho_bar, cells)
    grid = xs[::refine]
    values = np.interp(cdf[::refine], cdf_bar, ys)
    return MonotoneMap(grid, np.maximum.accumulate(values))


def potential_from_monotone_map(t_map):
    """u(x) = U(x^1) + ((x^2)^2 + (x^3)^2)/2 with U' = T, for densities varying only in x^1."""
    spline = t_map.interpolant()
    antider = spline.antiderivative()
    slope = spline.derivative()

    def value(x):
        return float(antider(x[0]) + 0.5 * (x[1] ** 2 + x[2] ** 2))

    def grad(x):
        return np.array([float(spline(x[0])), x[1], x[2]])

    def hess(x):
        return np.diag([float(slope(x[0])), 1.0, 1.0])

    return ScalarField(value, grad=grad, hess=hess)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DualityReport:
    primal: float
    dual: float
    gap: float
    marginal_defect: float
    feasibility_violation: float
    duality_relation_defect: float
    support_size: int

    def as_dict(self):
        return dict(self.__dict__)


def duality_report(problem, plan, potentials, support_threshold=None):
    """Primal and dual values, gap, marginal and feasibility defects.

    The duality relation u_i + ubar_j = -C_ij is checked on entries of the plan
    above ``support_threshold`` (default: 1e-3 times the largest entry).
    """
    c = problem.cost_matrix
    gamma = plan.coupling
    if gamma.shape != c.shape:
        raise ValueError("plan and cost matrix shapes differ")
    primal = float(np.sum(c * gamma))
    dual = float(-potentials.u @ problem.source_weights - potentials.u_bar @ problem.target_weights)
    if support_threshold is None:
        support_threshold = 1e-3 * float(np.max(gamma))
    support = gamma > support_threshold
    relation = np.abs(potentials.u[:, None] + potentials.u_bar[None, :] + c)
    return DualityReport(
        primal=primal,
        dual=dual,
        gap=primal - dual,
        marginal_defect=plan.marginal_defect(problem),
        feasibility_violation=potentials.feasibility_violation(c),
        duality_relation_defect=float(np.max(relation[support])) if support.any() else 0.0,
        support_size=int(support.sum()),
    )


@dataclass(frozen=True)
class ResidualSummary:
    points: np.ndarray
    residuals: np.ndarray
    in_support: np.ndarray
    failures: dict

    @property
    def max_abs(self):
        ok = np.isfinite(self.residuals)
        return float(np.max(np.abs(self.residuals[ok]))) if ok.any() else float("nan")

    @property
    def mean_abs(self):
        ok = np.isfinite(self.residuals)
        return float(np.mean(np.abs(self.residuals[ok]))) if ok.any() else float("nan")


def el_residual_grid(s, u, grid):
    """Monge-Ampere residual of potential ``u`` at each grid point.

    Points where evaluation fails are recorded in ``failures`` (index -> message)
    and carry a NaN residual.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    res = np.full(len(pts), np.nan)
    inside = np.zeros(len(pts), dtype=bool)
    failures = {}
    for k, x in enumerate(pts):
        try:
            res[k], inside[k] = ma_residual_at(s, u, x, with_support=True)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            failures[k] = str(exc)
    return ResidualSummary(pts, res, inside, failures)
