"""Scalar fields, probability densities and transport costs on R^3 and R^3 x R^3.

Derivatives come from analytic evaluators when a field provides them and
from central finite differences otherwise.  Evaluators of densities are
vectorized: they receive arrays of shape ``(..., d)`` and return ``(...)``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from otmageom.errors import DomainError

GRADIENT_STEP = 1e-4
SECOND_DERIVATIVE_STEP = 1e-3


def as_box(box, dim=None):
    box = np.array(box, dtype=float)
    if box.ndim == 1:
        box = box.reshape(1, 2)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError(f"a box is a (d, 2) array of increasing bounds, got {box.tolist()}")
    if dim is not None and box.shape[0] != dim:
        raise ValueError(f"expected a {dim}-dimensional box, got {box.shape[0]}")
    return box


def _check_stencil(box, x, h):
    if box is None:
        return
    if np.any(x - h < box[:, 0]) or np.any(x + h > box[:, 1]):
        raise DomainError(f"point {x.tolist()} is within {h:g} of the domain boundary")


@dataclass(frozen=True)
class ScalarField:
    """A function R^3 -> R, optionally with analytic gradient and Hessian."""

    evaluator: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    box: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.box is not None:
            object.__setattr__(self, "box", as_box(self.box))

    def __call__(self, x):
        return float(self.evaluator(np.asarray(x, dtype=float)))

    @classmethod
    def quadratic(cls, matrix, linear=None, box=None):
        """u(x) = x.Ax/2 + b.x with analytic derivatives."""
        a = np.array(matrix, dtype=float)
        a = 0.5 * (a + a.T)
        b = np.zeros(a.shape[0]) if linear is None else np.array(linear, dtype=float)
        return cls(
            evaluator=lambda x: 0.5 * x @ a @ x + b @ x,
            grad=lambda x: a @ x + b,
            hess=lambda x: a.copy(),
            box=box,
        )


def gradient(f, x, h=GRADIENT_STEP, analytic=True):
    """Gradient of a scalar field; central differences when no analytic form is available."""
    x = np.asarray(x, dtype=float)
    if analytic and f.grad is not None:
        return np.asarray(f.grad(x), dtype=float)
    _check_stencil(f.box, x, h)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def hessian(f, x, h=SECOND_DERIVATIVE_STEP, analytic=True):
    """Symmetric Hessian of a scalar field, by second-order central differences if needed."""
    x = np.asarray(x, dtype=float)
    if analytic and f.hess is not None:
        return np.asarray(f.hess(x), dtype=float)
    _check_stencil(f.box, x, h)
    n = x.size
    eye = np.eye(n) * h
    f0 = f(x)
    hm = np.empty((n, n))
    for i in range(n):
        hm[i, i] = (f(x + eye[i]) - 2 * f0 + f(x - eye[i])) / h**2
        for j in range(i + 1, n):
            hm[i, j] = (
                f(x + eye[i] + eye[j]) - f(x + eye[i] - eye[j])
                - f(x - eye[i] + eye[j]) + f(x - eye[i] - eye[j])
            ) / (4 * h**2)
            hm[j, i] = hm[i, j]
    return 0.5 * (hm + hm.T)


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class Density:
    """A strictly positive probability density supported on an axis-aligned box.

    The value at ``x`` is ``evaluator(x) / normalization_constant`` inside the
    box and zero outside.
    """

    evaluator: Callable
    domain_box: np.ndarray
    normalization_constant: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "domain_box", as_box(self.domain_box))

    @property
    def dim(self):
        return self.domain_box.shape[0]

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return x

    def contains(self, x):
        x = self._prepare(x)
        return np.all((x >= self.domain_box[:, 0]) & (x <= self.domain_box[:, 1]), axis=-1)

    def __call__(self, x):
        x = self._prepare(x)
        val = np.asarray(self.evaluator(x), dtype=float) / self.normalization_constant
        out = np.where(self.contains(x), val, 0.0)
        return float(out) if out.ndim == 0 else out

    def extended(self, x):
        """Density value with ``x`` clamped into the box (boundary extension)."""
        x = np.clip(self._prepare(x), self.domain_box[:, 0], self.domain_box[:, 1])
        return self(x)

    def midpoint_mass(self, n=32):
        """Midpoint-rule quadrature of the density over its box on an n^d grid."""
        axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in self.domain_box]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        cell = np.prod(np.diff(self.domain_box, axis=1)) / n**self.dim
        return float(np.sum(self(pts)) * cell)

    def check_positive(self, n=9):
        """Minimum value on a tensor sweep of the box, including its faces."""
        axes = [np.linspace(lo, hi, n) for lo, hi in self.domain_box]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return float(np.min(self(pts)))

    def sample_interior(self, rng, count, margin=0.0):
        """Uniform points in the box shrunk by ``margin`` on every side."""
        lo = self.domain_box[:, 0] + margin
        hi = self.domain_box[:, 1] - margin
        if np.any(hi <= lo):
            raise DomainError("margin leaves an empty interior")
        return rng.uniform(lo, hi, size=(count, self.dim))

    # -- built-in catalog ---------------------------------------------------

    @classmethod
    def uniform(cls, box):
        box = as_box(box)
        volume = float(np.prod(box[:, 1] - box[:, 0]))
        return cls(
            evaluator=lambda x: np.ones(np.shape(x)[:-1]),
            domain_box=box,
            normalization_constant=volume,
            name="uniform",
            params={"box": box.tolist()},
        )

    @classmethod
    def truncated_gaussian(cls, box, mean, cov):
        """Gaussian restricted to ``box`` and renormalized there.

        Diagonal covariances are normalized exactly with the normal CDF; full
        covariances by 48-point Gauss-Legendre tensor quadrature.
        """
        box = as_box(box)
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.array(cov, dtype=float))
        if cov.shape == (1, 1) and mean.size > 1:
            cov = cov[0, 0] * np.eye(mean.size)
        elif cov.ndim == 2 and cov.shape[0] == 1 and cov.shape[1] == mean.size:
            cov = np.diag(cov[0])
        if cov.shape != (mean.size, mean.size) or mean.size != box.shape[0]:
            raise ValueError("mean, covariance and box dimensions disagree")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        prec = np.linalg.inv(cov)

        def unnormalized(x):
            d = x - mean
            return np.exp(-0.5 * np.einsum("...i,ij,...j->...", d, prec, d))

        if np.allclose(cov, np.diag(np.diag(cov))):
            sd = np.sqrt(np.diag(cov))
            mass = np.prod(ndtr((box[:, 1] - mean) / sd) - ndtr((box[:, 0] - mean) / sd))
            norm = float(mass * np.prod(np.sqrt(2 * np.pi) * sd))
        else:
            nodes, weights = np.polynomial.legendre.leggauss(48)
            axes = [0.5 * (hi - lo) * nodes + 0.5 * (hi + lo) for lo, hi in box]
            scaled = [0.5 * (hi - lo) * weights for lo, hi in box]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            w = scaled[0]
            for s in scaled[1:]:
                w = np.multiply.outer(w, s)
            norm = float(np.sum(unnormalized(pts) * w))
        return cls(
            evaluator=unnormalized,
            domain_box=box,
            normalization_constant=norm,
            name="truncated_gaussian",
            params={"box": box.tolist(), "mean": mean.tolist(), "cov": cov.tolist()},
        )

    @classmethod
    def separable(cls, factors):
        """Product of 1-D densities, one per coordinate."""
        factors = list(factors)
        if any(f.dim != 1 for f in factors):
            raise ValueError("separable densities are built from 1-D factors")
        box = np.vstack([f.domain_box for f in factors])

        def evaluator(x):
            out = np.ones(np.shape(x)[:-1])
            for k, f in enumerate(factors):
                out = out * f.extended(x[..., k : k + 1])
            return out

        return cls(evaluator=evaluator, domain_box=box, name="separable",
                   params={"factors": [f.name for f in factors]})


# ---------------------------------------------------------------------------
# costs


@dataclass(frozen=True)
class CostFunction:
    """A transport cost c(x, xbar) with derivative access.

    ``kind`` is ``"quadratic"`` (c = -x.xbar), ``"semigeostrophic"`` (the f-plane
    energy integrand, scaled by ``coriolis_f**2``) or ``"custom"``.  Custom
    costs may pass analytic derivative callables; missing ones fall back to
    finite differences.
    """

    evaluator: Callable
    kind: str = "custom"
    coriolis_f: float = 1.0
    mixed: Optional[Callable] = None
    grad_x: Optional[Callable] = None
    hess_x: Optional[Callable] = None
    source_box: Optional[np.ndarray] = None
    target_box: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("source_box", "target_box"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, as_box(getattr(self, name), dim=3))

    def __call__(self, x, xbar):
        return float(self.evaluator(np.asarray(x, dtype=float), np.asarray(xbar, dtype=float)))

    @classmethod
    def quadratic(cls):
        return cls(
            evaluator=lambda x, xb: -float(np.dot(x, xb)),
            kind="quadratic",
            mixed=lambda x, xb: -np.eye(3),
            grad_x=lambda x, xb: -np.asarray(xb, dtype=float),
            hess_x=lambda x, xb: np.zeros((3, 3)),
        )

    @classmethod
    def semigeostrophic(cls, f=1.0):
        f2 = float(f) ** 2
        return cls(
            evaluator=lambda x, xb: f2 * (
                0.5 * (x[0] - xb[0]) ** 2 + 0.5 * (x[1] - xb[1]) ** 2 - x[2] * xb[2]
            ),
            kind="semigeostrophic",
            coriolis_f=float(f),
            mixed=lambda x, xb: -f2 * np.eye(3),
            grad_x=lambda x, xb: f2 * np.array([x[0] - xb[0], x[1] - xb[1], -xb[2]]),
            hess_x=lambda x, xb: f2 * np.diag([1.0, 1.0, 0.0]),
        )

    @classmethod
    def custom(cls, evaluator, **kwargs):
        return cls(evaluator=evaluator, kind="custom", **kwargs)

    @property
    def is_builtin(self):
        return self.kind in ("quadratic", "semigeostrophic")

    def without_derivatives(self):
        """Same cost values, derivatives forced through finite differences."""
        return CostFunction(evaluator=self.evaluator, kind="custom", coriolis_f=self.coriolis_f,
                            source_box=self.source_box, target_box=self.target_box)

    def matrix(self, xs, xbars):
        """Cost matrix C[i, j] = c(xs[i], xbars[j])."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        xbars = np.atleast_2d(np.asarray(xbars, dtype=float))
        if self.kind == "quadratic":
            return -xs @ xbars.T
        if self.kind == "semigeostrophic":
            f2 = self.coriolis_f**2
            dx = xs[:, None, 0] - xbars[None, :, 0]
            dy = xs[:, None, 1] - xbars[None, :, 1]
            return f2 * (0.5 * dx**2 + 0.5 * dy**2 - xs[:, None, 2] * xbars[None, :, 2])
        return np.array([[self(x, xb) for xb in xbars] for x in xs])


def _check_points(c, x, xbar, h):
    _check_stencil(c.source_box, x, h)
    _check_stencil(c.target_box, xbar, h)


def mixed_hessian(c, x, xbar, h=SECOND_DERIVATIVE_STEP, analytic=True):
    """D_x D_xbar c with entry (i, j) = d^2 c / dx^i dxbar^j."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if analytic and c.mixed is not None:
        return np.asarray(c.mixed(x, xbar), dtype=float)
    _check_points(c, x, xbar, h)
    eye = np.eye(3) * h
    m = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            m[i, j] = (
                c(x + eye[i], xbar + eye[j]) - c(x + eye[i], xbar - eye[j])
                - c(x - eye[i], xbar + eye[j]) + c(x - eye[i], xbar - eye[j])
            ) / (4 * h**2)
    return m


def cost_gradient_x(c, x, xbar, h=GRADIENT_STEP, analytic=True):
    """D_x c(x, xbar)."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if analytic and c.grad_x is not None:
        return np.asarray(c.grad_x(x, xbar), dtype=float)
    _check_points(c, x, xbar, h)
    eye = np.eye(3) * h
    return np.array([(c(x + e, xbar) - c(x - e, xbar)) / (2 * h) for e in eye])


def cost_hessian_x(c, x, xbar, h=SECOND_DERIVATIVE_STEP, analytic=True):
    """D_x^2 c(x, xbar)."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if analytic and c.hess_x is not None:
        return np.asarray(c.hess_x(x, xbar), dtype=float)
    _check_points(c, x, xbar, h)
    return hessian(ScalarField(lambda p: c(p, xbar)), x, h=h)
