"""Recovery of the transport map T_u from a potential via Du(x) = -D_x c(x, T_u(x))."""

import numpy as np

from otmageom.errors import MapRecoveryError
from otmageom.exterior import GraphSection
from otmageom.fields import cost_gradient_x, cost_hessian_x, gradient, hessian, mixed_hessian

NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30


def transport_map_from_potential(c, u, x, method="auto", initial=None, tol=1e-11):
    """Graph section (T(x), DT(x)) of the map induced by potential ``u``.

    Built-in costs use closed forms; ``method="newton"`` (or any custom cost)
    runs damped Newton on the first-order condition and gets DT by implicit
    differentiation, DT = -(D_x D_xbar c)^{-1} (D^2 u + D_x^2 c).
    """
    x = np.asarray(x, dtype=float)
    du = gradient(u, x)
    d2u = hessian(u, x)
    if method == "auto" and c.kind == "quadratic":
        return GraphSection(du, d2u, x)
    if method == "auto" and c.kind == "semigeostrophic":
        f2 = c.coriolis_f**2
        return GraphSection(du / f2 + np.array([x[0], x[1], 0.0]),
                            d2u / f2 + np.diag([1.0, 1.0, 0.0]), x)
    if method not in ("auto", "newton"):
        raise ValueError(f"unknown map recovery method {method!r}")

    def residual(xb):
        return cost_gradient_x(c, x, xb) + du

    xb = np.array(du if initial is None else initial, dtype=float)
    r = residual(xb)
    scale = 1.0 + np.linalg.norm(du)
    for _ in range(NEWTON_MAX_ITER):
        if np.linalg.norm(r) <= tol * scale:
            break
        step = np.linalg.solve(mixed_hessian(c, x, xb), -r)
        t = 1.0
        for _ in range(NEWTON_MAX_HALVINGS):
            trial = xb + t * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < np.linalg.norm(r):
                break
            t *= 0.5
        else:
            raise MapRecoveryError(f"line search stalled at x = {x.tolist()}")
        xb, r = trial, r_trial
    else:
        if np.linalg.norm(r) > tol * scale:
            raise MapRecoveryError(
                f"Newton did not converge in {NEWTON_MAX_ITER} iterations at x = {x.tolist()}"
            )
    mixed = mixed_hessian(c, x, xb)
    jac = -np.linalg.solve(mixed, d2u + cost_hessian_x(c, x, xb))
    return GraphSection(xb, jac, x)
