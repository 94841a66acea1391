"""Bound-constrained Levenberg-Marquardt with projection onto the feasible box."""

from dataclasses import dataclass, field

import numpy as np


class NonFiniteEnergyError(FloatingPointError):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    gradient_norm: float
    history: list = field(default_factory=list)


def projected_gradient(x, g, lower, upper, fixed):
    """Gradient with components that would push ``x`` out of the box zeroed."""
    pg = g.copy()
    pg[fixed] = 0.0
    pg[(x <= lower) & (g > 0.0)] = 0.0
    pg[(x >= upper) & (g < 0.0)] = 0.0
    return pg


def projected_lm(
    fun,
    jac,
    x0,
    lower,
    upper,
    fixed=None,
    max_iterations=50,
    gradient_tolerance=1e-9,
    damping=1e-3,
    damping_up=10.0,
    damping_down=0.2,
    cost_tolerance=0.0,
):
    """Minimize ``|fun(x)|^2`` subject to ``lower <= x <= upper``.

    Each trial step solves the damped normal equations over the free
    variables only (variables pinned at a bound with the gradient pointing
    outward are held), then clips to the box. Steps are accepted only if they
    lower the cost, so the accepted costs in ``history`` never increase.
    A positive ``cost_tolerance`` also stops (converged) once an accepted
    step lowers the cost by less than that fraction.
    """
    x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
    n = len(x)
    fixed = np.zeros(n, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool)
    r = fun(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NonFiniteEnergyError("non-finite energy")
    J = jac(x)
    mu = damping
    history = [cost]
    converged = False
    gnorm = np.inf
    it = 0
    while it < max_iterations:
        g = J.T @ r
        # variables pinned at a bound with the gradient pointing outward are held
        free = ~fixed & ~((x <= lower) & (g > 0.0)) & ~((x >= upper) & (g < 0.0))
        pg = np.where(free, g, 0.0)
        gnorm = float(np.sqrt(pg @ pg))
        if gnorm < gradient_tolerance:
            converged = True
            break
        it += 1
        Jf = J[:, free]
        H = Jf.T @ Jf
        H.flat[:: H.shape[0] + 1] += mu
        step = np.zeros(n)
        try:
            step[free] = np.linalg.solve(H, -g[free])
        except np.linalg.LinAlgError:
            mu *= damping_up
            continue
        x_new = np.clip(x + step, lower, upper)
        r_new = fun(x_new)
        cost_new = float(r_new @ r_new)
        if not np.isfinite(cost_new):
            raise NonFiniteEnergyError("non-finite energy")
        if cost_new < cost:
            small = cost - cost_new <= cost_tolerance * cost
            x, r, cost = x_new, r_new, cost_new
            J = jac(x)
            mu = max(mu * damping_down, 1e-15)
            history.append(cost)
            if small:
                converged = True
                gnorm = float(np.linalg.norm(projected_gradient(x, J.T @ r, lower, upper, fixed)))
                break
        else:
            mu *= damping_up
            if mu > 1e12:
                break
    return LMResult(x, cost, it, converged, gnorm, history)
