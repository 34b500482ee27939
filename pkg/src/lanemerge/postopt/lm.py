"""Levenberg-Marquardt for small dense nonlinear least-squares problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Residual = Callable[[np.ndarray], np.ndarray]
Jacobian = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LmSettings:
    max_iterations: int = 200
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e16
    grad_tol: float = 1e-8
    rel_cost_tol: float = 1e-10
    step_tol: float = 1e-12
    # accept the Gauss-Newton step outright once the local model predicts the
    # cost change this accurately (the residuals are linear there)
    model_exact_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.lambda0 <= 0 or self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ValueError("damping factors must be positive with up/down factors > 1")


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    gradient_norm: float
    costs: list[float] = field(default_factory=list)
    # (damping used, step accepted) for every iteration
    trace: list[tuple[float, bool]] = field(default_factory=list)


def _cost(r: np.ndarray) -> float:
    return 0.5 * float(r @ r)


def _damped_step(J: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ||J dx + r||^2 + lam * ||D dx||^2 with D^2 = diag(J^T J).

    Solved through QR of the stacked system, so the conditioning of J is not
    squared as it would be with the normal equations.
    """
    live = np.any(J != 0.0, axis=1)  # rows that cannot change contribute nothing
    J, r = J[live], r[live]
    n = J.shape[1]
    if lam > 0:
        col_sq = np.einsum("ij,ij->j", J, J)
        col_sq = np.maximum(col_sq, 1e-12 * max(float(col_sq.max(initial=0.0)), 1.0))
        A = np.vstack([J, np.diag(np.sqrt(lam * col_sq))])
        b = np.concatenate([-r, np.zeros(n)])
    else:
        A, b = J, -r
    if A.shape[0] >= n:
        q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.size and d.min() > 1e-13 * d.max():
            return np.linalg.solve(R, q.T @ b)
    return np.linalg.lstsq(A, b, rcond=None)[0]


def levenberg_marquardt(fun: Residual, jac: Jacobian, x0, settings: LmSettings = LmSettings()) -> LmResult:
    """Minimize 0.5 * ||fun(x)||^2 from ``x0``.

    Marquardt damping ``lambda * diag(J^T J)``: divided on accepted steps,
    multiplied on rejected ones. Stops when the gradient infinity-norm, the
    relative cost decrease or the step length falls below tolerance, or when
    the damping saturates (no descent direction left at this precision).
    ``converged`` is False only when ``max_iterations`` runs out.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial point")
    cost = initial = _cost(r)
    J = jac(x)
    lam = settings.lambda0
    costs = [cost]
    trace: list[tuple[float, bool]] = []
    g = J.T @ r
    for it in range(1, settings.max_iterations + 1):
        gnorm = float(np.max(np.abs(g), initial=0.0))
        if gnorm < settings.grad_tol:
            return LmResult(x, cost, initial, it - 1, True, "gradient", gnorm, costs, trace)
        dx = _damped_step(J, r, lam)
        x_new = x + dx
        r_new = np.asarray(fun(x_new), dtype=float)
        cost_new = _cost(r_new) if np.all(np.isfinite(r_new)) else np.inf
        predicted = cost - _cost(r + J @ dx)
        trace.append((lam, bool(cost_new < cost)))
        if cost_new < cost:
            actual = cost - cost_new
            rho = actual / predicted if predicted > 0 else 0.0
            x, r = x_new, r_new
            rel = actual / cost
            cost = cost_new
            costs.append(cost)
            J = jac(x)
            g = J.T @ r
            if abs(rho - 1.0) < settings.model_exact_tol:
                lam = 0.0
            elif rho > 0.75:
                lam /= settings.lambda_down
            elif rho < 0.25:
                lam = max(lam * settings.lambda_up, settings.lambda0)
            if rel < settings.rel_cost_tol:
                return LmResult(x, cost, initial, it, True, "cost", float(np.max(np.abs(g))), costs, trace)
            if np.linalg.norm(dx) < settings.step_tol * (np.linalg.norm(x) + settings.step_tol):
                return LmResult(x, cost, initial, it, True, "step", float(np.max(np.abs(g))), costs, trace)
        else:
            lam = max(lam * settings.lambda_up, settings.lambda0)
            if lam > settings.lambda_max:
                return LmResult(x, cost, initial, it, True, "damping", gnorm, costs, trace)
    gnorm = float(np.max(np.abs(g), initial=0.0))
    return LmResult(x, cost, initial, settings.max_iterations, gnorm < settings.grad_tol,
                    "max_iterations", gnorm, costs, trace)
