"""Centralized robust Kalman predictor under a relative-entropy tolerance.

Each step runs the usual Riccati update to get ``P``, then inflates it to
``V = (P^{-1} - theta I)^{-1}`` where ``theta`` is the unique root of
``gamma(P, theta) = c``.  With ``c = 0`` the recursion is the ordinary
Kalman predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _backend

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
BISECT_DELTA = 1e-12


class DomainError(ValueError):
    """``theta`` outside ``[0, 1/lambda_max(P))``."""


class NumericalError(ArithmeticError):
    """A factorization failed; carries the condition number when known."""

    def __init__(self, message, cond=None):
        super().__init__(message if cond is None else f"{message} (cond={cond:.3e})")
        self.cond = cond


class ConvergenceError(RuntimeError):
    """Fixed-point iteration did not settle; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


def sym(X):
    return 0.5 * (X + X.T)


def _eigs(P):
    d = np.linalg.eigvalsh(sym(np.asarray(P, dtype=float)))
    if d[0] <= 0:
        raise DomainError(f"P must be positive definite (min eigenvalue {d[0]:.3e})")
    return np.ascontiguousarray(d)


def gamma(P, theta):
    """``log det(I - theta P) + tr((I - theta P)^{-1} - I)``."""
    P = np.atleast_2d(P)
    d = _eigs(P)
    theta = float(theta)
    if theta < 0 or theta * d[-1] >= 1.0:
        raise DomainError(f"theta={theta} outside [0, {1.0 / d[-1]})")
    return _backend.gamma_eigs(d, theta)


def solve_theta(P, c, tol=BISECT_TOL, max_iter=BISECT_MAX_ITER):
    """Risk-sensitivity parameter: the root of ``gamma(P, theta) = c`` by bisection.

    The bracket is ``[0, (1 - 1e-12)/lambda_max(P)]``; gamma blows up at the
    right end so the root is interior.  ``c = 0`` returns exactly 0.
    """
    if c < 0:
        raise ValueError(f"tolerance c must be nonnegative, got {c}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if c == 0:
        return 0.0
    d = _eigs(np.atleast_2d(P))
    theta, _ = _backend.bisect_theta_eigs(d, float(c), float(tol), int(max_iter), BISECT_DELTA)
    return theta


def solve_theta_eigs(d, c, tol=BISECT_TOL, max_iter=BISECT_MAX_ITER):
    """``solve_theta`` for a matrix whose (positive) eigenvalues ``d`` are known."""
    if c == 0:
        return 0.0
    d = np.ascontiguousarray(d, dtype=float)
    theta, _ = _backend.bisect_theta_eigs(d, float(c), float(tol), int(max_iter), BISECT_DELTA)
    return theta


def inflate(P, theta):
    """``(P^{-1} - theta I)^{-1}`` through the eigendecomposition of ``P``."""
    if theta == 0:
        return P.copy()
    d, U = np.linalg.eigh(sym(P))
    scale = 1.0 - theta * d
    if np.any(scale <= 0):
        raise DomainError(f"theta={theta} not below 1/lambda_max(P)={1.0 / d[-1]}")
    return sym((U * (d / scale)) @ U.T)


@dataclass
class RobustFilterState:
    """Caller-owned filter state.  ``theta``, ``P`` and ``G`` are from the last step."""

    x_hat: np.ndarray
    V: np.ndarray
    theta: float = 0.0
    P: np.ndarray | None = None
    G: np.ndarray | None = None

    @classmethod
    def initial(cls, x_hat0, V0):
        V0 = np.atleast_2d(np.asarray(V0, dtype=float))
        return cls(np.asarray(x_hat0, dtype=float).reshape(-1).copy(), V0.copy(), 0.0, V0.copy())


def covariance_update(A, BBt, C, R, V):
    """One Riccati step; returns ``(G, P_next)``.

    ``G = A V C^T (C V C^T + R)^{-1}`` and
    ``P_next = A (V^{-1} + C^T R^{-1} C)^{-1} A^T + BB^T``, both through a
    Cholesky solve of the innovation covariance.
    """
    CV = C @ V
    Sigma = sym(CV @ C.T + R)
    try:
        fac = cho_factor(Sigma, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("innovation covariance not positive definite",
                             cond=float(np.linalg.cond(Sigma))) from exc
    Kf = cho_solve(fac, CV, check_finite=False).T  # V C^T Sigma^{-1}
    V_post = sym(V - Kf @ CV)
    G = A @ Kf
    P_next = sym(A @ V_post @ A.T + BBt)
    return G, P_next


def robust_covariance_step(model, V, c, tol=BISECT_TOL):
    """Covariance half of a step; returns ``(G, P_next, theta, V_next)``.

    ``model`` is anything with ``A``, ``BBt``, ``C``, ``R`` (global or local).
    """
    G, P_next = covariance_update(model.A, model.BBt, model.C, model.R, V)
    theta = solve_theta(P_next, c, tol=tol)
    return G, P_next, theta, inflate(P_next, theta)


def robust_predict_step(model, state, y, c, r=None, tol=BISECT_TOL):
    """Advance the robust predictor by one measurement; returns a new state."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != model.C.shape[0]:
        raise ValueError(f"measurement has length {y.shape[0]}, expected {model.C.shape[0]}")
    G, P_next, theta, V_next = robust_covariance_step(model, state.V, c, tol)
    x_next = model.A @ state.x_hat + G @ (y - model.C @ state.x_hat)
    if r is not None:
        x_next = x_next + np.asarray(r, dtype=float).reshape(-1)
    return RobustFilterState(x_next, V_next, theta, P_next, G)


@dataclass(frozen=True)
class SteadyState:
    P: np.ndarray
    theta: float
    V: np.ndarray
    G: np.ndarray
    residual: float
    iterations: int


def riccati_like_residual(model, P, theta):
    """Frobenius residual of ``P = A (P^{-1} - theta I + S)^{-1} A^T + BB^T``."""
    n = P.shape[0]
    S = model.C.T @ np.linalg.solve(model.R, model.C)
    M = np.linalg.inv(P) - theta * np.eye(n) + S
    rhs = model.A @ np.linalg.solve(M, model.A.T) + model.BBt
    return float(np.linalg.norm(P - rhs))


def steady_state(model, c, tol=1e-11, max_iter=20000, V0=None, bisect_tol=BISECT_TOL):
    """Iterate the ``V -> P -> theta -> V`` map to its fixed point.

    Convergence is declared when successive ``P`` differ by at most ``tol``
    in Frobenius norm.  Raises ``ConvergenceError`` (with the last iterate)
    otherwise, which in practice means ``c`` is too large.
    """
    n = model.A.shape[0]
    V = np.eye(n) if V0 is None else np.atleast_2d(np.asarray(V0, dtype=float))
    P_prev = None
    for it in range(1, max_iter + 1):
        try:
            G, P, theta, V = robust_covariance_step(model, V, c, bisect_tol)
        except (NumericalError, DomainError) as exc:
            raise ConvergenceError(f"steady-state iteration broke down at step {it}: {exc}",
                                   last=(P_prev, None, V, None)) from exc
        if not np.all(np.isfinite(V)):
            raise ConvergenceError(f"iterate diverged at step {it}", last=(P, theta, V, G))
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol:
            return SteadyState(P, theta, V, G, riccati_like_residual(model, P, theta), it)
        P_prev = P
    raise ConvergenceError(f"no convergence within {max_iter} iterations (c={c} too large?)",
                           last=(P, theta, V, G))
