"""Least favorable model of the centralized robust filter over ``[0, T]``.

Three ingredients: a forward sweep of the robust filter for the gains, a
backward sweep for ``Omega_t^{-1}`` (terminal value zero), and a factor of
``K_t``.  The resulting time-varying system drives both the true state and
the centralized prediction error:

    xi_{t+1} = A_t xi_t + B_t eps_t,   y_t = C_t xi_t + D_t eps_t,
    xi_t = [x_t; e_t].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robust_core import BISECT_TOL, robust_covariance_step, sym

OMEGA_STEADY_TOL = 1e-9


class LeastFavorableError(RuntimeError):
    """``K_t`` lost positive definiteness: ``c`` too large for the horizon."""

    def __init__(self, t, message):
        super().__init__(f"t={t}: {message}")
        self.t = t


@dataclass(frozen=True)
class GainSchedule:
    """Forward sweep.  ``G[t]``, ``theta[t]`` belong to step ``t``;
    ``V[t]`` is the covariance at ``t`` (``t = 0..T+1``) and ``P[t]`` the
    pre-inflation covariance (``P[0]`` is ``V_0``)."""

    G: np.ndarray  # (T+1, n, pN)
    theta: np.ndarray  # (T+1,)
    V: np.ndarray  # (T+2, n, n)
    P: np.ndarray  # (T+2, n, n)

    @property
    def T(self):
        return self.theta.shape[0] - 1


def forward_gain_sweep(model, c, V0, T, tol=BISECT_TOL):
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    n = model.n
    G = np.empty((T + 1, n, model.C.shape[0]))
    theta = np.empty(T + 1)
    V = np.empty((T + 2, n, n))
    P = np.empty((T + 2, n, n))
    V[0] = P[0] = V0
    for t in range(T + 1):
        G[t], P[t + 1], theta[t], V[t + 1] = robust_covariance_step(model, V[t], c, tol)
    return GainSchedule(G, theta, V, P)


@dataclass(frozen=True)
class BackwardSweep:
    Omega_inv: np.ndarray  # (T+2, n, n), Omega_inv[T+1] = 0
    K: np.ndarray  # (T+1, m, m)
    Gamma_H: np.ndarray  # (T+1, m, n)


def backward_step(model, G, theta, Omega_inv_next, t=None):
    """One backward step; returns ``(K_t, Gamma_{H_t}, Omega_t^{-1})``.

    Raises ``LeastFavorableError`` when ``I - Phi^T (Omega_{t+1}^{-1} + theta I) Phi``
    is not positive definite, with ``Phi = Gamma_B - G_t Gamma_D``.
    """
    n, m = model.n, model.m
    Phi = model.Gamma_B - G @ model.Gamma_D
    AGC = model.A - G @ model.C
    X = Omega_inv_next + theta * np.eye(n)
    Kinv = sym(np.eye(m) - Phi.T @ X @ Phi)
    try:
        L = np.linalg.cholesky(Kinv)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(Kinv)[0]
        raise LeastFavorableError(
            t, f"K_t^-1 not positive definite (min eigenvalue {lam:.3e}); tolerance too large "
               "for this horizon") from None
    Linv = np.linalg.inv(L)
    K = sym(Linv.T @ Linv)
    Gamma_H = K @ Phi.T @ X @ AGC
    Omega_inv = sym(AGC.T @ X @ AGC + Gamma_H.T @ Kinv @ Gamma_H)
    return K, Gamma_H, Omega_inv


def backward_omega_sweep(model, schedule, Omega_terminal=None):
    """Backward recursion for ``Omega_t^{-1}``, ``K_t`` and ``Gamma_{H_t}``
    from ``Omega_{T+1}^{-1} = 0`` (or ``Omega_terminal``) down to ``t = 0``."""
    T = schedule.T
    n, m = model.n, model.m
    Omega_inv = np.empty((T + 2, n, n))
    K = np.empty((T + 1, m, m))
    Gamma_H = np.empty((T + 1, m, n))
    Omega_inv[T + 1] = 0.0 if Omega_terminal is None else Omega_terminal
    for t in range(T, -1, -1):
        K[t], Gamma_H[t], Omega_inv[t] = backward_step(
            model, schedule.G[t], schedule.theta[t], Omega_inv[t + 1], t)
    return BackwardSweep(Omega_inv, K, Gamma_H)


def factor_K(K, rtol=1e-10):
    """Lower Cholesky factor ``Gamma_L`` of ``K``, checked to reconstruct ``K``."""
    K = sym(np.atleast_2d(np.asarray(K, dtype=float)))
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise LeastFavorableError(-1, "K is not positive definite") from exc
    err = np.linalg.norm(L @ L.T - K) / max(np.linalg.norm(K), 1e-300)
    if err > rtol:
        raise LeastFavorableError(-1, f"Cholesky reconstruction error {err:.2e}")
    return L


@dataclass(frozen=True)
class LFMatrices:
    """Least favorable system at one ``t`` plus the blocks used downstream."""

    A: np.ndarray  # (2n, 2n)
    B: np.ndarray  # (2n, m)
    C: np.ndarray  # (pN, 2n)
    D: np.ndarray  # (pN, m)
    M: np.ndarray  # (n, n)
    H: np.ndarray  # (pN, n)
    N: np.ndarray  # (n, m)
    L: np.ndarray  # (pN, m)
    p: int

    def H_node(self, k):
        return self.H[k * self.p:(k + 1) * self.p]

    def L_node(self, k):
        return self.L[k * self.p:(k + 1) * self.p]


@dataclass(frozen=True, eq=False)
class LeastFavorableModel:
    model: object
    schedule: GainSchedule
    Omega_inv: np.ndarray
    K: np.ndarray
    Gamma_H: np.ndarray
    Gamma_L: np.ndarray

    @property
    def T(self):
        return self.schedule.T

    def at(self, t):
        return assemble_lf_model(self.model, self.schedule, self, t)

    def error_transition(self, t):
        """``(A - G_t C) + (Gamma_B - G_t Gamma_D) Gamma_{H_t}``."""
        G = self.schedule.G[t]
        Phi = self.model.Gamma_B - G @ self.model.Gamma_D
        return self.model.A - G @ self.model.C + Phi @ self.Gamma_H[t]

    def omega_increments(self):
        """``||Omega_{t+1}^{-1} - Omega_t^{-1}||_F`` for ``t = 0..T``."""
        return np.linalg.norm(np.diff(self.Omega_inv, axis=0), axis=(1, 2))

    def omega_steady(self, lo, hi, tol=OMEGA_STEADY_TOL):
        """True when every increment inside ``[lo, hi)`` is below ``tol``."""
        return bool(np.all(self.omega_increments()[lo:hi] < tol))


def synthesize(model, c, V0, T, tol=BISECT_TOL, schedule=None):
    """Forward sweep, backward sweep and factorization in one call."""
    if schedule is None:
        schedule = forward_gain_sweep(model, c, V0, T, tol)
    back = backward_omega_sweep(model, schedule)
    Gamma_L = np.empty_like(back.K)
    for t in range(schedule.T + 1):
        try:
            Gamma_L[t] = factor_K(back.K[t])
        except LeastFavorableError as exc:
            raise LeastFavorableError(t, str(exc)) from exc
    return LeastFavorableModel(model, schedule, back.Omega_inv, back.K, back.Gamma_H, Gamma_L)


def assemble_lf_model(model, schedule, backward, t):
    """Block matrices of the least favorable system at time ``t``.

    ``backward`` needs ``Gamma_H`` and ``Gamma_L`` (a ``LeastFavorableModel``).
    """
    n = model.n
    G = schedule.G[t]
    Gamma_H = backward.Gamma_H[t]
    Gamma_L = backward.Gamma_L[t]
    Phi = model.Gamma_B - G @ model.Gamma_D
    A_lf = np.block([
        [model.A, model.Gamma_B @ Gamma_H],
        [np.zeros((n, n)), model.A - G @ model.C + Phi @ Gamma_H],
    ])
    B_lf = np.vstack([model.Gamma_B @ Gamma_L, Phi @ Gamma_L])
    C_lf = np.hstack([model.C, model.Gamma_D @ Gamma_H])
    D_lf = model.Gamma_D @ Gamma_L
    return LFMatrices(A=A_lf, B=B_lf, C=C_lf, D=D_lf, M=Gamma_H[:n], H=Gamma_H[n:],
                      N=Gamma_L[:n], L=Gamma_L[n:], p=model.p)
