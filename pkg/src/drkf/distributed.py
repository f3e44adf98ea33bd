"""Robust Kalman filtering over a sensor network with a diffusion step.

A round has two synchronous phases.  Every node first runs a robust
prediction from its neighborhood's measurements (incremental step), then
replaces its prediction with a convex combination of its neighbors'
intermediate predictions (diffusion step).  ``W = I`` gives local filters,
consensus weights give the consensus scheme, ``c = 0`` drops robustness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robust_core import (
    BISECT_TOL,
    DomainError,
    NumericalError,
    robust_covariance_step,
    solve_theta_eigs,
)


class NodeError(RuntimeError):
    """A per-node failure; ``node`` is the offending index."""

    def __init__(self, node, exc):
        super().__init__(f"node {node}: {exc}")
        self.node = node


@dataclass
class NetworkFilterState:
    """Per-node arrays, first axis is the node index."""

    x_hat: np.ndarray  # (N, n)
    V: np.ndarray  # (N, n, n)
    theta: np.ndarray  # (N,)
    P: np.ndarray  # (N, n, n)
    psi: np.ndarray  # (N, n)

    @classmethod
    def initial(cls, N, x_hat0, V0):
        x_hat0 = np.asarray(x_hat0, dtype=float).reshape(-1)
        V0 = np.atleast_2d(np.asarray(V0, dtype=float))
        return cls(
            x_hat=np.tile(x_hat0, (N, 1)),
            V=np.tile(V0, (N, 1, 1)),
            theta=np.zeros(N),
            P=np.tile(V0, (N, 1, 1)),
            psi=np.tile(x_hat0, (N, 1)),
        )


def local_measurements(local, y_nodes):
    """Stack ``y_l`` for ``l`` in the neighborhood (ascending order)."""
    return np.concatenate([np.asarray(y_nodes[l], dtype=float).reshape(-1) for l in local.neighbors])


def incremental_step(local, x_hat, V, y_loc, c, tol=BISECT_TOL):
    """Robust prediction at one node from its neighborhood's data.

    Returns ``(psi, P_next, theta, V_next)``.  The gain form
    ``A V C^T (C V C^T + R)^{-1}`` on the stacked neighborhood equals
    ``A (V^{-1} + S_k)^{-1} sum_l C_l^T R_l^{-1}``.
    """
    G, P_next, theta, V_next = robust_covariance_step(local, V, c, tol)
    psi = local.A @ x_hat + G @ (np.asarray(y_loc, dtype=float).reshape(-1) - local.C @ x_hat)
    return psi, P_next, theta, V_next


def diffuse(W, psi):
    """``x_k = sum_l w_lk psi_l`` for every node."""
    W = getattr(W, "W", W)
    return W.T @ np.asarray(psi)


def dkf_step(state, locals_, W, y_nodes, c, r=None, tol=BISECT_TOL):
    """One full round: all incremental steps, then the diffusion barrier."""
    N = len(locals_)
    psi = np.empty_like(state.x_hat)
    V = np.empty_like(state.V)
    P = np.empty_like(state.P)
    theta = np.empty(N)
    for k, local in enumerate(locals_):
        try:
            psi[k], P[k], theta[k], V[k] = incremental_step(
                local, state.x_hat[k], state.V[k], local_measurements(local, y_nodes), c, tol)
        except (NumericalError, DomainError) as exc:
            raise NodeError(k, exc) from exc
    if r is not None:
        psi = psi + np.asarray(r, dtype=float).reshape(1, -1)
    return NetworkFilterState(diffuse(W, psi), V, theta, P, psi)


@dataclass(frozen=True)
class NodeSchedule:
    """Data-independent part of the network filter over ``t = 0..T``.

    ``V[t, k]`` is the covariance used at time ``t``; ``theta[t, k]`` and
    ``P[t + 1, k]`` come out of step ``t``; ``P[0]`` holds ``V_0``.
    ``gains[k][t]`` maps node ``k``'s neighborhood innovation to its
    intermediate prediction (only filled when requested).
    """

    V: np.ndarray  # (T+2, N, n, n)
    P: np.ndarray  # (T+2, N, n, n)
    theta: np.ndarray  # (T+1, N)
    gains: tuple | None = None  # per node: (T+1, n, p n_k)

    @property
    def T(self):
        return self.theta.shape[0] - 1


def node_schedule(locals_, c, V0, T, tol=BISECT_TOL, gains=False):
    """Covariance recursion of every node for ``T + 1`` steps.

    All nodes advance together in information form,
    ``P = A (V^{-1} + S_k)^{-1} A^T + BB^T``, so the per-step cost is a few
    batched ``n x n`` factorizations regardless of neighborhood size.
    """
    N = len(locals_)
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    n = V0.shape[0]
    A = locals_[0].A
    BBt = locals_[0].BBt
    S = np.stack([loc.S for loc in locals_])
    V = np.empty((T + 2, N, n, n))
    P = np.empty((T + 2, N, n, n))
    theta = np.zeros((T + 1, N))
    V[0] = V0
    P[0] = V0
    info = [loc.C.T @ np.linalg.inv(loc.R) for loc in locals_] if gains else None
    G = [np.empty((T + 1, n, loc.C.shape[0])) for loc in locals_] if gains else None
    for t in range(T + 1):
        Vt = V[t]
        M = np.linalg.inv(np.linalg.inv(Vt) + S)
        M = 0.5 * (M + np.swapaxes(M, 1, 2))
        Pn = A @ M @ A.T + BBt
        Pn = 0.5 * (Pn + np.swapaxes(Pn, 1, 2))
        P[t + 1] = Pn
        if gains:
            for k in range(N):
                G[k][t] = A @ M[k] @ info[k]
        if c == 0:
            V[t + 1] = Pn
            continue
        d, U = np.linalg.eigh(Pn)
        if np.any(d[:, 0] <= 0):
            k = int(np.argmin(d[:, 0]))
            raise NodeError(k, f"t={t}: P lost positive definiteness")
        for k in range(N):
            theta[t, k] = solve_theta_eigs(d[k], c, tol)
        scale = d / (1.0 - theta[t][:, None] * d)
        Vn = (U * scale[:, None, :]) @ np.swapaxes(U, 1, 2)
        V[t + 1] = 0.5 * (Vn + np.swapaxes(Vn, 1, 2))
    return NodeSchedule(V, P, theta, tuple(G) if gains else None)
