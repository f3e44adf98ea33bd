"""Exact least favorable performance of the diffusion filter.

The stacked node errors ``chi_t`` and the centralized error ``e_t`` obey a
linear system driven by the least favorable noise, ``eta_{t+1} = F_t eta_t
+ G_t eps_t`` with ``eta_t = [chi_t; e_t]``.  Its covariance follows a
time-varying Lyapunov recursion; the diagonal ``n x n`` blocks of the top
left partition give each node's mean square deviation.

Initial covariance
------------------
Every node starts from the same ``x_hat_0`` as the centralized filter and
``x_0 ~ N(x_hat_0, V_0)``, so all node errors and ``e_0`` equal
``x_0 - x_hat_0``.  Hence ``eta_0 = [1 (x) e_0; e_0] = (ones(N+1) (x) I) e_0``
and ``Q_0 = (ones ones^T) (x) V_0``, a rank-``n`` Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag

from .distributed import node_schedule
from .model import build_local_models
from .robust_core import BISECT_TOL, covariance_update, inflate, solve_theta, sym

STEADY_WINDOW = (0.5, 0.9)


class SpdError(ValueError):
    """A matrix that must be symmetric positive definite is not."""


def _kron_ones(N, X):
    return np.tile(X, (N, 1))


class ErrorDynamics:
    """Builds ``(F_t, G_t)`` of the joint error system, reusing everything
    that does not depend on ``t``.

    Only the node covariances ``V_{k,t}`` and the least favorable gains move
    with time.  With ``M_k = (V_k^{-1} + S_k)^{-1}`` the top-left block is
    ``w_lk A M_l V_l^{-1}`` at position ``(k, l)``, and the neighborhood
    coupling uses ``C^T`` (block diagonal of ``C_k^T``), which is what the
    per-node derivation produces.
    """

    def __init__(self, network, locals_, W, lf):
        self.W = np.asarray(getattr(W, "W", W), dtype=float)
        self.lf = lf
        model = lf.model
        self.N, self.n, self.m = network.N, model.n, model.m
        self.A = model.A
        self.S = np.stack([loc.S for loc in locals_])
        J = network.adjacency.astype(float)
        # sum_{l in N_k} C_l^T R_l^{-1} D_l, one n x m block per node
        p = model.p
        CtRD = np.stack([nd.C.T @ np.linalg.solve(nd.R, model.D[l * p:(l + 1) * p])
                         for l, nd in enumerate(model.nodes)])
        self.U = np.einsum("lk,lim->kim", J, CtRD)

    def __call__(self, V_nodes, t):
        lf = self.lf
        model = lf.model
        N, n = self.N, self.n
        G = lf.schedule.G[t]
        Phi = model.Gamma_B - G @ model.Gamma_D
        GH, GL = lf.Gamma_H[t], lf.Gamma_L[t]
        Vinv = np.linalg.inv(V_nodes)
        Minv = Vinv + self.S
        X = self.A @ np.linalg.solve(Minv, Vinv)
        Y = self.A @ np.linalg.solve(Minv, self.U)
        calA = np.einsum("lk,lij->kilj", self.W, X).reshape(N * n, N * n)
        coupling = np.einsum("lk,lim->kim", self.W, Y).reshape(N * n, -1)
        H, L = GH[n:], GL[n:]
        calB = -coupling @ L + _kron_ones(N, model.B @ GL[:n])
        calC = -coupling @ H + _kron_ones(N, model.B @ GH[:n])
        F = np.zeros(((N + 1) * n, (N + 1) * n))
        F[:N * n, :N * n] = calA
        F[:N * n, N * n:] = calC
        F[N * n:, N * n:] = model.A - G @ model.C + Phi @ GH
        Gm = np.vstack([calB, Phi @ GL])
        return F, Gm


def assemble_error_dynamics(network, locals_, W, V_nodes, lf, t):
    """``(F_t, G_t)`` of the joint error system at time ``t``.

    ``V_nodes`` holds the ``N`` node covariances ``V_{k,t}`` and ``lf`` is the
    least favorable model (its time-``t`` gains and factors are used).
    Direct Kronecker-product construction; ``ErrorDynamics`` is the cached
    equivalent used in sweeps.
    """
    W = getattr(W, "W", W)
    model = lf.model
    N, n = network.N, model.n
    In = np.eye(n)
    G = lf.schedule.G[t]
    Gamma_H, Gamma_L = lf.Gamma_H[t], lf.Gamma_L[t]
    Phi = model.Gamma_B - G @ model.Gamma_D

    WI = np.kron(W.T, In)
    IA = np.kron(np.eye(N), model.A)
    JI = np.kron(network.adjacency.T.astype(float), In)
    Vinv = block_diag(*[np.linalg.inv(V_nodes[k]) for k in range(N)])
    S = block_diag(*[loc.S for loc in locals_])
    Cblk = block_diag(*[nd.C for nd in model.nodes])
    RinvD = np.linalg.solve(model.R, model.D)

    front = WI @ IA
    calA = front @ np.linalg.solve(Vinv + S, Vinv)
    coupling = front @ np.linalg.solve(Vinv + S, JI @ Cblk.T @ RinvD)
    calB = -coupling @ Gamma_L[n:] + _kron_ones(N, model.B @ Gamma_L[:n])
    calC = -coupling @ Gamma_H[n:] + _kron_ones(N, model.B @ Gamma_H[:n])

    F = np.block([
        [calA, calC],
        [np.zeros((n, N * n)), model.A - G @ model.C + Phi @ Gamma_H],
    ])
    Gm = np.vstack([calB, Phi @ Gamma_L])
    return F, Gm


def init_Q0(V0, N):
    """Joint error covariance at ``t = 0`` for a shared initialization."""
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    return np.kron(np.ones((N + 1, N + 1)), V0)


@dataclass(frozen=True)
class PerformanceTrace:
    """Output of the Lyapunov sweep for ``t = 0..T_end``."""

    msd_nodes: np.ndarray  # (T_end+1, N)
    q_increments: np.ndarray  # (T_end,) Frobenius norm of Q_{t+1} - Q_t
    min_eig_ratio: float  # min of lambda_min(Q_t) / tr(Q_t) over the sampled t
    Q_final: np.ndarray
    Q: np.ndarray | None = None  # full history when requested
    n: int = 0
    psd_ok: bool = True  # every Q_t passed the shifted Cholesky test
    psd_failures: tuple = ()  # t indices that failed it

    @property
    def msd_avg(self):
        return self.msd_nodes.mean(axis=1)

    @property
    def N(self):
        return self.msd_nodes.shape[1]

    def blocks(self, t=None):
        """``(P, H, R)`` partition of ``Q_t`` (last step when ``t`` is None)."""
        Q = self.Q_final if t is None else self.Q[t]
        k = self.N * self.n
        return Q[:k, :k], Q[:k, k:], Q[k:, k:]

    def steady(self, window=STEADY_WINDOW, T=None):
        lo, hi = window_indices(T if T is not None else self.msd_nodes.shape[0] - 2, window)
        return self.msd_nodes[lo:hi + 1].mean(axis=0)


def window_indices(T, window=STEADY_WINDOW):
    a, b = window
    if not 0 < a < b < 1:
        raise ValueError(f"window must satisfy 0 < alpha < beta < 1, got {window}")
    return int(round(a * T)), int(round(b * T))


def lyapunov_sweep(F_seq, G_seq, Q0, n, keep=False):
    """``Q_{t+1} = F_t Q_t F_t^T + G_t G_t^T`` with symmetrization each step.

    ``F_seq`` and ``G_seq`` may be lazy iterables.  ``n`` is the state
    dimension, used to read node blocks out of ``Q``.
    """
    return sweep_pairs(zip(F_seq, G_seq), Q0, n, keep)


PSD_RTOL = 1e-10


def sweep_pairs(pairs, Q0, n, keep=False, eig_stride=25):
    """Same as ``lyapunov_sweep`` for an iterable of ``(F_t, G_t)`` pairs.

    Every ``Q_t`` is tested for ``lambda_min >= -PSD_RTOL tr(Q_t)`` with a
    Cholesky factorization of the shifted matrix; the exact eigenvalue ratio
    is sampled every ``eig_stride`` steps and at both ends.
    """
    Q = sym(np.asarray(Q0, dtype=float))
    N = Q.shape[0] // n - 1
    hist = [Q] if keep else None
    msd = [_node_msd(Q, N, n)]
    incr = []
    min_ratio = _min_eig_ratio(Q)
    failures = []
    eye = np.eye(Q.shape[0])
    t = 0
    for t, (F, G) in enumerate(pairs, start=1):
        Qn = sym(F @ Q @ F.T + G @ G.T)
        incr.append(np.linalg.norm(Qn - Q))
        Q = Qn
        msd.append(_node_msd(Q, N, n))
        if not _psd_within(Q, eye):
            failures.append(t)
            min_ratio = min(min_ratio, _min_eig_ratio(Q))
        elif eig_stride and t % eig_stride == 0:
            min_ratio = min(min_ratio, _min_eig_ratio(Q))
        if keep:
            hist.append(Q)
    if t:
        min_ratio = min(min_ratio, _min_eig_ratio(Q))
    return PerformanceTrace(np.array(msd), np.array(incr), min_ratio, Q,
                            np.array(hist) if keep else None, n,
                            not failures, tuple(failures))


def _psd_within(Q, eye):
    tr = np.trace(Q)
    if tr <= 0:
        return tr == 0 and not np.any(Q)
    try:
        np.linalg.cholesky(Q + (2 * PSD_RTOL * tr) * eye)
    except np.linalg.LinAlgError:
        return False
    return True


def _node_msd(Q, N, n):
    d = np.diagonal(Q)[: N * n]
    return d.reshape(N, n).sum(axis=1)


def _min_eig_ratio(Q):
    tr = np.trace(Q)
    if tr == 0:
        return 0.0
    return float(np.linalg.eigvalsh(Q)[0] / tr)


def lf_performance(lf, network, W, c_filter, V0, keep=False, tol=BISECT_TOL, sched=None,
                   locals_=None):
    """Least favorable MSD of the network filter with tolerance ``c_filter``.

    ``lf`` fixes the least favorable model (built at the true tolerance);
    ``c_filter = 0`` evaluates the standard, non-robust filter.  A node
    schedule computed for the same network and ``c_filter`` can be passed in
    to skip recomputation.  Returns the trace and the node schedule.
    """
    model = lf.model
    if locals_ is None:
        locals_ = build_local_models(network, model)
    if sched is None:
        sched = node_schedule(locals_, c_filter, V0, lf.T, tol)
    elif sched.T < lf.T:
        raise ValueError(f"node schedule covers T={sched.T}, need {lf.T}")
    dyn = ErrorDynamics(network, locals_, W, lf)
    pairs = (dyn(sched.V[t], t) for t in range(lf.T + 1))
    trace = sweep_pairs(pairs, init_Q0(V0, network.N), model.n, keep=keep)
    return trace, sched


def gaussian_kl(mu1, K1, mu2, K2):
    """``D(N(mu1, K1) || N(mu2, K2))`` in nats."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    K1 = np.atleast_2d(np.asarray(K1, dtype=float))
    K2 = np.atleast_2d(np.asarray(K2, dtype=float))
    d = mu1.shape[0]
    try:
        L1 = np.linalg.cholesky(sym(K1))
    except np.linalg.LinAlgError:
        raise SpdError("first covariance is not positive definite") from None
    try:
        L2 = np.linalg.cholesky(sym(K2))
    except np.linalg.LinAlgError:
        raise SpdError("second covariance is not positive definite") from None
    M = np.linalg.solve(L2, L1)
    z = np.linalg.solve(L2, mu2 - mu1)
    logdet = 2.0 * (np.sum(np.log(np.diag(L2))) - np.sum(np.log(np.diag(L1))))
    return 0.5 * (np.sum(M * M) + z @ z - d + logdet)


class KLComparison(NamedTuple):
    local_lf: float  # D(p~_t || p~_t^loc)
    local_nominal: float  # D(p~_t || p_t^loc)


def kl_comparison(k, network, model, x_hat, V, c, Q_loc=None, tol=BISECT_TOL):
    """Compare how well the robust and standard local predictive densities of
    node ``k`` explain data from the centralized least favorable density.

    ``x_hat``, ``V`` is the (shared) conditional law of ``x_t`` at node ``k``.
    Outputs are ordered neighbors first, then the remaining nodes.
    ``Q_loc`` is the arbitrary covariance assigned to the unobserved outputs
    (identity by default).
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    n, p = model.n, model.p
    nbrs = network.neighborhoods[k]
    others = [l for l in range(network.N) if l not in nbrs]
    C_loc = np.vstack([model.nodes[l].C for l in nbrs])
    R_loc = block_diag(*[model.nodes[l].R for l in nbrs])
    q = p * len(others)
    if others:
        C_oth = np.vstack([model.nodes[l].C for l in others])
        R_oth = block_diag(*[model.nodes[l].R for l in others])
    else:
        C_oth = np.zeros((0, n))
        R_oth = np.zeros((0, 0))
    Q_loc = np.eye(q) if Q_loc is None else np.atleast_2d(np.asarray(Q_loc, dtype=float)).reshape(q, q)

    BBt = model.B @ model.B.T
    _, P_k1 = covariance_update(model.A, BBt, C_loc, R_loc, V)
    C_all = np.vstack([C_loc, C_oth])
    R_all = block_diag(R_loc, R_oth) if q else R_loc
    _, P_1 = covariance_update(model.A, BBt, C_all, R_all, V)
    theta_k = solve_theta(P_k1, c, tol=tol)
    theta = solve_theta(P_1, c, tol=tol)
    V_k1 = inflate(P_k1, theta_k)
    V_1 = inflate(P_1, theta)

    O_loc = np.vstack([model.A, C_loc, np.zeros((q, n))])
    O = np.vstack([model.A, C_loc, C_oth])
    mu_loc = O_loc @ x_hat
    mu = O @ x_hat
    K_loc = sym(O_loc @ V @ O_loc.T + block_diag(BBt, R_loc, Q_loc))
    K = sym(O @ V @ O.T + block_diag(BBt, R_loc, R_oth))
    E = np.zeros((K.shape[0], n))
    E[:n] = np.eye(n)
    K_loc_lf = K_loc + E @ (V_k1 - P_k1) @ E.T
    K_lf = K + E @ (V_1 - P_1) @ E.T
    return KLComparison(gaussian_kl(mu, K_lf, mu_loc, K_loc_lf),
                        gaussian_kl(mu, K_lf, mu_loc, K_loc))
