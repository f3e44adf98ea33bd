"""Monte-Carlo harness: sample trajectories, run filter banks, average errors.

Trajectories come from either the nominal model or the least favorable
model.  Each run draws from its own generator, so the noise of run ``i``
does not depend on how a batch is split (results agree to rounding; the
same batch reruns bit for bit).  Inside one run the draw order is fixed:
``n`` normals for ``x_0``, then a ``(T + 1, m)`` block of noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributed import node_schedule
from .model import build_local_models
from .robust_core import BISECT_TOL
from .performance import STEADY_WINDOW, window_indices


@dataclass(frozen=True)
class Trajectory:
    """A batch of ``M`` sampled runs (``M = 1`` for a single trajectory).

    ``x[:, t]`` for ``t = 0..T+1``, ``y[:, t]`` for ``t = 0..T``; ``xi`` is
    only set for least favorable samples.
    """

    x: np.ndarray  # (M, T+2, n)
    y: np.ndarray  # (M, T+1, pN)
    xi: np.ndarray | None = None  # (M, T+2, 2n)
    seed: object = None

    @property
    def M(self):
        return self.x.shape[0]

    @property
    def T(self):
        return self.y.shape[1] - 1

    def run(self, i):
        return Trajectory(self.x[i:i + 1], self.y[i:i + 1],
                          None if self.xi is None else self.xi[i:i + 1],
                          None if self.seed is None else self.seed[i])


def _psd_sqrt(V):
    """Symmetric square root that tolerates singular ``V``."""
    d, U = np.linalg.eigh(0.5 * (V + V.T))
    return (U * np.sqrt(np.clip(d, 0.0, None))) @ U.T


def _as_rngs(rngs):
    if isinstance(rngs, (np.random.Generator, np.random.SeedSequence, int)):
        rngs = [rngs]
    return [np.random.default_rng(r) for r in rngs]


def _draws(rngs, n, m, T):
    z0 = np.empty((len(rngs), n))
    eps = np.empty((len(rngs), T + 1, m))
    for i, g in enumerate(rngs):
        z0[i] = g.standard_normal(n)
        eps[i] = g.standard_normal((T + 1, m))
    return z0, eps


def mc_streams(seed_seq, M):
    """Children ``0..M-1`` of a Monte-Carlo seed sequence."""
    if not isinstance(seed_seq, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed_seq)
    return seed_seq.spawn(M)


def simulate_nominal(model, x_hat0, V0, T, rng, r=None):
    """Sample the nominal model; ``rng`` may be one generator or a list (batch)."""
    rngs = _as_rngs(rng)
    n, m = model.n, model.m
    x_hat0 = np.asarray(x_hat0, dtype=float).reshape(n)
    S0 = _psd_sqrt(np.atleast_2d(np.asarray(V0, dtype=float)))
    z0, eps = _draws(rngs, n, m, T)
    r = np.zeros(n) if r is None else np.asarray(r, dtype=float).reshape(n)
    M = len(rngs)
    x = np.empty((M, T + 2, n))
    x[:, 0] = x_hat0 + z0 @ S0.T
    for t in range(T + 1):
        x[:, t + 1] = x[:, t] @ model.A.T + eps[:, t] @ model.Gamma_B.T + r
    y = np.einsum("ij,mtj->mti", model.C, x[:, :T + 1]) + eps @ model.Gamma_D.T
    return Trajectory(x, y, None, tuple(rngs))


def simulate_lf(lf, x_hat0, V0, T, rng, r=None):
    """Sample the least favorable model ``xi_{t+1} = A_t xi_t + B_t eps_t``.

    ``xi_0 = [x_0; x_0 - x_hat_0]``; the known input ``r`` drives the state
    part only (the centralized prediction carries it too, so ``e_t`` does
    not see it).
    """
    if lf.T < T:
        raise ValueError(f"least favorable model covers T={lf.T}, need {T}")
    rngs = _as_rngs(rng)
    model = lf.model
    n, m = model.n, model.m
    x_hat0 = np.asarray(x_hat0, dtype=float).reshape(n)
    S0 = _psd_sqrt(np.atleast_2d(np.asarray(V0, dtype=float)))
    z0, eps = _draws(rngs, n, m, T)
    shift = np.zeros(2 * n)
    if r is not None:
        shift[:n] = np.asarray(r, dtype=float).reshape(n)
    M = len(rngs)
    xi = np.empty((M, T + 2, 2 * n))
    y = np.empty((M, T + 1, model.C.shape[0]))
    dev = z0 @ S0.T
    xi[:, 0, :n] = x_hat0 + dev
    xi[:, 0, n:] = dev
    for t in range(T + 1):
        blk = lf.at(t)
        y[:, t] = xi[:, t] @ blk.C.T + eps[:, t] @ blk.D.T
        xi[:, t + 1] = xi[:, t] @ blk.A.T + eps[:, t] @ blk.B.T + shift
    return Trajectory(xi[:, :, :n].copy(), y, xi, tuple(rngs))


class FilterBankError(RuntimeError):
    """A filter in the bank failed; ``label`` names it."""

    def __init__(self, label, exc):
        super().__init__(f"[{label}] {exc}")
        self.label = label


@dataclass(frozen=True)
class FilterConfig:
    """One filter in a bank: a network, its weights and a tolerance."""

    label: str
    network: object
    W: np.ndarray
    c: float


@dataclass(frozen=True)
class ErrorTrace:
    """Errors ``x_t - x_hat_{k,t}`` of one filter over a batch of runs.

    ``sq[i, t, k]`` is the squared error norm of run ``i``; aggregates are
    exactly rounded sums over runs divided by ``M``.
    """

    label: str
    sq: np.ndarray  # (M, T+2, N)
    mean_error: np.ndarray  # (T+2, N, n)
    second_moment: np.ndarray  # (T+2, N, n) per-component mean of e^2
    errors: np.ndarray | None = field(default=None, repr=False)  # (M, T+2, N, n)

    @property
    def M(self):
        return self.sq.shape[0]

    @property
    def msd_nodes(self):
        return _fsum_first_axis(self.sq) / self.M

    @property
    def msd_avg(self):
        return self.msd_nodes.mean(axis=1)


def _fsum_first_axis(a):
    """Exactly rounded sum over axis 0 (order independent)."""
    a = np.asarray(a, dtype=float)
    flat = a.reshape(a.shape[0], -1).T
    return np.array([math.fsum(row) for row in flat]).reshape(a.shape[1:])


def _measurement_index(network, p):
    return [np.concatenate([np.arange(l * p, (l + 1) * p) for l in nbrs])
            for nbrs in network.neighborhoods]


def run_filter(traj, model, cfg, x_hat0, V0, r=None, keep_errors=False, tol=BISECT_TOL,
               sched=None):
    """Run one network filter over every run of ``traj``; returns an ``ErrorTrace``."""
    W = np.asarray(getattr(cfg.W, "W", cfg.W), dtype=float)
    T = traj.T
    locals_ = build_local_models(cfg.network, model)
    if sched is None or sched.gains is None:
        sched = node_schedule(locals_, cfg.c, V0, T, tol, gains=True)
    n, N, M = model.n, cfg.network.N, traj.M
    idx = _measurement_index(cfg.network, model.p)
    r = np.zeros(n) if r is None else np.asarray(r, dtype=float).reshape(n)
    x_hat = np.tile(np.asarray(x_hat0, dtype=float).reshape(n), (M, N, 1))
    err = np.empty((M, T + 2, N, n))
    err[:, 0] = traj.x[:, 0, None, :] - x_hat
    psi = np.empty_like(x_hat)
    for t in range(T + 1):
        pred = x_hat @ model.A.T
        for k, loc in enumerate(locals_):
            innov = traj.y[:, t, idx[k]] - x_hat[:, k] @ loc.C.T
            psi[:, k] = pred[:, k] + innov @ sched.gains[k][t].T
        psi += r
        x_hat = np.einsum("lk,mln->mkn", W, psi)
        err[:, t + 1] = traj.x[:, t + 1, None, :] - x_hat
    sq = np.einsum("mtkn,mtkn->mtk", err, err)
    mean = _fsum_first_axis(err) / M
    second = _fsum_first_axis(err * err) / M
    return ErrorTrace(cfg.label, sq, mean, second, err if keep_errors else None)


def run_filter_bank(traj, model, configs, x_hat0, V0, r=None, keep_errors=False, tol=BISECT_TOL):
    """Every filter sees the same measurement streams (paired comparison).

    Schedules are shared between configs with the same network and ``c``.
    Errors are re-raised with the config label attached.
    """
    out = {}
    cache = {}
    for cfg in configs:
        key = (cfg.network.adjacency.tobytes(), float(cfg.c))
        try:
            if key not in cache:
                cache[key] = node_schedule(build_local_models(cfg.network, model), cfg.c, V0,
                                           traj.T, tol, gains=True)
            out[cfg.label] = run_filter(traj, model, cfg, x_hat0, V0, r, keep_errors, tol,
                                        sched=cache[key])
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            raise FilterBankError(cfg.label, exc) from exc
    return out


def empirical_msd(trace, window=STEADY_WINDOW, T=None):
    """``(per-node, average)`` steady-state MSD over the window ``[aT, bT]``."""
    msd = trace.msd_nodes if isinstance(trace, ErrorTrace) else np.asarray(trace, dtype=float)
    if msd.ndim == 1:
        msd = msd[:, None]
    T = msd.shape[0] - 2 if T is None else T
    lo, hi = window_indices(T, window)
    if hi < lo or lo >= msd.shape[0]:
        raise ValueError(f"empty window {window} for T={T}")
    per_node = msd[lo:hi + 1].mean(axis=0)
    return per_node, float(per_node.mean())
