"""State-space models, sensor networks and diffusion weights.

Everything here is immutable after construction. Arrays handed out by the
dataclasses are flagged read-only so a shared model cannot be mutated by one
filter behind another's back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

RANK_RTOL = 1e-9


class ModelError(ValueError):
    """Invalid model, network or weight specification."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SensorNetwork:
    """Undirected communication graph; every node is its own neighbor."""

    adjacency: np.ndarray

    def __post_init__(self):
        J = np.asarray(self.adjacency)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 1:
            raise ModelError(f"adjacency must be square and non-empty, got shape {J.shape}")
        if not np.all((J == 0) | (J == 1)):
            raise ModelError("adjacency entries must be 0 or 1")
        if not np.all(np.diag(J) == 1):
            raise ModelError("adjacency must have a unit diagonal (j_kk = 1)")
        if not np.array_equal(J, J.T):
            raise ModelError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", _frozen(J, dtype=np.int64))

    @classmethod
    def full(cls, N):
        return cls(np.ones((N, N), dtype=int))

    @classmethod
    def isolated(cls, N):
        return cls(np.eye(N, dtype=int))

    @classmethod
    def line(cls, N):
        J = np.eye(N, dtype=int)
        for k in range(N - 1):
            J[k, k + 1] = J[k + 1, k] = 1
        return cls(J)

    @property
    def N(self):
        return self.adjacency.shape[0]

    @cached_property
    def neighborhoods(self):
        # column k holds j_lk, i.e. membership l in N_k; ascending order
        return tuple(tuple(int(l) for l in np.flatnonzero(self.adjacency[:, k]))
                     for k in range(self.N))

    @cached_property
    def degrees(self):
        return tuple(int(s) for s in self.adjacency.sum(axis=0))

    def is_connected(self):
        seen = {0}
        frontier = [0]
        while frontier:
            k = frontier.pop()
            for l in self.neighborhoods[k]:
                if l not in seen:
                    seen.add(l)
                    frontier.append(l)
        return len(seen) == self.N


@dataclass(frozen=True)
class NodeModel:
    """One sensor: ``y_k = C_k x + D_k v_k`` with ``D_k`` invertible."""

    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if D.shape != (C.shape[0], C.shape[0]):
            raise ModelError(f"D must be {C.shape[0]}x{C.shape[0]}, got {D.shape}")
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "D", _frozen(D))

    @classmethod
    def from_covariance(cls, C, R):
        """Build from the noise covariance, using its lower Cholesky factor as D."""
        R = np.atleast_2d(np.asarray(R, dtype=float))
        try:
            D = np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ModelError("R must be symmetric positive definite") from exc
        return cls(C, D)

    @property
    def R(self):
        return self.D @ self.D.T

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.C.shape[1]


def _check_invertible(D, what):
    s = np.linalg.svd(D, compute_uv=False)
    if s[-1] <= RANK_RTOL * max(s[0], 1e-300):
        raise ModelError(f"{what} is singular (smallest singular value {s[-1]:.3g})")


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """Stacked (centralized) model ``x+ = A x + Gamma_B u``, ``y = C x + Gamma_D u``."""

    A: np.ndarray
    B: np.ndarray
    nodes: tuple
    C: np.ndarray
    D: np.ndarray
    R: np.ndarray
    Gamma_B: np.ndarray
    Gamma_D: np.ndarray
    S_tot: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def N(self):
        return len(self.nodes)

    @property
    def p(self):
        return self.nodes[0].p

    @property
    def m(self):
        """Noise dimension ``pN + n``."""
        return self.Gamma_B.shape[1]

    @cached_property
    def BBt(self):
        return _frozen(self.B @ self.B.T)

    @cached_property
    def GDGDt(self):
        return _frozen(self.Gamma_D @ self.Gamma_D.T)

    def rows(self, k):
        """Slice of the stacked output that belongs to node ``k``."""
        p = self.p
        return slice(k * p, (k + 1) * p)


def build_global_model(A, B, nodes):
    """Stack per-sensor models into the centralized model."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    nodes = tuple(nodes)
    if not nodes:
        raise ModelError("at least one node is required")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ModelError(f"A must be square, got {A.shape}")
    if B.shape != (n, n):
        raise ModelError(f"B must be {n}x{n}, got {B.shape}")
    p = nodes[0].p
    for k, node in enumerate(nodes):
        if node.C.shape != (p, n):
            raise ModelError(f"node {k}: C has shape {node.C.shape}, expected {(p, n)}")
        _check_invertible(node.D, f"node {k}: D")
    C = np.vstack([node.C for node in nodes])
    D = block_diag(*[node.D for node in nodes])
    pN = C.shape[0]
    Gamma_B = np.hstack([B, np.zeros((n, pN))])
    Gamma_D = np.hstack([np.zeros((pN, n)), D])
    S_tot = sum(node.C.T @ np.linalg.solve(node.R, node.C) for node in nodes)
    S_tot = 0.5 * (S_tot + S_tot.T)
    return GlobalModel(
        A=_frozen(A), B=_frozen(B), nodes=nodes, C=_frozen(C), D=_frozen(D),
        R=_frozen(D @ D.T), Gamma_B=_frozen(Gamma_B), Gamma_D=_frozen(Gamma_D),
        S_tot=_frozen(S_tot),
    )


@dataclass(frozen=True, eq=False)
class LocalModel:
    """Model seen by node ``k``: its neighbors' outputs stacked in ascending order.

    ``C``, ``D``, ``R`` are the neighborhood-stacked matrices and ``S`` the
    information matrix ``sum_l C_l^T R_l^{-1} C_l`` over the neighborhood.
    """

    k: int
    neighbors: tuple
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    R: np.ndarray
    S: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @cached_property
    def BBt(self):
        return _frozen(self.B @ self.B.T)

    def stacked_information(self):
        """``C^T R^{-1} C`` computed from the stacked matrices (cross-check of ``S``)."""
        return self.C.T @ np.linalg.solve(self.R, self.C)


def build_local_model(network, model, k):
    """Neighborhood-stacked model of node ``k``."""
    if not 0 <= k < network.N:
        raise ModelError(f"node index {k} out of range for N={network.N}")
    if network.N != model.N:
        raise ModelError(f"network has {network.N} nodes, model has {model.N}")
    nbrs = network.neighborhoods[k]
    nodes = [model.nodes[l] for l in nbrs]
    C = np.vstack([nd.C for nd in nodes])
    D = block_diag(*[nd.D for nd in nodes])
    S = sum(nd.C.T @ np.linalg.solve(nd.R, nd.C) for nd in nodes)
    S = 0.5 * (S + S.T)
    return LocalModel(k=k, neighbors=nbrs, A=model.A, B=model.B, C=_frozen(C), D=_frozen(D),
                      R=_frozen(D @ D.T), S=_frozen(S))


def build_local_models(network, model):
    return tuple(build_local_model(network, model, k) for k in range(network.N))


def _numerical_rank(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def controllability_matrix(A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A, C):
    A = np.atleast_2d(A)
    C = np.atleast_2d(C)
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def check_reachability(A, B):
    return _numerical_rank(controllability_matrix(A, B)) == np.atleast_2d(A).shape[0]


def check_observability(A, C):
    return _numerical_rank(observability_matrix(A, C)) == np.atleast_2d(A).shape[0]


@dataclass(frozen=True)
class WeightDiagnostics:
    max_column_deviation: float
    negative_entries: tuple = field(default_factory=tuple)
    support_violations: tuple = field(default_factory=tuple)
    tol: float = 1e-12

    @property
    def ok(self):
        return (self.max_column_deviation <= self.tol and not self.negative_entries
                and not self.support_violations)


def validate_weights(W, network, tol=1e-12):
    """Check ``w_lk >= 0``, support on ``N_k`` and unit column sums."""
    W = np.asarray(W, dtype=float)
    if W.shape != (network.N, network.N):
        return WeightDiagnostics(np.inf, tol=tol)
    dev = float(np.max(np.abs(W.sum(axis=0) - 1.0)))
    neg = tuple((int(l), int(k)) for l, k in zip(*np.nonzero(W < 0)))
    outside = (network.adjacency == 0) & (W != 0)
    bad = tuple((int(l), int(k)) for l, k in zip(*np.nonzero(outside)))
    return WeightDiagnostics(dev, neg, bad, tol)


@dataclass(frozen=True)
class DiffusionWeights:
    """Column-stochastic combination matrix; ``W[l, k]`` is ``w_lk``."""

    W: np.ndarray
    rule: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "W", _frozen(self.W))


def build_diffusion_weights(network, rule="degree", eps=None):
    """Diffusion weights for ``rule`` in {"degree", "consensus", "identity"}.

    ``degree``: ``w_lk = alpha_k n_l`` on ``N_k``; ``consensus``: ``eps`` off the
    diagonal and ``1 - eps (n_k - 1)`` on it.
    """
    N = network.N
    J = network.adjacency.astype(float)
    deg = np.asarray(network.degrees, dtype=float)
    if rule == "identity":
        W = np.eye(N)
    elif rule == "degree":
        W = J * deg[:, None]
        W = W / W.sum(axis=0, keepdims=True)
    elif rule == "consensus":
        if eps is None:
            raise ModelError("consensus rule needs eps")
        eps = float(eps)
        max_deg = int(deg.max())
        if eps <= 0 or (max_deg > 1 and eps > 1.0 / (max_deg - 1)):
            raise ModelError(
                f"consensus eps={eps} outside (0, 1/(max n_k - 1)] = (0, "
                f"{1.0 / (max_deg - 1) if max_deg > 1 else np.inf}]")
        W = eps * J
        np.fill_diagonal(W, 1.0 - eps * (deg - 1.0))
    else:
        raise ModelError(f"unknown weight rule {rule!r}")
    return DiffusionWeights(W, rule)
