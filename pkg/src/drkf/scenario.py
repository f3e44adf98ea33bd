"""Experiment configuration and the projectile-tracking scenario.

Seeds
-----
The master seed feeds ``numpy.random.SeedSequence(seed)``; its spawned
children are, in order, the network stream, the sensor-permutation stream
and the Monte-Carlo stream.  Trajectory ``i`` of a Monte-Carlo batch uses
child ``i`` of the Monte-Carlo stream.  An explicit ``network.seed`` in the
config replaces the derived network stream.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    ModelError,
    NodeModel,
    SensorNetwork,
    build_global_model,
    build_local_models,
    check_observability,
    check_reachability,
)

DT = 0.1
GRAVITY = -10.0
R0_DIAG = (0.5, 2.0, 3.5)  # 0.5 * diag(1, 4, 7)
PROCESS_STD = np.sqrt(0.001)

VARIANTS = (
    "RKF diff", "KF diff",
    "RKF cons", "KF cons",
    "RKF local", "KF local",
    "RKF central", "KF central",
)


class ScenarioError(ValueError):
    pass


class SensorType(enum.Enum):
    """Which two position coordinates a sensor observes."""

    XY = (1, 1, 0)
    XZ = (1, 0, 1)
    YZ = (0, 1, 1)

    @property
    def C(self):
        return np.hstack([np.zeros((3, 3)), np.diag(np.array(self.value, dtype=float))])

    @property
    def covered(self):
        return {ax for ax, on in zip("xyz", self.value) if on}


@dataclass
class NetworkSpec:
    rule: str = "geometric"  # geometric | full | line | explicit
    seed: int | None = None
    adjacency: list | None = None
    sensor_types: list | None = None
    max_retries: int = 500


@dataclass
class ScenarioConfig:
    model: str = "projectile"
    N: int = 20
    network: NetworkSpec = field(default_factory=NetworkSpec)
    c: float = 0.02
    eps: float = 0.1
    T: int = 2500
    window: tuple = (0.5, 0.9)
    mc_runs: int = 0
    seed: int = 0
    out: str = "out"
    x0_mean: list | None = None
    V0_scale: float = 1.0
    variants: tuple = VARIANTS
    bisect_tol: float = 1e-10
    custom: dict | None = None  # {"A": ..., "B": ..., "nodes": [{"C": ..., "R"|"D": ...}]}
    dump_lf: bool = False

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkSpec(**self.network)
        self.window = tuple(float(w) for w in self.window)
        self.variants = tuple(self.variants)
        if not 0 < self.window[0] < self.window[1] < 1:
            raise ScenarioError(f"window must satisfy 0 < alpha < beta < 1, got {self.window}")
        if self.c < 0:
            raise ScenarioError("c must be nonnegative")
        if self.N < 1:
            raise ScenarioError("N must be at least 1")
        if self.T < 2:
            raise ScenarioError("T must be at least 2")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ScenarioError(f"unknown variants: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        d["variants"] = list(self.variants)
        return d

    def seed_streams(self):
        net, perm, mc = np.random.SeedSequence(self.seed).spawn(3)
        if self.network.seed is not None:
            net = np.random.SeedSequence(self.network.seed)
        return net, perm, mc


class NetworkGenerationError(ScenarioError):
    pass


def _coverage_ok(network, types):
    return all(set().union(*(types[l].covered for l in nbrs)) == {"x", "y", "z"}
               for nbrs in network.neighborhoods)


def uncovered_nodes(network, types):
    """``(node, covered axes)`` for neighborhoods missing a position axis."""
    out = []
    for k, nbrs in enumerate(network.neighborhoods):
        cov = set().union(*(types[l].covered for l in nbrs))
        if cov != {"x", "y", "z"}:
            out.append((k, "".join(sorted(cov))))
    return out


def _assign_types(N, rng):
    cycle = list(SensorType)
    types = [cycle[i % 3] for i in range(N)]
    order = rng.permutation(N)
    return [types[i] for i in order]


def _geometric(N, rng, r0=0.05, grow=1.05):
    pts = rng.random((N, 2))
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    r = r0
    while True:
        J = (dist <= r).astype(int)
        net = SensorNetwork(J)
        if net.is_connected():
            return net, pts, r
        r *= grow


def generate_network(N, seed, rule="geometric", max_retries=500, max_degree=None):
    """Random sensor network plus sensor types with locally observable neighborhoods.

    ``geometric``: points uniform on the unit square, connection radius grown
    by 5% from 0.05 until the graph is connected.  Sensor types go round-robin
    XY, XZ, YZ and are shuffled.  Draws are repeated until every neighborhood
    sees all three position axes and, when ``max_degree`` is given, no
    neighborhood is larger than that.
    """
    if N < 1:
        raise NetworkGenerationError("N must be at least 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        if rule == "geometric":
            net, _, _ = _geometric(N, rng)
        elif rule == "full":
            net = SensorNetwork.full(N)
        elif rule == "line":
            net = SensorNetwork.line(N)
        else:
            raise NetworkGenerationError(f"unknown network rule {rule!r}")
        types = _assign_types(N, rng)
        if max_degree is not None and max(net.degrees) > max_degree:
            continue
        if _coverage_ok(net, types):
            return net, types
    cap = "" if max_degree is None else f" and neighborhoods of at most {max_degree} nodes"
    raise NetworkGenerationError(
        f"no network with full neighborhood coverage{cap} after {max_retries} attempts "
        f"(N={N}, rule={rule!r}); use a larger N, a denser rule or a smaller consensus eps")


def projectile_dynamics():
    """``(A, B, r)``: discretized projectile with gravity as a known input."""
    Phi = np.zeros((6, 6))
    Phi[3:, :3] = np.eye(3)
    A = np.eye(6) + DT * Phi
    u_c = np.array([0.0, 0.0, -GRAVITY, 0.0, 0.0, 0.0])
    r = (DT * np.eye(6) + DT ** 2 * Phi / 2) @ u_c
    return A, PROCESS_STD * np.eye(6), r


def projectile_nodes(types, perm_rng):
    """Per-node models with ``R_k = sqrt(k) P_k R_0 P_k^T`` (``k`` one-based)."""
    chol_R0 = np.diag(np.sqrt(R0_DIAG))
    nodes, perms = [], []
    for i, st in enumerate(types):
        perm = perm_rng.permutation(3)
        Pm = np.eye(3)[perm]
        D = (i + 1) ** 0.25 * Pm @ chol_R0
        nodes.append(NodeModel(st.C, D))
        perms.append([int(v) for v in perm])
    return nodes, perms


@dataclass(frozen=True, eq=False)
class Scenario:
    model: object
    network: SensorNetwork
    locals: tuple
    r: np.ndarray
    x0_mean: np.ndarray
    V0: np.ndarray
    types: tuple | None = None
    permutations: tuple | None = None

    def manifest(self):
        return {
            "adjacency": self.network.adjacency.tolist(),
            "sensor_types": None if self.types is None else [t.name for t in self.types],
            "permutations": None if self.permutations is None else list(self.permutations),
            "r": self.r.tolist(),
            "x0_mean": self.x0_mean.tolist(),
            "V0": self.V0.tolist(),
        }


def build_projectile_scenario(config):
    net_ss, perm_ss, _ = config.seed_streams()
    spec = config.network
    if spec.rule == "explicit":
        if spec.adjacency is None:
            raise ScenarioError("explicit network rule needs an adjacency matrix")
        network = SensorNetwork(np.array(spec.adjacency))
        if network.N != config.N:
            raise ScenarioError(f"adjacency is {network.N}x{network.N} but N={config.N}")
        if spec.sensor_types is None:
            types = _assign_types(config.N, np.random.default_rng(net_ss))
        else:
            types = [SensorType[s] for s in spec.sensor_types]
    else:
        # cap neighborhoods so consensus weights with this eps stay nonnegative
        cap = int(np.floor(1.0 / config.eps + 1e-12)) + 1 if config.eps > 0 else None
        network, types = generate_network(config.N, net_ss, spec.rule, spec.max_retries, cap)
        if spec.sensor_types is not None:
            types = [SensorType[s] for s in spec.sensor_types]
    missing = uncovered_nodes(network, types)
    if missing:
        raise ScenarioError("neighborhoods not locally observable: " + ", ".join(
            f"node {k} covers only {{{axes}}}" for k, axes in missing))
    A, B, r = projectile_dynamics()
    nodes, perms = projectile_nodes(types, np.random.default_rng(perm_ss))
    model = build_global_model(A, B, nodes)
    x0 = np.zeros(6) if config.x0_mean is None else np.asarray(config.x0_mean, dtype=float)
    return Scenario(model, network, build_local_models(network, model), r, x0,
                    config.V0_scale * np.eye(6), tuple(types), tuple(perms))


def build_custom_scenario(config):
    spec = config.custom or {}
    try:
        A, B = np.array(spec["A"], dtype=float), np.array(spec["B"], dtype=float)
        node_specs = spec["nodes"]
    except KeyError as exc:
        raise ScenarioError(f"custom model is missing {exc}") from None
    nodes = [NodeModel(nd["C"], nd["D"]) if "D" in nd else NodeModel.from_covariance(nd["C"], nd["R"])
             for nd in node_specs]
    model = build_global_model(A, B, nodes)
    net_ss, _, _ = config.seed_streams()
    ns = config.network
    if ns.rule == "explicit":
        network = SensorNetwork(np.array(ns.adjacency))
    elif ns.rule == "full":
        network = SensorNetwork.full(model.N)
    elif ns.rule == "line":
        network = SensorNetwork.line(model.N)
    else:
        raise ScenarioError("custom models take an explicit, full or line network")
    if network.N != model.N:
        raise ScenarioError(f"network has {network.N} nodes, model has {model.N}")
    r = np.asarray(spec.get("r", np.zeros(model.n)), dtype=float)
    x0 = np.zeros(model.n) if config.x0_mean is None else np.asarray(config.x0_mean, dtype=float)
    return Scenario(model, network, build_local_models(network, model), r, x0,
                    config.V0_scale * np.eye(model.n))


def build_scenario(config):
    if config.model == "projectile":
        return build_projectile_scenario(config)
    if config.model == "custom":
        return build_custom_scenario(config)
    raise ScenarioError(f"unknown model source {config.model!r}")


def validate_scenario(scenario, config):
    """Dry-run checks; returns a list of problems (empty when fine)."""
    from .model import build_diffusion_weights, validate_weights

    problems = []
    m = scenario.model
    if not check_reachability(m.A, m.B):
        problems.append("(A, B) is not reachable")
    if not check_observability(m.A, m.C):
        problems.append("(A, C) is not observable")
    for loc in scenario.locals:
        if not check_observability(loc.A, loc.C):
            problems.append(f"node {loc.k}: (A, C_loc) is not observable")
    G = np.vstack([m.Gamma_B, m.Gamma_D])
    if np.linalg.matrix_rank(G) != G.shape[0]:
        problems.append("[Gamma_B; Gamma_D] is singular")
    for rule in ("degree", "consensus", "identity"):
        try:
            W = build_diffusion_weights(scenario.network, rule, config.eps)
        except ModelError as exc:
            problems.append(f"{rule} weights: {exc}")
            continue
        diag = validate_weights(W.W, scenario.network)
        if not diag.ok:
            problems.append(f"{rule} weights invalid: {diag}")
    return problems
