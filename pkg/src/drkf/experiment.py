"""End-to-end experiment: scenario, least favorable model, eight predictors.

Stages run in order and any failure is re-raised as ``StageError`` carrying
the stage name and, when known, the time index.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._backend import BACKEND
from .distributed import NodeError, node_schedule
from .least_favorable import OMEGA_STEADY_TOL, LeastFavorableError, synthesize
from .model import SensorNetwork, build_diffusion_weights, build_local_models
from .performance import window_indices, lf_performance
from .scenario import VARIANTS, ScenarioConfig, build_scenario, validate_scenario
from .simulate import FilterConfig, empirical_msd, mc_streams, run_filter_bank, simulate_lf

CONVERGENCE_TOL = {
    "msd_avg": 1e-6,  # |MSD_{t+1} - MSD_t|
    "P_nodes": 1e-6,  # max_k ||P_{k,t+1} - P_{k,t}||_F
    "theta_nodes": 1e-6,  # max_k |theta_{k,t+1} - theta_{k,t}|
    "Omega_inv": OMEGA_STEADY_TOL,  # ||Omega_{t+1}^{-1} - Omega_t^{-1}||_F
    "Q": 1e-6,  # ||Q_{t+1} - Q_t||_F
}


class StageError(RuntimeError):
    def __init__(self, stage, exc, t=None):
        where = f"{stage}" if t is None else f"{stage} t={t}"
        super().__init__(f"[{where}] {exc}")
        self.stage = stage
        self.t = t


def _variant_parts(name):
    family, kind = name.split()
    return family == "RKF", kind


def variant_filters(scenario, config):
    """``{name: (network, W, c_filter)}`` for the requested variants.

    The central filters are modelled as a fully connected network with
    ``W = I``: every node then runs the centralized predictor.
    """
    net = scenario.network
    full = SensorNetwork.full(net.N)
    weights = {}
    out = {}
    for name in config.variants:
        robust, kind = _variant_parts(name)
        if kind == "central":
            network, rule = full, "identity"
        else:
            network = net
            rule = {"diff": "degree", "cons": "consensus", "local": "identity"}[kind]
        key = (kind, rule)
        if key not in weights:
            weights[key] = build_diffusion_weights(network, rule, config.eps if rule == "consensus" else None)
        out[name] = (network, weights[key], config.c if robust else 0.0)
    return out


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    scenario: object
    lf: object
    traces: dict  # name -> PerformanceTrace
    schedules: dict  # name -> NodeSchedule
    mc: dict | None = None  # name -> ErrorTrace
    convergence: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.config.T

    def steady(self, name):
        return self.traces[name].steady(self.config.window, self.T)

    def steady_avg(self):
        return {name: float(self.steady(name).mean()) for name in self.traces}

    def theta_nodes(self):
        """Node risk parameters of the robust network filter, ``(T+1, N)``."""
        for name in ("RKF diff", "RKF cons", "RKF local"):
            if name in self.schedules:
                return self.schedules[name].theta
        return node_schedule(self.scenario.locals, self.config.c, self.scenario.V0, self.T,
                             self.config.bisect_tol).theta

    def theta_central(self):
        return self.lf.schedule.theta


def convergence_report(result):
    """Largest window increments of every converging sequence, with pass flags."""
    lo, hi = window_indices(result.T, result.config.window)
    rep = {}
    msd = max(float(np.max(np.abs(np.diff(tr.msd_avg)[lo:hi]))) for tr in result.traces.values())
    rep["msd_avg"] = msd
    rep["Q"] = max(float(np.max(tr.q_increments[lo:hi])) for tr in result.traces.values())
    rep["Omega_inv"] = float(np.max(result.lf.omega_increments()[lo:hi]))
    dP, dth = 0.0, 0.0
    for sched in result.schedules.values():
        dP = max(dP, float(np.max(np.linalg.norm(np.diff(sched.P[lo:hi + 1], axis=0), axis=(2, 3)))))
        dth = max(dth, float(np.max(np.abs(np.diff(sched.theta[lo:hi + 1], axis=0)))))
    rep["P_nodes"] = dP
    rep["theta_nodes"] = dth
    return {k: {"max_increment": v, "tol": CONVERGENCE_TOL[k], "ok": v < CONVERGENCE_TOL[k]}
            for k, v in rep.items()}


def run_experiment(config, progress=None):
    """Run every stage; returns an ``ExperimentResult`` (nothing is written)."""
    say = progress or (lambda msg: None)
    try:
        scenario = build_scenario(config)
    except (ValueError, ArithmeticError) as exc:
        raise StageError("scenario", exc) from exc
    model = scenario.model
    T = config.T
    say("least favorable model")
    try:
        lf = synthesize(model, config.c, scenario.V0, T, config.bisect_tol)
    except LeastFavorableError as exc:
        raise StageError("least_favorable", exc, exc.t) from exc
    except (ValueError, ArithmeticError) as exc:
        raise StageError("least_favorable", exc) from exc

    filters = variant_filters(scenario, config)
    traces, schedules, cache = {}, {}, {}
    for name, (network, W, cf) in filters.items():
        say(f"lyapunov {name}")
        key = (network.adjacency.tobytes(), cf)
        try:
            if key not in cache:
                locals_ = build_local_models(network, model)
                cache[key] = (locals_, node_schedule(locals_, cf, scenario.V0, T, config.bisect_tol))
            locals_, sched = cache[key]
            traces[name], schedules[name] = lf_performance(
                lf, network, W, cf, scenario.V0, sched=sched, locals_=locals_)
        except NodeError as exc:
            raise StageError(f"node_schedule[{name}]", exc) from exc
        except (ValueError, ArithmeticError) as exc:
            raise StageError(f"lyapunov[{name}]", exc) from exc
        if not np.all(np.isfinite(traces[name].msd_nodes)):
            bad = int(np.argmax(~np.all(np.isfinite(traces[name].msd_nodes), axis=1)))
            raise StageError(f"lyapunov[{name}]", "non-finite MSD", bad)

    mc = None
    if config.mc_runs > 0:
        say(f"monte carlo ({config.mc_runs} runs)")
        _, _, mc_ss = config.seed_streams()
        try:
            traj = simulate_lf(lf, scenario.x0_mean, scenario.V0, T,
                               mc_streams(mc_ss, config.mc_runs), r=scenario.r)
            cfgs = [FilterConfig(name, net, W.W, cf) for name, (net, W, cf) in filters.items()]
            mc = run_filter_bank(traj, model, cfgs, scenario.x0_mean, scenario.V0, r=scenario.r,
                                 tol=config.bisect_tol)
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            raise StageError("monte_carlo", exc) from exc

    result = ExperimentResult(config, scenario, lf, traces, schedules, mc)
    result.convergence = convergence_report(result)
    return result


def _fmt(x):
    return "%.17g" % x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")


def write_outputs(result, out_dir):
    """Write the CSV tables, the manifest and the optional dumps; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    names = list(result.traces)
    paths = {}

    T_end = next(iter(result.traces.values())).msd_nodes.shape[0]
    p = os.path.join(out_dir, "msd_avg.csv")
    _write_csv(p, ["t"] + names,
               ([str(t)] + [result.traces[nm].msd_avg[t] for nm in names] for t in range(T_end)))
    paths["msd_avg"] = p

    p = os.path.join(out_dir, "msd_nodes.csv")
    steady = {nm: result.steady(nm) for nm in names}
    N = result.scenario.network.N
    _write_csv(p, ["node"] + names, ([str(k)] + [steady[nm][k] for nm in names] for k in range(N)))
    paths["msd_nodes"] = p

    p = os.path.join(out_dir, "theta.csv")
    th = result.theta_central()
    thk = result.theta_nodes()
    _write_csv(p, ["t", "theta"] + [f"theta_{k + 1}" for k in range(N)],
               ([str(t), th[t]] + list(thk[t]) for t in range(th.shape[0])))
    paths["theta"] = p

    if result.mc is not None:
        p = os.path.join(out_dir, "mc_msd_avg.csv")
        mnames = list(result.mc)
        avgs = {nm: result.mc[nm].msd_avg for nm in mnames}
        _write_csv(p, ["t"] + mnames, ([str(t)] + [avgs[nm][t] for nm in mnames]
                                       for t in range(len(avgs[mnames[0]]))))
        paths["mc_msd_avg"] = p

    if result.config.dump_lf:
        p = os.path.join(out_dir, "lf_model.npz")
        lf = result.lf
        np.savez(p, G=lf.schedule.G, theta=lf.schedule.theta, V=lf.schedule.V, P=lf.schedule.P,
                 Omega_inv=lf.Omega_inv, K=lf.K, Gamma_H=lf.Gamma_H, Gamma_L=lf.Gamma_L)
        paths["lf_model"] = p

    p = os.path.join(out_dir, "manifest.json")
    with open(p, "w") as fh:
        json.dump(manifest(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = p
    return paths


def manifest(result):
    cfg = result.config
    m = {
        "config": cfg.to_dict(),
        "scenario": result.scenario.manifest(),
        "steady_state_msd_avg": {k: _fmt(v) for k, v in result.steady_avg().items()},
        "convergence": result.convergence,
        "window_indices": list(window_indices(cfg.T, cfg.window)),
        "kernel_backend": BACKEND,
        "version": __version__,
    }
    if result.mc is not None:
        m["mc_steady_state_msd_avg"] = {k: _fmt(empirical_msd(v, cfg.window, cfg.T)[1])
                                        for k, v in result.mc.items()}
    return m


def validate_config(config):
    """Dry run: build the scenario and weights, check observability and dimensions."""
    try:
        scenario = build_scenario(config)
    except (ValueError, ArithmeticError) as exc:
        return [f"scenario: {exc}"]
    problems = validate_scenario(scenario, config)
    if scenario.x0_mean.shape != (scenario.model.n,):
        problems.append(f"x0_mean has shape {scenario.x0_mean.shape}, expected ({scenario.model.n},)")
    if scenario.r.shape != (scenario.model.n,):
        problems.append(f"r has shape {scenario.r.shape}, expected ({scenario.model.n},)")
    return problems


def load_config(path, overrides=None):
    with open(path) as fh:
        d = json.load(fh)
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ScenarioConfig.from_dict(d)


__all__ = ["VARIANTS", "StageError", "run_experiment", "write_outputs", "validate_config",
           "load_config", "convergence_report", "variant_filters", "ExperimentResult"]
