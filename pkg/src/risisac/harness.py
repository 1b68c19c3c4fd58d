"""Alternating optimization driver and experiment plans.

One outer sweep runs, in order: radar receivers, LMMSE equalizers,
rate weights (sum-rate objective only), precoder, RIS phases.
"""
import csv
import hashlib
import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, Infeasible, IsacError, NonConvergence, SurrogateInfeasible
from .metrics import TransceiverState, angular_response, default_angle_grid, evaluate
from .numerics import unit_modulus
from .precoder import (MetricWeights, _boundary_precoder, lmmse_equalizers, precoder_mumt,
                       precoder_sust, sum_rate, sum_rate_weights, weighted_mse)
from .radar import (DetectionSpec, build_b_matrix, effective_threshold, minimum_power,
                    optimal_receiver_sust, zf_receivers_mumt)
from .ris import (admm_ris_design, baseline_phases, build_ris_quadratics, quartic,
                  rcg_ris_design, ris_objective_terms, sensing_gain_quadratics)
from .scenario import (config_to_dict, make_rng, synthesize_channels, target_geometry,
                       dbm_to_watt)

log = logging.getLogger(__name__)

ALGORITHMS = ("admm", "rcg", "target-dir", "user-dir", "dedicated")
SWEEP_VARIABLES = ("user-noise-dbm", "tx-power-dbm", "gamma_d")

_ALIASES = {
    "target-direction": "target-dir",
    "user-direction": "user-dir",
    "dedicated-comm": "dedicated",
}


def canonical_algorithm(name):
    name = _ALIASES.get(name, name)
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
    return name


@dataclass
class SolveOptions:
    max_outer: int = 50
    tol: float = 1e-3
    ris_max_outer: int = 5
    ris_max_inner: int = 200
    rho: float = 1.0
    feasibility_margin: float = 1.05


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------
def initial_precoder(hc, n_streams, p_max):
    """``sqrt(P / (N K))`` times the top right singular vectors of each user."""
    cols = []
    for h in hc:
        _, _, vh = np.linalg.svd(h)
        cols.append(vh.conj().T[:, :n_streams])
    f = np.concatenate(cols, axis=1)
    return f * math.sqrt(p_max / np.real(np.vdot(f, f)))


def _sensing_margin(channels, geometry, theta, thresholds, p_max):
    """Smallest ``P lambda_max(B_l) / threshold_l`` over targets (matched receivers)."""
    out = []
    for ell, thr in enumerate(thresholds):
        x, y = sensing_gain_quadratics(channels, geometry, ell)
        out.append(p_max * quartic(x, y, theta) / thr)
    return min(out)


def feasible_start(channels, geometry, theta, thresholds, p_max, margin=1.05):
    """Rotate ``theta`` towards the targets until full power can meet
    every detection threshold (with ``margin``)."""
    if _sensing_margin(channels, geometry, theta, thresholds, p_max) >= margin:
        return theta
    for ell in range(geometry.n_targets):
        x, y = sensing_gain_quadratics(channels, geometry, ell)
        cand, _ = rcg_ris_design(x, y, theta, eps=1e-9, max_iter=500)
        if _sensing_margin(channels, geometry, cand, thresholds, p_max) > \
                _sensing_margin(channels, geometry, theta, thresholds, p_max):
            theta = cand
    if geometry.n_targets > 1 and _sensing_margin(channels, geometry, theta, thresholds, p_max) < 1:
        # equal-weight blend of the per-target optima
        blend = np.zeros_like(theta)
        for ell in range(geometry.n_targets):
            x, y = sensing_gain_quadratics(channels, geometry, ell)
            blend += unit_modulus(rcg_ris_design(x, y, theta, eps=1e-9, max_iter=500)[0])
        cand = unit_modulus(blend)
        if _sensing_margin(channels, geometry, cand, thresholds, p_max) > \
                _sensing_margin(channels, geometry, theta, thresholds, p_max):
            theta = cand
    if _sensing_margin(channels, geometry, theta, thresholds, p_max) < 1:
        raise Infeasible("no RIS phase found that lets P_max meet the detection target", block="ris")
    return theta


# ---------------------------------------------------------------------------
# Alternating solver
# ---------------------------------------------------------------------------
def _receivers(channels, geometry, theta, f):
    if geometry.n_targets == 1:
        return optimal_receiver_sust(channels, geometry, theta).w
    return zf_receivers_mumt(channels, geometry, theta, f).w


def _quads(channels, geometry, theta, w, specs):
    return [build_b_matrix(channels, geometry, theta, w[ell], ell, spec=specs[ell])
            for ell in range(geometry.n_targets)]


def _objective_value(hc, f, r_nc, kind, weights_fixed):
    g = lmmse_equalizers(hc, f, r_nc)
    if kind in ("sum-rate", "weighted-sum-rate"):
        return -sum_rate(hc, f, r_nc), g
    return weighted_mse(hc, f, g, r_nc, weights_fixed), g


def alternating_solve(channels, geometry, specs, p_max, n_streams, algorithm="admm",
                      objective="mse", weights=None, rng=None, theta0=None, options=None):
    """Block-coordinate descent over ``(w, G, W, F, theta)``.

    Parameters
    ----------
    specs : DetectionSpec or list of DetectionSpec
        One per target.
    algorithm : str
        ``admm``, ``rcg``, ``target-dir``, ``user-dir`` or ``dedicated``.
    objective : str
        ``mse``, ``wmse`` or ``sum-rate``.

    Returns
    -------
    state : TransceiverState
    trace : list of dict
        One record per outer sweep (the objective is the re-equalized
        weighted MSE, or minus the sum rate).
    """
    algorithm = canonical_algorithm(algorithm)
    options = options or SolveOptions()
    if not isinstance(specs, (list, tuple)):
        specs = [specs] * geometry.n_targets
    rng = rng if rng is not None else np.random.default_rng(0)
    weights_fixed = weights or MetricWeights(objective_kind="wmse" if objective == "wmse" else "mse")
    rate = objective in ("sum-rate", "weighted-sum-rate")
    radar_on = algorithm != "dedicated"
    if algorithm == "rcg" and geometry.n_targets > 1:
        raise ConfigError("the rcg selector supports a single target")

    n_ris = channels.n_ris
    if algorithm in ("target-dir", "user-dir"):
        theta = baseline_phases(algorithm, channels, geometry)
    elif theta0 is not None:
        theta = unit_modulus(np.asarray(theta0, complex))
    else:
        theta = np.exp(2j * np.pi * rng.random(n_ris))
    thresholds = [effective_threshold(s) for s in specs]
    if radar_on and algorithm in ("admm", "rcg"):
        theta = feasible_start(channels, geometry, theta, thresholds, p_max,
                               options.feasibility_margin)

    hc = channels.effective_all(theta)
    f = initial_precoder(hc, n_streams, p_max)
    trace = []
    best_effort = False
    prev = None
    converged = False
    w = _receivers(channels, geometry, theta, f)
    for it in range(1, options.max_outer + 1):
        # (1) radar receivers
        w = _receivers(channels, geometry, theta, f)
        # (2) equalizers
        hc = channels.effective_all(theta)
        g = lmmse_equalizers(hc, f, channels.r_nc)
        # (3) rate weights
        wts = sum_rate_weights(hc, f, channels.r_nc)[0] if rate else weights_fixed
        # (4) precoder
        quads = _quads(channels, geometry, theta, w, specs) if radar_on else []
        try:
            if geometry.n_targets == 1 and channels.n_users == 1:
                quad = quads[0] if quads else build_b_matrix(channels, geometry, theta, w[0])
                f, _ = precoder_sust(hc, quad, g, p_max, channels.r_nc, wts)
            else:
                f, _ = precoder_mumt(hc, quads, g, p_max, channels.r_nc, wts, previous=f)
        except Infeasible as exc:
            if algorithm in ("target-dir", "user-dir") and geometry.n_targets == 1:
                # fixed phases cannot be repaired: spend all power on sensing
                _, u = minimum_power(quads[0])
                f = _boundary_precoder(hc, g, wts, u, p_max, n_streams)
                best_effort = True
            else:
                exc.block = exc.block or "precoder"
                raise
        g = lmmse_equalizers(hc, f, channels.r_nc)
        # (5) RIS phases
        if algorithm in ("admm", "dedicated"):
            obj = ris_objective_terms(channels, f, g, wts)
            terms = []
            if radar_on:
                for ell in range(geometry.n_targets):
                    x, y = build_ris_quadratics(channels, geometry, f, w[ell], ell)
                    terms.append((x, y, quads[ell].threshold))
            try:
                theta, _ = admm_ris_design(obj, terms, theta, rho=options.rho,
                                           max_inner=options.ris_max_inner,
                                           max_outer=options.ris_max_outer)
            except SurrogateInfeasible as exc:
                exc.block = "ris"
                raise
        elif algorithm == "rcg":
            x, y = build_ris_quadratics(channels, geometry, f, w[0], 0)
            theta, _ = rcg_ris_design(x, y, theta)

        hc = channels.effective_all(theta)
        val, g = _objective_value(hc, f, channels.r_nc, objective, weights_fixed)
        w_eval = _receivers(channels, geometry, theta, f)
        state = TransceiverState(f, g, w_eval, theta)
        rep = evaluate(channels, state, geometry, specs, weights_fixed)
        trace.append({"iteration": it, "objective": val, "mse": rep.total_mse,
                      "sum_rate": rep.sum_rate, "pd_min": min(rep.detection),
                      "power": rep.power})
        if prev is not None and abs(prev - val) <= options.tol * max(abs(prev), 1e-300):
            converged = True
            break
        prev = val
    w = _receivers(channels, geometry, theta, f)
    state = TransceiverState(f, g, w, theta, converged=converged and not best_effort)
    return state, trace


# ---------------------------------------------------------------------------
# Experiment plans
# ---------------------------------------------------------------------------
@dataclass
class ExperimentPlan:
    config: object
    sweep_variable: str = "gamma_d"
    grid: tuple = (0.98,)
    n_realizations: int = 100
    algorithms: tuple = ("admm",)
    objective: str = "mse"
    out_dir: str = "results"
    seed: int = 0
    max_outer: int = 50

    def validate(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if len(self.grid) == 0:
            raise ConfigError("sweep grid is empty")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be >= 1")
        for a in self.algorithms:
            canonical_algorithm(a)
        if self.objective not in ("mse", "wmse", "sum-rate"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        return self


def load_plan(path, config):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    known = {"sweep_variable", "grid", "n_realizations", "algorithms", "objective", "seed",
             "max_outer"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown plan field(s): {sorted(unknown)}")
    kwargs = dict(doc)
    if "grid" in kwargs:
        kwargs["grid"] = tuple(float(v) for v in kwargs["grid"])
    if "algorithms" in kwargs:
        kwargs["algorithms"] = tuple(kwargs["algorithms"])
    return ExperimentPlan(config=config, **kwargs).validate()


def apply_grid_value(cfg, variable, value):
    if variable == "user-noise-dbm":
        return cfg.replace(user_noise=dbm_to_watt(value))
    if variable == "tx-power-dbm":
        return cfg.replace(tx_power=dbm_to_watt(value))
    return cfg.replace(gamma_d=float(value))


def solve_realization(cfg, seed, index, algorithm, objective="mse", max_outer=50):
    """Channels for realization ``index`` of ``seed`` and the solved state."""
    rng = make_rng(seed, index)
    channels = synthesize_channels(cfg, rng)
    geometry = target_geometry(cfg)
    spec = DetectionSpec.from_config(cfg)
    state, trace = alternating_solve(channels, geometry, spec, cfg.tx_power, cfg.n_streams,
                                     algorithm, objective, rng=rng,
                                     options=SolveOptions(max_outer=max_outer))
    report = evaluate(channels, state, geometry, spec)
    return state, trace, report, channels, geometry


def _job(args):
    cfg, seed, index, algorithm, objective, max_outer = args
    try:
        _, trace, report, _, _ = solve_realization(cfg, seed, index, algorithm, objective, max_outer)
        return {"ok": True, "row": report.scalars(), "iterations": len(trace),
                "converged": bool(trace and len(trace) < max_outer), "trace": trace}
    except IsacError as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _workers():
    try:
        n = int(os.environ.get("ISAC_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, min(n, os.cpu_count() or 1))


def _version():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def config_hash(cfg):
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _mean_se(values):
    v = np.asarray(values, float)
    if v.size == 0:
        return float("nan"), float("nan")
    mean = float(np.sum(v) / v.size)   # fixed reduction order
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return mean, se


def run_plan(plan, failure_threshold=0.2):
    """Run every (grid point, algorithm, realization); write
    ``results.csv`` and ``manifest.json`` into ``plan.out_dir``.

    Raises
    ------
    NonConvergence
        When more than ``failure_threshold`` of the realizations of a grid
        point fail.
    """
    plan.validate()
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    total = 0
    workers = _workers()
    for value in plan.grid:
        cfg = apply_grid_value(plan.config, plan.sweep_variable, value)
        for algo in plan.algorithms:
            algo = canonical_algorithm(algo)
            jobs = [(cfg, plan.seed, i, algo, plan.objective, plan.max_outer)
                    for i in range(plan.n_realizations)]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as ex:
                    results = list(ex.map(_job, jobs))
            else:
                results = [_job(j) for j in jobs]
            ok = [r for r in results if r["ok"]]
            for i, r in enumerate(results):
                if not r["ok"]:
                    log.warning("realization %d (%s, %s=%s) failed: %s", i, algo,
                                plan.sweep_variable, value, r["error"])
                    failures.append({"grid": value, "algorithm": algo, "realization": i,
                                     "error": r["error"]})
            total += len(results)
            if len(results) - len(ok) > failure_threshold * len(results):
                _write_manifest(out, plan, failures, total)
                raise NonConvergence(
                    f"{len(results) - len(ok)} of {len(results)} realizations failed "
                    f"at {plan.sweep_variable}={value} ({algo})")
            row = {plan.sweep_variable: value, "algorithm": algo, "n_ok": len(ok)}
            keys = sorted({k for r in ok for k in r["row"]})
            for k in keys:
                m, se = _mean_se([r["row"][k] for r in ok if k in r["row"]])
                row[k] = m
                row[f"{k}_se"] = se
            row["iterations"] = _mean_se([r["iterations"] for r in ok])[0]
            rows.append(row)
    _write_rows(out / "results.csv", rows)
    _write_manifest(out, plan, failures, total)
    return rows


def _write_rows(path, rows):
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_manifest(out, plan, failures, total):
    manifest = {
        "version": _version(),
        "config_hash": config_hash(plan.config),
        "config": config_to_dict(plan.config),
        "sweep_variable": plan.sweep_variable,
        "grid": list(plan.grid),
        "algorithms": list(plan.algorithms),
        "objective": plan.objective,
        "seed": plan.seed,
        "realizations": [plan.seed + i for i in range(plan.n_realizations)],
        "n_realizations": plan.n_realizations,
        "jobs": total,
        "failed": len(failures),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def write_trace(path, trace):
    _write_rows(path, trace)


def emit_beampattern(states, channels, geometry, path, azimuths=None, elevation=None):
    """Normalized angular response, one column per algorithm.

    ``states`` maps algorithm name to :class:`TransceiverState`.
    """
    azimuths = default_angle_grid() if azimuths is None else np.asarray(azimuths, float)
    elevation = float(geometry.elevation[0]) if elevation is None else elevation
    cols = {name: angular_response(channels, st, geometry, azimuths, elevation, normalize=True)
            for name, st in states.items()}
    rows = []
    for i, az in enumerate(azimuths):
        row = {"azimuth_deg": round(math.degrees(az), 10)}
        for name, v in cols.items():
            row[name] = float(v[i])
        rows.append(row)
    _write_rows(Path(path), rows)
    return cols
