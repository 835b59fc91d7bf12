"""Config-driven command line: simulate, analyze, sweep, estimate, replay.

Configs are TOML or JSON with [scenario], [run] and optional [perturbation],
[tolerances], [weights], [analysis], [sweep], [estimate] tables. Every
primary output embeds the config hash and seed, and re-running a command on
unchanged inputs reproduces its outputs byte for byte; wall-clock metadata
goes to a sidecar file only.

Exit codes: 0 ok, 2 config error, 3 runtime error, 4 data error,
5 sweep cell failure.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .engine import InteractionLog, PerturbationSpec, RunConfig, export_series_csv, replay, rollout
from .equilibrium import (
    DistanceWeights,
    ToleranceConfig,
    basin_map,
    brgap,
    check_mie,
    classify_stability,
    cognitive_residual,
    find_fixed_point,
    flatten_states,
    level_step_norm,
    mean_field_jacobian,
    neural_residual,
)
from .errors import ConfigError, DataError, MielabError, NumericalError
from .estimation import (
    belief_depth_comparison,
    belief_policy_divergence,
    cca_shared_subspace,
    convergence_report,
    empirical_policy,
)
from .scenarios import make_scenario
from .util import canonical_json, set_config_value


def _err(msg: str):
    print(f"mielab: {msg}", file=sys.stderr)


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    raw = p.read_bytes()
    suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            return json.loads(raw.decode("utf-8"))
        if suffix == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError:
            return json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def _require_key(cfg: dict, table: str, key: str):
    if table not in cfg or not isinstance(cfg[table], dict):
        raise ConfigError(f"missing config table [{table}]")
    if key not in cfg[table]:
        raise ConfigError(f"missing key {table}.{key}")
    return cfg[table][key]


def _run_config(cfg: dict, seed_override) -> RunConfig:
    run = cfg.get("run")
    if not isinstance(run, dict):
        raise ConfigError("missing config table [run]")
    if seed_override is not None:
        seed = seed_override
    elif "seed" in run:
        seed = run["seed"]
    else:
        raise ConfigError("missing key run.seed")
    if "horizon" not in run:
        raise ConfigError("missing key run.horizon")
    return RunConfig(
        seed=seed,
        horizon=run["horizon"],
        snapshot_cadence=run.get("snapshot_cadence", 10),
    )


def _scenario_config(cfg: dict) -> dict:
    if "scenario" not in cfg or not isinstance(cfg["scenario"], dict):
        raise ConfigError("missing config table [scenario]")
    if "kind" not in cfg["scenario"]:
        raise ConfigError("missing key scenario.kind")
    return cfg["scenario"]


def _tolerances(cfg: dict) -> ToleranceConfig:
    return ToleranceConfig.from_config(cfg.get("tolerances", {}))


def _weights(cfg: dict) -> DistanceWeights:
    w = cfg.get("weights", {})
    known = {"theta", "belief", "policy", "brgap"}
    bad = set(w) - known
    if bad:
        raise ConfigError(f"unknown weight keys {sorted(bad)}")
    return DistanceWeights(**w)


def _write_json(path: Path, payload: dict):
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    scenario = make_scenario(_scenario_config(cfg))
    run = _run_config(cfg, args.seed)
    pert = None
    if "perturbation" in cfg:
        pert = PerturbationSpec.from_config(cfg["perturbation"])
    log = rollout(scenario, run, pert)
    out = _out_dir(args)
    log.save(out / "log.jsonl")
    export_series_csv(log, scenario, out / "series.csv")
    meta = {
        "config_hash": log.config_hash,
        "seed": log.seed,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    _say(args, f"wrote {out / 'log.jsonl'} and {out / 'series.csv'} (hash {log.config_hash[:12]})")
    try:
        rep = convergence_report(log, _tolerances(cfg), _weights(cfg))
        final_e = rep.e_trace[-1][1] if rep.e_trace else float("nan")
        drift = " ".join(f"{k}={v}" for k, v in rep.stabilization.items())
        _say(args, f"final E_t {final_e:.6g}; drift ticks: {drift}")
    except (DataError, ConfigError) as exc:
        _say(args, f"summary unavailable: {exc}")
    return 0


# ---------------------------------------------------------------------------
# analyze


def _analysis_options(cfg: dict) -> dict:
    a = dict(cfg.get("analysis", {}))
    known = {
        "residual_samples",
        "map_samples",
        "burn_in",
        "damping",
        "h",
        "tick",
        "rng",
        "fixed_point",
        "jacobian",
        "residuals",
    }
    bad = set(a) - known
    if bad:
        raise ConfigError(f"unknown analysis keys {sorted(bad)}")
    a.setdefault("residual_samples", 200)
    a.setdefault("map_samples", 1)
    a.setdefault("burn_in", 100)
    a.setdefault("damping", 1.0)
    a.setdefault("h", 1e-5)
    a.setdefault("tick", 0)
    a.setdefault("rng", 0)
    a.setdefault("fixed_point", True)
    a.setdefault("jacobian", True)
    a.setdefault("residuals", True)
    return a


def cmd_analyze(args) -> int:
    log = InteractionLog.load(args.log)
    cfg = load_config(args.config) if args.config else {}
    tol = _tolerances(cfg)
    opts = _analysis_options(cfg)
    scenario = replay_header_check(log)
    out = _out_dir(args)
    states = log.final_states()
    tables = [st.policy.state_table(st.belief) for st in states]
    game = scenario.game
    gaps = [brgap(game, tables, i) for i in range(game.n_agents)]
    if opts["residuals"]:
        nres = neural_residual(
            scenario, states, opts["residual_samples"], opts["rng"], opts["burn_in"], opts["tick"]
        )
        cres = cognitive_residual(
            scenario, states, opts["residual_samples"], opts["rng"], opts["burn_in"], opts["tick"]
        )
    else:
        nres = cres = [0.0 for _ in range(game.n_agents)]
    e_t = None
    try:
        trace = convergence_report(log, tol, _weights(cfg)).e_trace
        e_t = trace[-1][1] if trace else None
    except (DataError, ConfigError):
        pass
    verdict = check_mie(nres, cres, gaps, tol, e_t=e_t)
    eq_payload = {
        "config_hash": log.config_hash,
        "seed": log.seed,
        "report": verdict.to_dict(),
        "residual_se": {
            "neural": [getattr(r, "se", 0.0) for r in nres],
            "cognitive": [getattr(r, "se", 0.0) for r in cres],
        },
    }
    _write_json(out / "equilibrium.json", eq_payload)
    stability_payload = {"config_hash": log.config_hash, "seed": log.seed}
    if opts["fixed_point"]:
        fp = find_fixed_point(
            scenario,
            states,
            n_samples=opts["map_samples"],
            damping=opts["damping"],
            rng=opts["rng"],
            tick=opts["tick"],
        )
        stability_payload["fixed_point"] = fp.to_dict()
        anchor = fp.states if fp.converged else states
    else:
        fp = None
        anchor = states
    if opts["jacobian"]:
        jac, fd_err = mean_field_jacobian(
            scenario, anchor, h=opts["h"], n_samples=opts["map_samples"], rng=opts["rng"], tick=opts["tick"]
        )
        stab = classify_stability(
            jac,
            neutral_band=tol.neutral_band,
            fixed_point=None if fp is None else fp.vector,
            fd_error=fd_err,
        )
        stability_payload["stability"] = stab.to_dict()
        _say(args, f"classification: {stab.classification}; verdict: {verdict.verdict}")
    else:
        _say(args, f"verdict: {verdict.verdict}")
    _write_json(out / "stability.json", stability_payload)
    return 0


def replay_header_check(log: InteractionLog):
    """Rebuild the scenario from the log header, refusing tampered hashes."""
    from .util import config_hash

    payload = {
        "scenario": log.header["scenario"],
        "run": log.header["run"],
        "perturbation": log.header["perturbation"],
    }
    if config_hash(payload) != log.header["config_hash"]:
        raise DataError("config hash mismatch: log header was modified")
    return make_scenario(log.header["scenario"])


# ---------------------------------------------------------------------------
# sweep


def _axis_values(axis: dict) -> np.ndarray:
    if "values" in axis:
        return np.asarray(axis["values"], dtype=np.float64)
    for key in ("start", "stop", "count"):
        if key not in axis:
            raise ConfigError(f"sweep axis needs 'values' or start/stop/count (missing {key})")
    return np.linspace(float(axis["start"]), float(axis["stop"]), int(axis["count"]))


def _sweep_axes(sweep: dict):
    axes = sweep.get("axes")
    if not axes:
        raise ConfigError("missing key sweep.axes")
    out = []
    for axis in axes:
        if "name" not in axis:
            raise ConfigError("sweep axis needs a 'name'")
        out.append((str(axis["name"]), _axis_values(axis)))
    return out


def _rates_cell(task):
    idx, scenario_cfg, horizon, cadence, seed = task
    try:
        scenario = make_scenario(scenario_cfg)
        log = rollout(scenario, RunConfig(seed=seed, horizon=horizon, snapshot_cadence=cadence))
        from .equilibrium import LEVELS, _snapshot_points

        points = _snapshot_points(log)
        if len(points) < 3:
            raise DataError("rates sweep needs at least three snapshots per cell")
        first = sum(level_step_norm(points[0][1], points[1][1], lev) for lev in LEVELS)
        last = sum(level_step_norm(points[-2][1], points[-1][1], lev) for lev in LEVELS)
        return idx, first, last, int(last < first), None
    except MielabError as exc:
        return idx, float("nan"), float("nan"), -1, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sweep = cfg.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("missing config table [sweep]")
    kind = sweep.get("kind")
    if kind not in ("rates", "basin"):
        raise ConfigError(f"sweep.kind must be 'rates' or 'basin', got {kind!r}")
    base = dict(_scenario_config(cfg))
    axes = _sweep_axes(sweep)
    seed = int(args.seed if args.seed is not None else sweep.get("seed", 0))
    out = _out_dir(args)
    jobs = args.jobs
    from .util import config_hash

    sweep_hash = config_hash({"scenario": base, "sweep": sweep, "seed": seed})
    if kind == "basin":
        bm = basin_map(
            base,
            axes,
            mode=sweep.get("mode", "rollout"),
            n_samples=sweep.get("map_samples", 1),
            damping=sweep.get("damping", 1.0),
            horizon=sweep.get("horizon", 1000),
            cadence=sweep.get("cadence", 10),
            settle_tol=sweep.get("settle_tol", 1e-3),
            merge_tol=sweep.get("merge_tol", 1e-4),
            seed=seed,
            project=sweep.get("project"),
            jobs=jobs,
        )
        _write_json(out / "sweep.json", {"config_hash": sweep_hash, "seed": seed, "basin": bm.to_dict()})
        bm.to_csv(out / "sweep.csv", meta=f"config_hash={sweep_hash} seed={seed}")
        n_attr = len(bm.attractors)
        _say(args, f"basin over {bm.labels.size} cells: {n_attr} attractors, "
                   f"{int((bm.labels < 0).sum())} non-converged")
        return 0
    shape = tuple(len(v) for _, v in axes)
    if len(axes) != 2:
        raise ConfigError("rates sweep expects exactly two axes")
    n_cells = int(np.prod(shape))
    if n_cells > 100_000:
        raise ConfigError(f"grid has {n_cells} cells; the cap is 100000")
    horizon = int(sweep.get("horizon", 200))
    cadence = int(sweep.get("cadence", 1))
    tasks = []
    for idx, coords in enumerate(np.ndindex(shape)):
        cell_cfg = dict(base)
        for k, (name, vals) in enumerate(axes):
            set_config_value(cell_cfg, name, float(vals[coords[k]]))
        tasks.append((idx, cell_cfg, horizon, cadence, seed))
    if jobs > 1:
        import multiprocessing

        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_rates_cell, tasks)
        results.sort(key=lambda r: r[0])
    else:
        results = [_rates_cell(t) for t in tasks]
    failures = [(idx, msg) for idx, _, _, _, msg in results if msg]
    rows = []
    for (idx, first, last, label, _), coords in zip(results, np.ndindex(shape)):
        coord_vals = [float(axes[k][1][coords[k]]) for k in range(len(axes))]
        rows.append(coord_vals + [label, first, last])
    names = [n for n, _ in axes]
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={sweep_hash} seed={seed}\n")
        fh.write(",".join(names + ["converges", "first_step", "last_step"]) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    _write_json(
        out / "sweep.json",
        {
            "config_hash": sweep_hash,
            "seed": seed,
            "axes": [{"name": n, "values": [float(v) for v in vals]} for n, vals in axes],
            "labels": np.asarray([r[len(axes)] for r in rows], dtype=np.int64).reshape(shape).tolist(),
        },
    )
    if failures:
        for idx, msg in failures[:5]:
            _err(f"cell {idx} failed: {msg}")
        return 5
    _say(args, f"swept {n_cells} cells; {sum(1 for r in rows if r[len(axes)] == 1)} converge")
    return 0


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(args) -> int:
    log = InteractionLog.load(args.log)
    cfg = load_config(args.config) if args.config else {}
    est = dict(cfg.get("estimate", {}))
    smoothing = float(est.get("smoothing", 1.0))
    holdout = float(est.get("holdout", 0.3))
    out = _out_dir(args)
    n = log.n_agents
    warnings = []
    policies = [empirical_policy(log, i) for i in range(n)]
    smoothed = [empirical_policy(log, i, smoothing=smoothing) for i in range(n)]
    finals = log.final_states()
    ticks = log.ticks()
    visits = np.zeros(policies[0].counts.shape[0], dtype=np.int64)
    for rec in ticks:
        visits[rec["s"]] += 1
    s_star = int(visits.argmax())
    divergences = []
    for i, st in enumerate(finals):
        b = st.belief
        opp = (i + 1) % n
        row = smoothed[opp].table[s_star]
        if b.kind == "categorical" and b.probs.size == row.size:
            d = belief_policy_divergence(b.probs, row)
            divergences.append({"agent": i, "state": s_star, "kl": None if d.infinite else d.value, "infinite": d.infinite})
        else:
            divergences.append({"agent": i, "state": s_star, "kl": None, "infinite": False})
            warnings.append(f"agent {i} belief does not match opponent action space; divergence skipped")
    theta_series = _theta_series(log)
    cca = None
    if n == 2 and theta_series is not None:
        x, y = theta_series
        try:
            k = int(est.get("cca_k", 1))
            cca = cca_shared_subspace(x, y, k).to_dict()
        except (ConfigError, NumericalError) as exc:
            warnings.append(f"shared-subspace analysis skipped: {exc}")
    else:
        warnings.append("no paired parameter series in log; shared-subspace analysis skipped")
    depth = None
    if log.header["scenario"].get("kind") == "matrix" and n == 2:
        try:
            depth = belief_depth_comparison(log, agent=0, holdout=holdout).to_dict()
        except (ConfigError, DataError) as exc:
            warnings.append(f"depth comparison skipped: {exc}")
    else:
        warnings.append("depth comparison needs a two-agent matrix-game log; skipped")
    try:
        conv = convergence_report(log, _tolerances(cfg), _weights(cfg)).to_dict()
    except (DataError, ConfigError) as exc:
        conv = None
        warnings.append(f"convergence report skipped: {exc}")
    payload = {
        "config_hash": log.config_hash,
        "seed": log.seed,
        "empirical_policies": [p.to_dict() for p in policies],
        "divergences": divergences,
        "cca": cca,
        "depth_comparison": depth,
        "convergence": conv,
        "warnings": warnings,
    }
    _write_json(out / "estimate.json", payload)
    with open(out / "policies.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={log.config_hash} seed={log.seed}\n")
        fh.write("agent,state,action,count,prob,defined\n")
        for i, pol in enumerate(policies):
            n_s, n_a = pol.counts.shape
            for s in range(n_s):
                for a in range(n_a):
                    fh.write(
                        f"{i},{s},{a},{int(pol.counts[s, a])},{repr(float(pol.table[s, a]))},{int(pol.defined[s])}\n"
                    )
    _say(args, f"wrote {out / 'estimate.json'}; {len(warnings)} warnings")
    return 0


def _theta_series(log):
    """Per-agent parameter trajectories from snapshots, or None if empty."""
    snaps = log.snapshots()
    if len(snaps) < 4:
        return None
    xs, ys = [], []
    for rec in snaps:
        a0 = rec["agents"][0]["theta"]["values"]
        a1 = rec["agents"][1]["theta"]["values"] if len(rec["agents"]) > 1 else []
        if not a0 or not a1:
            return None
        xs.append(a0)
        ys.append(a1)
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    log = InteractionLog.load(args.log)
    res = replay(log)
    if res.ok:
        _say(args, "replay matches the log")
        return 0
    _err(f"replay diverged: {res.detail}")
    return 4


# ---------------------------------------------------------------------------
# entry point


def _default_jobs() -> int:
    env = os.environ.get("MIE_LAB_JOBS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mielab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mielab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config: bool, log_positional: bool = False):
        if log_positional:
            sp.add_argument("log", help="path to a JSONL interaction log")
        sp.add_argument("--config", required=needs_config, help="TOML or JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes (env MIE_LAB_JOBS)")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")

    sp = sub.add_parser("simulate", help="run a scenario and write log + series")
    common(sp, needs_config=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="certify equilibrium and classify stability for a log")
    common(sp, needs_config=False, log_positional=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="grid sweep: convergence rates or basin map")
    common(sp, needs_config=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("estimate", help="recover policies, divergences, subspaces from a log")
    common(sp, needs_config=False, log_positional=True)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("replay", help="re-simulate a log and verify it matches")
    common(sp, needs_config=False, log_positional=True)
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code in (0, None):
            return 0
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return 2
    except DataError as exc:
        _err(f"data error: {exc}")
        return 4
    except NumericalError as exc:
        _err(f"numerical error: {exc}")
        return 3
    except MielabError as exc:
        _err(str(exc))
        return 3
    except OSError as exc:
        _err(str(exc))
        return 3


if __name__ == "__main__":
    sys.exit(main())
