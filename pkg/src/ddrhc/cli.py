"""Command-line driver: verify, simulate, constellation."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .comm import write_trace_csv
from .constellation.geometry import coupling_counts
from .constellation.orbits import los_range
from .constellation.system import TRUTH_MODELS, ConstellationConfig, complexity_sweep, simulate
from .experiment import (ExperimentConfig, constellation_lifetimes, network_for_seed, run_network,
                         violated_inequalities, write_gains_csv, write_rows)
from .network import ValidationError
from .suites import EXACT_TOPOLOGIES, SUITES, exactness_suite, sparsity_suite

METRIC_COLUMNS = ("k", "t", "mae_a", "mae_e", "mae_i", "mae_u", "mae_raan", "z_rel_mean", "tracking_norm",
                  "max_thrust", "propellant", "min_mass")
DETAIL_COLUMNS = ("k", "t", "sat", "a_err", "ex", "ey", "i_err", "u_err", "raan_err", "mass",
                  "thrust_t", "thrust_n", "thrust_w")


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig(constellation=ConstellationConfig())
    return cfg.with_overrides(seed=args.seed, truth=args.truth, out=args.out)


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc.strerror}") from exc
    return p


def cmd_verify(args) -> int:
    v = dict(_load(args).verify) if args.config else {}
    names = v.get("suites", list(SUITES))
    n_seeds = int(v.get("seeds", 10))
    results = []
    for name in names:
        if name not in SUITES:
            print(f"FAIL {name}: no such suite (choose from {sorted(SUITES)})")
            return 2
        if name == "exactness":
            cases = [tuple(c) for c in v.get("topologies", EXACT_TOPOLOGIES)]
            r = exactness_suite(cases, range(n_seeds), int(v.get("horizon", 15)))
        elif name == "sparsity":
            r = sparsity_suite(inject=v.get("inject") == "sparsity")
        else:
            r = SUITES[name]()
        print(r.line(), flush=True)
        results.append(r)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


def _refuse(problems: list[str]) -> int:
    print("inadmissible schedule:", file=sys.stderr)
    for p in problems:
        print(f"  {p}", file=sys.stderr)
    return 2


def _scaling_sweep(cfg: ExperimentConfig, out: Path) -> int:
    sc = cfg.scaling
    rows = complexity_sweep(sc.get("totals", [24, 96, 384]), cfg.constellation, int(sc.get("reach", 2)))
    write_rows([vars(r) for r in rows], out / "scaling.csv")
    for r in rows:
        print(f"N = {r.total}: max messages per unit and round {r.max_messages}, "
              f"peak unit storage {r.peak_unit_bytes} bytes")
    print(f"wrote {out / 'scaling.csv'}")
    return 0


def _simulate_constellation(cfg: ExperimentConfig, out: Path) -> int:
    con = cfg.constellation
    if cfg.scaling is not None:
        return _scaling_sweep(cfg, out)
    sched = cfg.schedule_config()
    if sched.dt_min is None or sched.dt_max is None:
        life = constellation_lifetimes(con, cfg.geometry)
        sched = type(sched)(sched.T_c, sched.T_t, sched.horizon, sched.d, life.dt_min, life.dt_max)
        print(f"link lifetimes at R = {con.coupling_range / 1e3:g} km: dt_min = {life.dt_min:g} s, "
              f"dt_max = {life.dt_max:g} s")
    problems = violated_inequalities(sched)
    if problems:
        return _refuse(problems)
    for seed in cfg.seeds:
        run_cfg = ConstellationConfig.from_dict({**con.to_dict(), "seed": seed, "truth": cfg.truth_mode})
        steps = cfg.steps if cfg.steps is not None else run_cfg.n_steps
        run = simulate(run_cfg, n_steps=steps,
                       progress=lambda k: print(f"seed {seed}: step {k}/{steps}", flush=True)
                       if k % (50 * run_cfg.d) == 0 else None)
        d = _out_dir(out / f"seed-{seed}")
        write_rows(run.metrics, d / "metrics.csv", METRIC_COLUMNS)
        write_rows(run.detail, d / "detail.csv", DETAIL_COLUMNS)
        write_trace_csv(run.trace, d / "trace.csv")
        first, last = run.metrics[0], run.metrics[-1]
        summary = {
            "seed": seed, "steps": steps, "anchor": list(run.anchor),
            "mae_a_initial": first["mae_a"], "mae_a_final": last["mae_a"],
            "z_rel_initial": first["z_rel_mean"], "z_rel_final": last["z_rel_mean"],
            "tracking_initial": first["tracking_norm"], "tracking_final": last["tracking_norm"],
            "thrust_limit_ok": run.thrust_limit_ok,
            "propellant_kg": float(run.burned.sum()),
            "max_messages_per_unit_round": run.max_messages,
            "peak_unit_bytes": run.peak_unit_bytes,
        }
        (d / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"seed {seed}: MAE(a) {first['mae_a']:.3f} -> {last['mae_a']:.3f} m, "
              f"mean |z_rel| {first['z_rel_mean']:.3e} -> {last['z_rel_mean']:.3e}; wrote {d}")
    return 0


def _simulate_network(cfg: ExperimentConfig, out: Path) -> int:
    sched = cfg.schedule_config()
    problems = violated_inequalities(sched)
    if problems:
        return _refuse(problems)
    steps = cfg.steps if cfg.steps is not None else 5 * sched.horizon
    for seed in cfg.seeds:
        net = network_for_seed(cfg.network, seed)
        res, first = run_network(net, sched, steps, seed)
        d = _out_dir(out / f"seed-{seed}")
        write_rows(res.metrics, d / "metrics.csv")
        write_trace_csv(first[0].harness.trace, d / "trace.csv")
        write_gains_csv(first[0].schedule, d / "gains.csv")
        print(f"seed {seed}: state norm {res.metrics[0]['state_norm']:.3e} -> {res.metrics[-1]['state_norm']:.3e}; "
              f"max messages per unit and round {first[0].max_messages}; wrote {d}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg.output_dir)
    if cfg.scenario == "constellation":
        return _simulate_constellation(cfg, out)
    return _simulate_network(cfg, out)


def cmd_constellation(args) -> int:
    cfg = _load(args)
    if cfg.constellation is None:
        raise ValidationError("the constellation command needs a constellation section")
    con = cfg.constellation
    g = cfg.geometry
    out = _out_dir(cfg.output_dir)
    period = con.pattern.period
    times = np.arange(0.0, period, float(g.get("sample_every", 60.0)))
    radii = g.get("radii", [r * 250e3 for r in range(0, 17)])
    rows = [{"radius_km": c.radius / 1e3, "min": c.min, "max": c.max, "mean": c.mean}
            for c in coupling_counts(con.pattern, radii, times)]
    write_rows(rows, out / "coupling_counts.csv")
    life = constellation_lifetimes(con, g)
    counts, edges = life.histogram(int(g.get("bins", 20)))
    write_rows([{"lo_s": float(edges[b]), "hi_s": float(edges[b + 1]), "count": int(counts[b])}
                for b in range(len(counts))], out / "link_lifetimes.csv")
    print(f"line-of-sight range {los_range(con.a) / 1e3:.1f} km")
    for r in rows:
        print(f"R = {r['radius_km']:7.1f} km: coupled satellites min {r['min']}, max {r['max']}, mean {r['mean']:.2f}")
    print(f"link lifetimes at R = {con.coupling_range / 1e3:g} km: dt_min = {life.dt_min:g} s, "
          f"dt_max = {life.dt_max:g} s, {life.durations.size} samples, {life.censored} censored")
    print(f"wrote {out / 'coupling_counts.csv'} and {out / 'link_lifetimes.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddrhc", description="Distributed receding-horizon control experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, text in (("verify", cmd_verify, "run the verification suites"),
                           ("simulate", cmd_simulate, "run closed-loop simulations and write CSVs"),
                           ("constellation", cmd_constellation, "coupling counts and link lifetimes")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="experiment config (JSON, // comments allowed)")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, help="run a single seed (overrides the config)")
        s.add_argument("--truth", choices=TRUTH_MODELS, help="truth model (overrides the config)")
        s.set_defaults(func=fn)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
