"""Experiment configuration, admissibility checks and CSV artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .comm import (ClosedLoopResult, ScheduleConfig, check_tv_constraints, feedback_from_schedule,
                   run_closed_loop, write_trace_csv)
from .constellation.geometry import LinkLifetimes, link_lifetimes
from .constellation.system import TRUTH_MODELS, ConstellationConfig
from .distributed import DistributedConfig, synthesize_window_ti
from .network import Network, ValidationError, assemble_global, network_from_config

SCENARIOS = ("generic-network", "constellation")
SCHEDULE_KEYS = ("T_c", "T_t", "horizon", "d", "dt_min", "dt_max")


def read_config_text(text: str) -> dict:
    """JSON with whole-line ``//`` comments."""
    kept = [ln for ln in text.splitlines() if not ln.lstrip().startswith("//")]
    return json.loads("\n".join(kept))


@dataclass
class ExperimentConfig:
    scenario: str = "constellation"
    schedule: dict = field(default_factory=dict)
    constellation: ConstellationConfig | None = None
    network: dict | None = None
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"
    truth_mode: str = "nonlinear-mean-element"
    steps: int | None = None
    geometry: dict = field(default_factory=dict)
    scaling: dict | None = None
    verify: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if (self.constellation is not None) != (self.scenario == "constellation"):
            raise ValidationError("a constellation section is required for, and only for, the constellation scenario")
        if self.scenario == "generic-network" and self.network is None:
            raise ValidationError("the generic-network scenario needs a network section")
        if self.truth_mode not in TRUTH_MODELS:
            raise ValidationError(f"truth_mode must be one of {TRUTH_MODELS}, got {self.truth_mode!r}")
        unknown = set(self.schedule) - set(SCHEDULE_KEYS)
        if unknown:
            raise ValidationError(f"unknown schedule keys: {sorted(unknown)}")
        if not self.seeds:
            raise ValidationError("at least one seed is required")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown experiment keys: {sorted(unknown)}")
        if raw.get("constellation") is not None:
            con = dict(raw["constellation"])
            con.update({k: v for k, v in raw.get("schedule", {}).items() if k in ("T_c", "T_t", "horizon", "d")})
            raw["constellation"] = ConstellationConfig.from_dict(con)
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {p}: {exc.strerror}") from exc
        try:
            raw = read_config_text(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(raw)

    def schedule_config(self) -> ScheduleConfig:
        s = dict(self.schedule)
        if self.constellation is not None:
            c = self.constellation
            s.setdefault("T_c", c.T_c)
            s.setdefault("T_t", c.T_t)
            s.setdefault("horizon", c.horizon)
            s.setdefault("d", c.d)
        missing = [k for k in ("T_c", "T_t", "horizon", "d") if k not in s]
        if missing:
            raise ValidationError(f"schedule is missing {missing}")
        return ScheduleConfig(s["T_c"], s["T_t"], int(s["horizon"]), int(s["d"]), s.get("dt_min"), s.get("dt_max"))

    def with_overrides(self, seed: int | None = None, truth: str | None = None,
                       out: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=[seed])
        if truth is not None:
            cfg = replace(cfg, truth_mode=truth)
        if out is not None:
            cfg = replace(cfg, output_dir=out)
        return cfg


def constellation_lifetimes(cfg: ConstellationConfig, geometry: dict | None = None) -> LinkLifetimes:
    """Link lifetimes of coupled pairs over one nominal period."""
    g = geometry or {}
    period = cfg.pattern.period
    every = float(g.get("sample_every", 30.0))
    lookback = float(g.get("lookback", 2 * period))
    step = float(g.get("step", cfg.T_t))
    return link_lifetimes(cfg.pattern, cfg.coupling_range, np.arange(0.0, period, every), lookback, step)


def violated_inequalities(sched: ScheduleConfig) -> list[str]:
    """Human-readable list of the schedule constraints that fail."""
    out = []
    lead = (sched.horizon + 2) * sched.T_t
    if sched.d * sched.T_c < lead:
        out.append(f"d*T_c >= (H+2)*T_t fails: {sched.d * sched.T_c} < {lead}")
    if sched.dt_min is None or sched.dt_max is None:
        return out
    rep = check_tv_constraints(sched)
    if not rep.horizon_ok:
        out.append(f"(H+2)*T_t + H*T_c < dt_max fails: H = {sched.horizon} but H < {float(rep.horizon_upper):.3f}")
    if not rep.d_upper_ok:
        out.append(f"(d+1)*T_t + d*T_c < dt_min fails: d = {sched.d} but d < {float(rep.d_upper):.3f}")
    return out


def write_rows(rows: Sequence[dict], path: str | Path, columns: Iterable[str] | None = None) -> None:
    cols = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_gains_csv(schedule, path: str | Path) -> None:
    rows = []
    for tau in schedule.applied_steps():
        for (i, j), blk in sorted(schedule.blocks[tau].items()):
            for (r, c), v in np.ndenumerate(blk):
                rows.append({"tau": tau, "unit": i, "source": j, "row": r, "col": c, "value": float(v)})
    write_rows(rows, path, ["tau", "unit", "source", "row", "col", "value"])


class NetworkPlant:
    """Linear plant given by the network's own model."""

    def __init__(self, network: Network, x0: list[np.ndarray]):
        self.network = network
        self.x = [np.array(v, dtype=float) for v in x0]
        self.cost = 0.0

    def states(self) -> list[np.ndarray]:
        return self.x

    def apply(self, k: int, feedback: list[np.ndarray]) -> None:
        ag = self.network.agents
        for i, v in enumerate(feedback):
            self.cost += float(v @ ag[i].R(k) @ v)
        self.x = [ag[i].A(k) @ self.x[i] + ag[i].B(k) @ feedback[i] for i in range(len(ag))]

    def metrics(self, k: int) -> dict:
        G = assemble_global(self.network, k)
        x = np.concatenate(self.x)
        z = G.H @ x
        stage = float(z @ G.Q @ z)
        self.cost += stage
        return {"k": k, "state_norm": float(np.linalg.norm(x)), "output_norm": float(np.linalg.norm(z)),
                "stage_output_cost": stage, "cumulative_cost": self.cost}


def run_network(net: Network, sched: ScheduleConfig, steps: int, seed: int) -> tuple[ClosedLoopResult, list]:
    """Closed loop of a generic network under repeated distributed synthesis."""
    rng = np.random.default_rng([seed, 3])
    x0 = [rng.standard_normal(n) for n in net.state_dims(0)]
    plant = NetworkPlant(net, x0)
    dcfg = DistributedConfig(sched.horizon, sched.d)
    first: list = []

    def synthesize(k: int):
        res = synthesize_window_ti(net, k, dcfg, record=not first)
        if not first:
            first.append(res)
        return res

    res = run_closed_loop(plant, synthesize, lambda k: net.topology, steps, sched.d)
    return res, first


def network_for_seed(raw: dict, seed: int) -> Network:
    cfg = json.loads(json.dumps(raw))
    model = cfg.setdefault("model", {"kind": "random"})
    if model.get("kind", "random") == "random":
        model["seed"] = seed
    return network_from_config(cfg)


__all__ = [
    "ExperimentConfig", "constellation_lifetimes", "violated_inequalities", "write_rows", "write_gains_csv",
    "write_trace_csv", "run_network", "network_for_seed", "read_config_text",
]
