"""Constellation station keeping as a network of coupled LTV agents."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from ..comm import ScheduleConfig, run_closed_loop
from ..distributed import DistributedConfig, synthesize_window_tv
from ..network import AgentModel, Network, Topology
from .linear import conv_matrix, input_weight, output_blocks, output_weight, relative_output, inertial_output, stm
from .orbits import J2, A, EX, EY, I, RAAN, U, WalkerPattern, compute_anchor, los_range, positions, relative_elements
from .truth import clamp_thrust, mass_rate, truth_step

TRUTH_MODELS = ("nonlinear-mean-element", "linear-model")


@dataclass
class ConstellationConfig:
    """Scenario parameters.  Defaults describe the full 1584-satellite shell."""

    inclination_deg: float = 53.0
    total: int = 1584
    planes: int = 72
    phasing: int = 17
    a: float = 6921e3
    mass: float = 260.0
    thrust_max: float = 0.068
    isp: float = 1640.0
    T_c: float = 10.0
    T_t: float = 1.0
    horizon: int = 100
    d: int = 25
    coupling_range: float = 750e3
    d_max: int = 6
    j2: float = J2
    periods: float = 12.0
    truth: str = "nonlinear-mean-element"
    seed: int = 0
    perturb_a: float = 500.0
    perturb_along: float = 2000.0
    perturb_e: float = 5e-5
    perturb_i: float = 5e-5
    perturb_raan: float = 5e-5
    psd_repair: bool = True
    selection: str = "min_loss_mean"
    detail_sats: list = field(default_factory=lambda: [0])
    trace_sessions: int = 1

    def __post_init__(self):
        if self.truth not in TRUTH_MODELS:
            raise ValueError(f"truth must be one of {TRUTH_MODELS}, got {self.truth!r}")
        if self.d_max < 1:
            raise ValueError("d_max must be at least 1")
        bad = [s for s in self.detail_sats if not 0 <= s < self.total]
        if bad:
            raise ValueError(f"detail satellites {bad} are outside the fleet of {self.total}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ConstellationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown constellation config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def inclination(self) -> float:
        return float(np.radians(self.inclination_deg))

    @property
    def pattern(self) -> WalkerPattern:
        return WalkerPattern(self.inclination, self.total, self.planes, self.phasing, self.a, self.j2)

    @property
    def n_steps(self) -> int:
        return int(round(self.periods * self.pattern.period / self.T_c))

    def schedule(self, dt_min=None, dt_max=None) -> ScheduleConfig:
        return ScheduleConfig(self.T_c, self.T_t, self.horizon, self.d, dt_min, dt_max)


def desk_scale_config(**overrides) -> ConstellationConfig:
    """Walker 53:40/5/1 shell sized to run on one machine."""
    base = dict(total=40, planes=5, phasing=1, coupling_range=3000e3, horizon=20, d=17)
    base.update(overrides)
    return ConstellationConfig(**base)


def coupling_in_neighbors(pos: np.ndarray, radius: float, d_max: int) -> list[list[int]]:
    """In-neighbors within ``radius``, keeping the ``d_max - 1`` closest.

    Ties in distance go to the lower index.
    """
    tree = cKDTree(pos)
    out = []
    for i, cand in enumerate(tree.query_ball_point(pos, r=radius)):
        others = [j for j in cand if j != i]
        dist = np.linalg.norm(pos[others] - pos[i], axis=1) if others else np.zeros(0)
        order = sorted(range(len(others)), key=lambda t: (dist[t], others[t]))
        out.append(sorted(others[t] for t in order[:d_max - 1]))
    return out


class ConstellationSystem:
    """Nominal pattern, predicted coupling and LTV agents for one anchor."""

    def __init__(self, cfg: ConstellationConfig, anchor: tuple[float, float]):
        self.cfg = cfg
        self.pattern = cfg.pattern
        self.anchor = anchor
        self.N = cfg.total
        self.Phi = stm(cfg.a, cfg.inclination, cfg.T_c, cfg.j2)
        self.R = input_weight(cfg.thrust_max)
        self.los = los_range(cfg.a)
        self._nominal = lru_cache(maxsize=512)(self._nominal_at)
        self._pos = lru_cache(maxsize=2048)(self._positions_at)
        self._b_cache: dict[int, np.ndarray] = {}
        self.topology = Topology(self.N, self.in_neighbors)

    def _nominal_at(self, t: float) -> np.ndarray:
        return self.pattern.nominal(self.anchor, t)

    def _positions_at(self, t: float) -> np.ndarray:
        return positions(self._nominal(t))

    def nominal(self, k: int) -> np.ndarray:
        return self._nominal(float(k * self.cfg.T_c))

    def in_neighbors(self, k: int) -> list[list[int]]:
        return coupling_in_neighbors(self._pos(float(k * self.cfg.T_c)), self.cfg.coupling_range, self.cfg.d_max)

    def feasible(self, i: int, j: int, t: float) -> bool:
        p = self._pos(float(t))
        return float(np.linalg.norm(p[i] - p[j])) <= self.los

    def B(self, i: int, tau: int) -> np.ndarray:
        blk = self._b_cache.get(tau)
        if blk is None:
            if len(self._b_cache) > 4096:
                self._b_cache.clear()
            cfg = self.cfg
            blk = conv_matrix(cfg.a, cfg.inclination, self.nominal(tau)[:, U], cfg.T_c, cfg.j2)
            self._b_cache[tau] = blk
        return blk[i]

    def outputs(self, topology: Topology, i: int, tau: int) -> dict[int, np.ndarray]:
        nb = [j for j in topology.d_minus(i, tau) if j != i]
        return output_blocks(self.cfg.a, self.cfg.inclination, nb, i)

    def network(self, topology: Topology | None = None) -> Network:
        top = self.topology if topology is None else topology
        cache: dict[tuple[int, int], dict] = {}

        def blocks(i: int, tau: int):
            key = (i, tau)
            if key not in cache:
                cache[key] = self.outputs(top, i, tau)
            return cache[key]

        agents = [
            AgentModel(
                A=self.Phi,
                B=lambda tau, i=i: self.B(i, tau),
                H=lambda j, tau, i=i: blocks(i, tau)[j],
                Q=lambda tau, i=i: output_weight(self.cfg.a, len(top.d_minus(i, tau)) - 1),
                R=self.R,
            )
            for i in range(self.N)
        ]
        return Network(top, agents, meta={"kind": "constellation"}, rebuild=self.network)

    def relative(self, elements: np.ndarray, k: int) -> np.ndarray:
        return relative_elements(elements, self.nominal(k), self.cfg.a, self.cfg.inclination)

    def tracking(self, dx: np.ndarray, k: int) -> dict:
        """Fleet tracking metrics for relative states ``dx`` at step ``k``."""
        cfg = self.cfg
        Hr = relative_output(cfg.inclination)
        Hin = inertial_output(cfg.a)
        rel_norms = []
        weighted = 0.0
        for i in range(self.N):
            nb = [j for j in self.topology.d_minus(i, k) if j != i]
            zr = np.concatenate([Hr @ (dx[i] - dx[j]) for j in nb]) if nb else np.zeros(0)
            zi = Hin @ dx[i]
            if nb:
                rel_norms.append(float(np.linalg.norm(zr)))
            z = np.concatenate([zr, zi])
            weighted += float(z @ output_weight(cfg.a, len(nb)) @ z)
        return {
            "z_rel_mean": float(np.mean(rel_norms)) if rel_norms else 0.0,
            "tracking_norm": float(np.sqrt(weighted)),
        }


def initial_fleet(cfg: ConstellationConfig, rng: np.random.Generator) -> np.ndarray:
    """Perturbed initial mean elements around a zero-anchor nominal pattern."""
    pat = cfg.pattern
    e = pat.nominal((0.0, 0.0), 0.0)
    N = cfg.total
    e[:, A] += rng.uniform(-cfg.perturb_a, cfg.perturb_a, N)
    e[:, U] += rng.uniform(-cfg.perturb_along, cfg.perturb_along, N) / cfg.a
    e[:, EX] += rng.uniform(-cfg.perturb_e, cfg.perturb_e, N)
    e[:, EY] += rng.uniform(-cfg.perturb_e, cfg.perturb_e, N)
    e[:, I] += rng.uniform(-cfg.perturb_i, cfg.perturb_i, N)
    e[:, RAAN] += rng.uniform(-cfg.perturb_raan, cfg.perturb_raan, N)
    return e


class _FleetPlant:
    """Shared actuator and bookkeeping of both truth models."""

    def __init__(self, system: ConstellationSystem, mass: np.ndarray):
        self.system = system
        self.cfg = system.cfg
        self.mass = np.array(mass, dtype=float)
        self.mass0 = self.mass.copy()
        self.thrust = np.zeros((system.N, 3))
        self.burned = np.zeros(system.N)
        self.detail: list[dict] = []

    def actuate(self, feedback: list[np.ndarray]) -> np.ndarray:
        cmd = np.vstack(feedback) * self.mass[:, None]
        self.thrust = clamp_thrust(cmd, self.cfg.thrust_max)
        self.burned += -mass_rate(self.thrust, self.cfg.isp) * self.cfg.T_c
        return self.thrust

    def _metrics(self, k: int, dx: np.ndarray, a_err: np.ndarray) -> dict:
        tr = self.system.tracking(dx, k)
        si, ci = np.sin(self.cfg.inclination), np.cos(self.cfg.inclination)
        raan_err = dx[:, 5] / si
        u_err = dx[:, 1] - ci * raan_err
        row = {
            "k": k,
            "t": k * self.cfg.T_c,
            "mae_a": float(np.mean(np.abs(a_err))),
            "mae_e": float(np.mean(np.hypot(dx[:, 2], dx[:, 3]))),
            "mae_i": float(np.mean(np.abs(dx[:, 4]))),
            "mae_u": float(np.mean(np.abs(u_err))),
            "mae_raan": float(np.mean(np.abs(raan_err))),
            "z_rel_mean": tr["z_rel_mean"],
            "tracking_norm": tr["tracking_norm"],
            "max_thrust": float(np.abs(self.thrust).max()),
            "propellant": float(self.burned.sum()),
            "min_mass": float(self.mass.min()),
        }
        for s in self.cfg.detail_sats:
            self.detail.append({
                "k": k, "t": k * self.cfg.T_c, "sat": s, "a_err": float(a_err[s]),
                "ex": float(dx[s, 2]), "ey": float(dx[s, 3]), "i_err": float(dx[s, 4]),
                "u_err": float(u_err[s]), "raan_err": float(raan_err[s]), "mass": float(self.mass[s]),
                "thrust_t": float(self.thrust[s, 0]), "thrust_n": float(self.thrust[s, 1]),
                "thrust_w": float(self.thrust[s, 2]),
            })
        return row


class MeanElementPlant(_FleetPlant):
    """Mean elements under J2 secular drift and thrust."""

    def __init__(self, system: ConstellationSystem, elements: np.ndarray, mass: np.ndarray):
        super().__init__(system, mass)
        self.elements = np.array(elements, dtype=float)

    def states(self) -> list[np.ndarray]:
        return list(self._dx)

    def prepare(self, k: int) -> None:
        self._dx = self.system.relative(self.elements, k)

    def apply(self, k: int, feedback: list[np.ndarray]) -> None:
        thrust = self.actuate(feedback)
        self.elements, self.mass = truth_step(self.elements, self.mass, thrust, self.cfg.T_c, self.cfg.isp,
                                              self.cfg.j2)

    def metrics(self, k: int) -> dict:
        self.prepare(k)
        return self._metrics(k, self._dx, self.elements[:, A] - self.cfg.a)


class LinearModelPlant(_FleetPlant):
    """The controller's own LTV model used as the plant."""

    def __init__(self, system: ConstellationSystem, dx0: np.ndarray, mass: np.ndarray):
        super().__init__(system, mass)
        self.dx = np.array(dx0, dtype=float)

    def states(self) -> list[np.ndarray]:
        return list(self.dx)

    def apply(self, k: int, feedback: list[np.ndarray]) -> None:
        thrust = self.actuate(feedback)
        acc = thrust / self.mass[:, None]
        Phi = self.system.Phi
        self.dx = np.stack([Phi @ self.dx[s] + self.system.B(s, k) @ acc[s] for s in range(self.system.N)])
        self.mass = self.mass + mass_rate(thrust, self.cfg.isp) * self.cfg.T_c

    def metrics(self, k: int) -> dict:
        return self._metrics(k, self.dx, self.dx[:, 0] * self.cfg.a)


@dataclass
class ConstellationRun:
    config: ConstellationConfig
    anchor: tuple[float, float]
    metrics: list[dict]
    detail: list[dict]
    trace: list = field(default_factory=list)
    max_messages: int = 0
    peak_unit_bytes: int = 0
    mass0: np.ndarray | None = None
    mass_final: np.ndarray | None = None
    burned: np.ndarray | None = None
    thrust_limit_ok: bool = True


def simulate(cfg: ConstellationConfig, n_steps: int | None = None, progress=None) -> ConstellationRun:
    """Closed-loop station keeping with distributed time-varying synthesis."""
    rng = np.random.default_rng(cfg.seed)
    elements0 = initial_fleet(cfg, rng)
    anchor = compute_anchor(cfg.pattern, elements0)
    system = ConstellationSystem(cfg, anchor)
    mass0 = np.full(cfg.total, cfg.mass)
    if cfg.truth == "linear-model":
        plant = LinearModelPlant(system, system.relative(elements0, 0), mass0)
    else:
        plant = MeanElementPlant(system, elements0, mass0)
        plant.prepare(0)
    dcfg = DistributedConfig(cfg.horizon, cfg.d, psd_repair=cfg.psd_repair, selection=cfg.selection)
    # byte accounting is only kept for the traced sessions
    fast = replace(dcfg, track_memory=False)
    sched = cfg.schedule()
    run = ConstellationRun(cfg, anchor, [], [])
    base_net = system.network()
    counter = {"n": 0}

    def synthesize(k: int):
        record = counter["n"] < cfg.trace_sessions
        res = synthesize_window_tv(base_net, k, dcfg if record else fast, sched, system.feasible, record=record)
        if record:
            run.trace.extend(res.harness.trace)
        run.max_messages = max(run.max_messages, res.max_messages)
        run.peak_unit_bytes = max(run.peak_unit_bytes, res.peak_unit_bytes)
        counter["n"] += 1
        if progress is not None:
            progress(k)
        return res

    steps = cfg.n_steps if n_steps is None else n_steps
    res = run_closed_loop(plant, synthesize, lambda k: system.topology, steps, cfg.d)
    run.metrics = res.metrics
    run.detail = plant.detail
    run.mass0 = plant.mass0
    run.mass_final = plant.mass
    run.burned = plant.burned
    run.thrust_limit_ok = all(row["max_thrust"] <= cfg.thrust_max for row in run.metrics)
    return run


@dataclass(frozen=True)
class ScalingRow:
    total: int
    coupling_range: float
    max_messages: int
    peak_unit_bytes: int
    max_in_degree: int


def ring_coupling_range(total: int, a: float, reach: int) -> float:
    """Range between the ``reach``-th and next in-plane neighbor distance."""
    chord = lambda k: 2 * a * np.sin(np.pi * k / total)
    return float(0.5 * (chord(reach) + chord(reach + 1)))


def complexity_sweep(totals, base: ConstellationConfig, reach: int = 2, k: int = 0) -> list[ScalingRow]:
    """Per-unit communication and memory of one synthesis window for
    single-plane fleets of different sizes.

    Each satellite couples to its ``reach`` nearest in-plane neighbors on
    either side, so every unit sees the same local structure regardless
    of the fleet size.
    """
    rows = []
    for total in totals:
        cfg = replace(base, total=int(total), planes=1, phasing=0,
                      coupling_range=ring_coupling_range(int(total), base.a, reach))
        system = ConstellationSystem(cfg, (0.0, 0.0))
        dcfg = DistributedConfig(cfg.horizon, cfg.d, psd_repair=cfg.psd_repair, selection=cfg.selection)
        res = synthesize_window_tv(system.network(), k, dcfg, cfg.schedule(), system.feasible, record=True)
        rows.append(ScalingRow(int(total), cfg.coupling_range, res.max_messages, res.peak_unit_bytes,
                               system.topology.max_degrees(k)[0]))
    return rows
