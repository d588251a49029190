"""Round-based message passing, synthesis scheduling and the closed loop.

Each synthesis session runs in discrete communication rounds.  A message
sent in round ``r`` is delivered to its receiver's inbox for round
``r + 1``.  Links are legal only between coupled agents at the step the
message refers to.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .network import Topology, ValidationError

HEADER_BYTES = 32
ENTRY_BYTES = 8


class CommunicationError(RuntimeError):
    """Illegal link, late round, or restricted step that must be complete."""


def payload_entries(obj) -> int:
    """Number of matrix entries in a nested payload."""
    if isinstance(obj, np.ndarray):
        return obj.size
    if isinstance(obj, dict):
        return sum(map(payload_entries, obj.values()))
    if isinstance(obj, (tuple, list)):
        return sum(map(payload_entries, obj))
    return 0


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    kind: str
    tau: int
    payload: dict
    entries: int | None = None

    @property
    def nbytes(self) -> int:
        n = payload_entries(self.payload) if self.entries is None else self.entries
        return HEADER_BYTES + ENTRY_BYTES * n


@dataclass
class TraceRow:
    round: int
    sender: int
    receiver: int
    kind: str
    nbytes: int


class Harness:
    """Delivers messages between rounds and records a trace."""

    def __init__(self, topology: Topology, n_rounds: int, record: bool = True):
        self.topology = topology
        self.n_rounds = n_rounds
        self.round = 0
        self.record = record
        self.trace: list[TraceRow] = []
        self.sent = defaultdict(int)  # (round, sender) -> count
        self.bytes_sent = defaultdict(int)

    def _legal(self, m: Message) -> bool:
        if m.sender == m.receiver:
            return False
        t = self.topology
        return m.receiver in t.d_minus(m.sender, m.tau) or m.receiver in t.d_plus(m.sender, m.tau)

    def round_exchange(self, outboxes: Iterable[Message]) -> dict[int, list[Message]]:
        """Validate and deliver one round of messages.

        Returns the inboxes for the next round, ordered by sender.
        """
        if self.round >= self.n_rounds:
            raise CommunicationError(f"round {self.round} exceeds the {self.n_rounds} allotted rounds")
        inbox: dict[int, list[Message]] = defaultdict(list)
        for m in outboxes:
            if m.round != self.round:
                raise CommunicationError(f"message from {m.sender} stamped round {m.round} during round {self.round}")
            if not self._legal(m):
                raise CommunicationError(
                    f"agent {m.sender} -> {m.receiver} is not a coupled link at step {m.tau}")
            inbox[m.receiver].append(m)
            self.sent[(m.round, m.sender)] += 1
            if self.record:
                nb = m.nbytes
                self.bytes_sent[(m.round, m.sender)] += nb
                self.trace.append(TraceRow(m.round, m.sender, m.receiver, m.kind, nb))
        self.round += 1
        for msgs in inbox.values():
            msgs.sort(key=lambda m: (m.sender, m.kind))
        return inbox

    def max_messages_per_unit_round(self) -> int:
        return max(self.sent.values(), default=0)

    def max_bytes_per_unit_round(self) -> int:
        """Largest per-unit, per-round payload; only tracked when recording."""
        return max(self.bytes_sent.values(), default=0)


def write_trace_csv(rows: Iterable[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "from", "to", "kind", "bytes"])
        for r in rows:
            w.writerow([r.round, r.sender, r.receiver, r.kind, r.nbytes])


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class ScheduleConfig:
    T_c: Fraction
    T_t: Fraction
    horizon: int
    d: int
    dt_min: Fraction | None = None
    dt_max: Fraction | None = None
    allow_overlap: bool = True

    def __post_init__(self):
        for name in ("T_c", "T_t", "dt_min", "dt_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _exact(v))
        if self.T_c <= 0 or self.T_t <= 0:
            raise ValidationError("control and transmission periods must be positive")
        if self.horizon < 1 or not 1 <= self.d <= self.horizon:
            raise ValidationError(f"need horizon >= 1 and 1 <= d <= horizon, got H={self.horizon}, d={self.d}")

    @property
    def lead(self) -> Fraction:
        """Time between the first transmission and the window start."""
        return (self.horizon + 2) * self.T_t

    @property
    def rounds(self) -> int:
        return self.horizon + 2


@dataclass(frozen=True)
class SchedulePlan:
    k: int
    start: Fraction
    window_start: Fraction
    rounds: int
    overlaps: bool

    def round_time(self, r: int) -> Fraction:
        return self.start + r * (self.window_start - self.start) / self.rounds


def plan_schedule(cfg: ScheduleConfig, k: int) -> SchedulePlan:
    overlaps = cfg.d * cfg.T_c < cfg.lead
    if overlaps and not cfg.allow_overlap:
        raise ValidationError(
            f"synthesis windows overlap: d*T_c = {cfg.d * cfg.T_c} < (H+2)*T_t = {cfg.lead}")
    start = k * cfg.T_c - cfg.lead
    return SchedulePlan(k, start, k * cfg.T_c, cfg.rounds, overlaps)


def feasibility_time(cfg: ScheduleConfig, k: int, tau: int) -> Fraction:
    """Instant at which links used for step ``tau`` of window ``k`` are exercised."""
    return k * cfg.T_c - (tau - k + 2) * cfg.T_t


@dataclass(frozen=True)
class ConstraintReport:
    horizon_upper: Fraction
    d_upper: Fraction
    d_lower: Fraction
    horizon_ok: bool
    d_upper_ok: bool
    d_lower_ok: bool

    @property
    def feasible(self) -> bool:
        return self.horizon_ok and self.d_upper_ok and self.d_lower_ok


def check_tv_constraints(cfg: ScheduleConfig) -> ConstraintReport:
    """Link-lifetime constraints for time-varying topologies.

    Every link used by a session must outlive the session, and links used
    for the applied steps must persist until they are applied:
    ``(H+2)T_t + H T_c < dt_max``, ``(d+1)T_t + d T_c < dt_min`` and
    ``d T_c >= (H+2) T_t`` (no overlapping sessions).
    """
    if cfg.dt_min is None or cfg.dt_max is None:
        raise ValidationError("link-lifetime bounds dt_min and dt_max are required")
    Tc, Tt, H, d = cfg.T_c, cfg.T_t, cfg.horizon, cfg.d
    h_up = (cfg.dt_max - 2 * Tt) / (Tt + Tc)
    d_up = (cfg.dt_min - Tt) / (Tt + Tc)
    d_lo = (H + 2) * Tt / Tc
    return ConstraintReport(
        horizon_upper=h_up,
        d_upper=d_up,
        d_lower=d_lo,
        horizon_ok=(H + 2) * Tt + H * Tc < cfg.dt_max,
        d_upper_ok=(d + 1) * Tt + d * Tc < cfg.dt_min,
        d_lower_ok=d >= d_lo,
    )


class ClosedLoopPlant(Protocol):
    """What the closed loop needs from a plant."""

    def states(self) -> list[np.ndarray]: ...

    def apply(self, k: int, feedback: list[np.ndarray]) -> None: ...

    def metrics(self, k: int) -> dict: ...


@dataclass
class ClosedLoopResult:
    metrics: list[dict] = field(default_factory=list)
    sessions: list = field(default_factory=list)


def feedback_from_schedule(schedule, topology: Topology, states: Sequence[np.ndarray], k: int) -> list[np.ndarray]:
    """Model-input feedback ``v_i = -sum_j K[i, j](k) x_j``."""
    out = []
    for i in range(topology.n_agents):
        acc = None
        for j in topology.d_minus(i, k):
            term = schedule.block(i, j, k) @ states[j]
            acc = term if acc is None else acc + term
        out.append(-acc)
    return out


def run_closed_loop(plant: ClosedLoopPlant, synthesize: Callable[[int], object], topology_at: Callable[[int], Topology],
                    n_steps: int, d: int, on_session: Callable[[int, object], None] | None = None,
                    keep_sessions: bool = False) -> ClosedLoopResult:
    """Re-synthesize every ``d`` steps and apply the first ``d`` gains.

    ``synthesize(k)`` returns an object with a ``schedule`` attribute (a
    gain schedule starting at ``k``).  Session results are only retained
    when ``keep_sessions`` is set.
    """
    res = ClosedLoopResult()
    session = None
    for k in range(n_steps):
        if k % d == 0:
            session = synthesize(k)
            if keep_sessions:
                res.sessions.append(session)
            if on_session is not None:
                on_session(k, session)
        res.metrics.append(plant.metrics(k))
        fb = feedback_from_schedule(session.schedule, topology_at(k), plant.states(), k)
        plant.apply(k, fb)
    res.metrics.append(plant.metrics(n_steps))
    return res
