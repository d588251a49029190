"""Distributed receding-horizon gain synthesis.

Each agent runs a :class:`Unit` that owns the gain columns ``K[p, i]`` for
its out-neighbors ``p`` and the cost-to-go blocks ``P[p, q]`` for pairs of
out-neighbors.  Units exchange data only through a :class:`~ddrhc.comm.Harness`
in ``H + 2`` rounds:

* round 0: output rows ``Q^1/2 H`` at the terminal step;
* rounds 1..H: one backward step each (own model data, relays of
  out-neighbor data, fresh gains and stored blocks);
* round H+1: applied gains to the agents that use them.

Blocks a unit needs but none of its out-neighbors store are treated as
zero, and each stored block carries the count of such omissions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.linalg.lapack import dpotrf, dpotrs

from .centralized import GainSchedule, SynthesisError
from .comm import CommunicationError, Harness, Message, ScheduleConfig, feasibility_time, payload_entries
from .network import Network, Topology

Pair = tuple[int, int]
Blocks = dict[Pair, np.ndarray]
Losses = dict[Pair, int]

SELECTION_RULES = ("min_loss_mean", "first")


@dataclass(frozen=True)
class DistributedConfig:
    horizon: int
    d: int
    psd_repair: bool = True
    selection: str = "min_loss_mean"
    psd_rtol: float = 1e-10
    prune: bool = False
    track_memory: bool = True

    def __post_init__(self):
        if self.horizon < 1 or not 1 <= self.d <= self.horizon:
            raise ValueError(f"need horizon >= 1 and 1 <= d <= horizon, got {self.horizon}, {self.d}")
        if self.selection not in SELECTION_RULES:
            raise ValueError(f"unknown selection rule {self.selection!r}")


def _cholesky(S: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor, or None when ``S`` is not positive definite.

    Calls LAPACK directly; the high-level wrappers cost more than the
    factorization itself at these block sizes.
    """
    c, info = dpotrf(S, lower=1, clean=0)
    return c if info == 0 else None


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    d = np.diagonal(M)
    if np.count_nonzero(M) == np.count_nonzero(d):
        return np.diag(np.sqrt(np.clip(d, 0.0, None)))
    w, V = eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def psd_repair(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Lift negative eigenvalues to the smallest positive one.

    Eigenvalues within ``rtol`` of zero (relative to the largest diagonal
    entry) count as zero, so a positive semidefinite input comes back
    unchanged.  With no positive eigenvalue the negatives are set to zero.
    """
    S = 0.5 * (M + M.T)
    if S.size == 0:
        return S
    scale = max(np.abs(np.diagonal(S)).max(), np.finfo(float).tiny)
    if _cholesky(S + (rtol * scale) * np.eye(S.shape[0])) is not None:
        return S
    w, V = np.linalg.eigh(S)
    if w.min() >= -rtol * scale:
        return S
    pos = w[w > rtol * scale]
    floor = pos.min() if pos.size else 0.0
    w = np.where(w < -rtol * scale, floor, w)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def select_block(candidates: Sequence[tuple[np.ndarray, int]], rule: str = "min_loss_mean"):
    """Combine candidate copies of one block.

    ``candidates`` holds ``(block, loss)`` in source order.  Returns the
    combined block and its loss, or ``(None, None)`` when there is none.
    """
    if not candidates:
        return None, None
    if rule == "first" or len(candidates) == 1:
        return candidates[0]
    best = min(loss for _, loss in candidates)
    chosen = [b for b, loss in candidates if loss == best]
    if len(chosen) == 1:
        return chosen[0], best
    return sum(chosen[1:], chosen[0].copy()) / len(chosen), best


def empirical_loss(topology: Topology, i: int, p: int, q: int, tau: int) -> int:
    """Pairs missing from the propagation of ``P[p, q](tau+1)`` at unit ``i``."""
    need = {(r, s) for r in topology.d_plus(p, tau + 1) for s in topology.d_plus(q, tau + 1)}
    return len(need - topology.psi(i, tau, tau + 1))


def terminal_blocks(agents: Sequence[int], col_qh: Mapping[int, Mapping[int, np.ndarray]]) -> tuple[Blocks, Losses]:
    """Terminal blocks ``sum_r H[r,p]' Q_r H[r,q]``.

    ``col_qh[p][r]`` is ``Q_r^1/2 H[r, p]`` for every ``r`` whose output
    depends on ``p``.
    """
    blocks: Blocks = {}
    for a, p in enumerate(agents):
        for q in agents[a:]:
            common = sorted(set(col_qh[p]) & set(col_qh[q]))
            blk = sum((col_qh[p][r].T @ col_qh[q][r] for r in common[1:]),
                      col_qh[p][common[0]].T @ col_qh[q][common[0]]) if common else None
            if blk is None:
                blk = np.zeros((col_qh[p][p].shape[1], col_qh[q][q].shape[1]))
            if p == q:
                blk = 0.5 * (blk + blk.T)
            blocks[(p, q)] = blk
            blocks[(q, p)] = blk.T
    return blocks, {pq: 0 for pq in blocks}


@dataclass
class NeighborData:
    """What unit ``i`` knows about out-neighbor ``p`` for one backward step."""

    qh: dict[int, np.ndarray]          # r -> Q_r^1/2 H[r, p](tau+1)
    br: dict[int, tuple[np.ndarray, np.ndarray]]  # r -> (B_r, R_r)(tau+1)
    gains: dict[int, np.ndarray]       # r -> K[r, p](tau+1)
    A: np.ndarray                      # A_p(tau+1)


def _layout(agents: Sequence[int], dims: Mapping[int, int]) -> tuple[dict[int, slice], int]:
    off, out = 0, {}
    for a in agents:
        out[a] = slice(off, off + dims[a])
        off += dims[a]
    return out, off


def _certified_psd(Pbig: np.ndarray, agents, nbr, xs, rtol: float) -> bool:
    """Cheap sufficient test that every sub-block the repair looks at is
    already positive semidefinite within its own tolerance."""
    if Pbig.size == 0:
        return True
    # each sub-block contains at least one diagonal block, so the smallest
    # per-block scale bounds every sub-block tolerance from below
    starts = [sl.start for sl in xs.values() if sl.stop > sl.start]
    eps = np.maximum.reduceat(np.abs(np.diagonal(Pbig)), starts).min() * rtol
    if eps <= 0.0:
        return False
    return _cholesky(Pbig + eps * np.eye(Pbig.shape[0])) is not None


def propagate_blocks(agents: Sequence[int], nbr: Mapping[int, NeighborData],
                     sources: Sequence[tuple[Blocks, Losses]], *, selection: str = "min_loss_mean",
                     repair: bool = True, rtol: float = 1e-10) -> tuple[Blocks, Losses]:
    """Cost-to-go blocks ``P[p, q](tau+1)`` for all ``p, q`` in ``agents``.

    ``sources`` are the stored ``P(tau+2)`` blocks of the out-neighbors in
    ascending order.  Missing pairs count as zero.
    """
    U = sorted(set().union(*(nbr[p].qh.keys() for p in agents)))
    n = {}
    m = {}
    o = {}
    Rr = {}
    Br = {}
    for p in agents:
        for r, (B, R) in nbr[p].br.items():
            n[r], m[r] = B.shape
            Br[r], Rr[r] = B, R
        for r, qh in nbr[p].qh.items():
            o[r] = qh.shape[0]
    for p in agents:
        n[p] = nbr[p].A.shape[0]
    xs, nx = _layout(U, n)
    us, nu = _layout(U, m)
    zs, nz = _layout(U, o)
    ps, npx = _layout(agents, n)

    available: dict[Pair, list] = {}
    for blocks, losses in sources:
        for pq, blk in blocks.items():
            available.setdefault(pq, []).append((blk, losses[pq]))

    Pbig = np.zeros((nx, nx))
    for a, r in enumerate(U):
        for s in U[a:]:
            blk, _ = select_block(available.get((r, s), ()), selection)
            if blk is None:
                continue
            Pbig[xs[r], xs[s]] = blk
            if r != s:
                Pbig[xs[s], xs[r]] = blk.T
            else:
                Pbig[xs[r], xs[r]] = 0.5 * (blk + blk.T)

    Hbig = np.zeros((nz, npx))
    Kbig = np.zeros((nu, npx))
    Rbig = np.zeros((nu, nu))
    W = np.zeros((npx, nx))
    for r in U:
        Rbig[us[r], us[r]] = Rr[r]
    for p in agents:
        d = nbr[p]
        for r, qh in d.qh.items():
            Hbig[zs[r], ps[p]] = qh
        for r, K in d.gains.items():
            Kbig[us[r], ps[p]] = K
            M = -Br[r] @ K
            if r == p:
                M = M + d.A
            W[ps[p], xs[r]] = M.T
    stage = Hbig.T @ Hbig + Kbig.T @ (Rbig @ Kbig)
    Ptot = stage + W @ Pbig @ W.T

    if repair and not _certified_psd(Pbig, agents, nbr, xs, rtol):
        for p in agents:
            idx = np.concatenate([np.arange(xs[r].start, xs[r].stop) for r in sorted(nbr[p].qh)])
            sub = Pbig[np.ix_(idx, idx)]
            fixed = psd_repair(sub, rtol)
            if fixed is not sub and not np.array_equal(fixed, sub):
                Wp = W[ps[p]][:, idx]
                Ptot[ps[p], ps[p]] = stage[ps[p], ps[p]] + Wp @ fixed @ Wp.T
    Ptot = 0.5 * (Ptot + Ptot.T)

    missing = {(r, s) for r in U for s in U if (r, s) not in available}
    blocks: Blocks = {}
    losses: Losses = {}
    for p in agents:
        for q in agents:
            blocks[(p, q)] = Ptot[ps[p], ps[q]].copy()
            losses[(p, q)] = sum(1 for r in nbr[p].qh for s in nbr[q].qh if (r, s) in missing) if missing else 0
    return blocks, losses


def local_gain(i: int, agents: Sequence[int], blocks: Blocks, br: Mapping[int, tuple[np.ndarray, np.ndarray]],
               A_i: np.ndarray, tau: int | None = None) -> dict[int, np.ndarray]:
    """Gain column ``K[p, i]`` for ``p`` in ``agents`` from ``S K = B' P A_i``."""
    ms = {p: br[p][0].shape[1] for p in agents}
    us, nu = _layout(agents, ms)
    S = np.zeros((nu, nu))
    rhs = np.zeros((nu, A_i.shape[1]))
    for p in agents:
        Bp = br[p][0]
        for q in agents:
            S[us[p], us[q]] = Bp.T @ blocks[(p, q)] @ br[q][0]
        S[us[p], us[p]] += br[p][1]
        rhs[us[p]] = Bp.T @ blocks[(p, i)] @ A_i
    c = _cholesky(0.5 * (S + S.T))
    if c is None:
        raise SynthesisError(f"local gain system of unit {i} at step {tau} is not positive definite")
    sol, _ = dpotrs(c, rhs, lower=1)
    return {p: sol[us[p]] for p in agents}


def _array_bytes(obj) -> int:
    return 8 * payload_entries(obj)


class Unit:
    """Protocol state of one agent for one synthesis window."""

    def __init__(self, i: int, network: Network, k: int, cfg: DistributedConfig):
        self.i = i
        self.model = network.agents[i]
        self.top = network.topology
        self.k, self.H, self.d = k, cfg.horizon, cfg.d
        self.cfg = cfg
        self.col_qh: dict[int, dict[int, np.ndarray]] = {}
        self.col_br: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]] = {}
        self.gains: dict[int, dict[int, np.ndarray]] = {}
        self.store: tuple[Blocks, Losses] | None = None
        self.store_tau: int | None = None
        self.rx: dict[int, dict] = {}
        self.gains_in: dict[int, dict[int, np.ndarray]] = {}
        self.loss_log: list[int] = []
        self.peak_bytes = 0
        self.record_sizes = True

    # messaging helpers

    def _msg(self, r: int, to: int, kind: str, tau: int, payload: dict) -> Message:
        return Message(r, self.i, to, kind, tau, payload)

    def _own_rows(self, tau: int) -> dict[int, np.ndarray]:
        sq = psd_sqrt(self.model.Q(tau))
        return {j: sq @ self.model.H(j, tau) for j in self.top.d_minus(self.i, tau)}

    def _absorb(self, inbox: Sequence[Message]) -> None:
        self.rx = {}
        for m in inbox:
            body = m.payload
            if "QH" in body:
                self.col_qh.setdefault(body["QH_tau"], {})[m.sender] = body["QH"]
            if "B" in body:
                self.col_br.setdefault(body["BR_tau"], {})[m.sender] = (body["B"], body["R"])
            if "Kapplied" in body:
                for tau, K in body["Kapplied"].items():
                    self.gains_in.setdefault(tau, {})[m.sender] = K
            self.rx[m.sender] = body

    def _track_memory(self) -> None:
        total = (_array_bytes(self.col_qh) + _array_bytes(self.col_br) + _array_bytes(self.gains)
                 + _array_bytes(self.gains_in) + _array_bytes(self.rx)
                 + (_array_bytes(self.store[0]) if self.store else 0))
        self.peak_bytes = max(self.peak_bytes, total)

    def _forget(self, tau: int) -> None:
        """Drop buffers older than step ``tau + 1``."""
        for buf in (self.col_qh, self.col_br):
            for t in [t for t in buf if t > tau + 1]:
                del buf[t]
        keep = set(range(self.k, self.k + self.d)) | {tau}
        for t in [t for t in self.gains if t not in keep]:
            del self.gains[t]

    # protocol

    def step(self, r: int, inbox: Sequence[Message]) -> list[Message]:
        k, H = self.k, self.H
        if r == 0:
            out = self._send_rows(r, k + H, "terminal_outputs")
        else:
            self._absorb(inbox)
            if r >= 2:
                self._iterate(k + H + 1 - r)
            out = self._send_backward(r, k + H - r) if r <= H else self._send_gains(r)
        if self.cfg.track_memory:
            self._track_memory()
        return out

    def finish(self, inbox: Sequence[Message]) -> None:
        self._absorb(inbox)
        if self.cfg.track_memory:
            self._track_memory()
        for tau in range(self.k, self.k + self.d):
            got = self.gains_in.setdefault(tau, {})
            got[self.i] = self.gains[tau][self.i]
            missing = set(self.top.d_minus(self.i, tau)) - set(got)
            if missing:
                raise CommunicationError(f"unit {self.i} lacks gains from {sorted(missing)} at step {tau}")

    def _send_rows(self, r: int, tau: int, kind: str) -> list[Message]:
        rows = self._own_rows(tau)
        self.col_qh.setdefault(tau, {})[self.i] = rows[self.i]
        return [self._msg(r, j, kind, tau, {"QH": rows[j], "QH_tau": tau})
                for j in self.top.d_minus(self.i, tau) if j != self.i]

    def _needed_pairs(self, receiver: int, tau: int) -> set[Pair]:
        out: set[Pair] = set()
        dp = self.top.d_plus(receiver, tau)
        for p in dp:
            for q in dp:
                out |= {(a, b) for a in self.top.d_plus(p, tau + 1) for b in self.top.d_plus(q, tau + 1)}
        return out

    def _send_backward(self, r: int, tau: int) -> list[Message]:
        """Payload of backward step ``tau`` (which is computed one round later)."""
        i, k, H = self.i, self.k, self.H
        B, R = self.model.B(tau), self.model.R(tau)
        self.col_br.setdefault(tau, {})[i] = (B, R)
        rows = self._own_rows(tau) if tau != k else None
        if rows is not None:
            self.col_qh.setdefault(tau, {})[i] = rows[i]
        common = {"B": B, "R": R, "BR_tau": tau, "relay_QH": dict(self.col_qh[tau + 1])}
        if tau != k + H - 1:
            common.update({
                "relay_BR": dict(self.col_br[tau + 1]),
                "A": self.model.A(tau + 1),
                "K": dict(self.gains[tau + 1]),
                "P": self.store,
            })
        base = payload_entries(common) if self.record_sizes else None
        out = []
        for j in self.top.d_minus(i, tau):
            if j == i:
                continue
            body = dict(common)
            size = base
            if rows is not None:
                body["QH"] = rows[j]
                body["QH_tau"] = tau
            if self.cfg.prune and "P" in body:
                need = self._needed_pairs(j, tau)
                blocks, losses = self.store
                keep = [pq for pq in blocks if pq in need]
                body["P"] = ({pq: blocks[pq] for pq in keep}, {pq: losses[pq] for pq in keep})
                size = None
            if size is not None and rows is not None:
                size += rows[j].size
            out.append(Message(r, i, j, "backward", tau, body, size))
        return out

    def _send_gains(self, r: int) -> list[Message]:
        by_dest: dict[int, dict[int, np.ndarray]] = {}
        first_tau: dict[int, int] = {}
        for tau in range(self.k, self.k + self.d):
            for p in self.top.d_plus(self.i, tau):
                if p == self.i:
                    continue
                by_dest.setdefault(p, {})[tau] = self.gains[tau][p]
                first_tau.setdefault(p, tau)
        return [self._msg(r, p, "gains", first_tau[p], {"Kapplied": Ks}) for p, Ks in sorted(by_dest.items())]

    def _neighbor_view(self, p: int, tau: int) -> NeighborData:
        if p == self.i:
            return NeighborData(
                qh=self.col_qh[tau + 1],
                br=self.col_br.get(tau + 1, {}),
                gains=self.gains.get(tau + 1, {}),
                A=self.model.A(tau + 1),
            )
        body = self.rx.get(p)
        if body is None:
            raise CommunicationError(f"unit {self.i} received nothing from out-neighbor {p} for step {tau}")
        return NeighborData(
            qh=body["relay_QH"],
            br=body.get("relay_BR", {}),
            gains=body.get("K", {}),
            A=body.get("A"),
        )

    def _iterate(self, tau: int) -> None:
        i = self.i
        dp = self.top.d_plus(i, tau)
        nbr = {p: self._neighbor_view(p, tau) for p in dp}
        if tau == self.k + self.H - 1:
            blocks, losses = terminal_blocks(dp, {p: nbr[p].qh for p in dp})
        else:
            sources = []
            for j in dp:
                src = self.store if j == i else self.rx[j].get("P")
                if src is not None:
                    sources.append(src)
            blocks, losses = propagate_blocks(dp, nbr, sources, selection=self.cfg.selection,
                                              repair=self.cfg.psd_repair, rtol=self.cfg.psd_rtol)
        self.loss_log.append(sum(losses.values()))
        self.store = (blocks, losses)
        self.store_tau = tau
        self.gains[tau] = local_gain(i, dp, blocks, self.col_br[tau], self.model.A(tau), tau)
        self._forget(tau)


@dataclass
class SynthesisResult:
    schedule: GainSchedule
    harness: Harness
    units: list[Unit] = field(repr=False, default_factory=list)

    @property
    def max_messages(self) -> int:
        return self.harness.max_messages_per_unit_round()

    @property
    def peak_unit_bytes(self) -> int:
        return max(u.peak_bytes for u in self.units)

    @property
    def total_loss(self) -> int:
        return sum(sum(u.loss_log) for u in self.units)


def _run_protocol(network: Network, k: int, cfg: DistributedConfig, record: bool) -> SynthesisResult:
    units = [Unit(i, network, k, cfg) for i in range(network.n_agents)]
    for u in units:
        u.record_sizes = record
    harness = Harness(network.topology, cfg.horizon + 2, record=record)
    inbox: dict[int, list[Message]] = {}
    for r in range(cfg.horizon + 2):
        out = []
        for u in units:
            out.extend(u.step(r, inbox.get(u.i, ())))
        inbox = harness.round_exchange(out)
    for u in units:
        u.finish(inbox.get(u.i, ()))
    sched = GainSchedule(k, cfg.horizon, cfg.d)
    for tau in range(k, k + cfg.d):
        sched.blocks[tau] = {(u.i, j): K for u in units for j, K in u.gains_in[tau].items()}
    return SynthesisResult(sched, harness, units)


def synthesize_window_ti(network: Network, k: int, cfg: DistributedConfig, record: bool = True) -> SynthesisResult:
    """Run the message-passing synthesis for the window starting at ``k``."""
    return _run_protocol(network, k, cfg, record)


def synthesize_window_tv(network: Network, k: int, cfg: DistributedConfig, schedule: ScheduleConfig,
                         feasible: Callable[[int, int, float], bool], record: bool = True) -> SynthesisResult:
    """Synthesis over a time-varying topology restricted to usable links.

    A coupling ``j -> i`` is kept at step ``tau`` only if ``feasible(i, j, t)``
    holds at the instant its data is exchanged.  The applied steps must
    keep every coupling, otherwise the closed loop would act on gains
    computed for a different network.
    """
    restricted = window_topology(network.topology, k, cfg.d, schedule, feasible)
    return _run_protocol(network.restricted(restricted), k, cfg, record)


def window_topology(base: Topology, k: int, d: int, schedule: ScheduleConfig,
                    feasible: Callable[[int, int, float], bool]) -> Topology:
    """Couplings of window ``k`` that can be exercised when their data moves.

    Raises :class:`CommunicationError` when a coupling of one of the ``d``
    applied steps is lost.
    """

    def keep(i: int, j: int, tau: int) -> bool:
        return feasible(i, j, float(feasibility_time(schedule, k, tau)))

    restricted = base.restricted(keep)
    for tau in range(k, k + d):
        for i in range(base.n_agents):
            if restricted.d_minus(i, tau) != base.d_minus(i, tau):
                dropped = sorted(set(base.d_minus(i, tau)) - set(restricted.d_minus(i, tau)))
                raise CommunicationError(
                    f"window {k}: couplings {dropped} -> {i} are unusable at applied step {tau}")
    return restricted
