"""Coupled linear time-varying agents and their coupling digraph.

Agent ``i`` evolves as ``x_i(k+1) = A_i(k) x_i(k) + B_i(k) u_i(k)`` and
produces ``z_i(k) = sum_{j in D-_i(k)} H_ij(k) x_j(k)``.  An edge ``(j, i)``
means the output of ``i`` depends on the state of ``j``.  Every vertex
carries an implicit self-loop.  Agents are indexed from 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import block_diag


class ValidationError(ValueError):
    """Raised when a topology or model is malformed."""


Edge = tuple[int, int]
InNeighborFn = Callable[[int], Sequence[Iterable[int]]]


@dataclass(frozen=True)
class NeighborhoodSets:
    """Neighborhood sets of one agent at one time step."""

    agent: int
    d_minus: tuple[int, ...]
    d_plus: tuple[int, ...]
    phi: frozenset[Edge]
    psi: frozenset[Edge]


def _pairs(s: Iterable[int]) -> frozenset[Edge]:
    s = tuple(s)
    return frozenset((p, q) for p in s for q in s)


class Topology:
    """Possibly time-varying coupling digraph.

    ``in_neighbors(k)`` returns, for every agent ``i``, the agents whose
    state enters the output of ``i`` at step ``k``.  Self-loops are added
    and duplicates removed, so callers may pass raw edge lists.
    """

    def __init__(self, n_agents: int, in_neighbors: InNeighborFn, static: bool = False):
        if n_agents < 1:
            raise ValidationError("a network needs at least one agent")
        self.n_agents = int(n_agents)
        self._source = in_neighbors
        self.static = static
        self._minus = lru_cache(maxsize=4096)(self._build_minus)
        self._plus = lru_cache(maxsize=4096)(self._build_plus)

    @classmethod
    def from_edges(cls, n_agents: int, edges: Iterable[Sequence[int]]) -> "Topology":
        lists = _edges_to_lists(n_agents, edges)
        return cls(n_agents, lambda k: lists, static=True)

    @classmethod
    def from_timeline(cls, n_agents: int, timeline: Mapping[int, Iterable[Sequence[int]]]) -> "Topology":
        """Piecewise-constant topology; entry ``k`` holds from step ``k`` on."""
        if not timeline:
            raise ValidationError("empty topology timeline")
        starts = sorted(timeline)
        lists = {s: _edges_to_lists(n_agents, timeline[s]) for s in starts}

        def at(k: int):
            idx = np.searchsorted(starts, k, side="right") - 1
            return lists[starts[max(idx, 0)]]

        return cls(n_agents, at)

    def _build_minus(self, k: int) -> tuple[tuple[int, ...], ...]:
        raw = self._source(k)
        if len(raw) != self.n_agents:
            raise ValidationError(f"topology at step {k} lists {len(raw)} agents, expected {self.n_agents}")
        out = []
        for i, nbrs in enumerate(raw):
            s = {int(j) for j in nbrs}
            for j in s:
                if not 0 <= j < self.n_agents:
                    raise ValidationError(f"agent {i} at step {k}: neighbor {j} out of range")
            s.add(i)
            out.append(tuple(sorted(s)))
        return tuple(out)

    def _build_plus(self, k: int) -> tuple[tuple[int, ...], ...]:
        minus = self._minus(self._key(k))
        plus: list[list[int]] = [[] for _ in range(self.n_agents)]
        for i, nbrs in enumerate(minus):
            for j in nbrs:
                plus[j].append(i)
        return tuple(tuple(sorted(p)) for p in plus)

    def _key(self, k: int) -> int:
        return 0 if self.static else int(k)

    def d_minus(self, i: int, k: int = 0) -> tuple[int, ...]:
        return self._minus(self._key(k))[i]

    def d_plus(self, i: int, k: int = 0) -> tuple[int, ...]:
        return self._plus(self._key(k))[i]

    def phi(self, i: int, k: int = 0) -> frozenset[Edge]:
        return _pairs(self.d_plus(i, k))

    def psi(self, i: int, k: int = 0, k_next: int | None = None) -> frozenset[Edge]:
        """Pairs stored by the out-neighbors of ``i``.

        Out-neighbors are taken at ``k`` and their stored pairs at
        ``k_next`` (defaults to ``k``).
        """
        k_next = k if k_next is None else k_next
        out: set[Edge] = set()
        for j in self.d_plus(i, k):
            out |= self.phi(j, k_next)
        return frozenset(out)

    def neighborhoods(self, i: int, k: int = 0) -> NeighborhoodSets:
        return NeighborhoodSets(i, self.d_minus(i, k), self.d_plus(i, k), self.phi(i, k), self.psi(i, k))

    def edges(self, k: int = 0) -> frozenset[Edge]:
        return frozenset((j, i) for i, nb in enumerate(self._minus(self._key(k))) for j in nb if j != i)

    def is_connected(self, k: int = 0) -> bool:
        """Weak connectivity of the coupling digraph at ``k``."""
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w in self.d_minus(v, k) + self.d_plus(v, k):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n_agents

    def max_degrees(self, k: int = 0) -> tuple[int, int]:
        """Largest in- and out-neighborhood sizes, self included."""
        return (max(len(self.d_minus(i, k)) for i in range(self.n_agents)),
                max(len(self.d_plus(i, k)) for i in range(self.n_agents)))

    def restricted(self, keep: Callable[[int, int, int], bool]) -> "Topology":
        """Drop couplings ``j -> i`` at step ``k`` when ``keep(i, j, k)`` is false."""
        def lists(k: int):
            return [[j for j in self.d_minus(i, k) if j == i or keep(i, j, k)] for i in range(self.n_agents)]

        return Topology(self.n_agents, lists)


def _edges_to_lists(n_agents: int, edges: Iterable[Sequence[int]]) -> list[list[int]]:
    lists: list[set[int]] = [set() for _ in range(n_agents)]
    for e in edges:
        if len(e) != 2:
            raise ValidationError(f"edge {e!r} is not a pair")
        j, i = int(e[0]), int(e[1])
        for v in (i, j):
            if not 0 <= v < n_agents:
                raise ValidationError(f"edge ({j}, {i}): endpoint {v} out of range 0..{n_agents - 1}")
        lists[i].add(j)
    return [sorted(s) for s in lists]


def build_topology(n_agents: int, edges: Iterable[Sequence[int]]) -> Topology:
    return Topology.from_edges(n_agents, edges)


def chain_edges(n: int) -> list[Edge]:
    return [(i, i + 1) for i in range(n - 1)]


def ring_edges(n: int) -> list[Edge]:
    return [((i - 1) % n, i) for i in range(n)]


def tree_edges(n: int) -> list[Edge]:
    """Binary out-tree rooted at 0."""
    return [((i - 1) // 2, i) for i in range(1, n)]


def transitive_closure(n: int, edges: Iterable[Edge]) -> list[Edge]:
    reach = np.eye(n, dtype=bool)
    for j, i in edges:
        reach[j, i] = True
    for m in range(n):
        reach |= reach[:, [m]] & reach[[m], :]
    return [(j, i) for j in range(n) for i in range(n) if j != i and reach[j, i]]


def _as_fn(x):
    if callable(x):
        return x
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    return lambda tau: arr


class AgentModel:
    """Windowed model of one agent.

    Each of ``A``, ``B``, ``Q``, ``R`` is an array or a callable of the
    step index.  ``H`` maps neighbor ``j`` to an array, or is a callable
    ``H(j, tau)``.
    """

    def __init__(self, A, B, H, Q, R):
        self._A, self._B, self._Q, self._R = _as_fn(A), _as_fn(B), _as_fn(Q), _as_fn(R)
        if callable(H):
            self._H = H
        else:
            blocks = {int(j): np.atleast_2d(np.asarray(h, dtype=float)) for j, h in H.items()}
            self._H = lambda j, tau: blocks[j]

    def A(self, tau: int) -> np.ndarray:
        return self._A(tau)

    def B(self, tau: int) -> np.ndarray:
        return self._B(tau)

    def H(self, j: int, tau: int) -> np.ndarray:
        return self._H(j, tau)

    def Q(self, tau: int) -> np.ndarray:
        return self._Q(tau)

    def R(self, tau: int) -> np.ndarray:
        return self._R(tau)


@dataclass
class Network:
    topology: Topology
    agents: list[AgentModel]
    meta: dict = field(default_factory=dict)
    rebuild: Callable[[Topology], "Network"] | None = None

    def __post_init__(self):
        if len(self.agents) != self.topology.n_agents:
            raise ValidationError(f"{len(self.agents)} agent models for {self.topology.n_agents} agents")

    @property
    def n_agents(self) -> int:
        return self.topology.n_agents

    def restricted(self, topology: Topology) -> "Network":
        """The network over a sub-topology.

        Models whose outputs depend on the neighborhood supply ``rebuild``.
        """
        if self.rebuild is not None:
            return self.rebuild(topology)
        return replace(self, topology=topology)

    def state_dims(self, tau: int = 0) -> list[int]:
        return [a.A(tau).shape[0] for a in self.agents]

    def input_dims(self, tau: int = 0) -> list[int]:
        return [a.B(tau).shape[1] for a in self.agents]

    def validate(self, k: int, horizon: int) -> None:
        """Check block shapes, symmetry and definiteness over ``[k, k+horizon]``."""
        for tau in range(k, k + horizon + 1):
            for i, ag in enumerate(self.agents):
                A, B, Q, R = ag.A(tau), ag.B(tau), ag.Q(tau), ag.R(tau)
                n = A.shape[0]
                where = f"agent {i}, step {tau}"
                if A.shape != (n, n):
                    raise ValidationError(f"{where}: A has shape {A.shape}")
                if B.shape[0] != n:
                    raise ValidationError(f"{where}: B has {B.shape[0]} rows, A has {n}")
                o = Q.shape[0]
                if Q.shape != (o, o) or not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
                    raise ValidationError(f"{where}: Q is not square symmetric")
                if np.linalg.eigvalsh(Q).min() < -1e-10 * max(1.0, np.abs(Q).max()):
                    raise ValidationError(f"{where}: Q is not positive semidefinite")
                m = B.shape[1]
                if R.shape != (m, m):
                    raise ValidationError(f"{where}: R has shape {R.shape}, expected {(m, m)}")
                if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
                    raise ValidationError(f"{where}: R is not positive definite")
                for j in self.topology.d_minus(i, tau):
                    Hij = ag.H(j, tau)
                    nj = self.agents[j].A(tau).shape[0]
                    if Hij.shape != (o, nj):
                        raise ValidationError(f"{where}: H[{i},{j}] has shape {Hij.shape}, expected {(o, nj)}")


@dataclass
class GlobalModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x_offsets: np.ndarray
    u_offsets: np.ndarray


def _offsets(sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


def assemble_global(network: Network, tau: int) -> GlobalModel:
    """Stack agent models into block-diagonal A, B, Q, R and the coupled H."""
    ag = network.agents
    xo = _offsets(network.state_dims(tau))
    uo = _offsets(network.input_dims(tau))
    Qs = [a.Q(tau) for a in ag]
    zo = _offsets([q.shape[0] for q in Qs])
    H = np.zeros((zo[-1], xo[-1]))
    for i, a in enumerate(ag):
        for j in network.topology.d_minus(i, tau):
            H[zo[i]:zo[i + 1], xo[j]:xo[j + 1]] = a.H(j, tau)
    return GlobalModel(
        A=block_diag(*[a.A(tau) for a in ag]),
        B=block_diag(*[a.B(tau) for a in ag]),
        H=H,
        Q=block_diag(*Qs),
        R=block_diag(*[a.R(tau) for a in ag]),
        x_offsets=xo,
        u_offsets=uo,
    )


def sparsity_mask(network: Network, tau: int) -> np.ndarray:
    """Boolean mask of admissible gain entries: block (i, j) iff j in D-_i."""
    xo = _offsets(network.state_dims(tau))
    uo = _offsets(network.input_dims(tau))
    mask = np.zeros((uo[-1], xo[-1]), dtype=bool)
    for i in range(network.n_agents):
        for j in network.topology.d_minus(i, tau):
            mask[uo[i]:uo[i + 1], xo[j]:xo[j + 1]] = True
    return mask


def _random_spd(rng: np.random.Generator, k: int, floor: float) -> np.ndarray:
    X = rng.standard_normal((k, k))
    return X @ X.T / k + floor * np.eye(k)


def random_network(topology: Topology, seed: int = 0, n: int = 2, m: int = 1, o: int = 2,
                   time_varying: bool = True, spectral_radius: float = 1.05) -> Network:
    """Random LTV network for testing; every block is reproducible from ``seed``.

    Blocks are drawn lazily per (agent, step) from a child generator, so
    the model is independent of evaluation order.
    """
    N = topology.n_agents

    def rng_for(*key: int) -> np.random.Generator:
        return np.random.default_rng([seed, *key])

    @lru_cache(maxsize=None)
    def draw(i: int, tau: int):
        t = tau if time_varying else 0
        g = rng_for(i, t)
        A = g.standard_normal((n, n))
        A *= spectral_radius / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
        B = g.standard_normal((n, m))
        Q = _random_spd(g, o, 0.1)
        R = _random_spd(g, m, 0.5)
        return A, B, Q, R

    @lru_cache(maxsize=None)
    def h_block(i: int, j: int, tau: int):
        t = tau if time_varying else 0
        return rng_for(i, j + N, t, 7).standard_normal((o, n))

    agents = [
        AgentModel(
            A=lambda tau, i=i: draw(i, tau)[0],
            B=lambda tau, i=i: draw(i, tau)[1],
            H=lambda j, tau, i=i: h_block(i, j, tau),
            Q=lambda tau, i=i: draw(i, tau)[2],
            R=lambda tau, i=i: draw(i, tau)[3],
        )
        for i in range(N)
    ]
    return Network(topology, agents, meta={"kind": "random", "seed": seed})


def network_from_config(cfg: Mapping) -> Network:
    """Build a network from a parsed JSON mapping.

    ``{"agents": N, "edges": [[j, i], ...], "model": {...}}`` where the
    model is either ``{"kind": "random", "seed": 0, "n": 2, "m": 1, "o": 2}``
    or ``{"kind": "explicit", "agents": [{"A":..., "B":..., "Q":..., "R":...,
    "H": {"j": ...}}, ...]}``.
    """
    if "agents" not in cfg or "edges" not in cfg:
        raise ValidationError("network config needs 'agents' and 'edges'")
    top = build_topology(int(cfg["agents"]), cfg["edges"])
    model = dict(cfg.get("model", {"kind": "random"}))
    kind = model.pop("kind", "random")
    if kind == "random":
        return random_network(top, **model)
    if kind == "explicit":
        specs = model["agents"]
        if len(specs) != top.n_agents:
            raise ValidationError(f"{len(specs)} explicit agent models for {top.n_agents} agents")
        agents = [AgentModel(s["A"], s["B"], {int(j): h for j, h in s["H"].items()}, s["Q"], s["R"]) for s in specs]
        net = Network(top, agents)
        net.validate(0, 0)
        return net
    raise ValidationError(f"unknown model kind {kind!r}")


def load_network(path: str | Path) -> Network:
    return network_from_config(json.loads(Path(path).read_text()))
