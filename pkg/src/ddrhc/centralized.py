"""Centralized sparsity-constrained receding-horizon synthesis.

The backward sweep uses the full cost-to-go matrix at every step and
solves the one-step relaxation of the structured gain problem column by
column.  It is the reference the distributed protocol is compared with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .network import GlobalModel, Network, assemble_global


class SynthesisError(RuntimeError):
    """A local gain system was not positive definite."""


@dataclass
class GainSchedule:
    """Gains ``K[i, j](tau)`` for ``tau`` in ``[k, k + horizon - 1]``.

    ``blocks[tau][(i, j)]`` maps agent ``j``'s state to agent ``i``'s input.
    Only the first ``d`` steps are applied in closed loop.
    """

    k: int
    horizon: int
    d: int
    blocks: dict[int, dict[tuple[int, int], np.ndarray]] = field(default_factory=dict)

    def block(self, i: int, j: int, tau: int) -> np.ndarray:
        return self.blocks[tau][(i, j)]

    def global_gain(self, network: Network, tau: int) -> np.ndarray:
        G = assemble_global(network, tau)
        return self._dense(G, tau)

    def _dense(self, G: GlobalModel, tau: int) -> np.ndarray:
        K = np.zeros((G.u_offsets[-1], G.x_offsets[-1]))
        uo, xo = G.u_offsets, G.x_offsets
        for (i, j), blk in self.blocks[tau].items():
            K[uo[i]:uo[i + 1], xo[j]:xo[j + 1]] = blk
        return K

    def applied_steps(self) -> range:
        return range(self.k, self.k + self.d)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def cost_step(G: GlobalModel, K: np.ndarray, P_next: np.ndarray) -> np.ndarray:
    """One step of the closed-loop cost-to-go recursion for a given gain."""
    HQH = G.H.T @ G.Q @ G.H
    Acl = G.A - G.B @ K
    return _sym(HQH + K.T @ G.R @ K + Acl.T @ P_next @ Acl)


def terminal_cost(G: GlobalModel) -> np.ndarray:
    return _sym(G.H.T @ G.Q @ G.H)


def structured_gain(network: Network, G: GlobalModel, P_next: np.ndarray, tau: int) -> np.ndarray:
    """Solve the one-step relaxation column agent by column agent."""
    K = np.zeros((G.u_offsets[-1], G.x_offsets[-1]))
    xo, uo = G.x_offsets, G.u_offsets
    for i in range(network.n_agents):
        dp = network.topology.d_plus(i, tau)
        ucols = np.concatenate([np.arange(uo[p], uo[p + 1]) for p in dp])
        xs = slice(xo[i], xo[i + 1])
        Bc = G.B[:, ucols]
        S = Bc.T @ P_next @ Bc + G.R[np.ix_(ucols, ucols)]
        rhs = Bc.T @ P_next[:, xs] @ G.A[xs, xs]
        try:
            K[ucols, xs] = cho_solve(cho_factor(_sym(S)), rhs)
        except LinAlgError as exc:
            raise SynthesisError(f"gain system of agent {i} at step {tau} is not positive definite") from exc
    return K


def synthesize_window(network: Network, k: int, horizon: int, d: int | None = None
                      ) -> tuple[GainSchedule, list[np.ndarray]]:
    """Backward sweep over ``[k, k + horizon]``.

    Returns the gain schedule and the cost-to-go matrices ``P(k) ... P(k+horizon)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    d = horizon if d is None else d
    P = [None] * (horizon + 1)
    P[horizon] = terminal_cost(assemble_global(network, k + horizon))
    sched = GainSchedule(k, horizon, d)
    for s in range(horizon - 1, -1, -1):
        tau = k + s
        G = assemble_global(network, tau)
        K = structured_gain(network, G, P[s + 1], tau)
        P[s] = cost_step(G, K, P[s + 1])
        sched.blocks[tau] = _split(network, G, K, tau)
    return sched, P


def _split(network: Network, G: GlobalModel, K: np.ndarray, tau: int) -> dict[tuple[int, int], np.ndarray]:
    uo, xo = G.u_offsets, G.x_offsets
    out = {}
    for i in range(network.n_agents):
        for j in network.topology.d_minus(i, tau):
            out[(i, j)] = K[uo[i]:uo[i + 1], xo[j]:xo[j + 1]].copy()
    return out


def propagate_cost(network: Network, gains: list[np.ndarray], k: int) -> list[np.ndarray]:
    """Cost-to-go matrices for arbitrary dense gains ``gains[s] = K(k+s)``."""
    horizon = len(gains)
    P = [None] * (horizon + 1)
    P[horizon] = terminal_cost(assemble_global(network, k + horizon))
    for s in range(horizon - 1, -1, -1):
        P[s] = cost_step(assemble_global(network, k + s), gains[s], P[s + 1])
    return P


@dataclass
class Rollout:
    states: list[np.ndarray]
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]


def rollout(network: Network, gains: list[np.ndarray], x0: np.ndarray, k: int) -> Rollout:
    """Closed-loop trajectories under dense gains ``gains[s] = K(k+s)``.

    States and outputs include the final step; inputs stop one short.
    """
    x = np.asarray(x0, dtype=float)
    out = Rollout([x], [], [])
    for s, K in enumerate(gains):
        G = assemble_global(network, k + s)
        u = -K @ x
        out.inputs.append(u)
        out.outputs.append(G.H @ x)
        x = G.A @ x + G.B @ u
        out.states.append(x)
    out.outputs.append(assemble_global(network, k + len(gains)).H @ x)
    return out


def evaluate_cost(network: Network, gains: list[np.ndarray], x0: np.ndarray, k: int) -> float:
    """Finite-horizon cost of a closed-loop rollout from ``x0``."""
    tr = rollout(network, gains, x0, k)
    J = 0.0
    for s, z in enumerate(tr.outputs):
        J += z @ assemble_global(network, k + s).Q @ z
    for s, u in enumerate(tr.inputs):
        J += u @ assemble_global(network, k + s).R @ u
    return float(J)
