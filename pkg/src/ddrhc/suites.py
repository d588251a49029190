"""Verification suites comparing the synthesis paths with reference computations."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .centralized import GainSchedule, evaluate_cost, propagate_cost, synthesize_window
from .comm import ScheduleConfig, check_tv_constraints
from .distributed import DistributedConfig, synthesize_window_ti
from .network import (Network, Topology, assemble_global, build_topology, chain_edges, random_network,
                      ring_edges, sparsity_mask, transitive_closure, tree_edges)
from .oracles import riccati_lqr


@dataclass
class SuiteResult:
    name: str
    passed: bool
    value: float
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _star_edges(n: int):
    return [(0, i) for i in range(1, n)]


def _complete_edges(n: int):
    return [(j, i) for j in range(n) for i in range(n) if i != j]


TOPOLOGIES: dict[str, Callable[[int], list]] = {
    "chain": chain_edges,
    "ring": ring_edges,
    "tree": tree_edges,
    "star": _star_edges,
    "complete": _complete_edges,
    "transitive-chain": lambda n: transitive_closure(n, chain_edges(n)),
    "transitive-tree": lambda n: transitive_closure(n, tree_edges(n)),
}

# Topologies on which every pair a unit needs is stored by one of its
# out-neighbors, so the distributed sweep reproduces the centralized one.
EXACT_TOPOLOGIES = (("transitive-chain", 5), ("star", 6), ("transitive-tree", 7), ("complete", 4))


def named_topology(name: str, n: int) -> Topology:
    try:
        edges = TOPOLOGIES[name](n)
    except KeyError:
        raise ValueError(f"unknown topology {name!r}; choose from {sorted(TOPOLOGIES)}") from None
    return build_topology(n, edges)


def rel_fro(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / den)


def max_gain_deviation(dist: GainSchedule, cent: GainSchedule) -> float:
    """Largest relative block deviation over the steps ``dist`` applies."""
    worst = 0.0
    for tau in dist.applied_steps():
        for key, ref in cent.blocks[tau].items():
            got = dist.blocks.get(tau, {}).get(key)
            if got is None:
                return float("inf")
            worst = max(worst, rel_fro(got, ref))
    return worst


def gain_deviation(network: Network, horizon: int, k: int = 0) -> float:
    cent, _ = synthesize_window(network, k, horizon)
    res = synthesize_window_ti(network, k, DistributedConfig(horizon, horizon), record=False)
    return max_gain_deviation(res.schedule, cent)


def exactness_suite(cases=EXACT_TOPOLOGIES, seeds=range(10), horizon: int = 15, tol: float = 1e-9) -> SuiteResult:
    worst, where = 0.0, ""
    for name, n in cases:
        top = named_topology(name, n)
        for seed in seeds:
            dev = gain_deviation(random_network(top, seed=seed), horizon)
            if dev >= worst:
                worst, where = dev, f"{name} N={n} seed={seed}"
    return SuiteResult("exactness", worst <= tol, worst,
                       f"max relative gain deviation {worst:.3e} (tol {tol:g}, worst at {where})")


def _sparse_random_gains(network: Network, horizon: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for s in range(horizon):
        mask = sparsity_mask(network, s)
        K = rng.standard_normal(mask.shape) * 0.3
        out.append(np.where(mask & (rng.random(mask.shape) < 0.7), K, 0.0))
    return out


def cost_identity_suite(seeds=range(100), tol: float = 1e-9) -> SuiteResult:
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng([seed, 11])
        n_agents = int(rng.integers(2, 7))
        horizon = int(rng.integers(1, 21))
        edges = [(j, i) for j in range(n_agents) for i in range(n_agents) if i != j and rng.random() < 0.35]
        net = random_network(build_topology(n_agents, edges), seed=seed)
        gains = _sparse_random_gains(net, horizon, rng)
        x0 = rng.standard_normal(sum(net.state_dims(0)))
        J = evaluate_cost(net, gains, x0, 0)
        P = propagate_cost(net, gains, 0)
        err = abs(J - x0 @ P[0] @ x0) / max(J, 1e-300)
        worst = max(worst, err)
    return SuiteResult("cost-identity", worst <= tol, worst, f"max relative cost mismatch {worst:.3e} (tol {tol:g})")


def lqr_deviation(network: Network, horizon: int) -> float:
    cent, _ = synthesize_window(network, 0, horizon)
    Gs = [assemble_global(network, t) for t in range(horizon + 1)]
    K, _ = riccati_lqr([G.A for G in Gs[:-1]], [G.B for G in Gs[:-1]],
                       [G.H.T @ G.Q @ G.H for G in Gs[:-1]], [G.R for G in Gs[:-1]],
                       Gs[-1].H.T @ Gs[-1].Q @ Gs[-1].H)
    return max(rel_fro(cent.global_gain(network, t), K[t]) for t in range(horizon))


def lqr_suite(seeds=range(20), n_agents: int = 4, horizon: int = 12, tol: float = 1e-10) -> SuiteResult:
    top = named_topology("complete", n_agents)
    worst = max(lqr_deviation(random_network(top, seed=s), horizon) for s in seeds)
    return SuiteResult("lqr", worst <= tol, worst, f"max relative deviation from Riccati gains {worst:.3e} (tol {tol:g})")


def scheduling_suite() -> SuiteResult:
    cfg = ScheduleConfig(10, 1, 100, 25, dt_min=360, dt_max=1320)
    rep = check_tv_constraints(cfg)
    expect_h, expect_d = Fraction(1318, 11), Fraction(359, 11)
    lower_ok = all(check_tv_constraints(ScheduleConfig(10, 1, H, 1, 360, 1320)).d_lower
                   == Fraction(1, 5) + Fraction(H, 10) for H in range(1, 121))
    ok = rep.horizon_upper == expect_h and rep.d_upper == expect_d and lower_ok and rep.feasible
    return SuiteResult("scheduling", ok, float(rep.horizon_upper),
                       f"H < {rep.horizon_upper} (~{float(rep.horizon_upper):.3f}), d < {rep.d_upper} "
                       f"(~{float(rep.d_upper):.3f}), d >= 1/5 + H/10, (100, 25) "
                       f"{'accepted' if rep.feasible else 'rejected'}")


def sparsity_violations(network: Network, schedule: GainSchedule) -> list[str]:
    out = []
    for tau, blocks in sorted(schedule.blocks.items()):
        for (i, j), blk in sorted(blocks.items()):
            if j not in network.topology.d_minus(i, tau) and np.any(blk != 0):
                out.append(f"K[{i},{j}] at step {tau}")
    return out


def sparsity_suite(seeds=range(5), horizon: int = 8, inject: bool = False) -> SuiteResult:
    found: list[str] = []
    for seed in seeds:
        net = random_network(named_topology("ring", 6), seed=seed)
        sched = synthesize_window_ti(net, 0, DistributedConfig(horizon, horizon), record=False).schedule
        if inject:
            m, n = net.input_dims(0)[0], net.state_dims(0)[3]
            sched.blocks[0][(0, 3)] = np.ones((m, n))
        found += sparsity_violations(net, sched)
    if found:
        return SuiteResult("sparsity", False, float(len(found)),
                           f"{len(found)} gain blocks outside the coupling pattern, first {found[0]}")
    return SuiteResult("sparsity", True, 0.0, "all gain blocks inside the coupling pattern")


SUITES = {
    "exactness": exactness_suite,
    "cost-identity": cost_identity_suite,
    "lqr": lqr_suite,
    "scheduling": scheduling_suite,
    "sparsity": sparsity_suite,
}
