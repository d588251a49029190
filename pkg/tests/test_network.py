import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddrhc.network import (AgentModel, Network, Topology, ValidationError, assemble_global, build_topology,
                           chain_edges, network_from_config, random_network, ring_edges, sparsity_mask,
                           transitive_closure)


def chain3():
    return build_topology(3, [(0, 1), (1, 2)])


def test_single_agent_has_only_its_self_loop():
    t = build_topology(1, [])
    assert t.edges() == set()
    assert t.d_minus(0) == t.d_plus(0) == (0,)


def test_self_loops_are_implicit():
    t = chain3()
    assert t.edges() == {(0, 1), (1, 2)}
    assert build_topology(3, [(0, 0), (0, 1), (1, 2)]).edges() == t.edges()
    assert all(i in t.d_minus(i) for i in range(3))


def test_endpoint_out_of_range_is_rejected():
    with pytest.raises(ValidationError, match="out of range"):
        build_topology(3, [(0, 3)])


def test_chain_neighborhoods():
    t = chain3()
    assert t.d_minus(1) == (0, 1)
    assert t.d_plus(1) == (1, 2)
    phi0 = set(itertools.product((0, 1), repeat=2))
    assert t.phi(0) == phi0
    assert t.psi(0) == phi0 | set(itertools.product((1, 2), repeat=2))


def _brute_psi(edges, n, i):
    plus = {j: {j} | {b for a, b in edges if a == j} for j in range(n)}
    return {(r, s) for p in plus[i] for r in plus[p] for s in plus[p]}


def test_ring_of_four_set_sizes():
    # each agent's output depends on its predecessor
    edges = [((i - 1) % 4, i) for i in range(4)]
    t = build_topology(4, edges)
    for i in range(4):
        assert len(t.phi(i)) == 4
        assert t.psi(i) == _brute_psi(edges, 4, i)
        assert len(t.psi(i)) == 7


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n * n))))
def test_neighborhood_invariants(case):
    n, edges = case
    t = build_topology(n, edges)
    for i in range(n):
        assert i in t.d_minus(i) and i in t.d_plus(i)
        assert t.phi(i) <= t.psi(i)
        for j in t.d_minus(i):
            assert i in t.d_plus(j)
        assert t.psi(i) == _brute_psi([e for e in edges if e[0] != e[1]], n, i)


def test_time_varying_timeline_and_psi_across_steps():
    t = Topology.from_timeline(3, {0: [(0, 1)], 1: [(1, 2)]})
    assert t.d_plus(0, 0) == (0, 1)
    assert t.d_plus(0, 1) == (0,)
    # psi joins the next step's phi sets of the current out-neighbors
    assert t.psi(0, 0, 1) == {(0, 0), (1, 1), (1, 2), (2, 1), (2, 2)}


def test_restriction_keeps_self_loops():
    t = build_topology(3, [(0, 1), (1, 2), (2, 0)])
    never = t.restricted(lambda i, j, k: False)
    assert all(never.d_minus(i) == (i,) for i in range(3))
    always = t.restricted(lambda i, j, k: True)
    assert always.edges() == t.edges()


def test_connectivity_diagnostic():
    assert build_topology(3, chain_edges(3)).is_connected()
    assert not build_topology(3, [(0, 1)]).is_connected()


def test_transitive_closure_of_chain():
    assert set(transitive_closure(4, chain_edges(4))) == {(j, i) for j in range(4) for i in range(4) if j < i}


def _mask_blocks(mask, n):
    # per-agent sizes are 2 states and 1 input in random_network defaults
    return mask[::1, ::2].astype(int)


def test_sparsity_mask_shapes():
    full = build_topology(3, [(j, i) for i in range(3) for j in range(3) if i != j])
    assert sparsity_mask(random_network(full), 0).all()
    diag = sparsity_mask(random_network(build_topology(3, [])), 0)
    assert (_mask_blocks(diag, 3) == np.eye(3, dtype=int)).all()
    chain = _mask_blocks(sparsity_mask(random_network(chain3()), 0), 3)
    assert (chain == np.array([[1, 0, 0], [1, 1, 0], [0, 1, 1]])).all()


def test_global_of_single_agent_is_local():
    net = random_network(build_topology(1, []), seed=4)
    G = assemble_global(net, 2)
    a = net.agents[0]
    for got, want in ((G.A, a.A(2)), (G.B, a.B(2)), (G.Q, a.Q(2)), (G.R, a.R(2)), (G.H, a.H(0, 2))):
        assert np.array_equal(got, want)


def _nonzero_blocks(G, n_agents):
    zo = np.arange(0, G.H.shape[0] + 1, G.H.shape[0] // n_agents)
    return sum(np.any(G.H[zo[i]:zo[i + 1], G.x_offsets[j]:G.x_offsets[j + 1]])
               for i in range(n_agents) for j in range(n_agents))


def test_global_output_block_structure():
    decoupled = assemble_global(random_network(build_topology(2, [])), 0)
    assert _nonzero_blocks(decoupled, 2) == 2
    assert _nonzero_blocks(assemble_global(random_network(chain3()), 0), 3) == 5


def test_random_network_is_reproducible_and_order_free():
    t = build_topology(4, ring_edges(4))
    a, b = random_network(t, seed=9), random_network(t, seed=9)
    # evaluate in opposite orders
    first = [a.agents[i].A(t_) for i in range(4) for t_ in range(3)]
    second = [b.agents[i].A(t_) for i in reversed(range(4)) for t_ in reversed(range(3))][::-1]
    assert all(np.array_equal(x, y) for x, y in zip(first, second))
    assert not np.array_equal(random_network(t, seed=10).agents[0].A(0), a.agents[0].A(0))


def test_validate_reports_bad_shapes():
    t = build_topology(2, [(0, 1)])
    good = AgentModel(np.eye(2), np.ones((2, 1)), {0: np.ones((1, 2))}, np.eye(1), np.eye(1))
    bad = AgentModel(np.eye(2), np.ones((2, 1)), {1: np.ones((1, 3)), 0: np.ones((1, 2))}, np.eye(1), np.eye(1))
    with pytest.raises(ValidationError, match=r"H\[1,1\]"):
        Network(t, [good, bad]).validate(0, 0)


def test_validate_rejects_indefinite_input_weight():
    t = build_topology(1, [])
    a = AgentModel(np.eye(1), np.ones((1, 1)), {0: np.ones((1, 1))}, np.eye(1), -np.eye(1))
    with pytest.raises(ValidationError, match="positive definite"):
        Network(t, [a]).validate(0, 0)


def test_explicit_network_config():
    cfg = {"agents": 2, "edges": [[0, 1]], "model": {"kind": "explicit", "agents": [
        {"A": [[1.0]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "H": {"0": [[1.0]]}},
        {"A": [[0.5]], "B": [[1.0]], "Q": [[2.0]], "R": [[1.0]], "H": {"0": [[-1.0]], "1": [[1.0]]}},
    ]}}
    net = network_from_config(cfg)
    assert net.agents[1].H(0, 5).tolist() == [[-1.0]]
    with pytest.raises(ValidationError, match="unknown model kind"):
        network_from_config({"agents": 1, "edges": [], "model": {"kind": "bogus"}})
