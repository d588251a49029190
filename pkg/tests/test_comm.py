from fractions import Fraction

import numpy as np
import pytest

from ddrhc.comm import (CommunicationError, Harness, Message, ScheduleConfig, check_tv_constraints,
                        feasibility_time, plan_schedule, run_closed_loop, write_trace_csv)
from ddrhc.distributed import DistributedConfig, synthesize_window_ti
from ddrhc.experiment import NetworkPlant
from ddrhc.network import ValidationError, build_topology, random_network
from ddrhc.suites import named_topology


def chain3():
    return build_topology(3, [(0, 1), (1, 2)])


def msg(r, a, b, payload=None):
    return Message(r, a, b, "test", 0, payload or {})


def test_empty_round_delivers_nothing():
    h = Harness(chain3(), 3)
    assert h.round_exchange([]) == {}
    assert h.round == 1


def test_middle_unit_reaches_both_neighbors():
    h = Harness(chain3(), 3)
    inbox = h.round_exchange([msg(0, 1, 0), msg(0, 1, 2)])
    assert [m.sender for m in inbox[0]] == [1] and [m.sender for m in inbox[2]] == [1]
    assert 1 not in inbox


def test_non_neighbors_cannot_talk():
    h = Harness(chain3(), 3)
    with pytest.raises(CommunicationError, match="0 -> 2"):
        h.round_exchange([msg(0, 0, 2)])


def test_messages_must_carry_the_current_round():
    h = Harness(chain3(), 3)
    with pytest.raises(CommunicationError, match="stamped round 1"):
        h.round_exchange([msg(1, 0, 1)])


def test_rounds_are_limited():
    h = Harness(chain3(), 1)
    h.round_exchange([])
    with pytest.raises(CommunicationError, match="exceeds"):
        h.round_exchange([])


def test_trace_counts_payload_bytes(tmp_path):
    h = Harness(chain3(), 2)
    h.round_exchange([msg(0, 0, 1, {"a": np.zeros((2, 3))})])
    assert h.trace[0].nbytes == 32 + 8 * 6
    assert h.max_messages_per_unit_round() == 1
    write_trace_csv(h.trace, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines() == ["round,from,to,kind,bytes", "0,0,1,test,80"]


def test_plan_for_published_parameters():
    p = plan_schedule(ScheduleConfig(10, 1, 100, 25), 7)
    assert p.window_start - p.start == 102
    assert not p.overlaps
    assert p.round_time(0) == 70 - 102 and p.round_time(102) == 70


def test_plan_detects_overlap():
    cfg = ScheduleConfig(1, 1, 10, 5)
    assert cfg.lead == 12
    assert plan_schedule(cfg, 0).overlaps
    with pytest.raises(ValidationError, match="overlap"):
        plan_schedule(ScheduleConfig(1, 1, 10, 5, allow_overlap=False), 0)


def test_tiny_transmission_period_never_overlaps():
    assert not plan_schedule(ScheduleConfig(1, Fraction(1, 10**9), 10, 10), 0).overlaps


def test_published_lifetime_bounds():
    rep = check_tv_constraints(ScheduleConfig(10, 1, 100, 25, dt_min=360, dt_max=1320))
    assert rep.horizon_upper == Fraction(1318, 11)
    assert rep.d_upper == Fraction(359, 11)
    assert rep.d_lower == Fraction(102, 10)
    assert rep.feasible


def test_long_horizon_is_rejected():
    rep = check_tv_constraints(ScheduleConfig(10, 1, 130, 25, dt_min=360, dt_max=1320))
    assert not rep.horizon_ok and rep.d_upper_ok
    assert not rep.feasible


def test_lifetimes_are_required():
    with pytest.raises(ValidationError, match="dt_min"):
        check_tv_constraints(ScheduleConfig(10, 1, 100, 25))


def test_bad_schedule_parameters():
    with pytest.raises(ValidationError):
        ScheduleConfig(10, 1, 10, 11)
    with pytest.raises(ValidationError):
        ScheduleConfig(0, 1, 10, 1)


def test_terminal_step_checked_at_session_start():
    cfg = ScheduleConfig(10, 1, 100, 25)
    k = 40
    assert feasibility_time(cfg, k, k + cfg.horizon) == plan_schedule(cfg, k).start
    assert feasibility_time(cfg, k, k) == k * 10 - 2


def test_floats_are_taken_exactly():
    cfg = ScheduleConfig(0.1, 0.01, 10, 5)
    assert cfg.T_c == Fraction(1, 10) and cfg.T_t == Fraction(1, 100)


def test_closed_loop_resynthesizes_every_d_steps():
    net = random_network(named_topology("ring", 4), seed=0)
    x0 = [np.ones(2)] * 4
    starts = []

    def synth(k):
        starts.append(k)
        return synthesize_window_ti(net, k, DistributedConfig(6, 6), record=False)

    res = run_closed_loop(NetworkPlant(net, x0), synth, lambda k: net.topology, 20, 6)
    assert starts == [0, 6, 12, 18]
    assert len(res.metrics) == 21


def test_closed_loop_model_plant_converges():
    net = random_network(named_topology("star", 5), seed=1)
    rng = np.random.default_rng(2)
    plant = NetworkPlant(net, [rng.standard_normal(2) for _ in range(5)])
    res = run_closed_loop(plant, lambda k: synthesize_window_ti(net, k, DistributedConfig(12, 4), record=False),
                          lambda k: net.topology, 60, 4)
    assert res.metrics[-1]["output_norm"] < 0.01 * res.metrics[0]["output_norm"]
