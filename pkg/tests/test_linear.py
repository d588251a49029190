import math

import numpy as np
import pytest

from ddrhc.constellation.linear import (conv_matrix, inertial_output, input_weight, output_blocks, output_weight,
                                        relative_output, stm)

INC = math.radians(53.0)
A_BAR = 6921e3
N_BAR = math.sqrt(3.986004418e14 / A_BAR ** 3)


def test_zero_step_is_identity():
    assert np.allclose(stm(A_BAR, INC, 0.0), np.eye(6), atol=0)


def test_two_body_transition():
    Phi = stm(A_BAR, INC, 10.0, j2=0.0)
    ref = np.eye(6)
    ref[1, 0] = -1.5 * N_BAR * 10.0
    assert np.allclose(Phi, ref, rtol=1e-14, atol=0)


def test_node_drift_from_semi_major_axis():
    K = 0.75 * N_BAR * 6378137.0 ** 2 * 1.08262668e-3 / A_BAR ** 2
    Phi = stm(A_BAR, INC, 10.0)
    assert Phi[5, 0] == pytest.approx(3.5 * K * 10.0 * math.sin(2 * INC), rel=1e-12)
    assert Phi[5, 0] == pytest.approx(2.5439892558630807e-05, rel=1e-12)


def test_eccentricity_block_is_a_rotation():
    R = stm(A_BAR, INC, 10.0)[2:4, 2:4]
    assert np.allclose(R @ R.T, np.eye(2))


def test_input_map_structure():
    B = conv_matrix(A_BAR, INC, 0.7, 10.0)
    assert B.shape == (6, 3)
    zeros = [(0, 1), (0, 2), (2, 2), (3, 2), (4, 0), (4, 1), (5, 1)]
    assert all(B[r, c] == 0 for r, c in zeros)
    # along-track thrust raises the orbit
    assert B[0, 0] > 0


def test_cross_track_response_without_j2():
    B = conv_matrix(A_BAR, INC, 0.0, 10.0, j2=0.0)
    assert B[4, 2] * N_BAR * A_BAR * N_BAR == pytest.approx(math.sin(N_BAR * 10.0), rel=1e-12)


def test_input_map_is_linear_over_a_short_step():
    # a constant along-track acceleration changes a by 2 a_t T / n, to first order
    B = conv_matrix(A_BAR, INC, 0.3, 10.0, j2=0.0)
    assert B[0, 0] * A_BAR == pytest.approx(2 * 10.0 / N_BAR, rel=1e-12)


def test_input_map_broadcasts_over_latitudes():
    u = np.array([0.1, 1.2, -2.0])
    stacked = conv_matrix(A_BAR, INC, u, 10.0)
    assert stacked.shape == (3, 6, 3)
    for k, uk in enumerate(u):
        assert np.array_equal(stacked[k], conv_matrix(A_BAR, INC, float(uk), 10.0))


def test_uncoupled_satellite_sees_inertial_output_only():
    blocks = output_blocks(A_BAR, INC, [], 7)
    assert set(blocks) == {7}
    assert np.array_equal(blocks[7], inertial_output(A_BAR))
    assert blocks[7].shape[0] == 4
    assert np.array_equal(output_weight(A_BAR, 0), np.diag(np.diag(output_weight(A_BAR, 0))[-4:]))


def test_relative_output_blocks():
    blocks = output_blocks(A_BAR, INC, [3, 9], 5)
    Hr = relative_output(INC)
    assert blocks[5].shape == (8, 6)
    assert np.array_equal(blocks[5][:2], Hr) and np.array_equal(blocks[5][2:4], Hr)
    assert np.array_equal(blocks[3][:2], -Hr) and not blocks[3][2:].any()
    assert np.array_equal(blocks[9][2:4], -Hr) and not blocks[9][:2].any()
    assert output_weight(A_BAR, 2).shape == (8, 8)


def test_relative_output_recovers_angle_offsets():
    # node offset d and latitude offset v give dx1 = v + d cos i, dx5 = d sin i
    d, v = 2e-4, -3e-4
    dx = np.zeros(6)
    dx[1], dx[5] = v + d * math.cos(INC), d * math.sin(INC)
    assert relative_output(INC) @ dx == pytest.approx([v, d])


def test_nominal_fleet_has_no_relative_output():
    blocks = output_blocks(A_BAR, INC, [1], 0)
    z = blocks[0] @ np.zeros(6) + blocks[1] @ np.zeros(6)
    assert not z.any()


def test_input_weight_scales_with_thrust_limit():
    assert np.allclose(input_weight(0.068), np.eye(3) / 0.068 ** 2)


def test_cached_weights_are_read_only():
    with pytest.raises(ValueError):
        output_weight(A_BAR, 1)[0, 0] = 1.0
