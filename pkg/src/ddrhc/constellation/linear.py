"""Discrete relative-element model, tracking outputs and weights."""

from __future__ import annotations

import numpy as np

from functools import lru_cache

from .orbits import J2, j2_factor, mean_motion


def _terms(a, i, T_c: float, j2: float):
    n = mean_motion(a)
    K = j2_factor(a, j2)
    c2 = np.cos(i) ** 2
    lam = 1.5 * n + 3.5 * K * (3 * c2 - 1)
    W = n + K * (8 * c2 - 2)
    C = K * (5 * c2 - 1) / W
    return n, K, lam, W, C


def stm(a: float, i: float, T_c: float, j2: float = J2) -> np.ndarray:
    """State transition matrix of the relative elements over one step."""
    n, K, lam, W, C = _terms(a, i, T_c, j2)
    dw = K * (5 * np.cos(i) ** 2 - 1) * T_c
    s2 = np.sin(2 * i)
    Phi = np.eye(6)
    Phi[1, 0] = -lam * T_c
    Phi[1, 4] = -4 * K * T_c * s2
    Phi[2:4, 2:4] = [[np.cos(dw), -np.sin(dw)], [np.sin(dw), np.cos(dw)]]
    Phi[5, 0] = 3.5 * K * T_c * s2
    Phi[5, 4] = 2 * K * T_c * np.sin(i) ** 2
    return Phi


def conv_matrix(a, i, u_k, T_c: float, j2: float = J2) -> np.ndarray:
    """Map from a constant acceleration (along-track, in-plane normal, cross-track)
    held over one step to the change of the relative elements.

    Array arguments broadcast; the result then has shape ``(..., 6, 3)``.
    """
    n, K, lam, W, C = _terms(a, i, T_c, j2)
    na = n * a
    du = W * T_c
    u1 = u_k + du
    s2, si2 = np.sin(2 * i), np.sin(i) ** 2
    c0, c1, s0, s1 = np.cos(u_k), np.cos(u1), np.sin(u_k), np.sin(u1)
    cc, sc = np.cos(u_k + C * du), np.sin(u_k + C * du)
    p23 = 4 * K * s2 / (na * W ** 2) * (c1 - c0 + s0 * du)
    p32 = (c1 - cc) / (na * (1 - C) * W)
    p42 = (s1 - sc) / (na * (1 - C) * W)
    p53 = (s1 - s0) / (na * W)
    p63 = -(W + 2 * K * si2) / (na * W ** 2) * (c1 - c0) - 2 * K * si2 * s0 * du / (na * W ** 2)
    zero = np.zeros(np.broadcast(na, u_k).shape)
    rows = [
        [2 * du / (na * W) + zero, zero, zero],
        [-lam * du ** 2 / (na * W ** 2) + zero, 2 * du / (na * W) + zero, p23 + zero],
        [2 * p42, p32, zero],
        [-2 * p32, p42, zero],
        [zero, zero, p53 + zero],
        [3.5 * K * du ** 2 * s2 / (na * W ** 2) + zero, zero, p63 + zero],
    ]
    return np.moveaxis(np.array(rows, dtype=float), (0, 1), (-2, -1))


def inertial_output(a: float) -> np.ndarray:
    """Rows picking ``a * da``, ``dex``, ``dey`` and ``di``."""
    H = np.zeros((4, 6))
    H[0, 0] = a
    H[1, 2] = H[2, 3] = H[3, 4] = 1.0
    return H


def relative_output(i: float) -> np.ndarray:
    """Rows recovering the argument-of-latitude and node offsets."""
    return np.array([[0, 1, 0, 0, 0, -1 / np.tan(i)], [0, 0, 0, 0, 0, 1 / np.sin(i)]], dtype=float)


@lru_cache(maxsize=64)
def _slot_blocks(a: float, i: float, k: int) -> tuple[np.ndarray, ...]:
    Hr = relative_output(i)
    self_blk = np.vstack([np.tile(Hr, (k, 1)), inertial_output(a)])
    slots = []
    for slot in range(k):
        blk = np.zeros((2 * k + 4, 6))
        blk[2 * slot:2 * slot + 2] = -Hr
        slots.append(blk)
    for b in (self_blk, *slots):
        b.flags.writeable = False
    return (self_blk, *slots)


def output_blocks(a: float, i: float, neighbors: list[int], self_index: int) -> dict[int, np.ndarray]:
    """Output blocks of one satellite coupled to ``neighbors`` (in slot order)."""
    blks = _slot_blocks(a, i, len(neighbors))
    out = {self_index: blks[0]}
    for slot, j in enumerate(neighbors):
        out[j] = blks[slot + 1]
    return out


@lru_cache(maxsize=64)
def output_weight(a: float, n_neighbors: int, q_rel: float = 1e8, q_a: float | None = None,
                  q_e: float = (1 / 0.5e-2) ** 2, q_i: float = 1e2 ** 2) -> np.ndarray:
    q_a = 1 / (a * 1e-4) ** 2 if q_a is None else q_a
    Q = np.diag(np.concatenate([np.full(2 * n_neighbors, q_rel), [q_a, q_e, q_e, q_i]]))
    Q.flags.writeable = False
    return Q


def input_weight(thrust_max: float) -> np.ndarray:
    return np.eye(3) / thrust_max ** 2
