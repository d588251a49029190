"""Truth propagation for the closed-loop constellation runs."""

from __future__ import annotations

import numpy as np

from .linear import conv_matrix
from .orbits import A, EX, EY, G0, I, J2, RAAN, U, mean_motion, secular_rates, wrap


def clamp_thrust(thrust: np.ndarray, thrust_max: float) -> np.ndarray:
    return np.clip(thrust, -thrust_max, thrust_max)


def thrust_feedback(gains, deltas, mass: float, thrust_max: float) -> np.ndarray:
    """Clamped thrust ``m * (-sum_j K_j dx_j)`` of one satellite.

    ``gains`` and ``deltas`` are aligned sequences over its in-neighbors.
    """
    acc = -sum((K @ dx for K, dx in zip(gains, deltas)), np.zeros(3))
    return clamp_thrust(mass * acc, thrust_max)


def mass_rate(thrust: np.ndarray, isp: float) -> np.ndarray:
    """Propellant flow of thrusters firing along each axis independently."""
    return -np.abs(np.atleast_2d(thrust)).sum(axis=1) / (isp * G0)


def truth_step(elements: np.ndarray, mass: np.ndarray, thrust: np.ndarray, T_c: float, isp: float,
               j2: float = J2, drift: bool = True, thrust_at: np.ndarray | None = None):
    """Advance mean elements and masses by one control step.

    Secular J2 drift is evaluated at the current elements.  The thrust
    impulse is the one-step convolution response evaluated at
    ``thrust_at`` (the current elements unless given), mapped from the
    relative-element increments back to element increments.
    """
    e = np.array(elements, dtype=float, copy=True)
    ref = e if thrust_at is None else np.atleast_2d(thrust_at)
    acc = np.atleast_2d(thrust) / np.asarray(mass, dtype=float)[:, None]
    new = e.copy()
    if drift:
        m_dot, w_dot, r_dot = secular_rates(e[:, A], e[:, I], j2)
        new[:, U] += (mean_motion(e[:, A]) + m_dot + w_dot) * T_c
        new[:, RAAN] += r_dot * T_c
    fire = np.any(acc != 0, axis=1)
    if fire.any():
        r = ref[fire]
        a, inc = r[:, A], r[:, I]
        dx = np.einsum("sij,sj->si", conv_matrix(a, inc, r[:, U], T_c, j2), acc[fire])
        draan = dx[:, 5] / np.sin(inc)
        new[fire, A] += a * dx[:, 0]
        new[fire, U] += dx[:, 1] - np.cos(inc) * draan
        new[fire, EX] += dx[:, 2]
        new[fire, EY] += dx[:, 3]
        new[fire, I] += dx[:, 4]
        new[fire, RAAN] += draan
    new[:, U] = wrap(new[:, U])
    new[:, RAAN] = wrap(new[:, RAAN])
    new_mass = np.asarray(mass, dtype=float) + mass_rate(thrust, isp) * T_c
    return new, new_mass
