"""Mean orbital elements, J2 secular drift and the Walker nominal pattern.

Element arrays use the column order ``[a, u, ex, ey, i, raan]`` with ``u``
the mean argument of latitude.  Angles are in radians, lengths in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU = 3.986004418e14
R_EARTH = 6378137.0
J2 = 1.08262668e-3
G0 = 9.80665
# Line-of-sight geometry uses the mean spherical Earth.
R_EARTH_MEAN = 6371000.0
ATMOSPHERE_CLEARANCE = 80e3

A, U, EX, EY, I, RAAN = range(6)


def wrap(x):
    """Wrap angles to ``[-pi, pi)``."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def mean_motion(a):
    return np.sqrt(MU / np.asarray(a, dtype=float) ** 3)


def j2_factor(a, j2: float = J2):
    """``(3/4) n R^2 J2 / a^2``, the common scale of the secular rates."""
    a = np.asarray(a, dtype=float)
    return 0.75 * mean_motion(a) * R_EARTH ** 2 * j2 / a ** 2


def secular_rates(a, i, j2: float = J2):
    """J2 secular rates of mean anomaly (perturbation only), perigee and node.

    Returns ``(M_dot, omega_dot, raan_dot)`` for circular orbits.
    """
    k = j2_factor(a, j2)
    c2 = np.cos(i) ** 2
    return k * (3 * c2 - 1), k * (5 * c2 - 1), -2 * k * np.cos(i)


def latitude_rate(a, i, j2: float = J2):
    """Rate of the mean argument of latitude, ``n + M_dot + omega_dot``."""
    m_dot, w_dot, _ = secular_rates(a, i, j2)
    return mean_motion(a) + m_dot + w_dot


@dataclass(frozen=True)
class WalkerPattern:
    """Walker delta pattern ``i: T/P/F`` on one circular shell."""

    inclination: float
    total: int
    planes: int
    phasing: int
    a: float
    j2: float = J2

    def __post_init__(self):
        if self.total % self.planes:
            raise ValueError(f"{self.total} satellites do not split evenly into {self.planes} planes")
        if not 0 <= self.phasing < self.planes:
            raise ValueError(f"phasing must lie in [0, {self.planes - 1}]")

    @property
    def per_plane(self) -> int:
        return self.total // self.planes

    def slots(self) -> tuple[np.ndarray, np.ndarray]:
        """Offsets of argument of latitude and node for every satellite."""
        s = np.arange(self.total)
        plane = s * self.planes // self.total
        du = (s % self.per_plane) * 2 * np.pi / self.per_plane + plane * 2 * np.pi * self.phasing / self.total
        draan = plane * 2 * np.pi / self.planes
        return du, draan

    @property
    def rates(self) -> tuple[float, float]:
        _, _, raan_dot = secular_rates(self.a, self.inclination, self.j2)
        return float(latitude_rate(self.a, self.inclination, self.j2)), float(raan_dot)

    @property
    def period(self) -> float:
        return 2 * np.pi / float(mean_motion(self.a))

    def nominal(self, anchor: tuple[float, float], t: float) -> np.ndarray:
        """Nominal elements of the whole fleet at ``t`` seconds after the anchor epoch."""
        du, draan = self.slots()
        u_rate, raan_rate = self.rates
        out = np.zeros((self.total, 6))
        out[:, A] = self.a
        out[:, U] = wrap(anchor[0] + du + u_rate * t)
        out[:, I] = self.inclination
        out[:, RAAN] = wrap(anchor[1] + draan + raan_rate * t)
        return out

    def nominal_u(self, anchor: tuple[float, float], t) -> np.ndarray:
        du, _ = self.slots()
        u_rate, _ = self.rates
        return wrap(anchor[0] + du[None, :] + u_rate * np.atleast_1d(t)[:, None])


def compute_anchor(pattern: WalkerPattern, elements: np.ndarray) -> tuple[float, float]:
    """Anchor minimizing the squared wrapped residual to the slot pattern.

    The slot offsets are removed and the residuals averaged on the circle.
    """
    du, draan = pattern.slots()
    ru = wrap(elements[:, U] - du)
    rr = wrap(elements[:, RAAN] - draan)
    u0 = np.angle(np.mean(np.exp(1j * ru)))
    r0 = np.angle(np.mean(np.exp(1j * rr)))
    # refine on the circle: mean of residuals wrapped about the first guess
    u0 = float(wrap(u0 + np.mean(wrap(ru - u0))))
    r0 = float(wrap(r0 + np.mean(wrap(rr - r0))))
    return u0, r0


def relative_elements(elements: np.ndarray, nominal: np.ndarray, a_bar: float, i_bar: float) -> np.ndarray:
    """Quasi-nonsingular relative elements with respect to the nominal orbits."""
    e = np.atleast_2d(elements)
    nb = np.atleast_2d(nominal)
    du = wrap(e[:, U] - nb[:, U])
    draan = wrap(e[:, RAAN] - nb[:, RAAN])
    out = np.empty((e.shape[0], 6))
    out[:, 0] = e[:, A] / a_bar - 1
    out[:, 1] = du + draan * np.cos(i_bar)
    out[:, 2] = e[:, EX] - nb[:, EX]
    out[:, 3] = e[:, EY] - nb[:, EY]
    out[:, 4] = e[:, I] - nb[:, I]
    out[:, 5] = draan * np.sin(i_bar)
    return out


def positions(elements: np.ndarray) -> np.ndarray:
    """Inertial positions of circular orbits, shape ``(N, 3)``."""
    e = np.atleast_2d(elements)
    a, u, i, r = e[:, A], e[:, U], e[:, I], e[:, RAAN]
    cu, su, cr, sr, ci = np.cos(u), np.sin(u), np.cos(r), np.sin(r), np.cos(i)
    return a[:, None] * np.stack([cr * cu - sr * su * ci, sr * cu + cr * su * ci, su * np.sin(i)], axis=1)


def los_range(a: float, earth_radius: float = R_EARTH_MEAN, clearance: float = ATMOSPHERE_CLEARANCE) -> float:
    """Largest separation of two satellites at radius ``a`` whose link clears the atmosphere."""
    h = earth_radius + clearance
    if a <= h:
        raise ValueError("orbit radius is inside the atmosphere clearance sphere")
    return 2.0 * np.sqrt(a * a - h * h)
