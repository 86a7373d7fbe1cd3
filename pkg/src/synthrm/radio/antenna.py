"""Transmitter antenna patterns: isotropic SISO and uniform planar arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit


class AntennaKind(str, Enum):
    SISO = "SISO"
    MIMO4x4 = "MIMO4x4"
    MIMO8x4 = "MIMO8x4"


ARRAY_SHAPE = {AntennaKind.SISO: (1, 1), AntennaKind.MIMO4x4: (4, 4), AntennaKind.MIMO8x4: (8, 4)}


@dataclass(frozen=True, eq=False)
class AntennaConfig:
    """``rows`` elements stack vertically, ``cols`` horizontally, both
    perpendicular to ``boresight``; spacing is in wavelengths."""

    kind: AntennaKind = AntennaKind.SISO
    boresight: tuple = (1.0, 0.0, 0.0)
    element_spacing: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", AntennaKind(self.kind))
        b = np.asarray(self.boresight, dtype=np.float64)
        if abs(np.linalg.norm(b) - 1.0) > 1e-9:
            raise ValueError("boresight must be a unit vector")
        object.__setattr__(self, "boresight", tuple(float(x) for x in b))

    @property
    def shape(self) -> tuple[int, int]:
        return ARRAY_SHAPE[self.kind]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """(horizontal column axis, vertical row axis), both unit and orthogonal to boresight."""
        b = np.asarray(self.boresight)
        a = np.cross(np.array([0.0, 0.0, 1.0]), b)
        if np.linalg.norm(a) < 1e-9:
            a = np.array([1.0, 0.0, 0.0]) - b[0] * b
        a /= np.linalg.norm(a)
        r = np.cross(b, a)
        return a, r / np.linalg.norm(r)

    def normalization(self) -> float:
        return array_power_mean(*self.shape, self.element_spacing)

    def packed(self) -> np.ndarray:
        """Flat float array consumed by the jitted gain routine."""
        a, r = self.axes()
        m, n = self.shape
        return np.concatenate([[m, n, self.element_spacing, self.normalization()], a, r])

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "boresight": list(self.boresight),
                "element_spacing": self.element_spacing}


def array_power_mean(rows: int, cols: int, spacing: float = 0.5) -> float:
    """Sphere average of ``|AF|^2`` for isotropic elements, uniform excitation.

    Closed form: sum over element pairs of ``sinc(k |r_i - r_j|)``.
    """
    p = np.arange(rows)
    q = np.arange(cols)
    dp = (p[:, None] - p[None, :]).ravel()
    dq = (q[:, None] - q[None, :]).ravel()
    dist = 2.0 * math.pi * spacing * np.sqrt(dp[:, None] ** 2 + dq[None, :] ** 2)
    return float(np.sum(np.where(dist == 0, 1.0, np.sin(dist) / np.where(dist == 0, 1.0, dist))))


@njit(cache=True)
def packed_gain(packed, d0, d1, d2):
    m = int(packed[0])
    n = int(packed[1])
    if m * n == 1:
        return 1.0
    k = 2.0 * math.pi * packed[2]
    ua = d0 * packed[4] + d1 * packed[5] + d2 * packed[6]
    ur = d0 * packed[7] + d1 * packed[8] + d2 * packed[9]
    sr = 0.0 + 0.0j
    for p in range(m):
        sr += np.exp(1j * k * p * ur)
    sa = 0.0 + 0.0j
    for q in range(n):
        sa += np.exp(1j * k * q * ua)
    return (abs(sr) ** 2) * (abs(sa) ** 2) / packed[3]


def antenna_gain(antenna: AntennaConfig, direction, frequency: float | None = None) -> float:
    """Linear power gain toward unit vector ``direction``.

    Element spacing is expressed in wavelengths, so the pattern does not depend
    on ``frequency``; the argument is accepted for interface symmetry.
    """
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be a unit vector")
    return float(packed_gain(antenna.packed(), d[0], d[1], d[2]))
