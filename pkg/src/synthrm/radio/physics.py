"""Scalar propagation physics: Fresnel coefficients, knife-edge loss, noise."""
from __future__ import annotations

import math
from enum import Enum

import numpy as np
from numba import njit

from ..scenegen import Material

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23


class Polarization(str, Enum):
    TE = "TE"  # E perpendicular to the plane of incidence
    TM = "TM"  # E in the plane of incidence


def wavelength(frequency: float) -> float:
    return SPEED_OF_LIGHT / frequency


@njit(cache=True)
def fresnel_te_tm(eps, cos_i):
    """Air-to-medium reflection for complex relative permittivity ``eps``.

    TM uses reference vectors ``p = s x k`` for both waves, so at normal
    incidence ``r_TM = -r_TE`` and at grazing incidence both tend to -1.
    """
    c = min(max(cos_i, 0.0), 1.0)
    sin2 = 1.0 - c * c
    root = np.sqrt(eps - sin2)
    r_te = (c - root) / (c + root)
    r_tm = (eps * c - root) / (eps * c + root)
    return r_te, r_tm


def fresnel_reflection(material: Material, cos_theta_i: float, frequency: float, polarization) -> complex:
    """Fresnel reflection coefficient of an air/``material`` interface."""
    if not 0.0 <= cos_theta_i <= 1.0:
        raise ValueError("cos_theta_i must lie in [0, 1]")
    eps = material.complex_permittivity(frequency)
    r_te, r_tm = fresnel_te_tm(eps, float(cos_theta_i))
    return complex(r_te if Polarization(polarization) is Polarization.TE else r_tm)


@njit(cache=True)
def _knife_edge_db(nu):
    if nu <= -0.78:
        return 0.0
    return 6.9 + 20.0 * math.log10(math.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1)


def knife_edge_loss(nu: float) -> float:
    """ITU single knife-edge diffraction loss J(nu) in dB."""
    if not np.isfinite(nu):
        raise ValueError("nu must be finite")
    return float(_knife_edge_db(float(nu)))


def fresnel_kirchhoff_nu(clearance: float, d1: float, d2: float, wavelength_m: float) -> float:
    """Diffraction parameter for an obstruction ``clearance`` metres into the path."""
    return clearance * math.sqrt(2.0 * (d1 + d2) / (wavelength_m * d1 * d2))


def noise_power(bandwidth: float, temperature: float) -> float:
    """Thermal noise ``k_B T B`` in dBm."""
    if not (bandwidth > 0 and temperature > 0):
        raise ValueError("bandwidth and temperature must be positive")
    return 10.0 * math.log10(BOLTZMANN * temperature * bandwidth / 1e-3)


def slab_transmission(material: Material, frequency: float, thickness: float, cos_theta: float) -> float:
    """Amplitude factor for straight-through transmission of one wall slab.

    Two interfaces at normal-incidence power transmission ``1 - |r_TE(0)|^2``
    each, plus bulk attenuation over the chord ``thickness / |cos_theta|``.
    """
    eps = material.complex_permittivity(frequency)
    r0 = fresnel_te_tm(eps, 1.0)[0]
    k0 = 2.0 * math.pi / wavelength(frequency)
    alpha = k0 * abs(np.sqrt(eps).imag)
    chord = thickness / max(abs(cos_theta), 1e-6)
    return float((1.0 - abs(r0) ** 2) * math.exp(-alpha * chord))
