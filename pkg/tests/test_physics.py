import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from synthrm.radio import (
    AntennaConfig,
    Polarization,
    antenna_gain,
    array_power_mean,
    fresnel_kirchhoff_nu,
    fresnel_reflection,
    knife_edge_loss,
    noise_power,
    slab_transmission,
    wavelength,
)
from synthrm.scenegen import CONCRETE, VERY_DRY_GROUND, Material

F = 3.5e9
METAL = Material("metal", (1.0, 0.0), (1e9, 0.0), albedo=0.5, roughness=0.1)


def test_concrete_parameters():
    eps = CONCRETE.complex_permittivity(F)
    sigma = 0.0462 * 3.5 ** 0.7822
    assert eps.real == pytest.approx(5.24)
    assert eps.imag == pytest.approx(-sigma / (2 * math.pi * F * 8.8541878128e-12), rel=1e-6)


def test_concrete_normal_incidence():
    g = abs(fresnel_reflection(CONCRETE, 1.0, F, "TE"))
    assert g == pytest.approx(0.3946, abs=1e-3)
    # independent closed form (1 - sqrt(eps)) / (1 + sqrt(eps))
    root = cmath.sqrt(CONCRETE.complex_permittivity(F))
    assert g == pytest.approx(abs((1 - root) / (1 + root)), abs=1e-12)


@pytest.mark.parametrize("pol", ["TE", "TM"])
def test_conductor_limit(pol):
    for c in (0.05, 0.5, 1.0):
        assert abs(fresnel_reflection(METAL, c, F, pol)) > 0.999


@pytest.mark.parametrize("mat", [CONCRETE, VERY_DRY_GROUND, METAL])
@pytest.mark.parametrize("pol", list(Polarization))
def test_grazing_limit(mat, pol):
    assert abs(fresnel_reflection(mat, 0.0, F, pol)) == pytest.approx(1.0, abs=1e-9)


def test_normal_incidence_sign_convention():
    te = fresnel_reflection(CONCRETE, 1.0, F, "TE")
    tm = fresnel_reflection(CONCRETE, 1.0, F, "TM")
    assert tm == pytest.approx(-te, abs=1e-12)


def test_brewster_dip_tm_only():
    cs = np.linspace(0.01, 1.0, 400)
    tm = np.array([abs(fresnel_reflection(CONCRETE, c, F, "TM")) for c in cs])
    te = np.array([abs(fresnel_reflection(CONCRETE, c, F, "TE")) for c in cs])
    # minimum of |r_TM| near cos(theta_B) = 1/sqrt(1 + eps')
    assert cs[tm.argmin()] == pytest.approx(1 / math.sqrt(1 + 5.24), abs=0.02)
    assert np.all(np.diff(te) <= 1e-12)


@given(st.floats(0.0, 1.0), st.sampled_from(["TE", "TM"]))
def test_passive_reflection(c, pol):
    assert abs(fresnel_reflection(CONCRETE, c, F, pol)) <= 1.0 + 1e-12


def test_fresnel_domain():
    with pytest.raises(ValueError):
        fresnel_reflection(CONCRETE, 1.5, F, "TE")


def test_knife_edge_values():
    assert knife_edge_loss(-2.0) == 0.0
    assert knife_edge_loss(0.0) == pytest.approx(6.9 + 20 * math.log10(math.sqrt(1.01) - 0.1), abs=1e-12)
    assert knife_edge_loss(0.0) == pytest.approx(6.03, abs=0.01)
    with pytest.raises(ValueError):
        knife_edge_loss(float("nan"))


@given(st.floats(-0.78, 50), st.floats(0, 10))
def test_knife_edge_monotone(nu, step):
    assert knife_edge_loss(nu + step) >= knife_edge_loss(nu) - 1e-12


def test_fresnel_kirchhoff_nu():
    lam = wavelength(F)
    assert fresnel_kirchhoff_nu(1.0, 50, 50, lam) == pytest.approx(math.sqrt(2 * 100 / (lam * 2500)))


def test_noise_power():
    assert noise_power(1e6, 293) == pytest.approx(-113.93, abs=0.01)
    assert noise_power(2e6, 293) - noise_power(1e6, 293) == pytest.approx(10 * math.log10(2), abs=1e-12)
    assert noise_power(2e6, 293) - noise_power(1e6, 293) == pytest.approx(3.0103, abs=1e-4)
    for b, t in ((1e6, 0), (0, 293), (-1, 293)):
        with pytest.raises(ValueError):
            noise_power(b, t)


def test_slab_transmission_closed_form():
    eps = CONCRETE.complex_permittivity(F)
    r0 = abs((1 - cmath.sqrt(eps)) / (1 + cmath.sqrt(eps)))
    alpha = 2 * math.pi / wavelength(F) * abs(cmath.sqrt(eps).imag)
    assert slab_transmission(CONCRETE, F, 0.2, 1.0) == pytest.approx((1 - r0 ** 2) * math.exp(-alpha * 0.2))
    assert slab_transmission(CONCRETE, F, 0.2, 0.5) < slab_transmission(CONCRETE, F, 0.2, 1.0)
    loss_db = -20 * math.log10(slab_transmission(CONCRETE, F, 0.2, 1.0))
    assert 10 < loss_db < 30


def test_siso_isotropic():
    a = AntennaConfig("SISO")
    for d in ([1, 0, 0], [0, 0, 1], [0.6, -0.8, 0]):
        assert antenna_gain(a, d, F) == 1.0


def _sphere_mean(a, n=400):
    # Gauss-Legendre in cos(theta), uniform in phi
    x, w = np.polynomial.legendre.leggauss(n)
    phi = np.linspace(0, 2 * math.pi, 2 * n, endpoint=False)
    total = 0.0
    for xi, wi in zip(x, w):
        s = math.sqrt(1 - xi * xi)
        g = sum(antenna_gain(a, [s * math.cos(p), s * math.sin(p), xi]) for p in phi)
        total += wi * g / len(phi)
    return total / 2.0


@pytest.mark.parametrize("kind,m,n", [("MIMO4x4", 4, 4), ("MIMO8x4", 8, 4)])
def test_array_boresight_and_normalization(kind, m, n):
    a = AntennaConfig(kind, boresight=(0.0, 1.0, 0.0))
    g0 = antenna_gain(a, [0, 1, 0])
    assert g0 == pytest.approx((m * n) ** 2 / array_power_mean(m, n), rel=1e-12)
    assert g0 >= m * n  # never below the uniform-array directivity
    assert _sphere_mean(a, 120) == pytest.approx(1.0, abs=0.01)


def test_array_power_mean_linear_half_wave():
    # half-wave linear arrays are orthogonal: mean |AF|^2 equals the element count
    assert array_power_mean(1, 8) == pytest.approx(8.0, abs=1e-12)
    assert array_power_mean(4, 1) == pytest.approx(4.0, abs=1e-12)


def test_antenna_validation():
    with pytest.raises(ValueError):
        AntennaConfig("MIMO4x4", boresight=(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        antenna_gain(AntennaConfig(), [2, 0, 0])
