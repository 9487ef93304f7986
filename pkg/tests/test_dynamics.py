import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.dynamics import (Cocycle, is_uniformly_hyperbolic, lyapunov, lyapunov_complex_energy,
                            rotation_number)
from qpkam.errors import HomotopyObstruction
from qpkam.mat2 import rotation
from qpkam.torusmap import TorusPoly

GOLDEN = (math.sqrt(5) - 1) / 2
ZERO = TorusPoly.zero(1, 1, "scalar", ())
COS = TorusPoly.from_dict({(1,): 1.0, (-1,): 1.0}, value_kind="scalar")


def free_L(E):
    """ln of the larger root modulus of z + 1/z = E (free Laplacian)."""
    E = complex(E)
    z = E / 2 + np.sqrt(E * E / 4 - 1)
    return abs(math.log(abs(z)))


def test_constant_le_exact():
    est = lyapunov(Cocycle.constant(np.diag([2.0, 0.5]), (GOLDEN,)), 1000)
    assert abs(est.value - math.log(2)) < 1e-12
    assert abs(lyapunov(Cocycle.constant(rotation(1.0), (GOLDEN,)), 100).value) < 1e-12


def test_free_le_at_three():
    est = lyapunov(Cocycle.schrodinger_family(ZERO, 0.0, 3.0, GOLDEN), 10 ** 5)
    assert abs(est.value - math.log((3 + math.sqrt(5)) / 2)) < 1e-4
    assert est.n_iters == 10 ** 5 and len(est.convergence_tail) > 3


def test_amo_supercritical_le():
    # Herman / Bourgain-Jitomirskaya: L = ln(lam) on the spectrum for lam > 1
    est = lyapunov(Cocycle.schrodinger_family(COS, 2.0, 0.0, GOLDEN), 2 * 10 ** 5)
    assert abs(est.value - math.log(2)) < 2e-3


def test_large_imaginary_energy():
    est = lyapunov_complex_energy(COS, 0.5, 1e3j, GOLDEN, n_iters=2000)
    assert abs(est.value - math.log(1e3)) < 1e-3


def test_free_imaginary_energy_decreases_to_zero():
    etas = [1.0, 0.3, 0.1, 0.03]
    vals = [lyapunov_complex_energy(ZERO, 0.0, 1j * e, GOLDEN, n_iters=20000).value for e in etas]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    for e, v in zip(etas, vals):
        assert abs(v - free_L(1j * e)) < 2e-3


@given(st.floats(-4, 4), st.floats(0.05, 2.0))
@settings(max_examples=15, deadline=None)
def test_le_nonnegative(E, lam):
    est = lyapunov(Cocycle.schrodinger_family(COS, lam, E, GOLDEN), 2000, 4)
    assert est.value >= -1e-12


def test_rotation_number_examples():
    assert abs(rotation_number(Cocycle.constant(rotation(2 * np.pi * 0.3), (GOLDEN,)), True, 10 ** 4) - 0.3) < 1e-9
    assert abs(rotation_number(Cocycle.schrodinger_family(ZERO, 0.0, 0.0, GOLDEN), True, 10 ** 4) - 0.25) < 1e-6
    # elliptic constant of angle 2 pi / 3
    assert abs(rotation_number(Cocycle.schrodinger_family(ZERO, 0.0, 1.0, GOLDEN), True, 10 ** 5) - 1 / 3) < 1e-4


@given(st.floats(-3, 3))
@settings(max_examples=15, deadline=None)
def test_rotation_number_range(E):
    rho = rotation_number(Cocycle.schrodinger_family(COS, 0.7, E, GOLDEN), True, 4000, 4)
    assert 0.0 <= rho <= 0.5


def test_rotation_number_homotopy():
    coc = Cocycle.constant(rotation(0.4), (GOLDEN,))
    with pytest.raises(HomotopyObstruction):
        rotation_number(coc, homotopic_to_identity=False)
    # theta -> R(theta) has degree 1
    G = 64
    th = 2 * np.pi * np.arange(G) / G
    vals = np.array([rotation(t) for t in th])
    with pytest.raises(HomotopyObstruction):
        rotation_number(Cocycle.from_grid((GOLDEN,), vals))


def test_uh_examples():
    v, w = is_uniformly_hyperbolic(Cocycle.constant(np.diag([2.0, 0.5]), (GOLDEN,)))
    assert v == "UH" and w["n"] == 1
    assert is_uniformly_hyperbolic(Cocycle.constant(rotation(0.7), (GOLDEN,)))[0] == "not_UH"
    assert is_uniformly_hyperbolic(Cocycle.schrodinger_family(ZERO, 0.0, 3.0, GOLDEN), grid=256)[0] == "UH"
    assert is_uniformly_hyperbolic(Cocycle.schrodinger_family(ZERO, 0.0, 1.0, GOLDEN), grid=256)[0] == "not_UH"


def test_uh_in_amo_gap():
    # E = 0.8 lies in the largest gap of the lam = 0.5 operator (IDS = alpha)
    v, w = is_uniformly_hyperbolic(Cocycle.schrodinger_family(COS, 0.5, 0.8, GOLDEN), grid=256)
    assert v == "UH"


def test_from_grid_matches_map():
    f = TorusPoly.from_dict({(0,): np.diag([1.2, 1 / 1.2]), (1,): np.zeros((2, 2))}, value_kind="group")
    G = 32
    vals = f.to_grid(G)
    c1 = Cocycle.from_grid((GOLDEN,), vals)
    th = np.array([[0.1], [2.0]])
    assert np.allclose(c1.at(th), Cocycle.from_map((GOLDEN,), f).at(th))
