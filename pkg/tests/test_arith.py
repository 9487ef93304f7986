import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.arith import (DiophantineFrequency, claim_radius, continued_fraction, convergents,
                         find_resonance, largest_kappa,
                         lattice_points, small_divisor_floor, verify_dc)
from qpkam.errors import ClaimViolation, NotDiophantine, UnverifiedRange

GOLDEN = (math.sqrt(5) - 1) / 2
# min_{q <= 1e4} q^1.2 dist(q g, Z), evaluated on Fibonacci q at 50 digits (q = 1 attains it)
GOLDEN_KAPPA = 0.3819660112501051
# same for sqrt(2) - 1 (Pell denominators, attained at q = 2)
SQRT2_KAPPA = 0.39417095913232586


def test_golden_kappa_against_mpmath_oracle():
    with mpmath.workdps(50):
        g = (mpmath.sqrt(5) - 1) / 2
        fib = [1, 2]
        while fib[-1] <= 10 ** 4:
            fib.append(fib[-1] + fib[-2])
        oracle = min(mpmath.mpf(q) ** mpmath.mpf(1.2) * abs(q * g - mpmath.nint(q * g))
                     for q in fib if q <= 10 ** 4)
    assert abs(float(oracle) - GOLDEN_KAPPA) < 1e-15
    k, n = largest_kappa(GOLDEN, 1.2, 10 ** 4)
    assert abs(k - GOLDEN_KAPPA) < 1e-12 and n == (1,)
    dc = verify_dc(GOLDEN, None, 1.2, 10 ** 4)
    assert dc.kappa < GOLDEN_KAPPA and dc.kappa > GOLDEN_KAPPA * (1 - 1e-11)


def test_sqrt2():
    k, n = largest_kappa(math.sqrt(2) - 1, 1.2, 10 ** 4)
    assert abs(k - SQRT2_KAPPA) < 1e-12 and n == (2,)


def test_rational_rejected():
    with pytest.raises(NotDiophantine) as e:
        verify_dc(0.5, None, 1.2, 100)
    assert e.value.args[0] == (2,) or "2" in str(e.value)


def test_kappa_too_large_rejected():
    with pytest.raises(NotDiophantine):
        verify_dc(GOLDEN, 0.5, 1.2, 1000)


def test_continued_fraction():
    assert continued_fraction(GOLDEN, 10) == [0] + [1] * 9
    assert convergents(math.sqrt(2), 5)[-1] == (41, 29)


def test_lattice_half_space():
    pts = lattice_points(2, 3)
    s = {tuple(p) for p in pts}
    assert all(tuple(-np.array(p)) not in s for p in s)
    # one representative per +-pair: (2*3^2 + 2*3 + 1 - 1) / 2 = 12 in the l1 ball of radius 3
    assert len(pts) == 12


def test_small_divisor_floor():
    dc = verify_dc(GOLDEN, None, 1.2, 1000)
    assert abs(small_divisor_floor(dc, 1) - (1 - GOLDEN)) < 1e-15
    # Fibonacci 987 gives the smallest distance up to 1000
    assert abs(small_divisor_floor(dc, 1000) - abs(987 * GOLDEN - 610)) < 1e-12
    with pytest.raises(UnverifiedRange):
        small_divisor_floor(dc, 2000)


def test_resonance_exact_site():
    dc = verify_dc(GOLDEN, None, 1.2, 10 ** 4)
    rep = find_resonance(3 * math.pi * GOLDEN, dc, 10, 1e-3)
    assert rep.site == (3,) and rep.margin < 1e-12 and rep.claim_holds


def test_no_resonance():
    dc = verify_dc(GOLDEN, None, 1.2, 10 ** 4)
    rep = find_resonance(0.3, dc, 10, 1e-3)
    assert rep.site is None and rep.margin > 1e-3


def test_claim_violation_strict():
    # an overstated kappa makes the uniqueness radius too optimistic
    dc = DiophantineFrequency((GOLDEN,), 50.0, 1.2, 10 ** 4)
    thr = 0.1
    with pytest.raises(ClaimViolation):
        find_resonance(0.7, dc, 5, thr)
    rep = find_resonance(0.7, dc, 5, thr, strict=False)
    assert not rep.claim_holds and rep.second_site is not None


@given(st.floats(0.01, 3.1), st.integers(2, 30))
@settings(max_examples=60, deadline=None)
def test_uniqueness_within_radius(rho, N):
    dc = verify_dc(GOLDEN, None, 1.2, 10 ** 4)
    thr = 1e-4
    rep = find_resonance(rho, dc, N, thr, strict=False)
    R = claim_radius(dc.kappa, dc.tau, thr, N)
    if rep.site is not None and R > 0:
        assert rep.claim_holds
