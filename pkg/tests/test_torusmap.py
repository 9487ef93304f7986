import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam import torusmap as tm
from qpkam.errors import DegenerateStrip
from qpkam.torusmap import TorusPoly


def random_poly(seed, K=12, dim=1, kind="algebra"):
    rng = np.random.default_rng(seed)
    terms = {}
    for n in range(-K, K + 1):
        key = (n,) if dim == 1 else (n, int(rng.integers(-3, 4)))
        if kind == "scalar":
            terms[key] = complex(rng.normal(), rng.normal()) * math.exp(-abs(n) / 4)
        else:
            a, b, c = rng.normal(size=3) + 1j * rng.normal(size=3)
            terms[key] = np.array([[a, b], [c, -a]]) * math.exp(-abs(n) / 4)
    return TorusPoly.from_dict(terms, dim=dim, value_kind=kind)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_grid_roundtrip(seed):
    f = random_poly(seed)
    g = TorusPoly.from_grid(f.to_grid(64), drop_below=1e-14)
    assert np.allclose(g.to_grid(64), f.to_grid(64), atol=1e-12)


def test_eval_matches_grid():
    f = random_poly(3)
    th = tm.grid_points(64)[:, 0]
    assert np.allclose(tm.eval(f, th[:, None]), f.to_grid(64), atol=1e-12)


def test_aliasing_refused():
    with pytest.raises(ValueError):
        random_poly(1, K=40).to_grid(64)


@given(st.integers(0, 10 ** 6), st.floats(0.0, 0.5))
@settings(max_examples=30, deadline=None)
def test_upper_bound_dominates_grid_sup(seed, r):
    f = random_poly(seed)
    ub = tm.strip_norm(f, r).value
    sup = tm.strip_norm(f, r, "exact_grid_sup", grid=128).value
    assert sup <= ub * (1 + 1e-12)


def test_strip_norm_monotone_in_r():
    f = random_poly(5)
    vals = [tm.strip_norm(f, r).value for r in (0.0, 0.1, 0.2, 0.4)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_truncate_splits():
    f = random_poly(7)
    lo, hi = tm.truncate(f, 5)
    assert np.all(lo.freq_norms() < 5) and np.all(hi.freq_norms() >= 5)
    assert np.allclose((lo + hi).to_grid(64), f.to_grid(64))


def test_derivative_of_cosine():
    f = TorusPoly.from_dict({(3,): 0.5, (-3,): 0.5}, value_kind="scalar")
    d = tm.derivative(f, (1,))
    th = np.linspace(0, 2 * np.pi, 17)[:, None]
    assert np.allclose(tm.eval(d, th), -3 * np.sin(3 * th[:, 0]), atol=1e-13)
    assert abs(tm.ck_norm(f, 2) - 9.0) < 1e-12


def test_cutoff_profile():
    x = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 2.0])
    c = tm.cutoff(x)
    assert c[0] == c[1] == c[2] == 1.0 and c[4] == c[5] == 0.0 and 0 < c[3] < 1


def test_smooth_approx_agrees_on_low_modes():
    f = random_poly(11, K=60)
    j = 40
    fj = tm.smooth_approx(f, j)
    assert fj.max_index() < j
    for n in range(-j // 4, j // 4 + 1):
        assert np.allclose(fj.coefficient((n,)), f.coefficient((n,)), atol=1e-10)


def test_approximation_constants_decay():
    # C^k function: |fhat(n)| ~ n^{-6}
    terms = {}
    for n in range(1, 400):
        c = n ** -6.0
        terms[(n,)] = np.array([[0, c], [c, 0]], complex)
        terms[(-n,)] = np.array([[0, c], [c, 0]], complex)
    f = TorusPoly.from_dict(terms)
    out = tm.approximation_constants(f, 2, [10, 20, 40, 80])
    errs = out["ck_error"]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert math.isfinite(out["C_prime"]) and out["C_prime"] > 0


def test_cauchy_bound():
    f = random_poly(2)
    r = 0.3
    s = tm.strip_norm(f, r).value
    assert tm.ck_norm(f, 1) <= tm.cauchy_ck_bound(s, r, 1) * (1 + 1e-12)
    with pytest.raises(DegenerateStrip):
        tm.cauchy_ck_bound(1.0, 0.0, 1)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_serialization_bit_exact(seed):
    f = random_poly(seed, dim=2)
    g = tm.loads(tm.dumps(f))
    assert np.array_equal(g.modes, f.modes) and np.array_equal(g.coeffs, f.coeffs)
    assert g.period == f.period and g.value_kind == f.value_kind


def test_reality_and_shift():
    f = random_poly(4)
    re = f.real_part()
    assert re.reality_defect() < 1e-14
    vals = re.to_grid(32)
    assert np.max(np.abs(vals.imag)) < 1e-13
    s = 0.37
    assert np.allclose(f.shifted(np.array([s])).to_grid(32), f.to_grid(32, shift=np.array([s])))
