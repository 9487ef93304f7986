import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam import torusmap as tm
from qpkam.arith import verify_dc
from qpkam.errors import PreconditionFailed, TooLarge, WindowMismatch
from qpkam.kam import (KamParams, ScaleSchedule, compose, conjugacy_defect, holder_window,
                       kam_loop, kam_step, eta_crossover, nonresonant_reduce, rescale_triangular,
                       verify_scale_ledger, window_bounds, window_covering)
from qpkam.mat2 import opnorm, rotation
from qpkam.torusmap import TorusPoly

GOLDEN = (math.sqrt(5) - 1) / 2
DC = verify_dc(GOLDEN, None, 1.2, 10 ** 4)


def poly(seed, K, eps, r=0.1):
    rng = np.random.default_rng(seed)
    terms = {}
    for n in range(1, K + 1):
        a, b, c = rng.normal(size=3) * math.exp(-n / 3)
        X = np.array([[a, b], [c, -a]], dtype=complex)
        terms[(n,)] = X / 2
        terms[(-n,)] = X / 2
    f = TorusPoly.from_dict(terms)
    return f.scaled(eps / tm.strip_norm(f, r).value)


def test_params_validation():
    with pytest.raises(ValueError):
        KamParams(sigma=0.6)
    with pytest.raises(ValueError):
        KamParams(M=5)
    with pytest.raises(ValueError):
        KamParams(mode="fast")


def test_schedule_values():
    S = ScaleSchedule.build(KamParams(), 1.0, 3)
    assert S.l == (10, 100, 10 ** 4, 10 ** 8)
    # eps_m = c / ((2||A||)^D m^{k/4}) with c=1, D=2, k=8
    assert np.allclose(S.eps[:3], [0.25 / 100, 0.25 / 10 ** 4, 0.25 / 10 ** 8], rtol=1e-12)


def test_eta_crossover_value():
    # (13)^{-1/(1/2 - 3/10)} = 13^{-5}
    assert math.isclose(eta_crossover(1.0, 0.1), 13.0 ** -5, rel_tol=1e-12)


def test_nonresonant_precondition_check():
    A = np.diag([1.5, 1 / 1.5])
    g = poly(0, 4, 1e-3)
    with pytest.raises(PreconditionFailed):
        nonresonant_reduce(A, g, 0.1, 1e-6, 1e-3, DC.alpha_vec, check=True)


@given(st.integers(0, 10 ** 6), st.floats(-10, -6))
@settings(max_examples=25, deadline=None)
def test_nonresonant_identity(seed, log_eps):
    eps = 10 ** log_eps
    A = np.diag([1.3, 1 / 1.3]) @ rotation(0.2)
    eta = 13 * opnorm(A) ** 2 * math.sqrt(eps)
    g = poly(seed, 5, eps)
    Y, g_re = nonresonant_reduce(A, g, 0.1, eta, eps, DC.alpha_vec)
    assert tm.strip_norm(Y, 0.1).value <= math.sqrt(eps)
    assert tm.strip_norm(g_re, 0.1).value <= 2 * eps


def test_step_nonresonant_hyperbolic():
    A = np.diag([math.exp(0.4), math.exp(-0.4)])
    f = poly(1, 6, 1e-3)
    stp = kam_step(A, f, 0.1, 0.05, KamParams(), DC, eps=1e-3)
    assert stp.branch == "nonresonant" and not stp.violations
    assert conjugacy_defect(A, f, GOLDEN, stp.B, stp.A_plus.m, stp.f_plus) < 1e-12


def test_step_resonant_site():
    A = rotation(3 * math.pi * GOLDEN)
    f = poly(2, 6, 1e-3)
    stp = kam_step(A, f, 0.1, 0.05, KamParams(), DC, eps=1e-3)
    assert stp.branch == "resonant" and stp.resonance.site == (3,)
    assert stp.B.period == 2
    assert conjugacy_defect(A, f, GOLDEN, stp.B, stp.A_plus.m, stp.f_plus) < 1e-12
    assert opnorm(stp.A_dprime.m) <= 2 * 1e-3 ** 0.1


def test_zero_perturbation_is_trivial():
    A = rotation(0.5)
    z = TorusPoly.zero()
    stp = kam_step(A, z, 0.1, 0.05, KamParams(), DC)
    assert np.allclose(stp.A_plus.m, A) and tm.sup_norm(stp.B) == pytest.approx(1.0)
    cert = kam_loop(A, z, ScaleSchedule.build(KamParams(), 1.0, 3), alpha_dc=DC)
    assert cert.final_case == "almost_reduced" and len(cert.scales) == 3


def test_loop_composes_conjugacies():
    A = rotation(0.9)
    f = poly(3, 8, 3e-4)
    S = ScaleSchedule.build(KamParams(), 1.0, 2)
    cert = kam_loop(A, f, S, alpha_dc=DC)
    assert cert.final_case in ("almost_reduced", "stalled")
    B = cert.steps[0].B
    for s in cert.steps[1:]:
        B = compose(s.B, B)
    assert np.allclose(B.to_grid(512), cert.B.to_grid(512), atol=1e-10)
    # text record is reproducible
    assert cert.to_text() == kam_loop(A, f, S, alpha_dc=DC).to_text()


def test_ledger_paper_faithful():
    P = KamParams(D=110, k=825.0, M=10 ** 10, mode="paper-faithful", C0=1e3, c_small=1e-3)
    rep = verify_scale_ledger(P, 1.5, 1.0, 20)
    assert rep.all_hold
    assert window_covering(P, 20)


def test_ledger_detects_small_k():
    P = KamParams(D=110, k=5.0, M=10 ** 10, C0=1e3, c_small=1e-3)
    rep = verify_scale_ledger(P, 1.5, 1.0, 5)
    assert not rep.all_hold and rep.first_failure["i"] == 1


def test_holder_window():
    P = KamParams(D=110, k=825.0, M=10 ** 10, C0=1e3, c_small=1e-3)
    lo, hi = window_bounds(2, P)
    assert holder_window(None, P, log_eps=float((lo + hi) / 2)) == 2
    _, hi1 = window_bounds(1, P)
    assert holder_window(None, P, log_eps=float(hi1)) == 1
    with pytest.raises(TooLarge):
        holder_window(0.5, P)
    # ln(C0/c) = 4 > (k/80) ln l_1 leaves a gap between I_2 and I_1
    Q = KamParams(D=2, k=80.0, M=10, C0=math.exp(4), c_small=1.0)
    assert not window_covering(Q, 3)
    lo1, _ = window_bounds(1, Q)
    _, hi2 = window_bounds(2, Q)
    with pytest.raises(WindowMismatch):
        holder_window(None, Q, log_eps=float((lo1 + hi2) / 2))


def test_rescale_triangular():
    A = np.array([[math.exp(0.3), 0.5], [0.0, math.exp(-0.3)]])
    rep = rescale_triangular(A, 1e-6, 1.0, 0.5, 1e-4)
    assert rep.d <= 1
