import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.errors import GridTooCoarse, SignalBelowNoise
from qpkam.schrodinger import (SchrodingerModel, SpectralCurve, curve_csv, curve_svg, gap_intervals,
                               gap_labels, holder_fit, ids, ids_from_rotation, locate_gap,
                               schrodinger_cocycle, spectral_sweep, thouless_check,
                               thouless_integral)
from qpkam.torusmap import TorusPoly

GOLDEN = (math.sqrt(5) - 1) / 2
FREE = SchrodingerModel.free(GOLDEN)
AMO = SchrodingerModel.almost_mathieu(0.5, GOLDEN)


def free_ids(E):
    return math.acos(-E / 2) / math.pi


def test_model_validation():
    with pytest.raises(ValueError):
        SchrodingerModel(TorusPoly.from_dict({(1,): 1j}, value_kind="scalar"), 1.0, GOLDEN)


def test_cocycle_at_zero():
    coc = schrodinger_cocycle(FREE, 0.0)
    assert np.allclose(coc.at(np.array([[0.3]]))[0], [[0, -1], [1, 0]])


@pytest.mark.parametrize("E", [0.0, 1.0, -1.5, 1.9])
def test_free_ids(E):
    assert abs(ids(FREE, E, 10 ** 5) - free_ids(E)) < 1e-4


def test_ids_outside_spectrum():
    assert ids(AMO, -5.0, 10 ** 4) == 0.0
    assert ids(AMO, 5.0, 10 ** 4) == 1.0


@pytest.mark.parametrize("E", [-1.2, 0.3, 1.5])
def test_ids_rotation_bridge(E):
    assert abs(ids(AMO, E, 10 ** 5) - ids_from_rotation(AMO, E, 10 ** 5)) < 1e-3


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6, unique=True))
@settings(max_examples=20, deadline=None)
def test_ids_monotone(Es):
    Es = np.sort(Es)
    N = ids(AMO, Es, 2000, 4)
    assert np.all(np.diff(N) >= 0)


def test_sweep_and_outputs():
    E = np.linspace(-2.5, 2.5, 41)
    cur = spectral_sweep(AMO, E, {"n_iters": 2000, "ids_iters": 10 ** 4, "uh": True})
    assert cur.metadata["monotonicity_violations"] == []
    assert np.all(np.diff(cur.N_values) >= 0)
    csv = curve_csv(cur).splitlines()
    assert csv[0] == "E,L,L_err,N,uh_verdict" and len(csv) == 42
    assert set(cur.uh_verdicts) <= {"UH", "not_UH", "inconclusive"}
    svg = curve_svg(cur)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg == curve_svg(cur)
    # the largest gap (IDS alpha) shows up as a flat stretch
    gaps = gap_intervals(cur)
    assert any(a <= 0.8 <= b for a, b in gaps)
    with pytest.raises(ValueError):
        spectral_sweep(AMO, E[::-1], 100)


def test_thouless_integral_semicircle_free():
    # L = 0 inside [-2, 2] for the free operator, so the integral should vanish there
    E = np.linspace(-2, 2, 4001)
    N = np.array([free_ids(e) for e in E])
    assert abs(thouless_integral(E, N, 0.5)) < 1e-3
    # outside: L(3) = ln((3 + sqrt 5) / 2)
    E2 = np.linspace(-2, 3, 5001)
    N2 = np.array([free_ids(min(e, 2.0)) for e in E2])
    assert abs(thouless_integral(E2, N2, 3.0) - math.log((3 + math.sqrt(5)) / 2)) < 1e-3


def test_thouless_grid_too_coarse():
    E = np.linspace(-2.5, 2.5, 11)
    cur = spectral_sweep(FREE, E, {"n_iters": 1000, "ids_iters": 10 ** 4})
    with pytest.raises(GridTooCoarse):
        thouless_check(cur, 0.0)
    partial = SpectralCurve(E[:5], cur.L_values[:5], cur.N_values[:5])
    with pytest.raises(GridTooCoarse):
        thouless_check(partial, -2.2)


def test_thouless_free_fine_grid():
    E = np.linspace(-2.5, 2.5, 401)
    cur = spectral_sweep(FREE, E, {"n_iters": 4000, "ids_iters": 10 ** 5})
    _, _, d = thouless_check(cur, 0.5)
    assert d < 1e-2
    with pytest.raises(GridTooCoarse):
        thouless_check(cur, 3.0)


def test_holder_in_gap_is_infinite():
    fit = holder_fit(AMO, 0.8, [1e-3, 1e-2, 5e-2], n_iters=10 ** 4)
    assert math.isinf(fit.beta)
    obj = json.loads(fit.to_json())
    assert obj["beta"] == "inf" and set(obj) == {"E0", "target", "beta", "C", "n_points", "residual_rms"}


def test_holder_free_interior():
    # N is smooth at E = 0, so Delta ~ eps and beta = 1
    beta, C, res = holder_fit(FREE, 0.0, [1e-2, 2e-2, 5e-2, 1e-1], n_iters=10 ** 5)
    assert abs(beta - 1) < 0.02
    assert abs(C - 2 / (2 * math.pi)) < 0.02


def test_signal_below_noise():
    # eps = 1e-9 is far below the count resolution, so that difference vanishes
    with pytest.raises(SignalBelowNoise):
        holder_fit(FREE, 0.0, [1e-9, 1e-1], n_iters=1000, samples=2)


def test_locate_gap_free_edge_and_amo():
    lo, hi = locate_gap(FREE, 1.0, n_iters=10 ** 4, samples=4, tol=1e-6)
    assert abs(lo - 2.0) < 2e-2
    lo, hi = locate_gap(AMO, GOLDEN, n_iters=10 ** 5, samples=4, tol=1e-6)
    # edges frozen from a 10^6-step run
    assert abs(lo - 0.335052) < 5e-3 and abs(hi - 1.297606) < 5e-3


def test_gap_labels():
    lab = gap_labels(GOLDEN, 2)
    assert abs(lab[1] - GOLDEN) < 1e-15 and abs(lab[-1] - (1 - GOLDEN)) < 1e-15 and len(lab) == 4
