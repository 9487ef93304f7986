"""Quasi-periodic Schroedinger operators
(H u)_n = u_{n+1} + u_{n-1} + lam V(theta + 2 pi n alpha) u_n.

The transfer matrix used throughout is [[lam V - E, -1], [1, 0]]; the IDS is
computed by Sturm counting on long truncations and linked to the fibered
rotation number by N = 2 rho_f for this matrix convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (Cocycle, _potential_arrays, _start_points, _sturm_counts,
                       is_uniformly_hyperbolic, lyapunov, lyapunov_complex_energy,
                       rotation_number)
from .errors import GridTooCoarse, SignalBelowNoise
from .torusmap import TorusPoly


@dataclass(frozen=True)
class SchrodingerModel:
    V: TorusPoly
    lam: float
    alpha_dc: object

    def __post_init__(self):
        if self.V.value_kind != "scalar":
            raise ValueError("V must be scalar valued")
        if self.V.reality_defect() > 1e-12:
            raise ValueError("V must be real")

    @property
    def alpha(self):
        a = getattr(self.alpha_dc, "alpha_vec", self.alpha_dc)
        return np.atleast_1d(np.asarray(a, dtype=float))

    @classmethod
    def almost_mathieu(cls, lam, alpha_dc):
        """V(theta) = 2 cos theta."""
        V = TorusPoly.from_dict({(1,): 1.0, (-1,): 1.0}, period=1, value_kind="scalar")
        return cls(V, float(lam), alpha_dc)

    @classmethod
    def free(cls, alpha_dc):
        return cls(TorusPoly.zero(1, 1, "scalar", ()), 0.0, alpha_dc)


@dataclass
class SpectralCurve:
    energies: np.ndarray
    L_values: np.ndarray
    N_values: np.ndarray
    metadata: dict = field(default_factory=dict)
    L_err: np.ndarray | None = None
    uh_verdicts: tuple | None = None


def schrodinger_cocycle(model, E):
    return Cocycle.schrodinger_family(model.V, model.lam, E, model.alpha)


def _counts(model, E, n_iters, samples, seed):
    """Sturm counts (samples, nE) and the start points used."""
    if model.V.dim != 1:
        raise NotImplementedError("Sturm counting is implemented for d = 1")
    coc = schrodinger_cocycle(model, 0.0)
    orb, grid = _start_points(coc, samples, seed)
    x0 = np.concatenate([orb, grid])[:, 0].copy()
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    out = np.zeros((len(x0), len(Es)), dtype=np.int64)
    ms, cr, ci = _potential_arrays(model.V)
    _sturm_counts(x0, float(model.alpha[0]), ms, cr, ci, float(model.lam), Es, int(n_iters), out)
    return out


def ids(model, E, n_iters=10 ** 5, samples=8, seed=0):
    """Integrated density of states N(E); scalar in, scalar out."""
    c = _counts(model, E, n_iters, samples, seed)
    N = c.sum(axis=0) / (c.shape[0] * n_iters)
    return float(N[0]) if np.ndim(E) == 0 else N


def ids_from_rotation(model, E, n_iters=10 ** 5, samples=8, seed=0):
    """N = 2 rho_f for the [[lam V - E, -1], [1, 0]] convention."""
    return 2.0 * rotation_number(schrodinger_cocycle(model, float(E)), True, n_iters, samples, seed)


def spectral_sweep(model, E_grid, budget=None):
    """L and N on an energy grid.  ``budget``: dict with n_iters, samples, seed,
    ids_iters and uh (bool, adds a cone-field verdict per energy)."""
    b = {"n_iters": 10 ** 4, "samples": 8, "seed": 0, "ids_iters": 10 ** 5, "uh": False}
    if isinstance(budget, int):
        b["n_iters"] = budget
    elif budget:
        b.update(budget)
    E = np.asarray(E_grid, dtype=float)
    if np.any(np.diff(E) <= 0):
        raise ValueError("E_grid must be strictly increasing")
    N = ids(model, E, b["ids_iters"], b["samples"], b["seed"])
    L = np.empty(len(E))
    Lerr = np.empty(len(E))
    verdicts = []
    for i, e in enumerate(E):
        est = lyapunov(schrodinger_cocycle(model, float(e)), b["n_iters"], b["samples"], b["seed"])
        L[i], Lerr[i] = est.value, est.error_bar
        if b["uh"]:
            verdicts.append(is_uniformly_hyperbolic(schrodinger_cocycle(model, float(e)), horizon=16, grid=256)[0])
        else:
            verdicts.append("-")
    drops = np.flatnonzero(np.diff(N) < -1e-6)
    meta = {"lam": model.lam, "alpha": tuple(float(a) for a in model.alpha), "budget": b,
            "monotonicity_violations": [float(E[i + 1]) for i in drops]}
    return SpectralCurve(E, L, np.asarray(N, float), meta, Lerr, tuple(verdicts))


def _G(x):
    """Antiderivative of ln|x| vanishing at 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, x * np.log(np.abs(x)) - x)


def thouless_integral(energies, N_values, E):
    """int ln|E - E'| dN(E') with N piecewise linear on the grid."""
    a, b = energies[:-1], energies[1:]
    dN = np.diff(N_values)
    h = b - a
    return float(np.sum(dN / h * (_G(b - E) - _G(a - E))))


def thouless_check(curve, E, max_jump=0.05):
    """(L_direct, L_thouless, |defect|) at energy E."""
    En, N = np.asarray(curve.energies), np.asarray(curve.N_values)
    if N[0] > 1e-9 or N[-1] < 1 - 1e-9:
        raise GridTooCoarse("energy grid does not cover the spectrum")
    if np.max(np.diff(N)) > max_jump:
        raise GridTooCoarse(f"IDS jumps by {np.max(np.diff(N)):.3g} between grid points")
    if not En[0] <= E <= En[-1]:
        raise GridTooCoarse("E outside the energy grid")
    L_direct = float(np.interp(E, En, curve.L_values))
    L_th = thouless_integral(En, N, E)
    return L_direct, L_th, abs(L_direct - L_th)


def locate_gap(model, N_level, n_iters=10 ** 6, samples=8, seed=0, bracket=None, tol=1e-12):
    """Edges (E_minus, E_plus) of the spectral gap where N = N_level.

    Counts are exactly monotone in E for fixed start points; a few edge states
    per truncation are tolerated by a slack of 4 counts per sample.
    """
    S = 2 * max(1, samples // 2)
    total = S * n_iters
    slack = 4 * S
    target = N_level * total
    lo, hi = bracket or (-2 - 2 * abs(model.lam) * _vmax(model) - 1, 2 + 2 * abs(model.lam) * _vmax(model) + 1)

    def count(e):
        return int(_counts(model, e, n_iters, samples, seed).sum())

    def bisect(pred, a, b):
        # largest a with pred(a) true, pred(b) false
        while b - a > tol * max(1.0, abs(a)):
            m = 0.5 * (a + b)
            if pred(m):
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    e_minus = bisect(lambda e: count(e) < target - slack, lo, hi)
    e_plus = bisect(lambda e: count(e) <= target + slack, lo, hi)
    return e_minus, e_plus


def _vmax(model):
    return float(np.sum(np.abs(model.V.coeffs))) if len(model.V.coeffs) else 0.0


@dataclass(frozen=True)
class HolderFit:
    E0: float
    target: str
    beta: float
    C: float
    residuals: tuple
    eps: tuple
    deltas: tuple

    def __iter__(self):
        return iter((self.beta, self.C, self.residuals))

    def to_json(self):
        rr = float(np.sqrt(np.mean(np.square(self.residuals)))) if self.residuals else 0.0
        obj = {"E0": self.E0, "target": self.target, "beta": _json_float(self.beta), "C": self.C,
               "n_points": len(self.eps), "residual_rms": rr}
        return json.dumps(obj, sort_keys=True)


def _json_float(x):
    return "inf" if math.isinf(x) else x


def holder_fit(model, E0, eps_grid, target="IDS", n_iters=None, samples=8, seed=0):
    """Fit Delta(eps) ~ C eps^beta.

    target "IDS":     Delta = N(E0 + eps) - N(E0 - eps)
    target "LE_imag": Delta = L(E0 + i eps) - L(E0)
    Returns beta = inf when E0 sits inside a gap.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    ids_iters = n_iters or 10 ** 6
    c = _counts(model, np.concatenate([E0 - eps, E0 + eps]), ids_iters, samples, seed).sum(axis=0)
    k = len(eps)
    dcount = c[k:] - c[:k]
    if dcount[-1] == 0:
        return HolderFit(float(E0), target, math.inf, 0.0, (), tuple(eps), tuple(0.0 for _ in eps))
    if target == "IDS":
        delta = dcount / (2 * max(1, samples // 2) * ids_iters)
        floor = 1.0 / (2 * max(1, samples // 2) * ids_iters)
    elif target == "LE_imag":
        n_le = n_iters or 10 ** 6
        base = lyapunov(schrodinger_cocycle(model, float(E0)), n_le, samples, seed)
        vals = np.array([lyapunov_complex_energy(model.V, model.lam, complex(E0, e), model.alpha,
                                                 n_le, samples, seed).value for e in eps])
        delta = vals - base.value
        floor = base.error_bar
    else:
        raise ValueError(f"unknown target {target!r}")
    if np.any(delta <= 0):
        raise SignalBelowNoise(floor)
    x, y = np.log(eps), np.log(delta)
    beta, logC = np.polyfit(x, y, 1)
    res = y - (beta * x + logC)
    return HolderFit(float(E0), target, float(beta), float(math.exp(logC)), tuple(float(r) for r in res),
                     tuple(float(e) for e in eps), tuple(float(d) for d in delta))


def gap_labels(alpha, k_max):
    """IDS values frac(k alpha) of the labelled gaps, |k| <= k_max."""
    a = float(np.atleast_1d(alpha)[0])
    out = {}
    for k in range(-k_max, k_max + 1):
        if k:
            out[k] = (k * a) % 1.0
    return out


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def curve_csv(curve):
    lines = ["E,L,L_err,N,uh_verdict"]
    err = curve.L_err if curve.L_err is not None else np.zeros(len(curve.energies))
    uh = curve.uh_verdicts or ("-",) * len(curve.energies)
    for e, l, le, n, v in zip(curve.energies, curve.L_values, err, curve.N_values, uh):
        lines.append(f"{float(e)!r},{float(l)!r},{float(le)!r},{float(n)!r},{v}")
    return "\n".join(lines) + "\n"


def gap_intervals(curve, flat=1e-9):
    """Energy intervals where N is flat strictly inside (0, 1)."""
    E, N = curve.energies, curve.N_values
    out = []
    start = None
    for i in range(len(E) - 1):
        inside = abs(N[i + 1] - N[i]) <= flat and flat < N[i] < 1 - flat
        if inside and start is None:
            start = i
        if not inside and start is not None:
            out.append((float(E[start]), float(E[i])))
            start = None
    if start is not None:
        out.append((float(E[start]), float(E[-1])))
    return out


def curve_svg(curve, which="N", width=640, height=400):
    """Deterministic SVG polyline of (E, N) or (E, L) with gap shading."""
    E = np.asarray(curve.energies, float)
    Y = np.asarray(curve.N_values if which == "N" else curve.L_values, float)
    pad = 40
    x0, x1 = E[0], E[-1]
    y0, y1 = min(0.0, float(Y.min())), max(float(Y.max()), 1e-12)

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for a, b in gap_intervals(curve):
        parts.append(f'<rect x="{px(a):.3f}" y="{pad}" width="{max(px(b) - px(a), 0.5):.3f}" '
                     f'height="{height - 2 * pad}" fill="#dddddd"/>')
    pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(E, Y))
    parts.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
    parts.append(f'<text x="{pad}" y="{pad - 10}" font-size="12">{which}(E), E in [{x0:g}, {x1:g}]</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
