"""Trigonometric polynomials on the torus with 2x2 (or scalar) values.

Angles are in radians: a map on the period-``p`` torus is
``f(theta) = sum_n fhat(n) exp(i <n, theta> / p)``, so ``p = 1`` is the usual
2pi-periodic torus and ``p = 2`` carries the half-integer frequencies of the
4pi-periodic conjugacies.  Frequency sizes ``|n|`` are l1 norms of the actual
frequency ``n / p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DegenerateStrip
from .mat2 import opnorm

DEFAULT_GRID_1D = 4096
DEFAULT_GRID_ND = 64


def _value_norm(c):
    """Operator norm for matrix coefficients, modulus for scalar ones."""
    c = np.asarray(c)
    if c.ndim >= 2 and c.shape[-2:] == (2, 2):
        return opnorm(c)
    return np.abs(c)


@dataclass(frozen=True)
class TorusPoly:
    """Finite Fourier series ``modes -> coeffs`` on the period-``period`` torus.

    ``modes`` is an integer array of shape ``(m, dim)``; ``coeffs`` has shape
    ``(m,) + value_shape`` with ``value_shape`` either ``(2, 2)`` or ``()``.
    """

    modes: np.ndarray
    coeffs: np.ndarray
    period: int = 1
    value_kind: str = "algebra"

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=np.int64)
        if modes.ndim == 1:
            modes = modes[:, None]
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape[0] != modes.shape[0]:
            raise ValueError("modes and coeffs disagree in length")
        if self.period not in (1, 2):
            raise ValueError("period must be 1 or 2")
        if self.value_kind not in ("algebra", "group", "scalar"):
            raise ValueError(f"unknown value kind {self.value_kind!r}")
        modes.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)

    # ---- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value, dim=1, period=1, value_kind="algebra"):
        value = np.asarray(value, dtype=complex)
        return cls(np.zeros((1, dim), dtype=np.int64), value[None], period, value_kind)

    @classmethod
    def zero(cls, dim=1, period=1, value_kind="algebra", value_shape=(2, 2)):
        return cls(np.zeros((0, dim), dtype=np.int64), np.zeros((0,) + tuple(value_shape)), period, value_kind)

    @classmethod
    def from_dict(cls, terms, dim=1, period=1, value_kind="algebra"):
        """Build from ``{n: coefficient}`` with ``n`` an int or an int tuple."""
        keys = [(k,) if np.isscalar(k) else tuple(k) for k in terms]
        modes = np.array(keys, dtype=np.int64).reshape(len(keys), dim)
        coeffs = np.array([np.asarray(v, dtype=complex) for v in terms.values()])
        return cls(modes, coeffs, period, value_kind)

    @classmethod
    def from_grid(cls, values, period=1, value_kind="algebra", drop_below=0.0):
        """Fourier analysis of samples on the uniform grid of the torus.

        ``values`` has shape ``(G,)*dim + value_shape``; G must be the same in
        every direction.  Coefficients whose norm is ``<= drop_below`` are
        discarded.
        """
        values = np.asarray(values, dtype=complex)
        vshape = values.shape[-2:] if values.shape[-2:] == (2, 2) and values.ndim > 2 else ()
        dim = values.ndim - len(vshape)
        G = values.shape[0]
        axes = tuple(range(dim))
        hat = np.fft.fftn(values, axes=axes) / G ** dim
        idx = np.fft.fftfreq(G, d=1.0 / G).astype(np.int64)
        grids = np.meshgrid(*([idx] * dim), indexing="ij")
        modes = np.stack([g.ravel() for g in grids], axis=1)
        coeffs = hat.reshape((-1,) + vshape)
        if drop_below > 0:
            keep = _value_norm(coeffs) > drop_below
            modes, coeffs = modes[keep], coeffs[keep]
        return cls(modes, coeffs, period, value_kind)

    # ---- basic properties ---------------------------------------------
    @property
    def dim(self):
        return self.modes.shape[1]

    @property
    def value_shape(self):
        return self.coeffs.shape[1:]

    def freq_norms(self):
        """l1 norms of the actual frequencies n / period."""
        return np.abs(self.modes).sum(axis=1) / self.period

    def support_radius(self):
        return float(self.freq_norms().max()) if len(self.modes) else 0.0

    def max_index(self):
        return int(np.abs(self.modes).max()) if len(self.modes) else 0

    def coefficient(self, n):
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        hit = np.all(self.modes == n, axis=1)
        if not hit.any():
            return np.zeros(self.value_shape, dtype=complex)
        return self.coeffs[hit].sum(axis=0)

    def compact(self, drop_below=0.0):
        """Merge duplicate modes and drop negligible coefficients."""
        if len(self.modes) == 0:
            return self
        uniq, inv = np.unique(self.modes, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        acc = np.zeros((len(uniq),) + self.value_shape, dtype=complex)
        np.add.at(acc, inv, self.coeffs)
        keep = _value_norm(acc) > drop_below
        return TorusPoly(uniq[keep], acc[keep], self.period, self.value_kind)

    # ---- arithmetic ---------------------------------------------------
    def _check_compatible(self, other):
        if other.period != self.period or other.dim != self.dim or other.value_shape != self.value_shape:
            raise ValueError("incompatible TorusPoly operands")

    def __add__(self, other):
        self._check_compatible(other)
        return TorusPoly(np.concatenate([self.modes, other.modes]),
                         np.concatenate([self.coeffs, other.coeffs]),
                         self.period, self.value_kind).compact()

    def __neg__(self):
        return TorusPoly(self.modes, -self.coeffs, self.period, self.value_kind)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, s):
        return TorusPoly(self.modes, self.coeffs * s, self.period, self.value_kind)

    def map_coeffs(self, fn, value_kind=None):
        return TorusPoly(self.modes, fn(self.coeffs), self.period, value_kind or self.value_kind)

    def shifted(self, shift):
        """theta -> f(theta + shift) (shift in radians)."""
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        phase = np.exp(1j * (self.modes @ shift) / self.period)
        return self.map_coeffs(lambda c: c * phase.reshape((-1,) + (1,) * len(self.value_shape)))

    def with_period(self, period):
        """Re-express a period-1 map on the period-2 torus (or back, if possible)."""
        if period == self.period:
            return self
        if self.period == 1 and period == 2:
            return TorusPoly(self.modes * 2, self.coeffs, 2, self.value_kind)
        if np.any(self.modes % 2):
            raise ValueError("map has half-integer frequencies; cannot reduce to period 1")
        return TorusPoly(self.modes // 2, self.coeffs, 1, self.value_kind)

    def real_part(self):
        """Coefficients of Re f, i.e. (f + conj f) / 2 with conj f(n) = conj(fhat(-n))."""
        conj = TorusPoly(-self.modes, np.conj(self.coeffs), self.period, self.value_kind)
        return (self + conj).scaled(0.5)

    def reality_defect(self):
        """max ||fhat(-n) - conj fhat(n)||; zero for real-valued maps."""
        if len(self.modes) == 0:
            return 0.0
        diff = self - TorusPoly(-self.modes, np.conj(self.coeffs), self.period, self.value_kind)
        return float(_value_norm(diff.coeffs).max()) if len(diff.modes) else 0.0

    # ---- grids --------------------------------------------------------
    def to_grid(self, G, shift=None, im_shift=None):
        """Samples on the uniform grid of the period torus (G points per axis)."""
        if len(self.modes) and self.max_index() >= (G + 1) // 2:
            raise ValueError(f"grid of {G} points aliases mode index {self.max_index()}")
        d = self.dim
        phase = np.ones(len(self.modes), dtype=complex)
        if shift is not None:
            phase = phase * np.exp(1j * (self.modes @ np.atleast_1d(shift)) / self.period)
        if im_shift is not None:
            phase = phase * np.exp(-(self.modes @ np.atleast_1d(im_shift)) / self.period)
        hat = np.zeros((G,) * d + self.value_shape, dtype=complex)
        idx = tuple((self.modes % G).T)
        np.add.at(hat, idx, self.coeffs * phase.reshape((-1,) + (1,) * len(self.value_shape)))
        return np.fft.ifftn(hat, axes=tuple(range(d))) * G ** d


def grid_points(G, dim=1, period=1):
    """Uniform grid of the period torus, shape (G,)*dim + (dim,)."""
    axis = 2 * np.pi * period * np.arange(G) / G
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack(mesh, axis=-1)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def eval(f, theta, im_shift=None):  # noqa: A001 - mirrors the mathematical name
    """Direct synthesis at points ``theta`` (shape ``(dim,)`` or ``(P, dim)``)."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim <= 1
    pts = np.atleast_2d(theta.reshape(-1, f.dim)).astype(complex)
    if im_shift is not None:
        pts = pts + 1j * np.atleast_1d(im_shift)[None, :]
    if len(f.modes) == 0:
        out = np.zeros((len(pts),) + f.value_shape, dtype=complex)
    else:
        ph = np.exp(1j * (pts @ f.modes.T) / f.period)
        out = np.tensordot(ph, f.coeffs, axes=(1, 0))
    return out[0] if single else out


def truncate(f, N):
    """(T_N f, R_N f): modes with |k| < N and |k| >= N."""
    low = f.freq_norms() < N
    return (TorusPoly(f.modes[low], f.coeffs[low], f.period, f.value_kind),
            TorusPoly(f.modes[~low], f.coeffs[~low], f.period, f.value_kind))


@dataclass(frozen=True)
class StripNorm:
    radius: float
    value: float
    kind: str


def strip_norm(f, r, kind="coefficient_upper_bound", grid=None):
    """Norm on the complex strip |Im theta| < r.

    ``coefficient_upper_bound``: sum_n ||fhat(n)|| e^{r|n|}  (rigorous).
    ``exact_grid_sup``: max over a real grid and the shifts |Im theta_i| = r(1 - 1e-6).
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if kind == "coefficient_upper_bound":
        if len(f.modes) == 0:
            return StripNorm(r, 0.0, kind)
        val = float(np.sum(_value_norm(f.coeffs) * np.exp(r * f.freq_norms())))
        return StripNorm(r, val, kind)
    if kind != "exact_grid_sup":
        raise ValueError(f"unknown strip norm kind {kind!r}")
    if len(f.modes) == 0:
        return StripNorm(r, 0.0, kind)
    G = grid or _default_grid(f)
    rr = r * (1 - 1e-6)
    best = 0.0
    shifts = [(-rr, 0.0, rr)] * f.dim if r > 0 else [(0.0,)] * f.dim
    for s in product(*shifts):
        vals = f.to_grid(G, im_shift=np.array(s) * f.period)
        best = max(best, float(np.max(_value_norm(vals))))
    return StripNorm(r, best, kind)


def sup_norm(f, grid=None):
    """||f||_0 on a grid."""
    return strip_norm(f, 0.0, "exact_grid_sup", grid).value


def _default_grid(f):
    need = 2 * f.max_index() + 2
    base = DEFAULT_GRID_1D if f.dim == 1 else DEFAULT_GRID_ND
    G = base
    while G < need:
        G *= 2
    return G


def _multi_indices(dim, k):
    for beta in product(range(k + 1), repeat=dim):
        if sum(beta) <= k:
            yield beta


def derivative(f, beta):
    """Spectral partial derivative d^beta f."""
    beta = np.asarray(beta)
    fac = np.prod((1j * f.modes / f.period) ** beta[None, :], axis=1)
    return f.map_coeffs(lambda c: c * fac.reshape((-1,) + (1,) * len(f.value_shape)))


def ck_norm(f, k, grid=None):
    """max over |beta| <= k of the grid sup of d^beta f."""
    if len(f.modes) == 0:
        return 0.0
    G = grid or _default_grid(f)
    best = 0.0
    for beta in _multi_indices(f.dim, k):
        vals = derivative(f, beta).to_grid(G)
        best = max(best, float(np.max(_value_norm(vals))))
    return best


def _h(t):
    return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def cutoff(x):
    """C-infinity flat-top profile: 1 on [0, 1/2], 0 on [1, inf)."""
    x = np.asarray(x, dtype=float)
    a, b = _h(1.0 - x), _h(x - 0.5)
    return a / (a + b)


def smooth_approx(f, j):
    """Analytic approximant f_j: Fourier multiplier cutoff(|n| / j).

    f_j is a trigonometric polynomial (entire), equals f on |n| <= j/2 and
    has no modes with |n| >= j; the multiplier does not depend on any
    smoothness degree.
    """
    if j <= 0:
        raise ValueError("j must be positive")
    w = cutoff(f.freq_norms() / j)
    keep = w > 0
    g = TorusPoly(f.modes[keep], f.coeffs[keep] * w[keep].reshape((-1,) + (1,) * len(f.value_shape)),
                  f.period, f.value_kind)
    return g


def approximation_constants(f, k, js, grid=None):
    """Measured stand-ins for C' in the three approximation properties.

    Returns a dict with the per-j ratios and ``C_prime`` = their maximum:
    ``strip``: |f_j|_{1/j} / ||f||_k, ``step``: |f_{j+1} - f_j|_{1/(j+1)} j^k / ||f||_k,
    and the list ``ck_error`` of ||f_j - f||_k.
    """
    fk = ck_norm(f, k, grid)
    strip, step, err = [], [], []
    for j in js:
        fj, fj1 = smooth_approx(f, j), smooth_approx(f, j + 1)
        strip.append(strip_norm(fj, 1.0 / j).value / fk if fk else 0.0)
        diff = fj1 - fj
        step.append(strip_norm(diff, 1.0 / (j + 1)).value * j ** k / fk if fk else 0.0)
        err.append(ck_norm(fj - f, k, grid) if len((fj - f).modes) else 0.0)
    return {"js": list(js), "strip": strip, "step": step, "ck_error": err,
            "C_prime": max(strip + step) if js else 0.0}


def cauchy_ck_bound(strip_value, r, k0):
    """Cauchy estimate: ||f||_{k0} <= max_{k' <= k0} k'! r^{-k'} |f|_r."""
    if r <= 0:
        raise DegenerateStrip("Cauchy estimate needs r > 0")
    fac = max(math.factorial(kk) * r ** (-kk) for kk in range(k0 + 1))
    return fac * strip_value


# --------------------------------------------------------------------------
# text serialization
# --------------------------------------------------------------------------

def dumps(f):
    lines = [f"TorusPoly dim={f.dim} period={f.period} kind={f.value_kind} "
             f"shape={'x'.join(map(str, f.value_shape)) or 'scalar'}"]
    for n, c in zip(f.modes, f.coeffs):
        flat = np.atleast_1d(c).ravel()
        nums = " ".join(f"{repr(float(z.real))} {repr(float(z.imag))}" for z in flat)
        lines.append(" ".join(str(int(x)) for x in n) + "  " + nums)
    return "\n".join(lines) + "\n"


def loads(text):
    rows = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(tok.split("=") for tok in rows[0].split()[1:])
    dim, period = int(head["dim"]), int(head["period"])
    vshape = () if head["shape"] == "scalar" else tuple(int(x) for x in head["shape"].split("x"))
    modes, coeffs = [], []
    for ln in rows[1:]:
        parts = ln.split()
        modes.append([int(x) for x in parts[:dim]])
        nums = [float(x) for x in parts[dim:]]
        vals = np.array(nums[0::2]) + 1j * np.array(nums[1::2])
        coeffs.append(vals.reshape(vshape))
    modes_arr = np.array(modes, dtype=np.int64).reshape(len(modes), dim)
    coeffs_arr = np.array(coeffs, dtype=complex).reshape((len(modes),) + vshape)
    return TorusPoly(modes_arr, coeffs_arr, period, head["kind"])
