"""KAM almost-reducibility of quasi-periodic cocycles (alpha, A e^{f(theta)}).

One analytic step removes the non-resonant Fourier modes of the perturbation
by a Newton scheme and, at a resonance, rotates the resonant mode to a
constant.  The multi-scale loop drives the steps along shrinking strips and
collects the certified norms; the ledger and window helpers check the
constant chains in log-domain arithmetic.

Conventions: theta is an angle on the 2 pi torus, the base map is
theta -> theta + 2 pi alpha, conjugacies may be 4 pi periodic (period 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import torusmap as tm
from .arith import find_resonance
from .errors import (ClaimViolation, CertificateViolation, DegenerateRho,
                     IftContractFailure, PreconditionFailed, TooLarge,
                     WindowMismatch, LogBranchUndefined)
from .mat2 import (CAYLEY, CAYLEY_INV, I2, Mat2, Alg2, eigen_angle, expm_traceless,
                   inv2, logm_sl2, opnorm, schur_triangularize, _eigvec, _raw)
from .torusmap import TorusPoly

MODES = ("desk", "paper-faithful")
DROP = 1e-16          # coefficients below this are rounding noise
NEWTON_MAX_ITERS = 20


# --------------------------------------------------------------------------
# parameters and schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KamParams:
    sigma: float = 0.1
    D: int = 2
    c_small: float = 1.0
    k: float = 8.0
    k0: int = 1
    M: int = 10
    A_norm_cap: float | None = None
    mode: str = "desk"
    C0: float = 1e3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.sigma < 0.5:
            raise ValueError("sigma must lie in (0, 1/2)")
        if self.M < 10:
            raise ValueError("M must be >= 10")
        if self.D <= 0 or self.c_small <= 0 or self.k <= 0 or self.C0 <= 0:
            raise ValueError("D, c_small, k, C0 must be positive")

    @property
    def paper(self):
        return self.mode == "paper-faithful"

    def relaxations(self, tau, A_norm=1.0):
        """Which of the smoothness/scale hypotheses this parameter set relaxes."""
        out = []
        if self.k < 5 * self.D * tau:
            out.append(f"k={self.k} < 5 D tau={5 * self.D * tau:g}")
        if self.M <= (2 * A_norm) ** self.D / self.c_small:
            out.append("M <= (2||A||)^D / c")
        if self.sigma != 0.1:
            out.append(f"sigma={self.sigma} != 1/10")
        return out

    def check(self, tau, A_norm=1.0):
        bad = self.relaxations(tau, A_norm)
        if self.paper and bad:
            raise PreconditionFailed("; ".join(bad))
        return bad


@dataclass(frozen=True)
class ScaleSchedule:
    """l_j = M^{2^{j-1}}, eps_m = c / ((2||A||)^D m^{k/4}), radii r_j = 1 / l_j."""

    l: tuple
    log_eps: tuple
    A_norm: float
    params: KamParams

    @classmethod
    def build(cls, params, A_norm, n_scales):
        l = tuple(int(params.M) ** (2 ** (j - 1)) for j in range(1, n_scales + 2))
        base = math.log(params.c_small) - params.D * math.log(2 * A_norm)
        log_eps = tuple(base - params.k / 4 * _ln_int(m) for m in l)
        return cls(l, log_eps, float(A_norm), params)

    @property
    def n_scales(self):
        return len(self.l) - 1

    @property
    def eps(self):
        return tuple(math.exp(x) for x in self.log_eps)

    @property
    def radii(self):
        return tuple(1.0 / m for m in self.l)


def _ln_int(m):
    return math.log(m) if m < 2 ** 1000 else float(mpmath.log(mpmath.mpf(m)))


# --------------------------------------------------------------------------
# dense Fourier helpers (period-1 or period-2 grids)
# --------------------------------------------------------------------------

def _pow2_at_least(n, minimum=64):
    G = minimum
    while G < n:
        G *= 2
    return G


def _mode_array(G, d):
    idx = np.fft.fftfreq(G, d=1.0 / G).astype(np.int64)
    mesh = np.meshgrid(*([idx] * d), indexing="ij")
    return np.stack(mesh, axis=-1)


def _to_hat(f, G):
    hat = np.zeros((G,) * f.dim + f.value_shape, dtype=complex)
    if len(f.modes):
        if f.max_index() >= (G + 1) // 2:
            raise ValueError("grid too small for the map")
        np.add.at(hat, tuple((f.modes % G).T), f.coeffs)
    return hat


def _synth(hat, d):
    G = hat.shape[0]
    return np.fft.ifftn(hat, axes=tuple(range(d))) * G ** d


def _anal(vals, d):
    G = vals.shape[0]
    return np.fft.fftn(vals, axes=tuple(range(d))) / G ** d


def _hat_to_poly(hat, d, period=1, kind="algebra", drop=DROP):
    G = hat.shape[0]
    modes = _mode_array(G, d).reshape(-1, d)
    coeffs = hat.reshape((-1,) + hat.shape[d:])
    keep = tm._value_norm(coeffs) > drop
    return TorusPoly(modes[keep], coeffs[keep], period, kind)


def _grid_poly(vals, d, period=1, kind="algebra", drop=DROP):
    return _hat_to_poly(_anal(vals, d), d, period, kind, drop)


def _conj_poly(f, S, Sinv):
    return f.map_coeffs(lambda c: S @ c @ Sinv)


def _alpha_vec(alpha):
    return np.atleast_1d(np.asarray(getattr(alpha, "alpha_vec", alpha), dtype=float))


# --------------------------------------------------------------------------
# homological equation  A^{-1} Y(. + alpha) A - Y = -P_nre g
# --------------------------------------------------------------------------

class _Homological:
    """Coefficient-wise inverse of Y -> A^{-1} Y(. + alpha) A - Y on a grid.

    Works in a unitary Schur basis of A.  For each mode n the operator
    L_n = e^{i w} Ad(T^{-1}) - I on sl(2) (orthonormal coordinates, w = 2 pi <n, alpha>)
    is split by its SVD: left singular directions with singular value >= eta
    are non-resonant and are inverted, the rest is kept.  The projections are
    orthogonal, so ||P_re ghat(n)|| <= sqrt2 ||ghat(n)|| and
    ||Yhat(n)|| <= sqrt2 ||ghat(n)|| / eta.  For diagonal A the singular
    directions are the matrix entries and the divisors are e^{i w} - 1 and
    mu^{-+2} e^{i w} - 1.
    """

    def __init__(self, A, eta, omega, box):
        m = np.asarray(A, dtype=complex)
        self.phase = np.exp(1j * omega)
        self.basis = "schur"
        U, _, _ = schur_triangularize(m)
        self.S, self.Sinv = U, U.conj().T
        T = U @ m @ U.conj().T
        Tinv = inv2(T)
        basis = [np.diag([1.0, -1.0]) / np.sqrt(2), np.array([[0, 1.0], [0, 0]]), np.array([[0, 0], [1.0, 0]])]
        K = np.array([self._coords(Tinv @ E @ T) for E in basis]).T
        L = self.phase[..., None, None] * K - np.eye(3)
        Us, sv, Vh = np.linalg.svd(L)
        keep = (sv >= eta) & box[..., None]
        self.U, self.Vh, self.sv, self.keep = Us, Vh, sv, keep

    @staticmethod
    def _coords(X):
        X = np.asarray(X)
        return np.stack([np.sqrt(2) * X[..., 0, 0], X[..., 0, 1], X[..., 1, 0]], axis=-1)

    @staticmethod
    def _from_coords(w):
        a = w[..., 0] / np.sqrt(2)
        out = np.empty(w.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = a, w[..., 1], w[..., 2], -a
        return out

    def split(self, hat):
        """(L^{-1} P_nre hat, P_nre hat) for a coefficient array."""
        w = self._coords(self.S @ hat @ self.Sinv)
        c = np.einsum("...ji,...j->...i", self.U.conj(), w)      # U^* w
        c = np.where(self.keep, c, 0.0)
        w_nre = np.einsum("...ij,...j->...i", self.U, c)
        y = np.einsum("...ji,...j->...i", self.Vh.conj(), c / np.where(self.keep, self.sv, 1.0))
        return (self.Sinv @ self._from_coords(y) @ self.S,
                self.Sinv @ self._from_coords(w_nre) @ self.S)

    def resonant_count(self):
        return int((~self.keep).sum())


@dataclass(frozen=True)
class NonresonantResult:
    Y: TorusPoly
    g_re: TorusPoly
    iterations: int
    residual: float
    residual_history: tuple
    basis: str
    grid: int

    def __iter__(self):
        yield self.Y
        yield self.g_re


def nonresonant_reduce(A, g, r, eta, eps, alpha, *, check=False, grid=None,
                       max_iters=NEWTON_MAX_ITERS, tol=None):
    """Remove the non-resonant modes of g:  e^{Y(.+alpha)} A e^{g} e^{-Y} = A e^{g_re}.

    Chord Newton on Psi(Y) = P_nre log(e^{A^{-1} Y(.+alpha) A} e^{g} e^{-Y}) with
    the linearization at Y = 0; the logarithm is evaluated exactly on the grid.
    Returns a NonresonantResult that unpacks as (Y, g_re).
    """
    Am = np.asarray(_raw(A), dtype=complex)
    A_norm = float(opnorm(Am))
    if g.period != 1:
        raise ValueError("perturbation must be 1-periodic")
    if check:
        g_r = tm.strip_norm(g, r).value
        bad = []
        if g_r > eps * (1 + 1e-12):
            bad.append(f"|g|_r={g_r:.3e} > eps={eps:.3e}")
        if eta < 13 * A_norm ** 2 * math.sqrt(eps):
            bad.append(f"eta={eta:.3e} < 13||A||^2 eps^(1/2)")
        if eps > (4 * A_norm) ** -4:
            bad.append("eps > (4||A||)^-4")
        if bad:
            raise PreconditionFailed("; ".join(bad))
    d = g.dim
    alpha = _alpha_vec(alpha)
    G = grid or _pow2_at_least(8 * (g.max_index() + 1))
    modes = _mode_array(G, d)
    omega = 2 * np.pi * (modes @ alpha)
    box = np.all(np.abs(modes) < G // 4, axis=-1)
    H = _Homological(Am, eta, omega, box)
    tol = 1e-13 * (1 + A_norm) if tol is None else tol

    g_grid = _synth(_to_hat(g, G), d)
    eg = expm_traceless(g_grid)
    Ainv = inv2(Am)
    Yhat = np.zeros_like(g_grid)
    hist = []
    for it in range(1, max_iters + 1):
        Y = _synth(Yhat, d)
        Ysh = _synth(Yhat * H.phase[..., None, None], d)
        prod = expm_traceless(Ainv @ Ysh @ Am) @ eg @ expm_traceless(-Y)
        psi = logm_sl2(prod)
        corr, nre = H.split(_anal(psi, d))
        res = float(np.sum(np.linalg.norm(nre, axis=(-2, -1))))
        hist.append(res)
        if res <= tol:
            break
        if len(hist) >= 4 and hist[-1] > hist[-2] > hist[-3] > hist[-4]:
            raise IftContractFailure(f"residual grew for 3 iterations: {hist[-4:]}")
        Yhat = Yhat - corr
    else:
        raise IftContractFailure(f"no convergence in {max_iters} iterations (residual {hist[-1]:.3e})")
    Yp = _hat_to_poly(Yhat, d)
    g_re = _grid_poly(psi, d)
    return NonresonantResult(Yp, g_re, it, hist[-1], tuple(hist), H.basis, G)


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    branch: str
    B: TorusPoly
    A_plus: Mat2
    f_plus: TorusPoly
    resonance: object
    certificates: dict
    violations: tuple = ()
    eps: float = 0.0
    N: float = 0.0
    A_dprime: Alg2 | None = None
    lift_sign: int = 1
    newton_iterations: int = 0


def _real_sl2(X):
    return np.real_if_close(CAYLEY_INV @ X @ CAYLEY, tol=1e6).real


def _to_su(f):
    return _conj_poly(f, CAYLEY, CAYLEY_INV)


def _to_sl(f):
    return _conj_poly(f, CAYLEY_INV, CAYLEY).real_part().compact(DROP)


def _exp_poly(Y, G=None, period=1):
    """e^{Y(theta)} as a group-valued map, via a grid of G points per axis."""
    G = G or _pow2_at_least(4 * (Y.max_index() + 1))
    vals = expm_traceless(Y.to_grid(G))
    return _grid_poly(vals, Y.dim, period, "group")


def _log_split(L, F):
    """f with e^{L} e^{f(theta)} = e^{L + F(theta)}, F a TorusPoly, L constant."""
    G = _pow2_at_least(4 * (F.max_index() + 1))
    vals = expm_traceless(-L) @ expm_traceless(L + F.to_grid(G))
    return _grid_poly(logm_sl2(vals), F.dim)


def _identity_map(dim, period=2):
    return TorusPoly.constant(I2, dim, period, "group")


def _trivial_step(Am, f):
    B = _identity_map(f.dim)
    cert = {"B_norm0": 1.0, "B_strip": 1.0, "f_plus_strip": 0.0, "dA": 0.0}
    return StepResult("nonresonant", B, Mat2(Am, "SL2R"), TorusPoly.zero(f.dim), None, cert)


def _su11_diagonalizer(A_su, rho):
    """P in SU(1,1) with P A P^{-1} = diag(e^{i rho_su}, e^{-i rho_su}); returns (P, rho_su)."""
    if abs(math.sin(rho)) < 1e-12:
        raise DegenerateRho(f"elliptic angle {rho} too close to 0 or pi")
    v = _eigvec(A_su, np.exp(1j * rho))
    form = abs(v[0]) ** 2 - abs(v[1]) ** 2
    rho_su = rho
    if form < 0:
        rho_su = -rho
        v = _eigvec(A_su, np.exp(-1j * rho))
        form = abs(v[0]) ** 2 - abs(v[1]) ** 2
    if form <= 1e-14:
        raise DegenerateRho("eigenvector is isotropic for the SU(1,1) form")
    v = v / math.sqrt(form)
    Pinv = np.array([[v[0], np.conj(v[1])], [v[1], np.conj(v[0])]])
    return np.linalg.inv(Pinv), Pinv, rho_su


def _q_conjugate(g, n):
    """Q g Q^{-1} with Q(theta) = diag(e^{-i<n,theta>/2}, e^{i<n,theta>/2}) (exact on coefficients)."""
    n = np.asarray(n, dtype=np.int64)
    z = np.zeros_like(g.coeffs)
    diag, up, lo = z.copy(), z.copy(), z.copy()
    diag[:, 0, 0], diag[:, 1, 1] = g.coeffs[:, 0, 0], g.coeffs[:, 1, 1]
    up[:, 0, 1] = g.coeffs[:, 0, 1]
    lo[:, 1, 0] = g.coeffs[:, 1, 0]
    parts = [TorusPoly(g.modes, diag, 1), TorusPoly(g.modes - n, up, 1), TorusPoly(g.modes + n, lo, 1)]
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out.compact(DROP)


def _q_times(Bmap, n):
    """Q(theta) Bmap(theta) for a period-2 map: row shifts by -n, +n in half-frequency labels."""
    n = np.asarray(n, dtype=np.int64)
    top, bot = np.zeros_like(Bmap.coeffs), np.zeros_like(Bmap.coeffs)
    top[:, 0, :] = Bmap.coeffs[:, 0, :]
    bot[:, 1, :] = Bmap.coeffs[:, 1, :]
    return (TorusPoly(Bmap.modes - n, top, 2, "group") + TorusPoly(Bmap.modes + n, bot, 2, "group")).compact(DROP)


def kam_step(A, f, r, r_prime, params, alpha_dc, eps=None):
    """One almost-reducibility step for (alpha, A e^{f}), f sl(2,R)-valued.

    Returns a StepResult with B (period 2, SL(2,R)-valued), A_plus and f_plus
    such that B(theta+alpha) A e^{f(theta)} B(theta)^{-1} = A_plus e^{f_plus(theta)}.
    """
    Am = np.real(np.asarray(_raw(A), dtype=complex))
    if not 0 < r_prime < r:
        raise ValueError("need 0 < r_prime < r")
    f = f.compact()
    if len(f.modes) == 0:
        return _trivial_step(Am, f)
    eps = float(eps if eps is not None else tm.strip_norm(f, r).value)
    if eps <= 0:
        return _trivial_step(Am, f)
    sigma = params.sigma
    alpha = alpha_dc.alpha_vec
    A_norm = float(opnorm(Am))
    N = 2.0 / (r - r_prime) * abs(math.log(eps))
    ang = eigen_angle(Am)
    report = find_resonance(ang, alpha_dc, N, eps ** sigma, strict=params.paper)
    A_su = CAYLEY @ Am @ CAYLEY_INV
    f_su = _to_su(f)

    if report.site is None:
        res = nonresonant_reduce(A_su, f_su, r, eps ** (3 * sigma), eps, alpha)
        g0 = res.g_re.coefficient(np.zeros(f.dim, dtype=np.int64))
        A_plus_su = A_su @ expm_traceless(g0)
        f_plus_su = _log_split(g0, res.g_re - TorusPoly.constant(g0, f.dim))
        B_su = _exp_poly(res.Y).with_period(2)
        branch, A_dp, sign, Pn = "nonresonant", None, 1, 1.0
    else:
        P, Pinv, rho_su = _su11_diagonalizer(A_su, ang.rho)
        s = 1 if rho_su == ang.rho else -1
        n_su = s * np.asarray(report.site, dtype=np.int64)
        D0 = np.diag([np.exp(1j * rho_su), np.exp(-1j * rho_su)])
        g = _conj_poly(f_su, P, Pinv)
        res = nonresonant_reduce(D0, g, r, eps ** sigma, eps, alpha)
        zero = np.zeros(f.dim, dtype=np.int64)
        L = np.zeros((2, 2), dtype=complex)
        c0 = res.g_re.coefficient(zero)
        L[0, 0], L[1, 1] = c0[0, 0], c0[1, 1]
        L[0, 1] = res.g_re.coefficient(n_su)[0, 1]
        L[1, 0] = res.g_re.coefficient(-n_su)[1, 0]
        F = _q_conjugate(res.g_re, n_su) - TorusPoly.constant(L, f.dim)
        phi = rho_su - np.pi * float(n_su @ alpha)
        A_tilde = np.diag([np.exp(1j * phi), np.exp(-1j * phi)])
        A_plus_su = A_tilde @ expm_traceless(L)
        f_plus_su = _log_split(L, F.compact(DROP))
        B_su = _q_times(_exp_poly(res.Y).with_period(2), n_su).map_coeffs(lambda c: c @ P)
        sign = 1 if np.trace(A_plus_su).real >= 0 else -1
        A_dp_su = logm_sl2(sign * A_plus_su)
        A_dp = Alg2(_real_sl2(A_dp_su), "sl2R")
        branch, Pn = "resonant", float(opnorm(P))

    A_plus = Mat2(_real_sl2(A_plus_su), "SL2R")
    f_plus = _to_sl(f_plus_su)
    B = _conj_poly(B_su, CAYLEY_INV, CAYLEY).real_part().compact(DROP)
    B = TorusPoly(B.modes, B.coeffs, 2, "group")
    cert = {
        "eps": eps,
        "N": N,
        "B_norm0": tm.sup_norm(B),
        "B_strip": tm.strip_norm(B, r_prime).value,
        "f_plus_strip": tm.strip_norm(f_plus, r_prime).value if len(f_plus.modes) else 0.0,
        "dA": float(opnorm(A_plus.m - Am)),
    }
    bounds = {}
    if branch == "nonresonant":
        bounds["dA"] = 2 * A_norm * eps
        bounds["f_plus_strip"] = 4 * eps ** (3 - 2 * sigma)
    else:
        cert["A_dprime"] = float(opnorm(A_dp.m))
        cert["P_norm"] = Pn
        bounds["B_norm0"] = eps ** (-sigma / 10)
        bounds["B_strip"] = eps ** (-sigma / 10) * eps ** (-r_prime / (r - r_prime))
        bounds["A_dprime"] = 2 * eps ** sigma
    cert["bounds"] = bounds
    violations = tuple(k for k, b in bounds.items() if not cert[k] <= b)
    step = StepResult(branch, B, A_plus, f_plus, report, cert, violations, eps, N,
                      A_dp, sign, res.iterations)
    if violations and params.paper:
        err = CertificateViolation(f"{branch} step violates {violations}")
        err.step = step
        raise err
    return step


def cocycle_on_grid(B, A, f, alpha, G):
    """B(theta+alpha) A e^{f(theta)} B(theta)^{-1} on the period-2 grid of G points per axis."""
    Am = np.asarray(_raw(A), dtype=complex)
    B2 = B.with_period(2)
    shift = 2 * np.pi * _alpha_vec(alpha)
    Bsh = B2.to_grid(G, shift=shift)
    Bv = B2.to_grid(G)
    ef = expm_traceless(f.with_period(2).to_grid(G)) if len(f.modes) else np.broadcast_to(I2, Bv.shape)
    return Bsh @ (Am @ ef) @ inv2(Bv)


def conjugacy_defect(A, f, alpha, B, A_plus, f_plus, G=4096):
    """max over the grid of ||B(theta+alpha) A e^{f} B^{-1} - A_plus e^{f_plus}||."""
    need = 2 * max(B.with_period(2).max_index(), 2 * f.max_index(), 2 * f_plus.max_index()) + 2
    G = _pow2_at_least(need, G)
    lhs = cocycle_on_grid(B, A, f, alpha, G)
    ef = expm_traceless(f_plus.with_period(2).to_grid(G)) if len(f_plus.modes) else I2
    rhs = np.asarray(_raw(A_plus), dtype=complex) @ ef
    return float(np.max(opnorm(lhs - rhs)))


# --------------------------------------------------------------------------
# multi-scale loop
# --------------------------------------------------------------------------

@dataclass
class ScaleRecord:
    j: int
    l: int
    eps_schedule: float
    eps_used: float
    eps_over_schedule: bool
    branch: str
    site: tuple | None
    B_norm0: float
    B_strip: float
    A_norm: float
    gamma: complex
    c: complex
    sharp_product: float
    f_prime_strip: float
    F_norm0: float | None = None
    F_ck: float | None = None
    F_ck_cauchy: float | None = None
    lam: float = 0.0
    hyperbolic_test: str = "skipped"
    flags: list = field(default_factory=list)


@dataclass
class ReducibilityCertificate:
    A: np.ndarray
    A_norm: float
    steps: list
    scales: list
    final_case: str
    B: TorusPoly | None = None
    A_last: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def violations(self):
        return [(s.j, fl) for s in self.scales for fl in s.flags]

    def to_text(self):
        """One record per scale; floats in repr form so equal runs give equal text."""
        lines = [f"final_case {self.final_case}", f"A_norm {self.A_norm!r}"]
        for s in self.scales:
            site = "-" if s.site is None else ",".join(map(str, s.site))
            lines.append(
                f"scale j={s.j} l={s.l} branch={s.branch} site={site} "
                f"eps_schedule={s.eps_schedule!r} eps_used={s.eps_used!r} "
                f"B_norm0={s.B_norm0!r} B_strip={s.B_strip!r} A_norm={s.A_norm!r} "
                f"gamma={s.gamma.real!r},{s.gamma.imag!r} c={s.c.real!r},{s.c.imag!r} "
                f"sharp={s.sharp_product!r} f_prime={s.f_prime_strip!r} "
                f"F0={s.F_norm0!r} Fk={s.F_ck!r} lam={s.lam!r} hyp={s.hyperbolic_test} "
                f"flags={'|'.join(s.flags) or '-'}")
        for k in sorted(self.diagnostics):
            lines.append(f"diag {k} {self.diagnostics[k]!r}")
        return "\n".join(lines) + "\n"


def compose(B_new, B_old):
    """Pointwise product B_new(theta) B_old(theta) of period-2 maps."""
    a, b = B_new.with_period(2), B_old.with_period(2)
    G = _pow2_at_least(2 * (a.max_index() + b.max_index()) + 4)
    vals = a.to_grid(G) @ b.to_grid(G)
    return _grid_poly(vals, a.dim, 2, "group")


def _conjugated_perturbation(B, A, f, A_n, alpha):
    """f~ with B(theta+alpha) A e^{f} B^{-1} = A_n e^{f~}, returned as a 1-periodic map."""
    G = _pow2_at_least(4 * (B.with_period(2).max_index() + 2 * f.max_index() + 2))
    vals = np.linalg.inv(A_n) @ cocycle_on_grid(B, A, f, alpha, G)
    ft = _grid_poly(logm_sl2(vals), f.dim, 2)
    odd = np.any(ft.modes % 2, axis=1)
    odd_mass = float(tm._value_norm(ft.coeffs[odd]).sum()) if odd.any() else 0.0
    even = TorusPoly(ft.modes[~odd] // 2, ft.coeffs[~odd], 1)
    return even.real_part().compact(DROP), odd_mass


def _hyperbolic_rescale_test(A_n, F_grid, lam, eps, A_norm):
    """Rescale the triangular form by diag(d, 1/d), d = (2||A||)^{-1/2} eps^{1/2}, and
    test the slope-1 cone: UH if 2 e < sinh(lam) and e^{lam} - 2 e > 1, where e
    bounds the perturbation of diag(e^{lam}, e^{-lam})."""
    U, gamma, c = schur_triangularize(A_n)
    d = math.sqrt(eps / (2 * A_norm))
    Dm = np.diag([d, 1.0 / d])
    Dinv = np.diag([1.0 / d, d])
    Z = Dm @ U @ (A_n + F_grid) @ U.conj().T @ Dinv
    lead = np.diag([np.exp(gamma), np.exp(-gamma)])
    e = float(np.max(opnorm(Z - lead)))
    uh = 2 * e < math.sinh(lam) and math.exp(lam) - 2 * e > 1
    return ("UH" if uh else "fold"), e


def _run_loop(A, f_at, schedule, params, alpha_dc, max_steps, f_true=None, uh_check=None):
    Am = np.real(np.asarray(_raw(A), dtype=complex))
    A_norm = float(opnorm(Am))
    alpha = alpha_dc.alpha_vec
    dim = f_at(1).dim
    B = _identity_map(dim)
    A_n = Am.copy()
    steps, scales, diag = [], [], {}
    final = "almost_reduced"
    radii, eps_s = schedule.radii, schedule.eps
    n = min(schedule.n_scales, max_steps)
    for j in range(1, n + 1):
        r, rp = radii[j - 1], radii[j]
        fj = f_at(j)
        if j == 1:
            ft, odd = fj, 0.0
        else:
            ft, odd = _conjugated_perturbation(B, Am, fj, A_n, alpha)
        measured = tm.strip_norm(ft, r).value if len(ft.modes) else 0.0
        over = measured > eps_s[j - 1]
        eps_used = measured if over else eps_s[j - 1]
        try:
            step = kam_step(A_n, ft, r, rp, params, alpha_dc, eps=eps_used if measured > 0 else None)
        except (IftContractFailure, DegenerateRho, ClaimViolation, LogBranchUndefined) as exc:
            final = "stalled"
            diag["stalled_at"] = j
            diag["reason"] = f"{type(exc).__name__}: {exc}"
            break
        steps.append(step)
        B = compose(step.B, B)
        A_n = np.real(step.A_plus.m)
        U, gamma, c = schur_triangularize(A_n)
        B0 = tm.sup_norm(B)
        rec = ScaleRecord(
            j=j, l=schedule.l[j - 1], eps_schedule=eps_s[j - 1], eps_used=eps_used,
            eps_over_schedule=over, branch=step.branch,
            site=None if step.resonance is None else step.resonance.site,
            B_norm0=B0, B_strip=tm.strip_norm(B, rp).value, A_norm=float(opnorm(A_n)),
            gamma=gamma, c=c, sharp_product=abs(c) * B0 ** 2,
            f_prime_strip=step.certificates["f_plus_strip"])
        if odd > 1e-10:
            rec.flags.append(f"odd_modes={odd:.2e}")
        if over:
            rec.flags.append("eps_over_schedule")
        rec.flags.extend(f"step:{v}" for v in step.violations)
        if rec.sharp_product > 8 * A_norm:
            rec.flags.append("sharp_bound")
        if rec.A_norm > 2 * A_norm:
            rec.flags.append("A_norm_growth")
        if f_true is not None:
            G = _pow2_at_least(4 * (B.max_index() + 2 * f_true.max_index() + 2))
            F_grid = cocycle_on_grid(B, Am, f_true, alpha, G) - A_n
            Fp = _grid_poly(F_grid, dim, 2)
            rec.F_norm0 = float(np.max(opnorm(F_grid)))
            rec.F_ck = tm.ck_norm(Fp, params.k0) if len(Fp.modes) else 0.0
            rec.F_ck_cauchy = tm.cauchy_ck_bound(tm.strip_norm(Fp, rp).value, rp, params.k0)
            lam = abs(gamma.real)
            rec.lam = lam
            if lam > eps_s[j - 1] ** 0.25:
                verdict, e = _hyperbolic_rescale_test(A_n, F_grid, lam, eps_s[j - 1], A_norm)
                rec.hyperbolic_test = verdict
                if verdict == "UH":
                    if uh_check is not None:
                        diag["uh_cross_check"] = uh_check()
                    scales.append(rec)
                    final = "uniformly_hyperbolic_detected"
                    break
            elif lam > 0:
                rec.hyperbolic_test = "folded"
            if rec.F_norm0 > eps_s[j - 1] ** 0.25 + lam:
                rec.flags.append("F_tilde_bound")
        scales.append(rec)
    return ReducibilityCertificate(Am, A_norm, steps, scales, final, B, A_n, diag)


def kam_loop(A, f, schedule, max_steps=None, *, params=None, alpha_dc=None):
    """Iterate kam_step along the radii 1/l_j for an analytic perturbation f."""
    params = params or schedule.params
    max_steps = max_steps or schedule.n_scales
    if len(f.compact().modes) == 0:
        return _trivial_certificate(A, f.dim, schedule, max_steps)
    return _run_loop(A, lambda j: f, schedule, params, alpha_dc, max_steps)


def kam_loop_ck(A, f, params, schedule, max_steps=None, *, alpha_dc=None, uh_cross_check=True):
    """C^k entry point: drive the loop with the analytic approximants f_{l_j} and
    record F~_{l_j} = B_{l_j}(theta+alpha) A e^{f} B_{l_j}^{-1} - A_{l_j}."""
    max_steps = max_steps or schedule.n_scales
    if len(f.compact().modes) == 0:
        return _trivial_certificate(A, f.dim, schedule, max_steps, with_F=True)
    approx = {}

    def f_at(j):
        if j not in approx:
            approx[j] = tm.smooth_approx(f, schedule.l[j - 1])
        return approx[j]

    uh = None
    if uh_cross_check:
        from .dynamics import Cocycle, is_uniformly_hyperbolic

        def uh():
            Am = np.real(np.asarray(_raw(A), dtype=complex))
            G = _pow2_at_least(4 * (f.max_index() + 1), 256)
            vals = Am @ expm_traceless(f.to_grid(G))
            verdict, _ = is_uniformly_hyperbolic(Cocycle.from_grid(alpha_dc.alpha_vec, vals), horizon=64)
            return verdict
    cert = _run_loop(A, f_at, schedule, params, alpha_dc, max_steps, f_true=f, uh_check=uh)
    ks = [s for s in cert.scales if s.F_ck and s.F_ck > 0]
    if len(ks) >= 2:
        x = np.log([float(s.l) for s in ks])
        y = np.log([s.F_ck for s in ks])
        cert.diagnostics["F_ck_decay_exponent"] = float(-np.polyfit(x, y, 1)[0])
    return cert


def _trivial_certificate(A, dim, schedule, n, with_F=False):
    Am = np.real(np.asarray(_raw(A), dtype=complex))
    A_norm = float(opnorm(Am))
    U, gamma, c = schur_triangularize(Am)
    scales = []
    for j in range(1, min(n, schedule.n_scales) + 1):
        scales.append(ScaleRecord(j, schedule.l[j - 1], schedule.eps[j - 1], schedule.eps[j - 1], False,
                                  "nonresonant", None, 1.0, 1.0, A_norm, gamma, c, abs(c), 0.0,
                                  0.0 if with_F else None, 0.0 if with_F else None, 0.0 if with_F else None))
    return ReducibilityCertificate(Am, A_norm, [], scales, "almost_reduced", _identity_map(dim), Am, {})


# --------------------------------------------------------------------------
# constant chains and the Hoelder window
# --------------------------------------------------------------------------

@dataclass
class LedgerReport:
    chains: dict
    first_failure: dict
    slack: dict
    j_max: int
    admissible_M: bool

    @property
    def all_hold(self):
        return all(v is None for v in self.first_failure.values())


def eta_crossover(A_norm=1.0, sigma=0.1):
    """Largest eps with eps^{3 sigma} >= 13 ||A||^2 eps^{1/2}: (13 ||A||^2)^{-1/(1/2 - 3 sigma)}."""
    return (13 * A_norm ** 2) ** (-1.0 / (0.5 - 3 * sigma))


def verify_scale_ledger(params, alpha_dc, A_norm, j_max, C0=None, c=None, dps=50):
    """Log-domain check of the four constant chains for j = 1..j_max.

    (i)   seed: m^{-k/4} <= (1/m - 1/m^2)^{D tau} for m = 10..10^6 and m = l_j;
    (ii)  induction: (1/2) eps_{l_n}^{5/2} <= (1/2) eps_{l_{n+1}} and
          2 ||A||^2 eps_{l_n}^{-4 sigma/5} c_A / l_n^{k-1} <= (1/2) c_A / l_n^{k/2},
          c_A = c / (2||A||)^D;
    (iii) eps_{l_j}^{3 sigma} >= 13 ||A||^2 eps_{l_j}^{1/2};
    (iv)  C0 l_j^{-k/16} <= c l_{j+1}^{-k/40}.
    Slack is RHS - LHS in natural log (>= 0 means the inequality holds).
    """
    if j_max > 40:
        raise ValueError("j_max must be <= 40")
    tau = alpha_dc.tau if hasattr(alpha_dc, "tau") else float(alpha_dc)
    C0 = params.C0 if C0 is None else C0
    c = params.c_small if c is None else c
    with mpmath.workdps(dps):
        mp = mpmath.mpf
        k, D, sig = mp(params.k), mp(params.D), mp(params.sigma)
        lnM = mpmath.log(mp(params.M))
        ln_cA = mpmath.log(mp(params.c_small)) - D * mpmath.log(2 * mp(A_norm))
        ln_l = [None] + [mp(2) ** (j - 1) * lnM for j in range(1, j_max + 3)]
        ln_eps = [None] + [ln_cA - k / 4 * ln_l[j] for j in range(1, j_max + 3)]

        def seed(lnm):
            # ln((1/m - 1/m^2)^{D tau}) - ln(m^{-k/4}),  1/m - 1/m^2 = e^{-lnm}(1 - e^{-lnm})
            return D * tau * (-lnm + mpmath.log1p(-mpmath.exp(-lnm))) + k / 4 * lnm

        chains = {"i": [], "ii": [], "iii": [], "iv": []}
        grid_slack = min(seed(mpmath.log(m)) for m in list(range(10, 1000)) + list(np.geomspace(1e3, 1e6, 200)))
        for j in range(1, j_max + 1):
            chains["i"].append(min(grid_slack, seed(ln_l[j]), seed(ln_l[j + 1])))
            a = (ln_eps[j + 1]) - (mp(5) / 2 * ln_eps[j])
            b = (mpmath.log(mp(0.5)) + ln_cA - k / 2 * ln_l[j]) - (
                mpmath.log(2 * mp(A_norm) ** 2) - 4 * sig / 5 * ln_eps[j] + ln_cA - (k - 1) * ln_l[j])
            chains["ii"].append(min(a, b))
            chains["iii"].append((3 * sig * ln_eps[j]) - (mpmath.log(13 * mp(A_norm) ** 2) + ln_eps[j] / 2))
            chains["iv"].append((mpmath.log(mp(c)) - k / 40 * ln_l[j + 1]) - (mpmath.log(mp(C0)) - k / 16 * ln_l[j]))
        slack = {name: [float(v) for v in vals] for name, vals in chains.items()}
        first = {name: next((j + 1 for j, v in enumerate(vals) if v < 0), None) for name, vals in chains.items()}
        holds = {name: first[name] is None for name in chains}
        admissible = bool(lnM > -ln_cA)  # M > (2||A||)^D / c
    return LedgerReport(holds, first, slack, j_max, admissible)


def window_bounds(j, params, C0=None, c=None):
    """ln of the endpoints of I_j = [C0 l_j^{-k/16}, c l_j^{-k/40}]."""
    C0 = params.C0 if C0 is None else C0
    c = params.c_small if c is None else c
    ln_l = mpmath.mpf(2) ** (j - 1) * mpmath.log(params.M)
    return (mpmath.log(C0) - params.k / mpmath.mpf(16) * ln_l,
            mpmath.log(c) - params.k / mpmath.mpf(40) * ln_l)


def holder_window(eps, params, C0=None, c=None, j_limit=60, log_eps=None):
    """Smallest j with eps in I_j.  ``log_eps`` may be given instead of eps for
    values below double precision."""
    le = mpmath.mpf(log_eps) if log_eps is not None else mpmath.log(mpmath.mpf(eps))
    lo1, hi1 = window_bounds(1, params, C0, c)
    if le > hi1:
        raise TooLarge(f"eps above the first window (ln eps = {float(le):.3f} > {float(hi1):.3f})")
    for j in range(1, j_limit + 1):
        lo, hi = window_bounds(j, params, C0, c)
        if lo <= le <= hi:
            return j
        if le > hi:
            raise WindowMismatch(f"eps falls in the gap above window {j}")
    raise TooLarge("eps below the last window searched")


def window_covering(params, j_max, C0=None, c=None):
    """True iff consecutive windows overlap for j = 1..j_max (no gaps)."""
    for j in range(1, j_max + 1):
        lo, _ = window_bounds(j, params, C0, c)
        _, hi_next = window_bounds(j + 1, params, C0, c)
        if lo > hi_next:
            return False
    return True


@dataclass(frozen=True)
class RescaleReport:
    d: float
    gamma: complex
    diag_bound: float
    upper_bound: float
    lower_bound: float
    Z_bound: float
    le_bound: float


def rescale_triangular(A_lj, F_norm, B_norm, c_j, eps):
    """Bounds for Z = D (A_lj + F) D^{-1}, D = diag(d, 1/d), d = ||B||_0 eps^{1/4}.

    (1,2) entry: d^2 (|c_j| + F); (2,1): d^{-2} F; diagonal: F.  The total is
    max|e^{+-gamma}| + the Frobenius norm of the entry bounds; ln of it bounds the LE.
    """
    d = B_norm * eps ** 0.25
    if d > 1:
        raise WindowMismatch(f"d = {d:.3e} > 1: eps too large for this scale")
    _, gamma, _ = schur_triangularize(np.asarray(_raw(A_lj), dtype=complex))
    lead = max(abs(np.exp(gamma)), abs(np.exp(-gamma)))
    up = d * d * (abs(c_j) + F_norm)
    lo = F_norm / (d * d) if F_norm > 0 else 0.0
    pert = math.sqrt(2 * F_norm ** 2 + up ** 2 + lo ** 2)
    Z = lead + pert
    return RescaleReport(d, gamma, F_norm, up, lo, Z, math.log(Z))
