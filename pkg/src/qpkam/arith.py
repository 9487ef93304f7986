"""Diophantine arithmetic: continued fractions, DC(kappa, tau) scans, small
divisors and the resonance search.

Frequencies live on R^d / Z^d; angles are radians.  A resonance of the
elliptic angle rho at n means dist(2 rho - 2 pi <n, alpha>, 2 pi Z) is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import ClaimViolation, NotDiophantine, UnverifiedRange

CLAIM_SCAN_CAP = 10**6
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class DiophantineFrequency:
    alpha: tuple
    kappa: float
    tau: float
    verified_up_to: int

    @property
    def dim(self):
        return len(self.alpha)

    @property
    def alpha_vec(self):
        return np.asarray(self.alpha, dtype=float)


@dataclass(frozen=True)
class ResonanceReport:
    site: tuple | None
    margin: float
    threshold: float
    search_bound: float
    unique_within: float
    claim_scanned_to: int = 0
    claim_holds: bool = True
    second_site: tuple | None = None


def dist_to_int(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


def lattice_points(d, N):
    """Integer vectors with 0 < |n|_1 <= N, one representative of each +-n pair.

    The first nonzero entry is positive; dist(<n, alpha>, Z) is even in n so
    this halves every scan.
    """
    N = int(math.floor(N))
    if N < 1:
        return np.zeros((0, d), dtype=np.int64)
    if d == 1:
        return np.arange(1, N + 1, dtype=np.int64)[:, None]
    rng = range(-N, N + 1)
    pts = np.array([p for p in product(rng, repeat=d) if 0 < sum(map(abs, p)) <= N], dtype=np.int64)
    first = pts[np.arange(len(pts)), np.argmax(pts != 0, axis=1)]
    return pts[first > 0]


def continued_fraction(x, n_terms=40):
    """Partial quotients of x (float), stopping when the remainder vanishes."""
    a = []
    for _ in range(n_terms):
        q = math.floor(x)
        a.append(int(q))
        frac = x - q
        if frac < 1e-15:
            break
        x = 1.0 / frac
    return a


def convergents(x, n_terms=40):
    """Convergents p/q of x as a list of (p, q)."""
    out = []
    p0, q0, p1, q1 = 1, 0, 0, 1
    for ai in continued_fraction(x, n_terms):
        p0, p1 = ai * p0 + p1, p0
        q0, q1 = ai * q0 + q1, q0
        out.append((p0, q0))
    return out


def _rational_period(alpha, N_max):
    """Smallest n <= N_max with n alpha an integer to machine precision (d = 1)."""
    fr = Fraction(float(alpha)).limit_denominator(N_max)
    if abs(float(fr) - alpha) < 1e-15 * max(1, abs(alpha)):
        return fr.denominator
    return None


def _scan(alpha, tau, N_max):
    d = len(alpha)
    if d == 1:
        n = np.arange(1, int(N_max) + 1, dtype=np.int64)
        dist = dist_to_int(n * alpha[0])
        pts = n[:, None]
    else:
        pts = lattice_points(d, N_max)
        dist = dist_to_int(pts @ alpha)
    size = np.abs(pts).sum(axis=1).astype(float)
    return pts, dist, size


def verify_dc(alpha, kappa, tau, N_max):
    """Exhaustive DC(kappa, tau) check over 0 < |n| <= N_max.

    Returns a DiophantineFrequency.  ``kappa=None`` certifies the largest
    admissible constant min |n|^tau dist(<n, alpha>, Z) (taken with a 1e-12
    relative haircut so the strict inequality holds).
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    pts, dist, size = _scan(alpha, tau, N_max)
    if len(alpha) == 1:
        per = _rational_period(alpha[0], N_max)
        if per is not None:
            raise NotDiophantine((per,), 0.0)
    if np.any(dist == 0):
        i = int(np.argmax(dist == 0))
        raise NotDiophantine(tuple(int(v) for v in pts[i]), 0.0)
    score = size ** tau * dist
    i = int(np.argmin(score))
    kappa_max = float(score[i])
    if len(alpha) == 1:
        # best approximations are convergent denominators
        qs = [q for _, q in convergents(alpha[0]) if 0 < q <= N_max]
        cf_min = min(q ** tau * dist_to_int(q * alpha[0]) for q in qs)
        if not math.isclose(cf_min, kappa_max, rel_tol=1e-9):
            raise AssertionError(f"exhaustive scan {kappa_max} disagrees with convergents {cf_min}")
    if kappa is None:
        kappa = kappa_max * (1 - 1e-12)
    elif kappa >= kappa_max:
        raise NotDiophantine(tuple(int(v) for v in pts[i]), float(dist[i]))
    return DiophantineFrequency(tuple(float(a) for a in alpha), float(kappa), float(tau), int(N_max))


def largest_kappa(alpha, tau, N_max):
    """min over 0 < |n| <= N_max of |n|^tau dist(<n, alpha>, Z) and its minimizer."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    pts, dist, size = _scan(alpha, tau, N_max)
    score = size ** tau * dist
    i = int(np.argmin(score))
    return float(score[i]), tuple(int(v) for v in pts[i])


def small_divisor_floor(alpha_dc, N):
    """min over 0 < |n| <= N of dist(<n, alpha>, Z)."""
    if N > alpha_dc.verified_up_to:
        raise UnverifiedRange(f"N={N} beyond verified range {alpha_dc.verified_up_to}")
    _, dist, _ = _scan(alpha_dc.alpha_vec, alpha_dc.tau, N)
    return float(dist.min())


def resonance_margins(rho, alpha, pts):
    """dist(2 rho - 2 pi <n, alpha>, 2 pi Z) for each row of pts."""
    x = (2 * rho - TWO_PI * (pts @ alpha)) / TWO_PI
    return TWO_PI * dist_to_int(x)


def claim_radius(kappa, tau, threshold, N):
    """Radius below which a second resonant site is excluded by DC(kappa, tau).

    Two sites n1, n2 with margins below threshold give
    2 pi kappa / |n1 - n2|^tau <= 2 pi dist(<n1 - n2, alpha>, Z) < 2 threshold.
    """
    return (TWO_PI * kappa / (2 * threshold)) ** (1.0 / tau) - N


def find_resonance(rho, alpha_dc, N, threshold, strict=True):
    """Resonance search on 0 < |n| <= N, then the uniqueness scan.

    ``rho`` is an EigenAngle or a float (elliptic angle).  Ties at the threshold
    count as resonant.  When several sites are below the threshold (possible
    only if the uniqueness radius is violated) the one with the smallest |n|
    is returned, which keeps the resulting conjugacy of lowest frequency.  With ``strict=False`` a second site is reported in the
    result instead of raising ClaimViolation.
    """
    kind = getattr(rho, "kind", "elliptic")
    if kind != "elliptic":
        return ResonanceReport(None, math.inf, threshold, N, math.inf)
    r = float(getattr(rho, "rho", rho))
    alpha = alpha_dc.alpha_vec
    d = len(alpha)
    pts = _both_signs(lattice_points(d, N))
    if len(pts) == 0:
        return ResonanceReport(None, math.inf, threshold, N, math.inf)
    marg = resonance_margins(r, alpha, pts)
    hit = np.flatnonzero(marg <= threshold)
    if len(hit) == 0:
        return ResonanceReport(None, float(marg.min()), threshold, N, math.inf)
    # lowest frequency first, then smallest margin
    order = np.lexsort((marg[hit], np.abs(pts[hit]).sum(axis=1)))
    i = int(hit[order[0]])
    m = float(marg[i])
    site = tuple(int(v) for v in pts[i])
    radius = claim_radius(alpha_dc.kappa, alpha_dc.tau, threshold, N)
    scan_to = _claim_scan_bound(d, max(radius, 0.0))
    second = None
    if scan_to > 0:
        wide = _both_signs(lattice_points(d, scan_to))
        wm = resonance_margins(r, alpha, wide)
        hits = wide[(wm <= threshold) & np.any(wide != np.array(site), axis=1)]
        if len(hits):
            second = tuple(int(v) for v in hits[np.argmin(np.abs(hits).sum(axis=1))])
    if second is not None and strict:
        raise ClaimViolation((site, second))
    return ResonanceReport(site, m, threshold, N, radius, scan_to, second is None, second)


def _both_signs(pts):
    return np.concatenate([pts, -pts]) if len(pts) else pts


def _claim_scan_bound(d, R):
    """Largest integer radius whose lattice ball has at most CLAIM_SCAN_CAP points."""
    R = int(math.floor(min(R, 1e12)))
    if d == 1:
        return min(R, CLAIM_SCAN_CAP)
    cap = int((CLAIM_SCAN_CAP * math.factorial(d) / 2 ** d) ** (1.0 / d))
    return min(R, cap)
