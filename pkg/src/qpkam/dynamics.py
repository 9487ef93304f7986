"""Finite-scale Lyapunov exponents, fibered rotation numbers and uniform
hyperbolicity for quasi-periodic SL(2) cocycles (theta -> theta + 2 pi alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import HomotopyObstruction, NumericOverflow
from .mat2 import opnorm
from .torusmap import TorusPoly

RENORM_EVERY = 32
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class Cocycle:
    """(alpha, A(theta)).  Exactly one of ``const``, ``map`` or ``schrodinger`` is set.

    ``schrodinger`` = (V, lam, E) encodes S_E(theta) = [[lam V(theta) - E, -1], [1, 0]]
    with V a real scalar TorusPoly; E may be complex.
    """

    alpha: np.ndarray
    const: np.ndarray | None = None
    map: TorusPoly | None = None
    schrodinger: tuple | None = None
    domain_kind: str = "real"

    @classmethod
    def constant(cls, A, alpha=(0.0,)):
        A = np.asarray(A, dtype=complex)
        kind = "real" if np.max(np.abs(A.imag)) <= 1e-14 else "complex"
        return cls(np.atleast_1d(np.asarray(alpha, float)), const=A, domain_kind=kind)

    @classmethod
    def from_map(cls, alpha, f):
        kind = "real" if f.reality_defect() <= 1e-10 else "complex"
        return cls(np.atleast_1d(np.asarray(alpha, float)), map=f, domain_kind=kind)

    @classmethod
    def from_grid(cls, alpha, vals):
        """Group-valued samples on the uniform grid of the (period-1) torus."""
        return cls.from_map(alpha, TorusPoly.from_grid(vals, 1, "group", drop_below=1e-15))

    @classmethod
    def schrodinger_family(cls, V, lam, E, alpha):
        kind = "real" if np.imag(E) == 0 else "complex"
        return cls(np.atleast_1d(np.asarray(alpha, float)), schrodinger=(V, float(lam), E), domain_kind=kind)

    @property
    def dim(self):
        if self.map is not None:
            return self.map.dim
        if self.schrodinger is not None:
            return self.schrodinger[0].dim
        return len(self.alpha)

    def at(self, theta):
        """Matrices at angles theta, shape (P, d) -> (P, 2, 2)."""
        theta = np.asarray(theta, dtype=float).reshape(-1, self.dim)
        if self.const is not None:
            return np.broadcast_to(self.const, (len(theta), 2, 2)).astype(complex)
        if self.map is not None:
            from .torusmap import eval as teval
            return np.asarray(teval(self.map, theta)).reshape(-1, 2, 2)
        V, lam, E = self.schrodinger
        from .torusmap import eval as teval
        v = np.real(np.asarray(teval(V, theta)).reshape(-1))
        out = np.zeros((len(theta), 2, 2), dtype=complex)
        out[:, 0, 0] = lam * v - E
        out[:, 0, 1] = -1.0
        out[:, 1, 0] = 1.0
        return out


@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    n_iters: int
    theta_samples: int
    convergence_tail: tuple
    error_bar: float
    orbit_value: float = float("nan")
    grid_value: float = float("nan")


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _op_norm(a11, a12, a21, a22):
    f2 = abs(a11) ** 2 + abs(a12) ** 2 + abs(a21) ** 2 + abs(a22) ** 2
    det = abs(a11 * a22 - a12 * a21)
    disc = f2 * f2 - 4.0 * det * det
    if disc < 0.0:
        disc = 0.0
    return math.sqrt(0.5 * (f2 + math.sqrt(disc)))


@njit(cache=True)
def _potential(theta, ms, cr, ci):
    v = 0.0
    for m in range(ms.shape[0]):
        t = ms[m] * theta
        v += cr[m] * math.cos(t) - ci[m] * math.sin(t)
    return v


@njit(cache=True)
def _schrodinger_le(x0, alpha, ms, cr, ci, lam, E, n, checkpoints, out):
    """(1/k) ln ||S_k(theta)|| at checkpoints for each starting point x0 (in turns)."""
    one = E * 0.0 + 1.0
    zero = E * 0.0
    for s in range(x0.shape[0]):
        a11 = one
        a12 = zero
        a21 = zero
        a22 = one
        acc = 0.0
        c = 0
        for k in range(n):
            x = x0[s] + k * alpha
            x = x - math.floor(x)
            a = lam * _potential(2.0 * math.pi * x, ms, cr, ci) - E
            b11 = a * a11 - a21
            b12 = a * a12 - a22
            a21 = a11
            a22 = a12
            a11 = b11
            a12 = b12
            if (k + 1) % 32 == 0:
                nrm = math.sqrt(abs(a11) ** 2 + abs(a12) ** 2 + abs(a21) ** 2 + abs(a22) ** 2)
                a11 = a11 / nrm
                a12 = a12 / nrm
                a21 = a21 / nrm
                a22 = a22 / nrm
                acc += math.log(nrm)
            if c < checkpoints.shape[0] and k + 1 == checkpoints[c]:
                out[s, c] = (acc + math.log(_op_norm(a11, a12, a21, a22))) / (k + 1)
                c += 1


@njit(cache=True)
def _product_chunk(mats, state, acc, start, checkpoints, out):
    """Left-multiply the running products by a chunk of matrices (steps, S, 2, 2)."""
    steps, S = mats.shape[0], mats.shape[1]
    for s in range(S):
        a11 = state[s, 0, 0]
        a12 = state[s, 0, 1]
        a21 = state[s, 1, 0]
        a22 = state[s, 1, 1]
        c = 0
        while c < checkpoints.shape[0] and checkpoints[c] <= start:
            c += 1
        for k in range(steps):
            m = mats[k, s]
            b11 = m[0, 0] * a11 + m[0, 1] * a21
            b12 = m[0, 0] * a12 + m[0, 1] * a22
            b21 = m[1, 0] * a11 + m[1, 1] * a21
            b22 = m[1, 0] * a12 + m[1, 1] * a22
            a11, a12, a21, a22 = b11, b12, b21, b22
            kk = start + k + 1
            if kk % 32 == 0:
                nrm = math.sqrt(abs(a11) ** 2 + abs(a12) ** 2 + abs(a21) ** 2 + abs(a22) ** 2)
                a11 /= nrm
                a12 /= nrm
                a21 /= nrm
                a22 /= nrm
                acc[s] += math.log(nrm)
            if c < checkpoints.shape[0] and kk == checkpoints[c]:
                out[s, c] = (acc[s] + math.log(_op_norm(a11, a12, a21, a22))) / kk
                c += 1
        state[s, 0, 0] = a11
        state[s, 0, 1] = a12
        state[s, 1, 0] = a21
        state[s, 1, 1] = a22


@njit(cache=True)
def _sturm_counts(x0, alpha, ms, cr, ci, lam, Es, n, out):
    """Negative LDL pivots of the truncated operator minus E, per sample and energy."""
    nE = Es.shape[0]
    p = np.empty(nE)
    for s in range(x0.shape[0]):
        for e in range(nE):
            p[e] = np.inf
            out[s, e] = 0
        for k in range(n):
            x = x0[s] + k * alpha
            x = x - math.floor(x)
            v = lam * _potential(2.0 * math.pi * x, ms, cr, ci)
            for e in range(nE):
                q = (v - Es[e]) - 1.0 / p[e]
                if q == 0.0:
                    q = -1e-300
                p[e] = q
                if q < 0.0:
                    out[s, e] += 1


@njit(cache=True)
def _rotation_chunk(mats, lifts, phi, acc):
    """Accumulate lifted projective increments; lifts[k, s] is the continuous rotation
    part of mats[k, s] (Iwasawa angle)."""
    steps, S = mats.shape[0], mats.shape[1]
    for s in range(S):
        ph = phi[s]
        for k in range(steps):
            m = mats[k, s]
            t = lifts[k, s]
            # rotate back by t: R(-t) m is upper triangular with positive diagonal
            ct = math.cos(t)
            st = math.sin(t)
            c0 = math.cos(ph)
            s0 = math.sin(ph)
            x = m[0, 0] * c0 + m[0, 1] * s0
            y = m[1, 0] * c0 + m[1, 1] * s0
            xr = ct * x + st * y
            yr = -st * x + ct * y
            inc = math.atan2(yr * c0 - xr * s0, xr * c0 + yr * s0)
            # triangular part keeps each half plane, so |inc| < pi is the right branch
            ph = ph + t + inc
            acc[s] += t + inc
            ph = math.atan2(math.sin(ph), math.cos(ph))
        phi[s] = ph


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _start_points(cocycle, theta_samples, seed):
    """Half along one Kronecker orbit, half on a uniform grid, both in turns (x in [0,1)^d)."""
    rng = np.random.default_rng(seed)
    d = cocycle.dim
    x0 = rng.random(d)
    n_orb = max(1, theta_samples // 2)
    n_grid = max(1, theta_samples - n_orb)
    stride = 9973  # orbit points well separated along the orbit
    j = np.arange(n_orb)[:, None]
    orb = np.mod(x0 + j * stride * cocycle.alpha[None, :d], 1.0)
    if d == 1:
        grid = ((np.arange(n_grid) + 0.5) / n_grid)[:, None]
    else:
        grid = rng.random((n_grid, d))
    return orb, grid


def _checkpoints(n):
    cps = sorted({int(2 ** k) for k in range(5, int(math.log2(max(n, 32))) + 1)} | {int(n)})
    return np.array([c for c in cps if c <= n], dtype=np.int64)


def _potential_arrays(V):
    ms = V.modes[:, 0].astype(np.float64)
    return ms, V.coeffs.real.astype(np.float64).reshape(-1), V.coeffs.imag.astype(np.float64).reshape(-1)


def _le_samples(cocycle, x0, n, cps):
    """L_k per start point at checkpoints."""
    out = np.full((len(x0), len(cps)), np.nan)
    if cocycle.schrodinger is not None and cocycle.dim == 1:
        V, lam, E = cocycle.schrodinger
        ms, cr, ci = _potential_arrays(V)
        E = complex(E) if np.iscomplexobj(E) or isinstance(E, complex) else float(E)
        _schrodinger_le(x0[:, 0].copy(), float(cocycle.alpha[0]), ms, cr, ci, lam, E, n, cps, out)
        return out
    S = len(x0)
    state = np.broadcast_to(np.eye(2, dtype=complex), (S, 2, 2)).copy()
    acc = np.zeros(S)
    chunk = max(1, min(n, 2 ** 18 // max(S, 1)))
    for start in range(0, n, chunk):
        steps = min(chunk, n - start)
        k = np.arange(start, start + steps)
        th = TWO_PI * np.mod(x0[None, :, :] + k[:, None, None] * cocycle.alpha[None, None, :], 1.0)
        mats = np.ascontiguousarray(cocycle.at(th.reshape(-1, cocycle.dim)).reshape(steps, S, 2, 2))
        _product_chunk(mats, state, acc, start, cps, out)
    return out


def lyapunov(cocycle, n_iters, theta_samples=16, seed=0):
    """(1/n) int ln ||A_n(theta)|| dtheta, estimated by sampling, with renormalized products."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    orb, grid = _start_points(cocycle, theta_samples, seed)
    x0 = np.concatenate([orb, grid])
    if cocycle.const is not None:
        x0 = x0[:1]
    cps = _checkpoints(n_iters)
    L = _le_samples(cocycle, x0, n_iters, cps)
    if not np.all(np.isfinite(L)):
        raise NumericOverflow("non-finite product norm despite renormalization")
    means = L.mean(axis=0)
    tail = tuple((int(c), float(m)) for c, m in zip(cps, means))
    val = float(means[-1])
    spread = abs(means[-1] - means[-2]) if len(means) > 1 else 0.0
    sem = float(L[:, -1].std(ddof=1) / math.sqrt(len(L))) if len(L) > 1 else 0.0
    if cocycle.const is not None:
        # exact: (1/n) ln ||A^n|| -> ln spectral radius, the products only fill the tail
        val = float(np.log(np.max(np.abs(np.linalg.eigvals(cocycle.const)))))
        spread = sem = 0.0
        orb_v = grid_v = val
    else:
        orb_v = float(L[: len(orb), -1].mean())
        grid_v = float(L[len(orb):, -1].mean())
    return LyapunovEstimate(val, int(n_iters), len(x0), tail, max(spread, sem), orb_v, grid_v)


def lyapunov_complex_energy(V, lam, E, alpha, n_iters=None, theta_samples=8, seed=0):
    """LE of the Schroedinger family at complex energy E (Im E >= 0)."""
    if np.imag(E) < 0:
        raise ValueError("Im E must be >= 0")
    if n_iters is None:
        eta = float(np.imag(E))
        n_iters = int(min(10 ** 6, max(10 ** 4, 200.0 / eta))) if eta > 0 else 10 ** 6
    E = complex(E)
    coc = Cocycle.schrodinger_family(V, lam, E, alpha)
    return lyapunov(coc, n_iters, theta_samples, seed)


# --------------------------------------------------------------------------
# rotation number
# --------------------------------------------------------------------------

def _iwasawa_angle(mats):
    """Angle t of the first column: A = R(t) (upper triangular, positive diagonal)."""
    return np.arctan2(mats[..., 1, 0].real, mats[..., 0, 0].real)


def _map_degree(cocycle, G=1024):
    if cocycle.map is None or cocycle.dim != 1:
        return 0, None
    th = TWO_PI * np.arange(G + 1) / G
    t = _iwasawa_angle(cocycle.at(th[:, None]))
    tu = np.unwrap(t)
    deg = int(round((tu[-1] - tu[0]) / TWO_PI))
    return deg, (th, tu)


def rotation_number(cocycle, homotopic_to_identity=True, n_iters=10 ** 5, theta_samples=8, seed=0):
    """Fibered rotation number folded to [0, 1/2] (turns per step)."""
    if cocycle.domain_kind != "real":
        raise HomotopyObstruction("rotation number needs a real cocycle")
    if not homotopic_to_identity:
        raise HomotopyObstruction("cocycle not homotopic to a constant")
    deg, lift_grid = _map_degree(cocycle)
    if deg != 0:
        raise HomotopyObstruction(f"cocycle has degree {deg}")
    orb, grid = _start_points(cocycle, theta_samples, seed)
    x0 = np.concatenate([orb, grid])
    S = len(x0)
    phi = np.zeros(S)
    acc = np.zeros(S)
    chunk = max(1, min(n_iters, 2 ** 18 // S))
    for start in range(0, n_iters, chunk):
        steps = min(chunk, n_iters - start)
        k = np.arange(start, start + steps)
        xx = np.mod(x0[None, :, :] + k[:, None, None] * cocycle.alpha[None, None, :], 1.0)
        mats = cocycle.at(TWO_PI * xx.reshape(-1, cocycle.dim)).reshape(steps, S, 2, 2)
        lifts = _iwasawa_angle(mats)
        if lift_grid is not None:
            th, tu = lift_grid
            ref = np.interp(TWO_PI * xx[..., 0], th, tu)
            lifts = lifts + TWO_PI * np.round((ref - lifts) / TWO_PI)
        _rotation_chunk(np.ascontiguousarray(mats.real), np.ascontiguousarray(lifts), phi, acc)
    rho = float(np.mean(acc) / (TWO_PI * n_iters))
    rho = rho % 1.0
    return min(rho, 1.0 - rho)


# --------------------------------------------------------------------------
# uniform hyperbolicity
# --------------------------------------------------------------------------

def _angle(v):
    return np.arctan2(v[..., 1].real, v[..., 0].real)


def _proj_dist(a, b):
    """Distance between projective angles (mod pi)."""
    d = np.mod(a - b + np.pi / 2, np.pi) - np.pi / 2
    return np.abs(d)


def _products(cocycle, x, n):
    """A_n at starting points x (turns), shape (P, 2, 2)."""
    P = np.broadcast_to(np.eye(2, dtype=complex), (len(x), 2, 2)).copy()
    for k in range(n):
        P = cocycle.at(TWO_PI * np.mod(x + k * cocycle.alpha, 1.0)) @ P
        nrm = opnorm(P)[:, None, None]
        P = P / nrm
    return P


def _unstable_direction(cocycle, x, m=64):
    """Pushed-forward direction at x from m steps back (projective angle)."""
    v = np.zeros((len(x), 2), dtype=complex)
    v[:, 0], v[:, 1] = 1.0, 0.3
    xs = np.mod(x - m * cocycle.alpha, 1.0)
    for k in range(m):
        v = np.einsum("pij,pj->pi", cocycle.at(TWO_PI * np.mod(xs + k * cocycle.alpha, 1.0)), v)
        v /= np.linalg.norm(v, axis=1)[:, None]
    return _angle(v)


def _cone_maps_inside(M, c0, c1, beta, margin):
    """Does M map the cone of half-angle beta around c0 strictly inside the cone around c1?"""
    ok = np.ones(len(M), dtype=bool)
    for t in (-beta, 0.0, beta):
        a = c0 + t
        v = np.stack([np.cos(a), np.sin(a)], axis=-1).astype(complex)
        w = np.einsum("pij,pj->pi", M, v)
        ok &= _proj_dist(_angle(w), c1) <= beta / margin
    return bool(np.all(ok))


def is_uniformly_hyperbolic(cocycle, horizon=64, grid=4096, margin=1.05, le_threshold=1e-3, seed=0):
    """Cone-field criterion.  Returns (verdict, witness) with verdict in
    {"UH", "not_UH", "inconclusive"}."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    d = cocycle.dim
    if cocycle.const is not None:
        x = np.zeros((1, d))
    elif d == 1:
        x = (np.arange(grid) / grid)[:, None]
    else:
        x = np.random.default_rng(seed).random((grid, d))
    ns = sorted({1, *[2 ** k for k in range(1, int(math.log2(horizon)) + 1)]})
    betas = [np.pi / 4 / 2 ** i for i in range(8)]
    # constant cone around the averaged unstable direction
    u = _unstable_direction(cocycle, x)
    u_mean = 0.5 * np.angle(np.mean(np.exp(2j * u)))
    for n in ns:
        M = _products(cocycle, x, n)
        for beta in betas:
            c = np.full(len(x), u_mean)
            if _cone_maps_inside(M, c, c, beta, margin):
                return "UH", {"n": n, "kind": "constant", "center": float(u_mean), "half_angle": float(beta)}
    # cone field around the unstable direction
    for n in ns:
        M = _products(cocycle, x, n)
        u1 = _unstable_direction(cocycle, np.mod(x + n * cocycle.alpha, 1.0))
        for beta in betas:
            if _cone_maps_inside(M, u, u1, beta, margin):
                return "UH", {"n": n, "kind": "field", "half_angle": float(beta)}
    n_le = 4096
    le = lyapunov(cocycle, n_le, theta_samples=8, seed=seed)
    if le.value < le_threshold:
        return "not_UH", {"le": le.value, "n": n_le}
    return "inconclusive", {"le": le.value, "n": n_le}
