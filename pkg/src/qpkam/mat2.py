"""Closed-form 2x2 kernels for SL(2,R), SL(2,C), SU(1,1) and their Lie algebras.

All array kernels accept stacks of shape ``(..., 2, 2)`` so they can be applied
pointwise on a torus grid.  The :class:`Mat2` / :class:`Alg2` wrappers carry a
group or algebra tag and validate the corresponding invariants; the public
operations accept either a wrapper or a bare complex array and return the same
kind they were given.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BchDivergence, InvalidAlgebraElement, LogBranchUndefined, TagMismatch

GROUP_TAGS = ("SL2R", "SL2C", "SU11", "GL2C")
ALGEBRA_TAGS = ("sl2R", "su11", "sl2C")

PARABOLIC_BAND = 1e-9
_TOL = 1e-12

I2 = np.eye(2, dtype=complex)
# Cayley-type isomorphism sl(2,R) -> su(1,1), X -> M X M^{-1}; M is unitary.
CAYLEY = np.array([[1.0, -1.0j], [1.0, 1.0j]], dtype=complex) / (1.0 + 1.0j)
CAYLEY_INV = np.linalg.inv(CAYLEY)


def rotation(t):
    """R(t) = [[cos t, -sin t], [sin t, cos t]]."""
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]], dtype=complex)


# --------------------------------------------------------------------------
# array primitives
# --------------------------------------------------------------------------

def det2(X):
    X = np.asarray(X)
    return X[..., 0, 0] * X[..., 1, 1] - X[..., 0, 1] * X[..., 1, 0]


def trace2(X):
    X = np.asarray(X)
    return X[..., 0, 0] + X[..., 1, 1]


def mul2(X, Y):
    """Batched 2x2 product (faster than matmul for tiny matrices)."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    out = np.empty(np.broadcast_shapes(X.shape, Y.shape), dtype=np.result_type(X, Y))
    out[..., 0, 0] = X[..., 0, 0] * Y[..., 0, 0] + X[..., 0, 1] * Y[..., 1, 0]
    out[..., 0, 1] = X[..., 0, 0] * Y[..., 0, 1] + X[..., 0, 1] * Y[..., 1, 1]
    out[..., 1, 0] = X[..., 1, 0] * Y[..., 0, 0] + X[..., 1, 1] * Y[..., 1, 0]
    out[..., 1, 1] = X[..., 1, 0] * Y[..., 0, 1] + X[..., 1, 1] * Y[..., 1, 1]
    return out


def inv2(X):
    """Inverse via the adjugate; exact for det = 1 up to the division."""
    X = np.asarray(X)
    adj = np.empty_like(X)
    adj[..., 0, 0] = X[..., 1, 1]
    adj[..., 1, 1] = X[..., 0, 0]
    adj[..., 0, 1] = -X[..., 0, 1]
    adj[..., 1, 0] = -X[..., 1, 0]
    return adj / det2(X)[..., None, None]


def bracket(X, Y):
    return mul2(X, Y) - mul2(Y, X)


def opnorm(X):
    """Operator 2-norm (largest singular value), closed form, batched."""
    X = np.asarray(X)
    fro2 = np.sum(np.abs(X) ** 2, axis=(-2, -1))
    d = np.abs(det2(X))
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * d * d, 0.0))
    return np.sqrt(np.maximum(0.5 * (fro2 + disc), 0.0))


def conj_by(P, X, P_inv=None):
    """P X P^{-1}, batched over X (and/or P)."""
    if P_inv is None:
        P_inv = inv2(P)
    return mul2(mul2(P, X), P_inv)


# --------------------------------------------------------------------------
# tagged wrappers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mat2:
    entries: np.ndarray
    group_tag: str = "SL2C"

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex).reshape(2, 2)
        object.__setattr__(self, "entries", m)
        if self.group_tag not in GROUP_TAGS:
            raise TagMismatch(f"unknown group tag {self.group_tag!r}")
        if self.group_tag != "GL2C" and abs(det2(m) - 1.0) > 1e-10 * max(1.0, opnorm(m) ** 2):
            raise ValueError(f"det = {det2(m)} is not 1 for tag {self.group_tag}")
        if self.group_tag == "SL2R" and np.max(np.abs(m.imag)) > 1e-10 * max(1.0, opnorm(m)):
            raise ValueError("SL2R matrix has non-real entries")
        if self.group_tag == "SU11":
            dev = max(abs(m[1, 0] - np.conj(m[0, 1])), abs(m[1, 1] - np.conj(m[0, 0])))
            if dev > 1e-10 * max(1.0, opnorm(m)):
                raise ValueError("SU11 matrix does not have the [[a,b],[conj b, conj a]] pattern")

    @property
    def m(self):
        return self.entries

    def norm(self):
        return float(opnorm(self.entries))


@dataclass(frozen=True)
class Alg2:
    entries: np.ndarray
    algebra_tag: str = "sl2C"

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex).reshape(2, 2)
        object.__setattr__(self, "entries", m)
        if self.algebra_tag not in ALGEBRA_TAGS:
            raise TagMismatch(f"unknown algebra tag {self.algebra_tag!r}")
        scale = max(1.0, float(opnorm(m)))
        if abs(trace2(m)) > 1e-10 * scale:
            raise InvalidAlgebraElement(f"trace {trace2(m)} is not zero")
        if self.algebra_tag == "sl2R" and np.max(np.abs(m.imag)) > 1e-10 * scale:
            raise ValueError("sl2R element has non-real entries")
        if self.algebra_tag == "su11":
            dev = max(abs(m[1, 0] - np.conj(m[0, 1])), abs(m[0, 0].real), abs(m[1, 1] + m[0, 0]))
            if dev > 1e-10 * scale:
                raise ValueError("su11 element does not have the [[it, v],[conj v, -it]] pattern")

    @property
    def m(self):
        return self.entries

    def norm(self):
        return float(opnorm(self.entries))


@dataclass(frozen=True)
class EigenAngle:
    """Eigenvalues e^{+-i rho} (elliptic) or e^{+-lambda} (hyperbolic)."""

    kind: str
    rho: float
    sign: int = field(default=1)  # sign of the eigenvalues for |trace| >= 2 (-1 when trace < 0)

    @property
    def is_elliptic(self):
        return self.kind == "elliptic"


def _raw(x):
    if isinstance(x, (Mat2, Alg2)):
        return x.entries
    return np.asarray(x, dtype=complex)


def _group_tag_of_log(tag, X):
    if tag == "SU11":
        return "su11"
    if tag == "SL2R" and np.max(np.abs(X.imag)) <= 1e-10 * max(1.0, float(opnorm(X))):
        return "sl2R"
    return "sl2C"


_EXP_TAG = {"sl2R": "SL2R", "su11": "SU11", "sl2C": "SL2C"}


# --------------------------------------------------------------------------
# exponential / logarithm
# --------------------------------------------------------------------------

def _cosh_sinhc(d2):
    """cosh(sqrt(d2)) and sinh(sqrt(d2))/sqrt(d2) with the analytic limit at 0."""
    d2 = np.asarray(d2, dtype=complex)
    small = np.abs(d2) < 1e-6
    d = np.sqrt(np.where(small, 1.0, d2))
    ch = np.where(small, 1.0 + d2 / 2 + d2 * d2 / 24 + d2 ** 3 / 720, np.cosh(d))
    sc = np.where(small, 1.0 + d2 / 6 + d2 * d2 / 120 + d2 ** 3 / 5040, np.sinh(d) / d)
    return ch, sc


def expm_traceless(X):
    """e^X for traceless (..., 2, 2) arrays: cosh(d) I + sinh(d)/d X, d^2 = -det X."""
    X = np.asarray(X, dtype=complex)
    ch, sc = _cosh_sinhc(-det2(X))
    return ch[..., None, None] * I2 + sc[..., None, None] * X


def logm_sl2(A):
    """Principal logarithm of (..., 2, 2) arrays with det 1.

    Raises LogBranchUndefined when some entry has trace -2 (no logarithm in
    sl(2,C) unless the matrix is -I, where the branch is undefined).
    """
    A = np.asarray(A, dtype=complex)
    t = 0.5 * trace2(A)
    if np.any(np.abs(t + 1.0) < 1e-13):
        raise LogBranchUndefined("trace = -2: logarithm undefined on this branch")
    delta = np.arccosh(t)
    small = np.abs(delta) < 1e-4
    dd = delta * delta
    ds = np.where(small, 1.0, delta)
    ratio = np.where(small, 1.0 - dd / 6 + 7 * dd * dd / 360, ds / np.sinh(ds))
    return ratio[..., None, None] * (A - t[..., None, None] * I2)


def exp_alg(X):
    """Group exponential of a traceless element."""
    m = _raw(X)
    scale = np.maximum(1.0, opnorm(m))
    if np.any(np.abs(trace2(m)) > _TOL * scale):
        raise InvalidAlgebraElement("exp_alg needs a traceless argument")
    out = expm_traceless(m)
    if isinstance(X, Alg2):
        return Mat2(out, _EXP_TAG[X.algebra_tag])
    return out


def log_group(A):
    """Principal logarithm; exp_alg(log_group(A)) == A."""
    m = _raw(A)
    if m.ndim == 2 and np.max(np.abs(m + I2)) < 1e-12:
        raise LogBranchUndefined("A = -I has no principal logarithm")
    out = logm_sl2(m)
    if isinstance(A, Mat2):
        return Alg2(out, _group_tag_of_log(A.group_tag, out))
    return out


def log_product_bch(X, Y, order=4):
    """Baker-Campbell-Hausdorff series for log(e^X e^Y), truncated at `order`.

    order 1: X + Y; 2: + [X,Y]/2; 3: + ([X,[X,Y]] + [Y,[Y,X]])/12;
    4: - [Y,[X,[X,Y]]]/24.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError("order must be 1, 2, 3 or 4")
    x, y = _raw(X), _raw(Y)
    if np.any(opnorm(x) + opnorm(y) >= np.log(2.0)):
        raise BchDivergence("||X|| + ||Y|| must be below ln 2")
    z = x + y
    if order >= 2:
        xy = bracket(x, y)
        z = z + 0.5 * xy
    if order >= 3:
        z = z + (bracket(x, xy) - bracket(y, xy)) / 12.0
    if order >= 4:
        z = z - bracket(y, bracket(x, xy)) / 24.0
    if isinstance(X, Alg2):
        tag = X.algebra_tag if isinstance(Y, Alg2) and Y.algebra_tag == X.algebra_tag else "sl2C"
        return Alg2(z, tag)
    return z


# --------------------------------------------------------------------------
# sl(2,R) <-> su(1,1)
# --------------------------------------------------------------------------

def to_su11(X):
    """Conjugate by the Cayley matrix: sl2R -> su11, SL2R -> SU11."""
    if isinstance(X, Alg2):
        if X.algebra_tag != "sl2R":
            raise TagMismatch(f"to_su11 expects sl2R, got {X.algebra_tag}")
        return Alg2(conj_by(CAYLEY, X.entries, CAYLEY_INV), "su11")
    if isinstance(X, Mat2):
        if X.group_tag != "SL2R":
            raise TagMismatch(f"to_su11 expects SL2R, got {X.group_tag}")
        return Mat2(conj_by(CAYLEY, X.entries, CAYLEY_INV), "SU11")
    return conj_by(CAYLEY, np.asarray(X, dtype=complex), CAYLEY_INV)


def to_sl2r(X):
    """Inverse of :func:`to_su11`."""
    if isinstance(X, Alg2):
        if X.algebra_tag != "su11":
            raise TagMismatch(f"to_sl2r expects su11, got {X.algebra_tag}")
        m = conj_by(CAYLEY_INV, X.entries, CAYLEY)
        return Alg2(m.real.astype(complex), "sl2R")
    if isinstance(X, Mat2):
        if X.group_tag != "SU11":
            raise TagMismatch(f"to_sl2r expects SU11, got {X.group_tag}")
        m = conj_by(CAYLEY_INV, X.entries, CAYLEY)
        return Mat2(m.real.astype(complex), "SL2R")
    return conj_by(CAYLEY_INV, np.asarray(X, dtype=complex), CAYLEY)


# --------------------------------------------------------------------------
# spectral data
# --------------------------------------------------------------------------

def eigen_angle(A):
    if isinstance(A, Mat2) and A.group_tag == "SU11":
        A = to_sl2r(A)
    m = _raw(A)
    tr = trace2(m)
    t = tr.real if abs(tr.imag) <= 1e-12 * max(1.0, abs(tr)) else None
    if t is None:
        # genuinely complex trace: report the real growth rate
        lam = abs(np.arccosh(tr / 2).real)
        return EigenAngle("hyperbolic", float(lam), 1)
    if abs(abs(t) - 2.0) <= PARABOLIC_BAND:
        return EigenAngle("parabolic", 0.0, 1 if t > 0 else -1)
    if abs(t) > 2.0:
        return EigenAngle("hyperbolic", float(np.arccosh(abs(t) / 2)), 1 if t > 0 else -1)
    rho = float(np.arccos(t / 2))
    # the (2,1) entry of an elliptic SL(2,R) matrix has the sign of sin(rho)
    s = m[1, 0].real - m[0, 1].real
    if s < 0:
        rho = -rho
    return EigenAngle("elliptic", rho, 1)


def _eigvec(m, mu):
    scale = max(1.0, float(opnorm(m)))
    v = np.array([m[0, 1], mu - m[0, 0]], dtype=complex)
    w = np.array([mu - m[1, 1], m[1, 0]], dtype=complex)
    if np.linalg.norm(w) > np.linalg.norm(v):
        v = w
    if np.linalg.norm(v) <= 1e-14 * scale:
        v = np.array([1.0, 0.0], dtype=complex)
    return v / np.linalg.norm(v)


def schur_triangularize(A):
    """Unitary U (det 1) with U A U^{-1} = [[e^g, c], [0, e^-g]].

    Returns (U, gamma, c); gamma is the principal logarithm of the leading
    eigenvalue (|e^gamma| >= 1 for hyperbolic input, e^{i rho} for elliptic).
    """
    m = _raw(A)
    ang = eigen_angle(m)
    tr = trace2(m)
    if ang.kind == "elliptic":
        mu = np.exp(1j * ang.rho)
    elif ang.kind == "parabolic":
        mu = complex(ang.sign)
    else:
        disc = np.sqrt(tr * tr / 4 - 1.0 + 0j)
        mu = tr / 2 + disc
        if abs(mu) < 1.0:
            mu = tr / 2 - disc
    # the closed form loses half the digits near trace +-2; take the
    # backward-stable LAPACK pair nearest to it
    w, V = np.linalg.eig(m.astype(complex))
    i = int(np.argmin(np.abs(w - mu)))
    v = V[:, i] / np.linalg.norm(V[:, i])
    Uinv = np.array([[v[0], -np.conj(v[1])], [v[1], np.conj(v[0])]], dtype=complex)
    U = Uinv.conj().T
    T = U @ m @ Uinv
    gamma = complex(np.log(complex(T[0, 0])))
    U_out = Mat2(U, "SL2C") if isinstance(A, Mat2) else U
    return U_out, gamma, complex(T[0, 1])
