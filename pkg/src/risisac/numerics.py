"""Scalar and dense complex linear-algebra primitives.

Everything here is a pure function of its inputs.  ``TOLERANCE`` is the
package-wide default absolute tolerance; functions taking ``tol=None`` read
it at call time.
"""
import math

import numpy as np
from scipy import optimize, special

from .exceptions import NoBracket

TOLERANCE = 1e-9

_SQRT2 = math.sqrt(2.0)


def _tol(tol):
    return TOLERANCE if tol is None else tol


# ---------------------------------------------------------------------------
# Gaussian tail
# ---------------------------------------------------------------------------
def q_function(x):
    """Standard Gaussian right-tail probability Q(x) = P(N(0,1) > x).

    Evaluated through ``erfc`` so both tails keep full relative precision.
    Accepts scalars or arrays.
    """
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)[()]


def _q_inverse_seed(p):
    # rational tail approximation, |error| < 4.5e-4
    pp = p if p < 0.5 else 1.0 - p
    t = math.sqrt(-2.0 * math.log(pp))
    x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (
        1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t ** 3)
    return x if p < 0.5 else -x


def q_inverse(p, tol=1e-15, max_iter=60):
    """Inverse of :func:`q_function` on (0, 1).

    Safeguarded Newton iteration seeded by a rational approximation.  A
    bracket is maintained throughout and a bisection step replaces any
    Newton step that leaves it.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"q_inverse needs 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    x = _q_inverse_seed(p)
    lo, hi = -40.0, 40.0
    for _ in range(max_iter):
        r = float(q_function(x)) - p
        if r > 0:
            lo = max(lo, x)      # Q decreasing: root lies to the right
        else:
            hi = min(hi, x)
        dens = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        step = r / dens if dens > 0 else float("inf")
        x_new = x + step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


# ---------------------------------------------------------------------------
# Hermitian matrices
# ---------------------------------------------------------------------------
def hermitian_error(m):
    """Relative Frobenius distance between ``m`` and ``m^H``."""
    m = np.asarray(m)
    scale = np.linalg.norm(m)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(m - m.conj().T) / scale)


def is_hermitian(m, rtol=1e-10):
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and hermitian_error(m) <= rtol


def is_psd(m, rtol=1e-9):
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return w[0] >= -rtol * max(abs(w[-1]), np.finfo(float).tiny)


def hermitian_eig(m, rtol=1e-10):
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(w, u)`` with eigenvalues in descending order and ``u``
    unitary.  Each eigenvector is phase-normalized so that its first
    entry of non-negligible magnitude is real and positive.

    Raises
    ------
    ValueError
        If ``m`` is not square or not Hermitian within ``rtol``.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if hermitian_error(m) > rtol:
        raise ValueError("matrix is not Hermitian")
    w, u = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = w[::-1]
    u = u[:, ::-1].copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-8)
        if idx.size:
            ph = col[idx[0]] / abs(col[idx[0]])
            u[:, j] = col / ph
    return w, u


def principal_eigvec(m):
    """Largest eigenvalue and its (phase-normalized) eigenvector."""
    w, u = hermitian_eig(m, rtol=1e-8)
    return w[0], u[:, 0]


def herm(m):
    return m.conj().T


# ---------------------------------------------------------------------------
# vec / Kronecker
# ---------------------------------------------------------------------------
def vec(m):
    """Column-stacking vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")


def vec_kron_apply(a, x, b):
    """Return vec(A X B), which equals (B^T kron A) vec(X).

    The Kronecker product is never formed.
    """
    a, x, b = (np.asarray(t) for t in (a, x, b))
    if a.ndim != 2 or x.ndim != 2 or b.ndim != 2:
        raise ValueError("vec_kron_apply expects 2-D operands")
    if a.shape[1] != x.shape[0] or x.shape[1] != b.shape[0]:
        raise ValueError(
            f"non-conformable shapes {a.shape}, {x.shape}, {b.shape}")
    return vec(a @ x @ b)


# ---------------------------------------------------------------------------
# Scalar root finding
# ---------------------------------------------------------------------------
def bisect(residual, lower, upper, tol=None, xtol=None):
    """Root of a monotone ``residual`` on ``[lower, upper]`` by bisection.

    Stops once ``|residual| <= tol`` or the bracket is narrower than
    ``xtol`` (defaults to ``tol``), and never runs more than
    ``ceil(log2((upper - lower) / xtol)) + 2`` iterations.

    Raises
    ------
    NoBracket
        If ``residual(lower)`` and ``residual(upper)`` share a strict sign.
    """
    tol = _tol(tol)
    xtol = tol if xtol is None else xtol
    lo, hi = float(lower), float(upper)
    r_lo, r_hi = residual(lo), residual(hi)
    if abs(r_lo) <= tol:
        return lo
    if abs(r_hi) <= tol:
        return hi
    if r_lo * r_hi > 0:
        raise NoBracket(
            f"residual has the same sign at {lo} ({r_lo:g}) and {hi} ({r_hi:g})")
    width = hi - lo
    n_iter = max(1, math.ceil(math.log2(max(width / xtol, 1.0)))) + 2
    mid = 0.5 * (lo + hi)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        r_mid = residual(mid)
        if abs(r_mid) <= tol or (hi - lo) <= xtol:
            return mid
        if (r_mid > 0) == (r_lo > 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    return mid


# ---------------------------------------------------------------------------
# Linear systems
# ---------------------------------------------------------------------------
def solve_hpd(m, rhs, jitter=1e-12):
    """Solve ``m x = rhs`` for Hermitian positive definite ``m``.

    Cholesky first; on failure a diagonal jitter of ``jitter * trace``
    is added (and grown) until the factorization succeeds.
    """
    m = 0.5 * (m + m.conj().T)
    eye = np.eye(m.shape[0])
    bump = 0.0
    scale = max(abs(np.trace(m).real), np.finfo(float).tiny)
    for _ in range(12):
        try:
            c = np.linalg.cholesky(m + bump * eye)
        except np.linalg.LinAlgError:
            bump = jitter * scale if bump == 0.0 else bump * 100.0
            continue
        y = np.linalg.solve(c, rhs)
        return np.linalg.solve(c.conj().T, y)
    return np.linalg.lstsq(m, rhs, rcond=None)[0]


def complex_normal(rng, shape):
    """i.i.d. circularly-symmetric CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / _SQRT2


def unit_modulus(x):
    """Project onto the complex circle: exp(j * angle(x))."""
    return np.exp(1j * np.angle(x))


# ---------------------------------------------------------------------------
# Convex quadratic programs with quadratic constraints
# ---------------------------------------------------------------------------
class QcqpResult:
    __slots__ = ("z", "multipliers", "constraints", "objective", "iterations",
                 "kkt_residual")

    def __init__(self, z, multipliers, constraints, objective, iterations,
                 kkt_residual):
        self.z = z
        self.multipliers = multipliers
        self.constraints = constraints
        self.objective = objective
        self.iterations = iterations
        self.kkt_residual = kkt_residual


def solve_convex_qcqp(k, g, quads, lin, const, feasible_point=None,
                      max_iter=500, tol=1e-12):
    """Minimize ``z^H K z + 2 Re(g^H z)`` subject to convex quadratic
    constraints ``z^H P_l z + 2 Re(q_l^H z) + r_l <= 0``.

    ``K`` must be positive definite and every ``P_l`` positive
    semidefinite.  The concave dual over the multipliers is maximized with
    bound-constrained L-BFGS (projected quasi-Newton); the inner
    minimization is a closed-form Hermitian solve.  When the recovered
    primal point violates a constraint and ``feasible_point`` is given,
    the result is pulled back along the segment towards it (the feasible
    set is convex, so this always restores feasibility).
    """
    n_con = len(quads)
    k = 0.5 * (k + k.conj().T)
    if n_con == 0:
        z = -solve_hpd(k, g)
        obj = float(np.real(np.vdot(z, k @ z) + 2 * np.vdot(g, z)))
        return QcqpResult(z, np.zeros(0), np.zeros(0), obj, 0, 0.0)

    # constraint normalization keeps the dual well scaled
    scales = np.array([max(np.linalg.norm(p, 2), np.linalg.norm(q),
                           abs(r), 1e-300)
                       for p, q, r in zip(quads, lin, const)])
    k_scale = max(np.linalg.norm(k, 2), 1e-300)
    pn = [p / s for p, s in zip(quads, scales)]
    qn = [q / s for q, s in zip(lin, scales)]
    rn = [r / s for r, s in zip(const, scales)]

    def primal(lam):
        m = k + sum(l * k_scale * p for l, p in zip(lam, pn))
        rhs = g + sum(l * k_scale * q for l, q in zip(lam, qn))
        return -solve_hpd(m, rhs), rhs

    def cons(z):
        return np.array([float(np.real(np.vdot(z, p @ z) + 2 * np.vdot(q, z))) + r
                         for p, q, r in zip(pn, qn, rn)])

    def neg_dual(lam):
        z, rhs = primal(lam)
        d = float(np.real(np.vdot(rhs, z))) + k_scale * float(np.dot(lam, rn))
        grad = k_scale * cons(z)
        return -d / k_scale, -grad / k_scale

    lam0 = np.zeros(n_con)
    z0, _ = primal(lam0)
    n_it = 0
    if np.all(cons(z0) <= 0):
        lam = lam0
    else:
        res = optimize.minimize(neg_dual, lam0, jac=True, method="L-BFGS-B",
                                bounds=[(0.0, None)] * n_con,
                                options={"maxiter": max_iter, "ftol": tol,
                                         "gtol": tol})
        lam = np.maximum(res.x, 0.0)
        n_it = int(res.nit)
    z, _ = primal(lam)
    c = cons(z)
    if np.any(c > 0) and feasible_point is not None:
        z0 = np.asarray(feasible_point)
        if np.all(cons(z0) <= 0):
            ok = lambda t: np.all(cons(t * z + (1 - t) * z0) <= 0)
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
            z = lo * z + (1 - lo) * z0
            c = cons(z)
    obj = float(np.real(np.vdot(z, k @ z) + 2 * np.vdot(g, z)))
    # KKT: complementary slackness and primal feasibility (normalized)
    kkt = float(max(np.max(np.abs(lam * c)) if n_con else 0.0,
                    np.max(np.maximum(c, 0.0))))
    return QcqpResult(z, lam * k_scale / scales, c * scales, obj, n_it, kkt)
