"""Communication side: MSE matrices, LMMSE equalizers, WMMSE weights and
the detection-constrained precoder designs.

A precoder is the stacked ``N_B x (N K)`` matrix ``F = [F_1 ... F_K]``;
``hc[k]`` is the effective channel ``H_BU,k + H_RU,k Theta H_BR^H`` of
user ``k`` and ``g[k]`` its ``N x N_U`` equalizer.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .exceptions import Infeasible, InfeasibleStart
from .numerics import solve_convex_qcqp, solve_hpd, vec, unvec
from .radar import minimum_power

OBJECTIVES = ("mse", "wmse", "sum-rate", "weighted-sum-rate")


def split(f, n_users):
    n = f.shape[1] // n_users
    return [f[:, k * n:(k + 1) * n] for k in range(n_users)]


def effective_channels(channels, theta):
    return channels.effective_all(theta)


def interference_covariance(hc_k, f, r_nc, k, n_users):
    """Noise plus inter-user interference seen by user ``k``."""
    blocks = split(f, n_users)
    r = np.array(r_nc, dtype=complex)
    for j, fj in enumerate(blocks):
        if j != k:
            t = hc_k @ fj
            r += t @ t.conj().T
    return r


def mse_matrix(hc_k, f, g_k, r_nc, k=0, n_users=1):
    """``(G H F_k - I)(G H F_k - I)^H + G R~ G^H``, ``R~`` including interference."""
    fk = split(f, n_users)[k]
    e = g_k @ hc_k @ fk - np.eye(fk.shape[1])
    r = interference_covariance(hc_k, f, r_nc, k, n_users)
    m = e @ e.conj().T + g_k @ r @ g_k.conj().T
    return 0.5 * (m + m.conj().T)


def lmmse_equalizer(hc_k, f, r_nc, k=0, n_users=1):
    """``G_k = F_k^H H^H (H F F^H H^H + R_n)^{-1}``."""
    fk = split(f, n_users)[k]
    t = hc_k @ f
    cov = t @ t.conj().T + r_nc
    # G = F_k^H H^H cov^{-1}  <=>  cov G^H = H F_k
    return solve_hpd(cov, hc_k @ fk).conj().T


def lmmse_equalizers(hc, f, r_nc):
    return [lmmse_equalizer(h, f, r_nc, k, len(hc)) for k, h in enumerate(hc)]


@dataclass
class MetricWeights:
    """Weighting matrices of the unified objective ``sum tr(A^H MSE A)``.

    ``c`` multiplies the precoder inside the error term and ``phi`` is the
    (positive definite) matrix of the log-det metrics.  ``None`` entries
    mean identity.
    """
    a: list = None
    c: list = None
    phi: list = None
    objective_kind: str = "mse"

    def __post_init__(self):
        if self.objective_kind not in OBJECTIVES:
            raise ValueError(f"objective_kind must be one of {OBJECTIVES}")

    def a_k(self, k, n):
        return np.eye(n) if self.a is None or self.a[k] is None else self.a[k]

    def c_k(self, k, n):
        return np.eye(n) if self.c is None or self.c[k] is None else self.c[k]

    @property
    def is_rate(self):
        return self.objective_kind in ("sum-rate", "weighted-sum-rate")


def weighted_mse(hc, f, g, r_nc, weights=None):
    """``sum_k tr(A_k^H MSE_k A_k)``."""
    weights = weights or MetricWeights()
    n = f.shape[1] // len(hc)
    total = 0.0
    for k, h in enumerate(hc):
        a = weights.a_k(k, n)
        total += float(np.real(np.trace(a.conj().T @ mse_matrix(h, f, g[k], r_nc, k, len(hc)) @ a)))
    return total


def reequalized_mse(hc, f, r_nc, weights=None):
    """Weighted MSE after refreshing the equalizers to LMMSE."""
    return weighted_mse(hc, f, lmmse_equalizers(hc, f, r_nc), r_nc, weights)


def user_rate(hc_k, f, r_nc, k=0, n_users=1):
    """``log2 det(I + F_k^H H^H R~^{-1} H F_k)`` in bit/s/Hz."""
    fk = split(f, n_users)[k]
    r = interference_covariance(hc_k, f, r_nc, k, n_users)
    t = hc_k @ fk
    m = np.eye(fk.shape[1]) + t.conj().T @ solve_hpd(r, t)
    sign, logdet = np.linalg.slogdet(0.5 * (m + m.conj().T))
    return float(logdet) / math.log(2.0)


def sum_rate(hc, f, r_nc):
    return sum(user_rate(h, f, r_nc, k, len(hc)) for k, h in enumerate(hc))


# ---------------------------------------------------------------------------
# WMMSE
# ---------------------------------------------------------------------------
@dataclass
class WmmseState:
    y: np.ndarray
    w_bar: np.ndarray


def wmmse_update(x, c, phi, pi):
    """Closed-form minimizers of the weighted-MSE surrogate.

    ``Y = Phi^{-1} C^H X^H (Pi^{-1} + X C Phi^{-1} C^H X^H)^{-1}`` and
    ``W = Phi + C^H X^H Pi X C``.
    """
    x, c, phi, pi = (np.atleast_2d(np.asarray(t, complex)) for t in (x, c, phi, pi))
    phi_inv = np.linalg.inv(phi)
    xc = x @ c
    inner = np.linalg.inv(pi) + xc @ phi_inv @ xc.conj().T
    y = phi_inv @ xc.conj().T @ np.linalg.inv(inner)
    w = phi + xc.conj().T @ pi @ xc
    return WmmseState(y, 0.5 * (w + w.conj().T))


def wmmse_surrogate(x, c, phi, pi, y, w_bar):
    """``tr{W [(YXC - I) Phi^{-1} (YXC - I)^H + Y Pi^{-1} Y^H]} - log det W``."""
    x, c, phi, pi, y, w_bar = (np.atleast_2d(np.asarray(t, complex))
                               for t in (x, c, phi, pi, y, w_bar))
    e = y @ x @ c - np.eye(y.shape[0])
    m = e @ np.linalg.solve(phi, e.conj().T) + y @ np.linalg.solve(pi, y.conj().T)
    logdet = np.linalg.slogdet(w_bar)[1]
    return float(np.real(np.trace(w_bar @ m))) - float(logdet)


def sum_rate_weights(hc, f, r_nc):
    """Rate-equivalent MSE weights ``A_k = chol(W_k)`` at the current precoder.

    With ``X = H_k F_k``, ``Pi = R~_k^{-1}`` and identity ``Phi``, ``C``.
    """
    n = f.shape[1] // len(hc)
    a, w_bars = [], []
    for k, h in enumerate(hc):
        fk = split(f, len(hc))[k]
        r = interference_covariance(h, f, r_nc, k, len(hc))
        t = h @ fk
        w = np.eye(n) + t.conj().T @ solve_hpd(r, t)
        w = 0.5 * (w + w.conj().T)
        w_bars.append(w)
        a.append(np.linalg.cholesky(w))
    return MetricWeights(a=a, objective_kind="sum-rate"), w_bars


# ---------------------------------------------------------------------------
# SUST precoder
# ---------------------------------------------------------------------------
@dataclass
class PrecoderSolverState:
    mu: float = 0.0
    lambdas: np.ndarray = None
    iterations: int = 0
    trace: list = field(default_factory=list)
    converged: bool = True
    equalizer_scale: float = 1.0
    boundary: bool = False


def _quadratic_terms(hc, g, r_nc, weights, p_max):
    """``z^H K z + 2 Re(lin^H z) + const`` form of the fractional objective.

    ``z = vec(F)``; the noise term carries ``||F||^2 / P_max``.
    """
    n_users = len(hc)
    n = g[0].shape[0]
    n_b = hc[0].shape[1]
    m_k, s_total = [], 0.0
    for k, h in enumerate(hc):
        a = weights.a_k(k, n)
        gp = a.conj().T @ g[k]
        t = gp @ h
        m_k.append(t.conj().T @ t)
        s_total += float(np.real(np.trace(gp @ r_nc @ gp.conj().T)))
    dim = n_b * n
    kmat = np.zeros((dim * n_users,) * 2, complex)
    lin = np.zeros(dim * n_users, complex)
    const = 0.0
    for j in range(n_users):
        c = weights.c_k(j, n)
        blk = np.kron((c @ c.conj().T).T, m_k[j])
        for k in range(n_users):
            if k != j:
                blk += np.kron(np.eye(n), m_k[k])
        blk += (s_total / p_max) * np.eye(dim)
        sl = slice(j * dim, (j + 1) * dim)
        kmat[sl, sl] = blk
        a = weights.a_k(j, n)
        gp = a.conj().T @ g[j]
        lin[sl] = -vec((gp @ hc[j]).conj().T @ a.conj().T @ c.conj().T)
        const += float(np.real(np.trace(a.conj().T @ a)))
    kmat = 0.5 * (kmat + kmat.conj().T)
    return kmat, lin, const, s_total


def fractional_objective(hc, f, g, r_nc, weights, p_max):
    """Objective with the noise term scaled by ``||F||^2 / P_max``.

    Equal to the weighted MSE whenever ``||F||^2 = P_max``.
    """
    kmat, lin, const, _ = _quadratic_terms(hc, g, r_nc, weights, p_max)
    z = vec(f)
    return float(np.real(np.vdot(z, kmat @ z) + 2 * np.vdot(lin, z))) + const


def _rescale(f, p_max):
    p = float(np.real(np.vdot(f, f)))
    if p == 0:
        return f, 1.0
    s = math.sqrt(p_max / p)
    return f * s, s


def _boundary_precoder(hc, g, weights, u, p_max, n):
    """All power on ``u``: ``F = sqrt(P) u q^H`` with the best unit ``q``."""
    a = weights.a_k(0, n)
    c = weights.c_k(0, n)
    gu = a.conj().T @ g[0] @ hc[0] @ u
    q = c @ a @ gu          # q ∝ C E^H (A^H G H u), E = A^H
    nq = np.linalg.norm(q)
    q = q / nq if nq > 0 else np.eye(n)[:, 0].astype(complex)
    return math.sqrt(p_max) * np.outer(u, q.conj())


def precoder_sust(hc, quad, g, p_max, r_nc, weights=None, tol=1e-12):
    """Detection-constrained precoder for one user and one target.

    Solves ``min f(F) s.t. tr(F^H Bh F) <= 0`` with
    ``Bh = (threshold / P_max) I - B`` and rescales the solution to full
    power.  The multiplier is located by bisection on the derivative of
    the (concave) dual, evaluated in the generalized eigenbasis of
    ``(I kron Bh, K0)``.

    Returns
    -------
    f : ndarray
        Precoder with ``tr(F F^H) = P_max``.
    state : PrecoderSolverState
        ``equalizer_scale`` is the factor applied to ``F``; dividing ``G``
        by it leaves the fractional objective unchanged.
    """
    hc = list(hc) if isinstance(hc, (list, tuple)) else [hc]
    g = list(g) if isinstance(g, (list, tuple)) else [g]
    weights = weights or MetricWeights()
    n = g[0].shape[0]
    n_b = hc[0].shape[1]
    state = PrecoderSolverState()

    if quad.threshold > 0:
        p_min, u = minimum_power(quad)
        if p_max < p_min * (1 - 1e-9):
            raise Infeasible(f"P_max={p_max:g} W is below P_min={p_min:g} W", block="precoder")
        if p_max <= p_min * (1 + 1e-9):
            f = _boundary_precoder(hc, g, weights, u, p_max, n)
            state.boundary = True
            state.mu = float("inf")
            return f, state

    kmat, lin, const, _ = _quadratic_terms(hc, g, r_nc, weights, p_max)
    rhs = -lin
    if quad.threshold <= 0:
        z = solve_hpd(kmat, rhs)
        f, s = _rescale(unvec(z, (n_b, n)), p_max)
        state.equalizer_scale = s
        return f, state

    bh = (quad.threshold / p_max) * np.eye(n_b) - quad.b_matrix
    bnorm = max(np.linalg.norm(bh, 2), 1e-300)
    bv = np.kron(np.eye(n), bh / bnorm)
    kn = max(np.linalg.norm(kmat, 2), 1e-300)
    k0 = kmat / kn
    r0 = rhs / kn

    z0 = solve_hpd(k0, r0)
    phi0 = float(np.real(np.vdot(z0, bv @ z0)))
    if phi0 <= 0:
        f, s = _rescale(unvec(z0, (n_b, n)), p_max)
        state.equalizer_scale = s
        state.trace.append((0.0, phi0))
        return f, state

    lam, v = linalg.eigh(0.5 * (bv + bv.conj().T), 0.5 * (k0 + k0.conj().T))
    cvec = v.conj().T @ r0
    lam_min = lam[0]
    if lam_min >= 0:
        raise Infeasible("radar constraint cannot be met at this power", block="precoder")
    mu_max = -1.0 / lam_min

    def phi(mu):
        return float(np.sum(lam * np.abs(cvec) ** 2 / (1 + mu * lam) ** 2))

    def z_of(mu):
        return v @ (cvec / (1 + mu * lam))

    neg = lam <= lam_min * (1 - 1e-9)
    # hard case: the most negative direction is unexcited
    hard = np.all(np.abs(cvec[neg]) <= 1e-12 * max(np.linalg.norm(cvec), 1e-300))
    if hard:
        rest = ~neg
        mu_h = mu_max
        phi_rest = float(np.sum(lam[rest] * np.abs(cvec[rest]) ** 2 / (1 + mu_h * lam[rest]) ** 2))
        if phi_rest > 0:
            z = v[:, rest] @ (cvec[rest] / (1 + mu_h * lam[rest]))
            t = math.sqrt(phi_rest / -lam_min)
            z = z + t * v[:, np.flatnonzero(neg)[0]]
            f, s = _rescale(unvec(z, (n_b, n)), p_max)
            state.mu = mu_h * kn / bnorm
            state.equalizer_scale = s
            return f, state

    lo, hi = 0.0, mu_max
    # shrink hi until phi(hi) < 0 (phi -> -inf as mu -> mu_max)
    step = 0.5
    hi_t = mu_max * (1 - step)
    while phi(hi_t) > 0:
        lo = hi_t
        step *= 0.5
        hi_t = mu_max * (1 - step)
        if step < 1e-16:
            break
    hi = hi_t
    it = 0
    for it in range(200):
        mid = 0.5 * (lo + hi)
        p_mid = phi(mid)
        state.trace.append((mid * kn / bnorm, p_mid))
        if p_mid > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(hi, 1e-300):
            break
    state.iterations = it + 1
    z = z_of(hi)
    f, s = _rescale(unvec(z, (n_b, n)), p_max)
    state.mu = hi * kn / bnorm
    state.equalizer_scale = s
    return f, state


# ---------------------------------------------------------------------------
# MUMT precoder
# ---------------------------------------------------------------------------
def radar_feasible(f, quads, p_max, slack=0.0):
    """Scale-free radar feasibility ``tr(F^H B F) >= threshold ||F||^2 / P``."""
    p = float(np.real(np.vdot(f, f)))
    return all(q.energy(f) >= (1 - slack) * q.threshold * p / p_max for q in quads)


def radar_start(quads, n_b, n_cols, p_max, margin=1e-3):
    """Least-power precoder meeting every radar constraint.

    One column per target along ``b_l``; the powers come from a linear
    program (cross-target leakage enters as ``|b_l^H u_m|^2``).
    """
    n_t = len(quads)
    if n_t > n_cols:
        raise InfeasibleStart("more targets than precoder columns")
    us = []
    for q in quads:
        nv = np.linalg.norm(q.vector) if q.vector is not None else 0.0
        if nv == 0:
            _, u = np.linalg.eigh(q.b_matrix)
            us.append(u[:, -1])
        else:
            us.append(q.vector / nv)
    gains = np.array([[q.energy(u[:, None]) for u in us] for q in quads])
    thr = np.array([q.threshold for q in quads])
    scale = max(thr.max(), 1e-300)
    gmax = max(gains.max(), 1e-300)
    res = optimize.linprog(np.ones(n_t), A_ub=-gains / gmax, b_ub=-(1 + margin) * thr / scale,
                           bounds=[(0, None)] * n_t, method="highs")
    if res.status != 0:
        raise InfeasibleStart("no power allocation meets every radar constraint")
    p = res.x * scale / gmax
    if p.sum() > p_max:
        raise InfeasibleStart(f"radar constraints need {p.sum():g} W > P_max={p_max:g} W")
    f = np.zeros((n_b, n_cols), complex)
    for m, u in enumerate(us):
        f[:, m] = math.sqrt(p[m]) * u
    return f


def precoder_mumt(hc, quads, g, p_max, r_nc, weights=None, previous=None,
                  max_iter=30, tol=1e-8):
    """Multi-target precoder by majorization-minimization.

    Each iteration linearizes ``tr(F^H B_l F)`` at the current point,
    giving the convex constraints
    ``(thr_l / P) ||F||^2 - 2 Re tr(F_t^H B_l F) + tr(F_t^H B_l F_t) <= 0``,
    and solves the resulting QCQP exactly.  The fractional objective is
    non-increasing across iterations.
    """
    weights = weights or MetricWeights()
    quads = list(quads)
    n = g[0].shape[0]
    n_users = len(hc)
    n_b = hc[0].shape[1]
    shape = (n_b, n * n_users)
    if any(q.threshold > 0 for q in quads) and all(
            (q.vector is not None and not np.any(q.vector)) or not np.any(q.b_matrix)
            for q in quads if q.threshold > 0):
        raise Infeasible("every radar matrix is zero", block="precoder")
    active = [q for q in quads if q.threshold > 0]
    for q in active:
        if not np.any(q.b_matrix):
            raise Infeasible("a radar matrix is zero", block="precoder")

    kmat, lin, const, _ = _quadratic_terms(hc, g, r_nc, weights, p_max)
    state = PrecoderSolverState(lambdas=np.zeros(len(active)))
    if not active:
        z = solve_hpd(kmat, -lin)
        f, s = _rescale(unvec(z, shape), p_max)
        state.equalizer_scale = s
        return f, state

    if previous is not None and np.any(previous) and radar_feasible(previous, active, p_max):
        f_t = _rescale(np.asarray(previous, complex), p_max)[0]
    else:
        f_t = radar_start(active, n_b, shape[1], p_max)

    def obj(z):
        return float(np.real(np.vdot(z, kmat @ z) + 2 * np.vdot(lin, z))) + const

    z_t = vec(f_t)
    prev = obj(z_t)
    state.trace.append(prev)
    eye = np.eye(z_t.size)
    for it in range(max_iter):
        quads_l, lins_l, consts_l = [], [], []
        for q in active:
            bf = q.b_matrix @ unvec(z_t, shape)
            quads_l.append((q.threshold / p_max) * eye)
            lins_l.append(-vec(bf))
            consts_l.append(q.energy(unvec(z_t, shape)))
        res = solve_convex_qcqp(kmat, lin, quads_l, lins_l, consts_l, feasible_point=z_t)
        z_new = res.z
        val = obj(z_new)
        if val > prev:
            break
        z_t = z_new
        state.lambdas = res.multipliers
        state.trace.append(val)
        state.iterations = it + 1
        if prev - val <= tol * max(abs(prev), 1e-300):
            prev = val
            break
        prev = val
    f, s = _rescale(unvec(z_t, shape), p_max)
    state.equalizer_scale = s
    return f, state
