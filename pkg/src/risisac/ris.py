"""RIS phase design: quartic radar constraint, its MM surrogate, the ADMM
design, Riemannian conjugate gradient, and fixed-direction baselines.

With ``F``, ``G`` and ``w`` fixed, the communication objective is a convex
quadratic ``f(theta) = theta^H Hq theta + 2 Re(gl^H theta) + const`` and the
radar energy of target ``l`` is the quartic
``(theta^H X_l theta)(theta^H Y_l theta)``.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import NoBracket, SurrogateInfeasible
from .numerics import bisect, solve_convex_qcqp, solve_hpd, unit_modulus
from .precoder import MetricWeights, split


# ---------------------------------------------------------------------------
# Quartic radar form
# ---------------------------------------------------------------------------
def build_ris_quadratics(channels, geometry, f, w, ell=0):
    """``(X, Y)`` with ``theta^H X theta * theta^H Y theta = tr(F^H B F)``.

    ``X = rho u u^H``, ``u = conj(a_r) * (H_echo^H w)``;
    ``Y = rho conj(M) M^T``, ``M = diag(conj(a_t)) H_BR^H F``.
    """
    rho = float(geometry.rho[ell])
    w = np.asarray(w, complex)
    if w.shape != (channels.n_bs,) or f.shape[0] != channels.n_bs:
        raise ValueError("receiver / precoder dimensions do not match the channels")
    u = geometry.a_r[:, ell].conj() * (channels.h_echo.conj().T @ w)
    m = geometry.a_t[:, ell].conj()[:, None] * (channels.h_br_h @ f)
    x = rho * np.outer(u, u.conj())
    y = rho * (m.conj() @ m.T)
    return x, 0.5 * (y + y.conj().T)


def sensing_gain_quadratics(channels, geometry, ell=0):
    """``(X', Y')`` whose quartic is ``lambda_max(B(theta))`` for a matched
    receiver: ``rho^2 ||H_echo Theta a_r||^2 ||H_BR^H-side b||^2``."""
    rho = float(geometry.rho[ell])
    he = channels.h_echo * geometry.a_r[:, ell][None, :]
    x = rho * (he.conj().T @ he)
    hb = channels.h_br_h * geometry.a_t[:, ell].conj()[:, None]
    y = rho * (hb @ hb.conj().T).conj()
    return 0.5 * (x + x.conj().T), 0.5 * (y + y.conj().T)


def quartic(x, y, theta):
    return float(np.real(np.vdot(theta, x @ theta)) * np.real(np.vdot(theta, y @ theta)))


@dataclass(frozen=True)
class RisSurrogate:
    """Convex inner approximation ``theta^H Qh theta <= c`` of
    ``quartic(theta) >= threshold`` around ``theta_t``."""
    x_mat: np.ndarray
    y_mat: np.ndarray
    q_mat: np.ndarray
    q_hat: np.ndarray
    c_scalar: float
    theta_t: np.ndarray
    lam_max: float
    threshold: float

    def lower_bound(self, theta):
        """``theta^H Q theta - quartic(theta_t)``, a minorant of the quartic."""
        return float(np.real(np.vdot(theta, self.q_mat @ theta))) - quartic(
            self.x_mat, self.y_mat, self.theta_t)

    def value(self, theta):
        return float(np.real(np.vdot(theta, self.q_hat @ theta)))

    def feasible(self, theta, tol=1e-9):
        return self.value(theta) <= self.c_scalar + tol * max(1.0, abs(self.c_scalar))


def mm_surrogate(x, y, theta_t, threshold):
    """Linearize the quartic at ``theta_t``.

    ``Q = X t t^H Y + Y t t^H X``, ``Qh = lambda_max(Q) I - Q`` and
    ``c = N lambda_max(Q) - quartic(t) - threshold``.  For unit-modulus
    ``theta``: ``theta^H Qh theta <= c  =>  quartic(theta) >= threshold``.
    """
    t = np.asarray(theta_t, complex)
    xt, yt = x @ t, y @ t
    q = np.outer(xt, yt.conj()) + np.outer(yt, xt.conj())
    q = 0.5 * (q + q.conj().T)
    lam = float(np.linalg.eigvalsh(q)[-1])
    n = t.size
    q_hat = lam * np.eye(n) - q
    c = n * lam - quartic(x, y, t) - threshold
    return RisSurrogate(x, y, q, q_hat, c, t, lam, threshold)


# ---------------------------------------------------------------------------
# Communication objective in theta
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RisObjective:
    """``f(theta) = theta^H hq theta + 2 Re(gl^H theta) + const``."""
    hq: np.ndarray
    gl: np.ndarray
    const: float

    def __call__(self, theta):
        return float(np.real(np.vdot(theta, self.hq @ theta) + 2 * np.vdot(self.gl, theta))) + self.const

    def scaled(self, s):
        return RisObjective(self.hq / s, self.gl / s, self.const / s)


def _khatri_rao_columns(u, r):
    """Columns ``vec(u[:, i] r[i, :])`` (column-major vec)."""
    # vec(outer(u_i, r_i)) = kron(r_i, u_i)
    return np.einsum("ij,ki->jki", r, u).reshape(r.shape[1] * u.shape[0], u.shape[1])


def ris_objective_terms(channels, f, g, weights=None):
    """Weighted MSE as a quadratic in ``theta`` for fixed ``F``, ``G``.

    Every user contributes its desired term ``A^H G H_c F_k C - A^H`` and
    one interference term ``A^H G H_c F_j`` per other user.  The noise
    term is theta-independent and goes into ``const``.
    """
    weights = weights or MetricWeights()
    n_users = channels.n_users
    blocks = split(f, n_users)
    n = blocks[0].shape[1]
    cols, ds = [], []
    noise = 0.0
    for k in range(n_users):
        a = weights.a_k(k, n)
        ag = a.conj().T @ g[k]
        u = ag @ channels.h_ru[k]
        for j in range(n_users):
            r = channels.h_br_h @ blocks[j]
            d = ag @ channels.h_bu[k] @ blocks[j]
            if j == k:
                c = weights.c_k(k, n)
                r = r @ c
                d = d @ c - a.conj().T
            cols.append(_khatri_rao_columns(u, r))
            ds.append(d.reshape(-1, order="F"))
        noise += float(np.real(np.trace(ag @ channels.r_nc @ ag.conj().T)))
    h_theta = np.concatenate(cols, axis=0)
    dvec = np.concatenate(ds)
    hq = h_theta.conj().T @ h_theta
    gl = h_theta.conj().T @ dvec
    return RisObjective(0.5 * (hq + hq.conj().T), gl,
                        float(np.real(np.vdot(dvec, dvec))) + noise)


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------
@dataclass
class AdmmState:
    alpha: np.ndarray
    upsilon: np.ndarray
    rho: float
    delta: object = 0.0


class _ThetaSolver:
    """theta-step ``min f(theta) + rho/2 ||theta - v||^2 s.t. theta^H Qh_l theta <= c_l``.

    For one constraint ``(Qh, Hq + rho/2 I)`` is diagonalized jointly once
    per ``rho`` so every bisection probe is O(N).
    """

    def __init__(self, hq, surrogates):
        self.hq = hq
        self.surrogates = surrogates
        self._rho = None

    def _prepare(self, rho):
        if self._rho == rho:
            return
        self._rho = rho
        n = self.hq.shape[0]
        self.m = self.hq + 0.5 * rho * np.eye(n)
        if len(self.surrogates) == 1:
            s = self.surrogates[0]
            self.lam, self.v = linalg.eigh(s.q_hat, self.m)
            self.lam = np.maximum(self.lam, 0.0)

    def solve(self, rhs, rho):
        """Returns ``(theta, delta)``; ``rhs = -gl + rho/2 (alpha + upsilon)``."""
        self._prepare(rho)
        if not self.surrogates:
            return solve_hpd(self.m, rhs), 0.0
        if len(self.surrogates) == 1:
            return self._solve_single(rhs)
        return self._solve_multi(rhs)

    def _solve_single(self, rhs):
        s = self.surrogates[0]
        c = s.c_scalar
        cv = self.v.conj().T @ rhs
        w2 = np.abs(cv) ** 2

        def psi(delta):
            return float(np.sum(self.lam * w2 / (1 + delta * self.lam) ** 2))

        def theta_of(delta):
            return self.v @ (cv / (1 + delta * self.lam))

        if psi(0.0) <= c:
            return theta_of(0.0), 0.0
        if c <= 0:
            raise SurrogateInfeasible("linearized radar constraint has an empty feasible set")
        hi = 1.0
        while psi(hi) > c:
            hi *= 4.0
            if hi > 1e300:
                raise SurrogateInfeasible("no multiplier satisfies the linearized radar constraint")
        try:
            delta = bisect(lambda d: psi(d) - c, 0.0, hi, tol=1e-13 * c, xtol=1e-15 * hi)
        except NoBracket as exc:
            raise SurrogateInfeasible(str(exc)) from exc
        # keep the feasible side
        while psi(delta) > c * (1 + 1e-12):
            delta *= 1 + 1e-9
        return theta_of(delta), delta

    def _solve_multi(self, rhs):
        quads = [s.q_hat for s in self.surrogates]
        zeros = [np.zeros(self.hq.shape[0], complex) for _ in quads]
        consts = [-s.c_scalar for s in self.surrogates]
        if any(c > 0 for c in consts):
            raise SurrogateInfeasible("linearized radar constraint has an empty feasible set")
        res = solve_convex_qcqp(self.m, -rhs, quads, zeros, consts,
                                feasible_point=np.zeros_like(rhs))
        return res.z, res.multipliers


def admm_theta_step(objective, surrogate, state):
    """One theta-update: ``theta = (Hq + rho/2 I + delta Qh)^{-1} (rho/2 (alpha + upsilon) - gl)``.

    ``surrogate`` may be ``None`` (no radar constraint), a single
    :class:`RisSurrogate` or a list of them.
    """
    if surrogate is None:
        surrogates = []
    elif isinstance(surrogate, RisSurrogate):
        surrogates = [surrogate]
    else:
        surrogates = list(surrogate)
    solver = _ThetaSolver(objective.hq, surrogates)
    rhs = 0.5 * state.rho * (state.alpha + state.upsilon) - objective.gl
    return solver.solve(rhs, state.rho)


def _admm_inner(objective, surrogates, theta_t, rho, eps, max_inner, trace, outer):
    solver = _ThetaSolver(objective.hq, surrogates)
    theta = theta_t.copy()
    upsilon = np.zeros_like(theta)
    alpha = theta.copy()
    delta = 0.0
    # nonconvex ADMM may cycle: keep the best surrogate-feasible iterate
    best, best_val = None, np.inf
    last_check = np.inf
    for it in range(max_inner):
        alpha = unit_modulus(theta - upsilon)
        val = objective(alpha)
        if val < best_val and all(s.feasible(alpha) for s in surrogates):
            best, best_val = alpha, val
        theta_old = theta
        rhs = 0.5 * rho * (alpha + upsilon) - objective.gl
        theta, delta = solver.solve(rhs, rho)
        upsilon = upsilon + alpha - theta
        r_p = float(np.linalg.norm(alpha - theta))
        r_d = float(rho * np.linalg.norm(theta - theta_old))
        trace.append({"outer": outer, "inner": it, "objective": val,
                      "primal": r_p, "dual": r_d, "rho": rho})
        if r_p <= eps and r_d <= eps * max(1.0, rho):
            break
        if (it + 1) % 10 == 0:
            # stalled primal residual also raises rho: the unit-modulus
            # set is nonconvex and needs a large enough penalty
            stalled = r_p > 0.9 * last_check
            last_check = r_p
            if r_p > 10 * r_d or (stalled and r_d <= 10 * r_p):
                rho *= 2.0
                upsilon = upsilon / 2.0
            elif r_d > 10 * r_p:
                rho /= 2.0
                upsilon = upsilon * 2.0
    return unit_modulus(alpha), delta, rho, best


def _radar_ok(terms, theta, slack=0.0):
    return all(quartic(x, y, theta) >= thr * (1 - slack) for x, y, thr in terms)


def _dedup(terms):
    out = []
    for t in terms:
        if not any(np.array_equal(t[0], o[0]) and np.array_equal(t[1], o[1]) and t[2] == o[2]
                   for o in out):
            out.append(t)
    return out


def admm_ris_design(objective, radar_terms, theta0, rho=1.0, eps=1e-6,
                    max_inner=200, max_outer=50, outer_tol=1e-3, rng=None):
    """ADMM with MM linearization of the quartic radar constraints.

    Parameters
    ----------
    objective : RisObjective
    radar_terms : list of (X, Y, threshold)
        One entry per target; thresholds <= 0 are dropped.
    theta0 : ndarray
        Unit-modulus start.  When it violates a radar constraint a
        sensing-maximizing RCG phase runs first.

    Returns
    -------
    theta : ndarray
        Unit-modulus phases meeting every radar constraint.
    trace : list of dict
        Inner iterations and one ``{"outer", "objective", "accepted"}``
        record per outer step.

    Notes
    -----
    A candidate is accepted only when it keeps every quartic constraint
    and does not increase ``objective``; otherwise the step is shortened
    along the retraction of ``tau * alpha + (1 - tau) * theta_t``.
    """
    theta = unit_modulus(np.asarray(theta0, complex))
    terms = _dedup([(x, y, float(thr)) for x, y, thr in radar_terms if thr > 0])
    trace = []

    # scale preconditioning
    f_scale = max(float(np.linalg.norm(objective.hq, 2)), abs(objective(theta)), 1e-300)
    obj = objective.scaled(f_scale)
    sterms = [(x / math.sqrt(thr), y / math.sqrt(thr), 1.0) for x, y, thr in terms]

    if not _radar_ok(sterms, theta):
        theta = _feasibility_phase(sterms, theta)
        trace.append({"outer": -1, "objective": obj(theta) * f_scale, "accepted": True,
                      "phase": "feasibility"})

    f_cur = obj(theta)
    trace.append({"outer": 0, "objective": f_cur * f_scale, "accepted": True})
    for outer in range(1, max_outer + 1):
        surrogates = [mm_surrogate(x, y, theta, thr) for x, y, thr in sterms]
        try:
            last, _, rho, best = _admm_inner(obj, surrogates, theta, rho, eps, max_inner,
                                             trace, outer)
        except SurrogateInfeasible:
            break
        accepted = None
        for cand in (last, best):
            if cand is None:
                continue
            tau = 1.0
            for _ in range(12):
                c = cand if tau == 1.0 else unit_modulus(tau * cand + (1 - tau) * theta)
                if _radar_ok(sterms, c) and obj(c) <= f_cur:
                    if accepted is None or obj(c) < obj(accepted):
                        accepted = c
                    break
                tau *= 0.5
        if accepted is None:
            trace.append({"outer": outer, "objective": f_cur * f_scale, "accepted": False})
            break
        f_new = obj(accepted)
        theta = accepted
        change = (f_cur - f_new) / max(abs(f_cur), 1e-300)
        f_cur = f_new
        trace.append({"outer": outer, "objective": f_cur * f_scale, "accepted": True})
        if change < outer_tol:
            break
    return theta, trace


def mumt_ris_design(objective, radar_terms, theta0, **kwargs):
    """Multi-target RIS design; the theta-step handles several linearized
    constraints jointly (one target reduces to the bisection path)."""
    return admm_ris_design(objective, radar_terms, theta0, **kwargs)


def _feasibility_phase(sterms, theta):
    """Maximize the worst normalized sensing quartic by RCG on each target."""
    for x, y, thr in sterms:
        if quartic(x, y, theta) >= thr:
            continue
        cand, _ = rcg_ris_design(x, y, theta, eps=1e-9, max_iter=300,
                                 stop_value=thr * (1 + 1e-3))
        if quartic(x, y, cand) > quartic(x, y, theta):
            theta = cand
    if not _radar_ok(sterms, theta):
        raise SurrogateInfeasible("no RIS phase meets the radar constraint for the current precoder")
    return theta


# ---------------------------------------------------------------------------
# Riemannian conjugate gradient
# ---------------------------------------------------------------------------
def euclidean_gradient(x, y, theta):
    """``-(theta^H X theta) Y theta - (theta^H Y theta) X theta``."""
    xt, yt = x @ theta, y @ theta
    return -np.real(np.vdot(theta, xt)) * yt - np.real(np.vdot(theta, yt)) * xt


def riemannian_gradient(egrad, theta):
    return egrad - np.real(egrad.conj() * theta) * theta


def transport(z, theta):
    return z - np.real(z.conj() * theta) * theta


def rcg_ris_design(x, y, theta0, eps=1e-6, max_iter=500, c1=1e-4, shrink=0.5,
                   max_backtracks=30, stop_value=None):
    """Maximize ``(theta^H X theta)(theta^H Y theta)`` on the complex circle.

    Conjugate gradient with the Polak-Ribiere ``beta`` clipped to
    ``[0, beta_FR]`` and Armijo backtracking from twice the previous step
    (at most one); restarts on non-descent directions and every ``N``
    iterations.  ``X`` and ``Y`` are normalized internally so that a
    unit step is meaningful.  With ``stop_value`` the iteration ends as
    soon as the quartic reaches it.
    """
    theta = unit_modulus(np.asarray(theta0, complex))
    n = theta.size
    sx = max(float(np.real(np.trace(x))), 1e-300)
    sy = max(float(np.real(np.trace(y))), 1e-300)
    xs, ys = x / sx, y / (sy * n)

    def loss(t):
        return -quartic(xs, ys, t)

    g = euclidean_gradient(xs, ys, theta)
    rg = riemannian_gradient(g, theta)
    d = -rg
    ell = loss(theta)
    trace = [{"iteration": 0, "objective": ell * sx * sy * n,
              "grad_norm": float(np.linalg.norm(rg)),
              "tangency": float(np.max(np.abs(np.real(rg * theta.conj()))))}]
    zeta_prev = 1.0
    for it in range(1, max_iter + 1):
        slope = 2 * float(np.real(np.vdot(g, d)))
        if slope >= 0:
            d = -rg
            slope = 2 * float(np.real(np.vdot(g, d)))
        if slope == 0:
            break
        zeta = min(1.0, 2.0 * zeta_prev)
        for _ in range(max_backtracks):
            cand = unit_modulus(theta + zeta * d)
            if loss(cand) <= ell + c1 * zeta * slope:
                break
            zeta *= shrink
        else:
            trace[-1]["line_search_failed"] = True
            break
        ell_new = loss(cand)
        g_new = euclidean_gradient(xs, ys, cand)
        rg_new = riemannian_gradient(g_new, cand)
        t_rg = transport(rg, cand)
        t_d = transport(d, cand)
        den = float(np.real(np.vdot(t_rg, t_rg)))
        if den > 0:
            # Polak-Ribiere clipped to [0, Fletcher-Reeves]
            beta_pr = float(np.real(np.vdot(rg_new, rg_new - t_rg))) / den
            beta_fr = float(np.real(np.vdot(rg_new, rg_new))) / den
            beta = max(0.0, min(beta_pr, beta_fr))
        else:
            beta = 0.0
        if it % n == 0:
            beta = 0.0
        zeta_prev = zeta
        step = float(np.linalg.norm(cand - theta))
        theta, g, rg, ell = cand, g_new, rg_new, ell_new
        d = -rg + beta * t_d
        trace.append({"iteration": it, "objective": ell * sx * sy * n,
                      "grad_norm": float(np.linalg.norm(rg)), "step": zeta, "beta": beta,
                      "tangency": float(np.max(np.abs(np.real(rg * theta.conj()))))})
        if step <= eps:
            break
        if stop_value is not None and -ell * sx * sy * n >= stop_value:
            break
    return theta, trace


# ---------------------------------------------------------------------------
# Fixed-direction baselines
# ---------------------------------------------------------------------------
def _dominant_ris_vector(channels):
    h = channels.h_br_h_los if channels.h_br_h_los is not None else channels.h_br_h
    u, _, _ = np.linalg.svd(h)
    v = u[:, 0]
    return v * (abs(v[0]) / v[0]) if v[0] != 0 else v


def baseline_phases(kind, channels, geometry, ell=0, k=0):
    """Conjugate-phase alignment of the BS-RIS LoS path with an endpoint.

    ``theta_i = exp(-j(angle(u_i) + angle(a_i)))`` where ``u`` is the
    RIS-side dominant LoS direction and ``a`` the RIS response towards the
    target (``target-direction``) or user (``user-direction``).
    """
    u = _dominant_ris_vector(channels)
    if kind in ("target-direction", "target-dir", "target"):
        a = geometry.a_t[:, ell].conj()
    elif kind in ("user-direction", "user-dir", "user"):
        if geometry.a_user is None:
            raise ValueError("geometry carries no user steering vectors")
        a = geometry.a_user[:, k]
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return np.exp(-1j * (np.angle(u) + np.angle(a)))
