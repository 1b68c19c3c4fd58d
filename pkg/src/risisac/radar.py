"""Sensing side: GLRT detection probability, radar quadratic forms,
receive beamformers and the minimum sensing power.

Notation.  For target ``l`` with RIS phases ``theta``

* ``h_l = H_echo (theta * a_r,l)`` is the echo arriving at the BS array,
* ``b_l = H_BR (conj(theta) * a_t,l)`` is the transmit-side direction, so
  that the echo amplitude for precoder ``F`` is ``rho_l (w^H h_l)(b_l^H F)``.

The radar matrix is then ``B_l = rho_l^2 |w^H h_l|^2 b_l b_l^H`` and the
detected energy ``tr(F^H B_l F)``.
"""
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .exceptions import NullSpaceExhausted, SensingInfeasible
from .numerics import hermitian_eig, principal_eigvec, q_function, q_inverse


@dataclass(frozen=True)
class DetectionSpec:
    """GLRT operating point.

    Parameters
    ----------
    p_fa : float
        False-alarm probability.
    gamma_d : float
        Required detection probability, ``p_fa < gamma_d < 1``.
    samples : int
        Number of samples ``D`` integrated per sensing slot.
    radar_noise : float
        Noise power at the BS receive array (W).
    """
    p_fa: float
    gamma_d: float
    samples: int
    radar_noise: float

    def __post_init__(self):
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError(f"p_fa must lie in (0, 1), got {self.p_fa}")
        if not self.p_fa < self.gamma_d < 1.0:
            raise ValueError(f"gamma_d must lie in (p_fa, 1), got {self.gamma_d}")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError(f"samples must be a positive integer, got {self.samples}")
        if not self.radar_noise > 0:
            raise ValueError("radar_noise must be positive")

    @classmethod
    def from_config(cls, cfg, gamma_d=None):
        return cls(cfg.p_fa, cfg.gamma_d if gamma_d is None else gamma_d,
                   cfg.samples, cfg.radar_noise)

    @property
    def a(self):
        return q_inverse(self.p_fa / 2.0)

    def with_gamma(self, gamma_d):
        return DetectionSpec(self.p_fa, gamma_d, self.samples, self.radar_noise)


def detection_probability(x, spec):
    """``P(x) = Q(a - sqrt(x)) + Q(a + sqrt(x))`` with ``a = Q^{-1}(P_FA / 2)``.

    ``x`` is the integrated deflection ``D E / (||w||^2 sigma^2)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("deflection must be non-negative")
    p_fa = spec.p_fa if isinstance(spec, DetectionSpec) else float(spec)
    a = q_inverse(p_fa / 2.0)
    r = np.sqrt(x)
    # anchored at P_FA so that P(0) = P_FA holds exactly
    qa = q_function(a)
    return (p_fa + (q_function(a - r) - qa) + (q_function(a + r) - qa))[()]


@functools.lru_cache(maxsize=256)
def _inverse_cached(p, p_fa):
    a = q_inverse(p_fa / 2.0)
    qa = 0.5 * math.erfc(a / math.sqrt(2.0))

    def residual(x):
        # scalar form of detection_probability with a and Q(a) hoisted
        r = math.sqrt(x)
        q_lo = 0.5 * math.erfc((a - r) / math.sqrt(2.0))
        q_hi = 0.5 * math.erfc((a + r) / math.sqrt(2.0))
        return p_fa + (q_lo - qa) + (q_hi - qa) - p

    upper = (a + q_inverse(1.0 - p)) ** 2 + 10.0
    while residual(upper) < 0:
        upper *= 2.0
    return brentq(residual, 0.0, upper, xtol=1e-13 * upper, rtol=4 * np.finfo(float).eps)


def detection_inverse(p, spec):
    """Deflection ``x`` with ``detection_probability(x) = p``.

    Bracketed root search: ``P`` is strictly increasing on ``[0, inf)``.
    """
    p_fa = spec.p_fa if isinstance(spec, DetectionSpec) else float(spec)
    p = float(p)
    if not p_fa <= p < 1.0:
        raise ValueError(f"need P_FA <= p < 1, got p={p}, P_FA={p_fa}")
    if p == p_fa:
        return 0.0
    return _inverse_cached(p, p_fa)


def effective_threshold(spec, w=None):
    """Energy threshold ``||w||^2 sigma^2 P^{-1}(gamma_D) / D``.

    ``w`` may be a vector or a precomputed squared norm; ``None`` means a
    unit-norm receiver.
    """
    if w is None:
        w2 = 1.0
    elif np.ndim(w) == 0:
        w2 = float(w)
    else:
        w2 = float(np.vdot(w, w).real)
    return w2 * spec.radar_noise * detection_inverse(spec.gamma_d, spec) / spec.samples


def achieved_detection(energy, spec, w=None):
    """Detection probability reached by detected energy ``tr(F^H B F)``."""
    if w is None:
        w2 = 1.0
    elif np.ndim(w) == 0:
        w2 = float(w)
    else:
        w2 = float(np.vdot(w, w).real)
    if w2 == 0:
        return float(spec.p_fa)
    x = spec.samples * max(float(energy), 0.0) / (w2 * spec.radar_noise)
    return float(detection_probability(x, spec))


# ---------------------------------------------------------------------------
# Quadratic forms
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RadarQuadratic:
    """``tr(F^H B F) >= threshold`` with ``B = v v^H`` (rank one)."""
    b_matrix: np.ndarray
    threshold: float
    vector: np.ndarray = None

    def energy(self, f):
        if self.vector is not None:
            return float(np.sum(np.abs(self.vector.conj() @ f) ** 2))
        return float(np.real(np.trace(f.conj().T @ self.b_matrix @ f)))

    def satisfied(self, f, slack=1e-8):
        return self.energy(f) >= self.threshold - slack * max(self.threshold, 0.0)


@dataclass(frozen=True)
class RadarReceiver:
    """Receive beamformers (one column per target) and their normalizers."""
    w: tuple
    beta: tuple

    def __getitem__(self, ell):
        return self.w[ell]

    def __len__(self):
        return len(self.w)


def echo_vector(channels, geometry, theta, ell=0):
    """``h_l = H_echo diag(theta) a_r,l`` (length N_B)."""
    return channels.h_echo @ (theta * geometry.a_r[:, ell])


def transmit_vector(channels, geometry, theta, ell=0):
    """``b_l = H_BR diag(theta)^H a_t,l`` (length N_B)."""
    return channels.h_br_h.conj().T @ (theta.conj() * geometry.a_t[:, ell])


def build_b_matrix(channels, geometry, theta, w, ell=0, threshold=None, spec=None):
    """Radar quadratic for target ``ell`` and receiver ``w``.

    ``threshold`` defaults to :func:`effective_threshold` of ``spec`` when a
    spec is given and to 0 otherwise.
    """
    theta = np.asarray(theta, complex)
    w = np.asarray(w, complex)
    if theta.shape != (channels.n_ris,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({channels.n_ris},)")
    if w.shape != (channels.n_bs,):
        raise ValueError(f"w has shape {w.shape}, expected ({channels.n_bs},)")
    h = echo_vector(channels, geometry, theta, ell)
    b = transmit_vector(channels, geometry, theta, ell)
    v = geometry.rho[ell] * np.conj(np.vdot(w, h)) * b
    if threshold is None:
        threshold = effective_threshold(spec, w) if spec is not None else 0.0
    return RadarQuadratic(np.outer(v, v.conj()), float(threshold), v)


def optimal_receiver_sust(channels, geometry, theta, ell=0):
    """Matched receiver ``w = H_echo Theta a_r / ||H_echo Theta a_r||``."""
    h = echo_vector(channels, geometry, np.asarray(theta, complex), ell)
    nrm = np.linalg.norm(h)
    if nrm == 0 or not np.isfinite(nrm):
        raise SensingInfeasible("cascaded echo channel is zero")
    return RadarReceiver((h / nrm,), (1.0 / nrm,))


def interference_matrix(channels, geometry, theta, f, k):
    """Columns spanning the echoes of every target other than ``k``.

    Returns ``V_k`` with ``Upsilon_k = V_k V_k^H``.
    """
    v = np.zeros((channels.n_bs, f.shape[1]), complex)
    for j in range(geometry.n_targets):
        if j == k:
            continue
        h = echo_vector(channels, geometry, theta, j)
        b = transmit_vector(channels, geometry, theta, j)
        v += geometry.rho[j] * np.outer(h, b.conj() @ f)
    return v


def null_space(upsilon, cutoff=1e-10):
    """Orthonormal basis of the numerical null space of a PSD matrix."""
    w, u = hermitian_eig(upsilon, rtol=1e-8)
    if w[0] <= 0:
        return u
    return u[:, w <= cutoff * w[0]]


def zf_receivers_mumt(channels, geometry, theta, f):
    """Zero-forcing receivers: ``w_k`` maximizes the desired echo inside
    the null space of ``Upsilon_k``.

    The projected problem is a Rayleigh quotient whose Gram matrix is rank
    one, so the maximizer is the normalized projection of ``h_k``.
    """
    theta = np.asarray(theta, complex)
    ws, betas = [], []
    for k in range(geometry.n_targets):
        v = interference_matrix(channels, geometry, theta, f, k)
        basis = null_space(v @ v.conj().T)
        if basis.shape[1] == 0:
            raise NullSpaceExhausted(f"no interference-free dimension left for target {k}")
        h = echo_vector(channels, geometry, theta, k)
        ph = basis @ (basis.conj().T @ h)
        nrm = np.linalg.norm(ph)
        if nrm <= 1e-12 * max(np.linalg.norm(h), 1e-300):
            raise NullSpaceExhausted(f"echo of target {k} lies in the interference subspace")
        ws.append(ph / nrm)
        betas.append(1.0 / nrm)
    return RadarReceiver(tuple(ws), tuple(betas))


def minimum_power(quad):
    """Least transmit power meeting ``tr(F^H B F) >= threshold``.

    Returns ``(p_min, u)``: all power on the principal eigenvector ``u``.
    """
    b = quad.b_matrix
    if quad.vector is not None:
        lam = float(np.vdot(quad.vector, quad.vector).real)
        u = quad.vector / math.sqrt(lam) if lam > 0 else None
        if u is not None:
            idx = np.flatnonzero(np.abs(u) > 1e-8)[0]
            u = u * (abs(u[idx]) / u[idx])
    else:
        lam, u = principal_eigvec(b)
    if not lam > 0:
        raise SensingInfeasible("radar matrix is zero: no power level meets the detection target")
    return quad.threshold / lam, u
