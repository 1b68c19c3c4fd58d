"""Evaluation-only quantities computed from one transceiver state."""
from dataclasses import dataclass, field

import numpy as np

from .precoder import MetricWeights, mse_matrix, sum_rate, weighted_mse
from .radar import achieved_detection, build_b_matrix


@dataclass
class TransceiverState:
    """Full decision set: precoder, equalizers, radar receivers, RIS phases."""
    f: np.ndarray
    g: list
    w: tuple
    theta: np.ndarray
    converged: bool = False


@dataclass
class EvaluationReport:
    mse: list
    weighted_mse: float
    sum_rate: float
    detection: list
    energies: list
    power: float
    angular: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def total_mse(self):
        return float(sum(self.mse))

    def scalars(self):
        row = {
            "mse": self.total_mse,
            "weighted_mse": self.weighted_mse,
            "sum_rate": self.sum_rate,
            "power": self.power,
            "pd_min": min(self.detection) if self.detection else float("nan"),
        }
        for i, (p, e) in enumerate(zip(self.detection, self.energies)):
            row[f"pd_{i}"] = p
            row[f"energy_{i}"] = e
        return row


def evaluate(channels, state, geometry, specs, weights=None):
    """Every report field from the single state ``state``.

    ``specs`` is one :class:`DetectionSpec` per target (a single spec is
    broadcast).
    """
    hc = channels.effective_all(state.theta)
    n_users = len(hc)
    mses = [float(np.real(np.trace(mse_matrix(h, state.f, state.g[k], channels.r_nc, k, n_users))))
            for k, h in enumerate(hc)]
    wm = weighted_mse(hc, state.f, state.g, channels.r_nc, weights or MetricWeights())
    if not np.any(state.f):
        rate = 0.0
    else:
        rate = sum_rate(hc, state.f, channels.r_nc)
    if not isinstance(specs, (list, tuple)):
        specs = [specs] * geometry.n_targets
    pds, energies = [], []
    for ell in range(geometry.n_targets):
        w = state.w[ell]
        quad = build_b_matrix(channels, geometry, state.theta, w, ell)
        e = quad.energy(state.f)
        energies.append(e)
        pds.append(achieved_detection(e, specs[ell], w))
    power = float(np.real(np.vdot(state.f, state.f)))
    return EvaluationReport(mses, wm, rate, pds, energies, power)


def angular_response(channels, state, geometry, azimuths, elevation=0.0, normalize=False):
    """``P(az, el) = || a_t(az, el)^H Theta H_BR^H F ||`` over a grid."""
    azimuths = np.atleast_1d(np.asarray(azimuths, float))
    if azimuths.size == 0:
        raise ValueError("empty angle grid")
    radiated = (state.theta[:, None] * channels.h_br_h) @ state.f
    out = np.empty(azimuths.size)
    for i, az in enumerate(azimuths):
        a = geometry.transmit_steering(az, elevation)
        out[i] = np.linalg.norm(a.conj() @ radiated)
    if normalize:
        peak = out.max()
        if peak > 0:
            out = out / peak
    return out


def default_angle_grid(n=721):
    return np.radians(np.linspace(-90.0, 90.0, n))
