"""Small random instances shared by the test modules."""
import itertools

import numpy as np

from risisac import precoder as pc
from risisac import radar as rd
from risisac import ris
from risisac.scenario import make_channels, make_targets


def cn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def phases(rng, n):
    return np.exp(2j * np.pi * rng.random(n))


def random_psd(rng, n, rank=None):
    a = cn(rng, n, rank or n)
    return a @ a.conj().T


def sust_instance(rng, n_b=4, n_u=2, n_r=6, n=2, frac=None, p_max=1.0):
    """One user, one target; threshold at ``frac`` of the full-power maximum."""
    ch = make_channels([cn(rng, n_u, n_b)], [cn(rng, n_u, n_r)], cn(rng, n_r, n_b),
                       user_noise=0.1, radar_noise=1.0)
    geo = make_targets(phases(rng, n_r), 1.0)
    theta = phases(rng, n_r)
    hc = ch.effective_all(theta)
    f0 = cn(rng, n_b, n)
    f0 *= np.sqrt(p_max) / np.linalg.norm(f0)
    g = pc.lmmse_equalizers(hc, f0, ch.r_nc)
    w = rd.optimal_receiver_sust(ch, geo, theta).w[0]
    quad0 = rd.build_b_matrix(ch, geo, theta, w)
    lam = float(np.vdot(quad0.vector, quad0.vector).real)
    frac = rng.uniform(0.2, 0.95) if frac is None else frac
    quad = rd.RadarQuadratic(quad0.b_matrix, frac * p_max * lam, quad0.vector)
    return dict(channels=ch, geometry=geo, theta=theta, hc=hc, g=g, w=w, quad=quad,
                f0=f0, p_max=p_max)


def mumt_instance(rng, n_b=6, n_u=2, n_r=6, n=1, n_users=2, n_targets=2):
    ch = make_channels([cn(rng, n_u, n_b) for _ in range(n_users)],
                       [cn(rng, n_u, n_r) for _ in range(n_users)],
                       cn(rng, n_r, n_b), user_noise=0.1, radar_noise=1.0)
    geo = make_targets(np.stack([phases(rng, n_r) for _ in range(n_targets)], axis=1),
                       np.linspace(1.0, 0.6, n_targets))
    theta = phases(rng, n_r)
    f = cn(rng, n_b, n * n_users)
    f /= np.linalg.norm(f)
    return ch, geo, theta, f


def ris_toy(seed, n_r=4, n_b=3, frac=0.5, levels=16):
    """RIS subproblem with fixed ``F``, ``G``, ``w`` plus its grid optimum.

    The radar threshold sits at ``frac`` of the best quartic on the grid.
    Returns ``(objective, X, Y, threshold, grid_best, theta0)``.
    """
    rng = np.random.default_rng(seed)
    ch = make_channels([cn(rng, 2, n_b) * 0.3], [cn(rng, 2, n_r)], cn(rng, n_r, n_b),
                       user_noise=0.1, radar_noise=1.0)
    geo = make_targets(phases(rng, n_r), 1.0)
    th0 = phases(rng, n_r)
    f = cn(rng, n_b, 2)
    f /= np.linalg.norm(f)
    hc = ch.effective_all(th0)
    g = pc.lmmse_equalizers(hc, f, ch.r_nc)
    w = rd.optimal_receiver_sust(ch, geo, th0).w[0]
    obj = ris.ris_objective_terms(ch, f, g)
    x, y = ris.build_ris_quadratics(ch, geo, f, w)
    grid = np.exp(2j * np.pi * np.arange(levels) / levels)
    t = np.array(list(itertools.product(grid, repeat=n_r)))
    fx = np.real(np.einsum("ni,ij,nj->n", t.conj(), obj.hq, t)
                 + 2 * (t @ obj.gl.conj())) + obj.const
    qx = np.real(np.einsum("ni,ij,nj->n", t.conj(), x, t))
    qy = np.real(np.einsum("ni,ij,nj->n", t.conj(), y, t))
    q = qx * qy
    thr = frac * q.max()
    return obj, x, y, thr, float(fx[q >= thr].min()), th0
