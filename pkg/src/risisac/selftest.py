"""Fast oracle checks runnable from an installed package (``isac selftest``)."""
import numpy as np

from .numerics import q_function, unit_modulus
from .radar import DetectionSpec, RadarQuadratic, detection_inverse, detection_probability, minimum_power
from .ris import euclidean_gradient, mm_surrogate, quartic, riemannian_gradient
from .scenario import make_channels, make_targets
from .radar import interference_matrix, zf_receivers_mumt


def _cn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def _random_psd(rng, n):
    a = _cn(rng, n, n)
    return a @ a.conj().T


def check_q_function(rng):
    # Q(x) = 0.5 erfc(x / sqrt 2); Q(0) = 1/2, Q(-x) = 1 - Q(x)
    x = rng.normal(size=100) * 3
    return (abs(q_function(0.0) - 0.5) < 1e-15
            and np.allclose(q_function(-x), 1 - q_function(x), atol=1e-15))


def check_detection(rng):
    spec = DetectionSpec(0.02, 0.98, 50000, 1.0)
    ok = detection_probability(0.0, spec) == spec.p_fa
    for x in rng.uniform(0, 40, 20):
        p = float(detection_probability(x, spec))
        ok &= abs(detection_inverse(p, spec) - x) < 1e-6
    return bool(ok)


def check_minimum_power(rng):
    ok = True
    for _ in range(10):
        v = _cn(rng, 5)
        quad = RadarQuadratic(np.outer(v, v.conj()), float(rng.uniform(0.5, 2)), v)
        p, u = minimum_power(quad)
        lam = float(np.vdot(v, v).real)
        ok &= abs(p * lam / quad.threshold - 1) < 1e-9
        ok &= abs(quad.energy(np.sqrt(p) * u[:, None]) / quad.threshold - 1) < 1e-9
    return bool(ok)


def check_mm_minorant(rng):
    ok = True
    for _ in range(5):
        x, y = _random_psd(rng, 4), _random_psd(rng, 4)
        t = unit_modulus(_cn(rng, 4))
        s = mm_surrogate(x, y, t, 1.0)
        ok &= abs(s.lower_bound(t) - quartic(x, y, t)) < 1e-8 * quartic(x, y, t)
        for _ in range(50):
            th = unit_modulus(_cn(rng, 4))
            ok &= s.lower_bound(th) <= quartic(x, y, th) * (1 + 1e-12) + 1e-12
    return bool(ok)


def check_gradient(rng):
    x, y = _random_psd(rng, 6), _random_psd(rng, 6)
    th = unit_modulus(_cn(rng, 6))
    g = euclidean_gradient(x, y, th)
    d = _cn(rng, 6)
    h = 1e-6
    fd = (-quartic(x, y, th + h * d) + quartic(x, y, th - h * d)) / (2 * h)
    an = 2 * np.real(np.vdot(g, d))
    rg = riemannian_gradient(g, th)
    return bool(abs(fd - an) < 1e-5 * max(1.0, abs(an))
                and np.max(np.abs(np.real(rg * th.conj()))) < 1e-9)


def check_zero_forcing(rng):
    ch = make_channels([_cn(rng, 2, 4)] * 2, [_cn(rng, 2, 6)] * 2, _cn(rng, 6, 4))
    geo = make_targets(unit_modulus(_cn(rng, 6, 2)), np.array([1.0, 0.7]))
    th = unit_modulus(_cn(rng, 6))
    f = _cn(rng, 4, 2)
    rx = zf_receivers_mumt(ch, geo, th, f)
    ok = True
    for k in range(2):
        v = interference_matrix(ch, geo, th, f, k)
        ups = v @ v.conj().T
        ok &= np.linalg.norm(rx.w[k].conj() @ ups) < 1e-12 * np.linalg.norm(ups)
    return bool(ok)


CHECKS = {
    "q-function": check_q_function,
    "detection": check_detection,
    "minimum-power": check_minimum_power,
    "mm-minorant": check_mm_minorant,
    "gradient": check_gradient,
    "zero-forcing": check_zero_forcing,
}


def run_selftest(seed=0):
    """Returns ``{name: passed}``."""
    rng = np.random.default_rng(seed)
    return {name: bool(fn(rng)) for name, fn in CHECKS.items()}
