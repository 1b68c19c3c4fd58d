import math

import numpy as np
import pytest

from risisac import precoder as pc
from risisac.metrics import TransceiverState, angular_response, default_angle_grid, evaluate
from risisac.radar import DetectionSpec, build_b_matrix, optimal_receiver_sust
from risisac.scenario import builtin_config, make_rng, synthesize_channels, target_geometry

from _toys import cn, phases


@pytest.fixture(scope="module")
def realization():
    cfg = builtin_config("fig6")
    rng = np.random.default_rng(4)
    ch = synthesize_channels(cfg, make_rng(0))
    geo = target_geometry(cfg)
    th = phases(rng, ch.n_ris)
    f = cn(rng, cfg.n_bs_antennas, cfg.n_streams)
    f *= math.sqrt(cfg.tx_power) / np.linalg.norm(f)
    hc = ch.effective_all(th)
    g = pc.lmmse_equalizers(hc, f, ch.r_nc)
    w = optimal_receiver_sust(ch, geo, th).w
    return cfg, ch, geo, TransceiverState(f, g, w, th)


def test_evaluate_consistency(realization):
    cfg, ch, geo, state = realization
    spec = DetectionSpec.from_config(cfg)
    rep = evaluate(ch, state, geo, spec)
    hc = ch.effective_all(state.theta)
    assert rep.total_mse == pytest.approx(pc.weighted_mse(hc, state.f, state.g, ch.r_nc))
    assert rep.sum_rate == pytest.approx(pc.sum_rate(hc, state.f, ch.r_nc))
    assert rep.power == pytest.approx(cfg.tx_power)
    e = build_b_matrix(ch, geo, state.theta, state.w[0]).energy(state.f)
    assert rep.energies[0] == pytest.approx(e)
    assert 0.02 <= rep.detection[0] < 1
    row = rep.scalars()
    assert row["pd_min"] == rep.detection[0] and row["mse"] == rep.total_mse


def test_angular_response_definition(realization):
    _, ch, geo, state = realization
    az = np.radians([-30.0, 10.0, 45.0])
    out = angular_response(ch, state, geo, az, 0.0)
    for a, v in zip(az, out):
        at = geo.transmit_steering(a, 0.0)
        ref = np.linalg.norm(at.conj() @ np.diag(state.theta) @ ch.h_br_h @ state.f)
        assert v == pytest.approx(ref, rel=1e-12)


def test_response_toward_target_is_radar_gain(realization):
    # at the target direction the response is ||b^H F||
    _, ch, geo, state = realization
    v = angular_response(ch, state, geo, geo.azimuth, geo.elevation[0])[0]
    b = ch.h_br_h.conj().T @ (state.theta.conj() * geo.a_t[:, 0])
    assert v == pytest.approx(np.linalg.norm(b.conj() @ state.f), rel=1e-12)


def test_normalized(realization):
    _, ch, geo, state = realization
    out = angular_response(ch, state, geo, default_angle_grid(), normalize=True)
    assert out.max() == 1.0 and out.min() >= 0


def test_grid():
    g = default_angle_grid()
    assert g.size == 721
    assert math.degrees(g[1] - g[0]) == pytest.approx(0.25)


def test_empty_grid(realization):
    _, ch, geo, state = realization
    with pytest.raises(ValueError):
        angular_response(ch, state, geo, [])
