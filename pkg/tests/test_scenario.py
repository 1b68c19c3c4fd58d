import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risisac.exceptions import ConfigError
from risisac.scenario import (builtin_config, config_from_dict, config_to_dict, dbm_to_watt,
                              load_config, make_channels, make_rng, pathloss,
                              reflection_coefficient, rician, ris_angles, steering_vector_ula,
                              steering_vector_upa, synthesize_channels, target_geometry,
                              watt_to_dbm)

from _toys import cn, phases


class TestSteering:
    def test_upa_hand_value(self):
        a = steering_vector_upa((1, 2), math.pi / 2, 0.0, 0.5)
        np.testing.assert_allclose(a, [1, -1], atol=1e-15)

    def test_upa_layout(self):
        # row index moves with elevation, column index with azimuth
        a = steering_vector_upa((2, 3), 0.3, 0.2, 0.5).reshape(2, 3)
        uh = math.sin(0.3) * math.cos(0.2)
        uv = math.sin(0.2)
        assert a[0, 1] == pytest.approx(np.exp(1j * math.pi * uh))
        assert a[1, 0] == pytest.approx(np.exp(1j * math.pi * uv))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
    def test_upa_unit_modulus(self, rows, cols, az, el):
        a = steering_vector_upa((rows, cols), az, el)
        assert a.shape == (rows * cols,)
        assert a[0] == 1
        np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.floats(-1.5, 1.5))
    def test_conjugate_symmetry(self, n, az):
        np.testing.assert_allclose(steering_vector_upa((1, n), -az, 0.0),
                                   steering_vector_upa((1, n), az, 0.0).conj(), atol=1e-14)

    def test_ula(self):
        np.testing.assert_allclose(steering_vector_ula(3, 1.0), [1, -1, 1], atol=1e-15)


class TestConfig:
    def test_defaults(self):
        cfg = builtin_config()
        assert cfg.n_ris == 36
        assert cfg.samples == 50000
        assert cfg.tx_power == pytest.approx(0.1)
        assert cfg.wavelength == pytest.approx(299792458 / 10e9)

    def test_fig6(self):
        cfg = builtin_config("fig6")
        assert cfg.n_ris == 36 and tuple(cfg.ris_grid) == (2, 18)
        assert all(v == pytest.approx(0.23) for v in cfg.rician_factors.values())

    def test_round_trip(self):
        cfg = builtin_config()
        again = config_from_dict(config_to_dict(cfg))
        assert again.tx_power == pytest.approx(cfg.tx_power, rel=1e-12)
        assert again.user_noise == pytest.approx(cfg.user_noise, rel=1e-12)
        assert again.ris_boresight == pytest.approx(cfg.ris_boresight)

    def test_dbm(self):
        assert dbm_to_watt(30) == 1.0
        assert watt_to_dbm(dbm_to_watt(-110)) == pytest.approx(-110)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="colour"):
            config_from_dict({"colour": 1})

    def test_comment_fields_ignored(self):
        assert config_from_dict({"_note": "x"}).n_bs_antennas == 6

    def test_bad_invariant(self):
        with pytest.raises(ConfigError):
            config_from_dict({"n_streams": 9})

    def test_bad_json_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "p_fa": 0.02,\n  oops\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(p)

    def test_load_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"tx_power_dbm": 30, "positions": {"targets": [[0, 40, 10]]}}))
        cfg = load_config(p)
        assert cfg.tx_power == pytest.approx(1.0)
        assert cfg.target_positions == ((0.0, 40.0, 10.0),)

    def test_unknown_builtin(self):
        with pytest.raises(ConfigError):
            builtin_config("nope")


class TestGeometry:
    def test_target_at_45_degrees(self):
        cfg = builtin_config()
        az, el, d = ris_angles(cfg, cfg.target_positions[0])
        assert math.degrees(az) == pytest.approx(45.0)
        assert el == pytest.approx(0.0)
        assert d == pytest.approx(15 * math.sqrt(2))

    def test_reflection_coefficient(self):
        cfg = builtin_config()
        geo = target_geometry(cfg)
        lam = 299792458 / 10e9
        assert geo.rho[0] == pytest.approx(lam / ((4 * math.pi) ** 1.5 * 450.0), rel=1e-12)
        assert reflection_coefficient(lam, 2.0) == pytest.approx(
            4 * reflection_coefficient(lam, 4.0))

    def test_reciprocal_transmit_steering(self):
        geo = target_geometry(builtin_config())
        np.testing.assert_allclose(geo.a_t[:, 0], geo.a_r[:, 0].conj())
        np.testing.assert_allclose(geo.transmit_steering(geo.azimuth[0], geo.elevation[0]),
                                   geo.a_t[:, 0], atol=1e-14)

    def test_literal_echo_model(self):
        cfg = builtin_config().replace(echo_model="literal")
        geo = target_geometry(cfg)
        np.testing.assert_allclose(geo.a_t, geo.a_r)
        ch = synthesize_channels(cfg, make_rng(0))
        np.testing.assert_allclose(ch.h_echo, ch.h_br_h.conj().T)


class TestChannels:
    def test_pathloss(self):
        cfg = builtin_config()
        assert pathloss(cfg, "br", 10.0) == pytest.approx(1e-3 * 10 ** -1.8)

    def test_rician_power(self):
        # E|h|^2 = beta for unit-modulus LoS
        rng = np.random.default_rng(0)
        los = np.exp(2j * np.pi * rng.random((200, 200)))
        h = rician(rng, 2.5, 3.0, los)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(2.5, rel=0.02)
        h0 = rician(rng, 1.0, 0.0, los)
        assert abs(np.mean(h0)) < 0.01

    def test_deterministic(self):
        cfg = builtin_config()
        a = synthesize_channels(cfg, make_rng(7, 3))
        b = synthesize_channels(cfg, make_rng(7, 3))
        c = synthesize_channels(cfg, make_rng(7, 4))
        np.testing.assert_array_equal(a.h_br_h, b.h_br_h)
        assert not np.allclose(a.h_br_h, c.h_br_h)

    def test_shapes(self):
        cfg = builtin_config()
        ch = synthesize_channels(cfg, make_rng(0))
        assert ch.h_br_h.shape == (36, 6)
        assert ch.h_echo.shape == (6, 36)
        assert ch.h_bu[0].shape == (4, 6) and ch.h_ru[0].shape == (4, 36)
        assert ch.r_nc.shape == (4, 4)

    def test_effective_channel(self, rng):
        ch = make_channels([cn(rng, 2, 3)], [cn(rng, 2, 4)], cn(rng, 4, 3))
        th = phases(rng, 4)
        ref = ch.h_bu[0] + ch.h_ru[0] @ np.diag(th) @ ch.h_br_h
        np.testing.assert_allclose(ch.effective(th), ref, atol=1e-13)
