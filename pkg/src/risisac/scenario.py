"""Simulation world: node geometry, Rician channels and target echoes.

Conventions
-----------
* Receive array responses follow ``exp(+j 2 pi s (m u_h + n u_v))`` where
  ``u_h, u_v`` are the direction cosines of the arrival direction along the
  array's horizontal and vertical axes.
* A link from ``tx`` to ``rx`` has line-of-sight part
  ``r_rx(towards tx) r_tx(towards rx)^T`` so that the reverse link is the
  plain transpose (reciprocity).
* ``echo_model="reciprocal"`` (default) builds the RIS-to-BS echo matrix as
  the transpose of the forward BS-to-RIS matrix and the transmit steering
  vector of a target as the conjugate of its receive steering vector.
  ``echo_model="literal"`` uses the conjugate transpose and identical
  steering vectors.
"""
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .numerics import complex_normal

SPEED_OF_LIGHT = 299_792_458.0

ECHO_MODELS = ("reciprocal", "literal")
LINKS = ("br", "bu", "ru")


def dbm_to_watt(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * math.log10(p_w) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative description of one ISAC deployment.

    Powers are stored in watts and angles in radians; :func:`load_config`
    performs the conversion from the dBm / degree units of the JSON file.
    """
    n_bs_antennas: int = 6
    n_user_antennas: int = 4
    ris_grid: tuple = (6, 6)
    n_streams: int = 4
    n_users: int = 1
    n_targets: int = 1
    bs_position: tuple = (0.0, 0.0, 10.0)
    ris_position: tuple = (10.0, 50.0, 10.0)
    user_positions: tuple = ((200.0, -60.0, 0.0),)
    target_positions: tuple = ((-5.0, 35.0, 10.0),)
    carrier_frequency: float = 10e9
    sampling_frequency: float = 1e6
    sensing_slot: float = 0.05
    tx_power: float = 0.1
    rician_factors: dict = field(default_factory=lambda: {"br": 9.0, "bu": 0.0, "ru": 0.0})
    pathloss_reference: float = 1e-3
    pathloss_exponents: dict = field(default_factory=lambda: {"br": 1.8, "bu": 3.9, "ru": 2.0})
    user_noise: float = 1e-14
    radar_noise: float = 1e-14
    p_fa: float = 0.02
    gamma_d: float = 0.98
    element_spacing: float = 0.5
    ris_boresight: float = -math.pi / 2
    bs_array_axis: float = 0.0
    user_array_axis: float = 0.0
    echo_model: str = "reciprocal"
    rng_seed: int = 0

    @property
    def n_ris(self):
        return int(self.ris_grid[0] * self.ris_grid[1])

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def samples(self):
        """Number of radar samples per sensing slot, ``T0 * fs``."""
        return int(round(self.sensing_slot * self.sampling_frequency))

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("n_bs_antennas", "n_user_antennas", "n_streams",
                     "n_users", "n_targets"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if len(self.ris_grid) != 2 or min(self.ris_grid) < 1:
            raise ConfigError(f"ris_grid must be two positive integers, got {self.ris_grid!r}")
        if self.n_streams > min(self.n_bs_antennas, self.n_user_antennas):
            raise ConfigError(
                "n_streams must not exceed min(n_bs_antennas, n_user_antennas): "
                f"{self.n_streams} > {min(self.n_bs_antennas, self.n_user_antennas)}")
        if len(self.user_positions) != self.n_users:
            raise ConfigError(
                f"n_users={self.n_users} but {len(self.user_positions)} user positions given")
        if len(self.target_positions) != self.n_targets:
            raise ConfigError(
                f"n_targets={self.n_targets} but {len(self.target_positions)} target positions given")
        for name in ("tx_power", "user_noise", "radar_noise", "carrier_frequency",
                     "sampling_frequency", "sensing_slot", "pathloss_reference",
                     "element_spacing"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        prod = self.sensing_slot * self.sampling_frequency
        if abs(prod - round(prod)) > 1e-6 * max(1.0, prod) or round(prod) < 1:
            raise ConfigError(
                f"sensing_slot * sampling_frequency must be a positive integer, got {prod!r}")
        if not 0 < self.p_fa < self.gamma_d < 1:
            raise ConfigError(
                f"need 0 < p_fa < gamma_d < 1, got p_fa={self.p_fa}, gamma_d={self.gamma_d}")
        for link in LINKS:
            if link not in self.rician_factors or self.rician_factors[link] < 0:
                raise ConfigError(f"rician_factors.{link} must be >= 0")
            if link not in self.pathloss_exponents:
                raise ConfigError(f"pathloss_exponents.{link} is missing")
        if self.echo_model not in ECHO_MODELS:
            raise ConfigError(f"echo_model must be one of {ECHO_MODELS}, got {self.echo_model!r}")
        ris = np.asarray(self.ris_position, float)
        for p in self.target_positions:
            if np.linalg.norm(np.asarray(p, float) - ris) == 0:
                raise ConfigError("target position coincides with the RIS")
        return self


# JSON keys -> (dataclass field, converter)
_JSON_FIELDS = {
    "n_bs_antennas": ("n_bs_antennas", int),
    "n_user_antennas": ("n_user_antennas", int),
    "ris_grid": ("ris_grid", lambda v: tuple(int(x) for x in v)),
    "n_streams": ("n_streams", int),
    "n_users": ("n_users", int),
    "n_targets": ("n_targets", int),
    "carrier_frequency_hz": ("carrier_frequency", float),
    "sampling_frequency_hz": ("sampling_frequency", float),
    "sensing_slot_s": ("sensing_slot", float),
    "tx_power_dbm": ("tx_power", dbm_to_watt),
    "rician_factors": ("rician_factors", lambda d: {k: float(v) for k, v in d.items()}),
    "pathloss_reference_db": ("pathloss_reference", db_to_linear),
    "pathloss_exponents": ("pathloss_exponents", lambda d: {k: float(v) for k, v in d.items()}),
    "user_noise_dbm": ("user_noise", dbm_to_watt),
    "radar_noise_dbm": ("radar_noise", dbm_to_watt),
    "p_fa": ("p_fa", float),
    "gamma_d": ("gamma_d", float),
    "element_spacing": ("element_spacing", float),
    "ris_boresight_deg": ("ris_boresight", math.radians),
    "bs_array_axis_deg": ("bs_array_axis", math.radians),
    "user_array_axis_deg": ("user_array_axis", math.radians),
    "echo_model": ("echo_model", str),
    "rng_seed": ("rng_seed", int),
}


def _position(v, what):
    try:
        p = tuple(float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected three numbers, got {v!r}") from exc
    if len(p) != 3:
        raise ConfigError(f"{what}: expected three coordinates, got {len(p)}")
    return p


def config_from_dict(doc):
    """Build a validated :class:`ScenarioConfig` from a JSON-style mapping."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key == "positions":
            if not isinstance(value, dict):
                raise ConfigError("positions must be an object")
            for k, v in value.items():
                if k == "bs":
                    kwargs["bs_position"] = _position(v, "positions.bs")
                elif k == "ris":
                    kwargs["ris_position"] = _position(v, "positions.ris")
                elif k == "users":
                    kwargs["user_positions"] = tuple(
                        _position(p, f"positions.users[{i}]") for i, p in enumerate(v))
                elif k == "targets":
                    kwargs["target_positions"] = tuple(
                        _position(p, f"positions.targets[{i}]") for i, p in enumerate(v))
                else:
                    raise ConfigError(f"unknown field positions.{k}")
            continue
        if key.startswith("_"):
            continue   # comment fields
        if key not in _JSON_FIELDS:
            raise ConfigError(f"unknown field {key!r}")
        name, conv = _JSON_FIELDS[key]
        try:
            kwargs[name] = conv(value)
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"field {key!r}: cannot convert {value!r}") from exc
    for link_field in ("rician_factors", "pathloss_exponents"):
        if link_field in kwargs:
            merged = dict(getattr(ScenarioConfig(), link_field))
            merged.update(kwargs[link_field])
            kwargs[link_field] = merged
    return ScenarioConfig(**kwargs).validate()


def load_config(path):
    """Read a JSON scenario file.

    Raises
    ------
    ConfigError
        On unreadable files, JSON syntax errors (with line and column) or
        violated invariants (naming the offending field).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def builtin_config(name="paper_defaults"):
    """Load one of the JSON scenarios shipped with the package."""
    ref = resources.files("risisac.configs").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ConfigError(f"no builtin config named {name!r}")
    return config_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def config_to_dict(cfg):
    """Inverse of :func:`config_from_dict` (JSON units)."""
    return {
        "n_bs_antennas": cfg.n_bs_antennas,
        "n_user_antennas": cfg.n_user_antennas,
        "ris_grid": list(cfg.ris_grid),
        "n_streams": cfg.n_streams,
        "n_users": cfg.n_users,
        "n_targets": cfg.n_targets,
        "positions": {
            "bs": list(cfg.bs_position),
            "ris": list(cfg.ris_position),
            "users": [list(p) for p in cfg.user_positions],
            "targets": [list(p) for p in cfg.target_positions],
        },
        "carrier_frequency_hz": cfg.carrier_frequency,
        "sampling_frequency_hz": cfg.sampling_frequency,
        "sensing_slot_s": cfg.sensing_slot,
        "tx_power_dbm": watt_to_dbm(cfg.tx_power),
        "rician_factors": dict(cfg.rician_factors),
        "pathloss_reference_db": 10 * math.log10(cfg.pathloss_reference),
        "pathloss_exponents": dict(cfg.pathloss_exponents),
        "user_noise_dbm": watt_to_dbm(cfg.user_noise),
        "radar_noise_dbm": watt_to_dbm(cfg.radar_noise),
        "p_fa": cfg.p_fa,
        "gamma_d": cfg.gamma_d,
        "element_spacing": cfg.element_spacing,
        "ris_boresight_deg": math.degrees(cfg.ris_boresight),
        "bs_array_axis_deg": math.degrees(cfg.bs_array_axis),
        "user_array_axis_deg": math.degrees(cfg.user_array_axis),
        "echo_model": cfg.echo_model,
        "rng_seed": cfg.rng_seed,
    }


# ---------------------------------------------------------------------------
# Array responses
# ---------------------------------------------------------------------------
def steering_vector_ula(n, sin_angle, spacing=0.5):
    """ULA response ``exp(j 2 pi s k sin_angle)``, ``k = 0..n-1``."""
    return np.exp(2j * np.pi * spacing * np.arange(n) * sin_angle)


def steering_vector_upa(grid, azimuth, elevation, spacing=0.5):
    """UPA response for a ``(rows, cols)`` grid.

    Entry ``(r, c)`` (flattened row-major) carries the phase
    ``2 pi s (c sin(az) cos(el) + r sin(el))``: columns run along the
    horizontal axis, rows along the vertical one.
    """
    rows, cols = int(grid[0]), int(grid[1])
    u_h = math.sin(azimuth) * math.cos(elevation)
    u_v = math.sin(elevation)
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.exp(2j * np.pi * spacing * (c * u_h + r * u_v)).reshape(-1)


def _unit(v):
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


def ris_frame(cfg):
    """(boresight, horizontal axis, vertical axis) of the RIS."""
    b = cfg.ris_boresight
    normal = np.array([math.cos(b), math.sin(b), 0.0])
    vertical = np.array([0.0, 0.0, 1.0])
    horizontal = np.cross(normal, vertical)
    return normal, horizontal, vertical


def ris_angles(cfg, point):
    """Azimuth/elevation of ``point`` seen from the RIS, plus distance."""
    d = np.asarray(point, float) - np.asarray(cfg.ris_position, float)
    dist = float(np.linalg.norm(d))
    if dist == 0:
        raise ValueError("point coincides with the RIS")
    u = d / dist
    normal, horizontal, vertical = ris_frame(cfg)
    az = math.atan2(float(u @ horizontal), float(u @ normal))
    el = math.asin(max(-1.0, min(1.0, float(u @ vertical))))
    return az, el, dist


def ris_response(cfg, point):
    az, el, _ = ris_angles(cfg, point)
    return steering_vector_upa(cfg.ris_grid, az, el, cfg.element_spacing)


def _ula_response(n, axis_angle, origin, point, spacing):
    axis = np.array([math.cos(axis_angle), math.sin(axis_angle), 0.0])
    u = _unit(np.asarray(point, float) - np.asarray(origin, float))
    return steering_vector_ula(n, float(u @ axis), spacing)


def pathloss(cfg, link, distance):
    """Large-scale gain ``beta0 * d^-alpha`` of a link."""
    return cfg.pathloss_reference * distance ** (-cfg.pathloss_exponents[link])


def rician(rng, beta, kappa, los):
    """``sqrt(beta/(kappa+1)) (sqrt(kappa) H_LoS + H_NLoS)``."""
    nlos = complex_normal(rng, los.shape)
    return math.sqrt(beta / (kappa + 1.0)) * (math.sqrt(kappa) * los + nlos)


# ---------------------------------------------------------------------------
# Channels and targets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ChannelSet:
    """Complex channels of one realization.

    ``h_br_h`` is the BS-to-RIS matrix (N_R x N_B, written H_BR^H in the
    signal model); ``h_echo`` the RIS-to-BS matrix used on the radar return
    path (N_B x N_R).  ``h_bu[k]`` and ``h_ru[k]`` are per user.
    """
    h_bu: tuple
    h_ru: tuple
    h_br_h: np.ndarray
    h_echo: np.ndarray
    r_nc: np.ndarray
    r_nr: np.ndarray
    h_br_h_los: np.ndarray = None
    h_ru_los: tuple = None

    @property
    def n_bs(self):
        return self.h_br_h.shape[1]

    @property
    def n_ris(self):
        return self.h_br_h.shape[0]

    @property
    def n_users(self):
        return len(self.h_bu)

    def effective(self, theta, k=0):
        """Effective channel ``H_BU,k + H_RU,k diag(theta) H_BR^H``."""
        return self.h_bu[k] + (self.h_ru[k] * theta[None, :]) @ self.h_br_h

    def effective_all(self, theta):
        return [self.effective(theta, k) for k in range(self.n_users)]


def echo_matrix(h_br_h, echo_model="reciprocal"):
    return h_br_h.T.copy() if echo_model == "reciprocal" else h_br_h.conj().T.copy()


def make_channels(h_bu, h_ru, h_br_h, user_noise=1.0, radar_noise=1.0,
                  echo_model="reciprocal", h_echo=None, **extra):
    """Assemble a :class:`ChannelSet` from explicit matrices (tests, toys)."""
    h_bu = tuple(np.atleast_2d(np.asarray(h, complex)) for h in h_bu)
    h_ru = tuple(np.atleast_2d(np.asarray(h, complex)) for h in h_ru)
    h_br_h = np.atleast_2d(np.asarray(h_br_h, complex))
    if h_echo is None:
        h_echo = echo_matrix(h_br_h, echo_model)
    n_u = h_bu[0].shape[0]
    n_b = h_br_h.shape[1]
    r_nc = np.asarray(user_noise) * np.eye(n_u) if np.ndim(user_noise) == 0 else np.asarray(user_noise)
    r_nr = np.asarray(radar_noise) * np.eye(n_b) if np.ndim(radar_noise) == 0 else np.asarray(radar_noise)
    return ChannelSet(h_bu, h_ru, h_br_h, np.asarray(h_echo, complex), r_nc, r_nr, **extra)


def los_matrices(cfg):
    """Deterministic unit-modulus LoS matrices (BS->RIS, per-user BS->U, RIS->U)."""
    s = cfg.element_spacing
    bs, ris = cfg.bs_position, cfg.ris_position
    br = np.outer(ris_response(cfg, bs),
                  _ula_response(cfg.n_bs_antennas, cfg.bs_array_axis, bs, ris, s))
    bu, ru = [], []
    for up in cfg.user_positions:
        bu.append(np.outer(_ula_response(cfg.n_user_antennas, cfg.user_array_axis, up, bs, s),
                           _ula_response(cfg.n_bs_antennas, cfg.bs_array_axis, bs, up, s)))
        ru.append(np.outer(_ula_response(cfg.n_user_antennas, cfg.user_array_axis, up, ris, s),
                           ris_response(cfg, up)))
    return br, bu, ru


def link_gains(cfg):
    """Pathloss gains ``(beta_br, [beta_bu,k], [beta_ru,k])``."""
    bs = np.asarray(cfg.bs_position, float)
    ris = np.asarray(cfg.ris_position, float)
    b_br = pathloss(cfg, "br", np.linalg.norm(ris - bs))
    b_bu = [pathloss(cfg, "bu", np.linalg.norm(np.asarray(u) - bs)) for u in cfg.user_positions]
    b_ru = [pathloss(cfg, "ru", np.linalg.norm(np.asarray(u) - ris)) for u in cfg.user_positions]
    return b_br, b_bu, b_ru


def synthesize_channels(cfg, rng):
    """Draw one Rician realization of every link.

    Draw order is fixed (BS-RIS, then per user BS-U and RIS-U), so the same
    generator state always yields the same :class:`ChannelSet`.
    """
    los_br, los_bu, los_ru = los_matrices(cfg)
    b_br, b_bu, b_ru = link_gains(cfg)
    kf = cfg.rician_factors
    h_br_h = rician(rng, b_br, kf["br"], los_br)
    h_bu, h_ru = [], []
    for k in range(cfg.n_users):
        h_bu.append(rician(rng, b_bu[k], kf["bu"], los_bu[k]))
        h_ru.append(rician(rng, b_ru[k], kf["ru"], los_ru[k]))
    return make_channels(h_bu, h_ru, h_br_h, cfg.user_noise, cfg.radar_noise,
                         cfg.echo_model, h_br_h_los=los_br, h_ru_los=tuple(los_ru))


def make_rng(seed, index=0):
    """Counter-based generator for realization ``index`` of run ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed) + int(index)))


@dataclass(frozen=True)
class TargetGeometry:
    """Per-target angles, distances, steering vectors and reflection gains.

    ``a_r`` and ``a_t`` hold one column per target (N_R x L).  ``a_user``
    holds the RIS receive response towards each user (N_R x K), used by
    the user-direction baseline.
    """
    azimuth: np.ndarray
    elevation: np.ndarray
    distance: np.ndarray
    a_r: np.ndarray
    a_t: np.ndarray
    rho: np.ndarray
    a_user: np.ndarray = None
    echo_model: str = "reciprocal"
    grid: tuple = None
    spacing: float = 0.5

    @property
    def n_targets(self):
        return self.a_r.shape[1]

    @property
    def xi(self):
        """Diagonal matrix of reflection coefficients."""
        return np.diag(self.rho.astype(complex))

    def target(self, ell):
        """Single-target view (columns reduced to target ``ell``)."""
        sl = slice(ell, ell + 1)
        return TargetGeometry(self.azimuth[sl], self.elevation[sl], self.distance[sl],
                              self.a_r[:, sl], self.a_t[:, sl], self.rho[sl],
                              self.a_user, self.echo_model, self.grid, self.spacing)

    def transmit_steering(self, azimuth, elevation):
        a = steering_vector_upa(self.grid, azimuth, elevation, self.spacing)
        return a.conj() if self.echo_model == "reciprocal" else a


def reflection_coefficient(wavelength, distance, density=1.0, area=1.0):
    """``lambda / ((4 pi)^{3/2} d^2) * sqrt(|g_T|^2 S)`` for uniform density."""
    if distance <= 0:
        raise ValueError("target distance must be positive")
    return wavelength / ((4 * math.pi) ** 1.5 * distance ** 2) * math.sqrt(density ** 2 * area)


def make_targets(a_r, rho, a_t=None, echo_model="reciprocal", a_user=None, grid=None,
                 spacing=0.5):
    """Assemble a :class:`TargetGeometry` from explicit vectors (tests, toys)."""
    a_r = np.asarray(a_r, complex)
    if a_r.ndim == 1:
        a_r = a_r[:, None]
    if a_t is None:
        a_t = a_r.conj() if echo_model == "reciprocal" else a_r.copy()
    a_t = np.asarray(a_t, complex)
    if a_t.ndim == 1:
        a_t = a_t[:, None]
    rho = np.atleast_1d(np.asarray(rho, float))
    n = a_r.shape[1]
    nan = np.full(n, np.nan)
    return TargetGeometry(nan, nan, nan, a_r, a_t, rho, a_user, echo_model,
                          grid if grid is not None else (1, a_r.shape[0]), spacing)


def target_geometry(cfg):
    """Angles, steering vectors and reflection coefficients of every target."""
    az, el, dist, cols = [], [], [], []
    for p in cfg.target_positions:
        a, e, d = ris_angles(cfg, p)
        if d == 0:
            raise ValueError("zero-distance target")
        az.append(a)
        el.append(e)
        dist.append(d)
        cols.append(steering_vector_upa(cfg.ris_grid, a, e, cfg.element_spacing))
    a_r = np.stack(cols, axis=1)
    a_t = a_r.conj() if cfg.echo_model == "reciprocal" else a_r.copy()
    rho = np.array([reflection_coefficient(cfg.wavelength, d) for d in dist])
    a_user = np.stack([ris_response(cfg, u) for u in cfg.user_positions], axis=1)
    return TargetGeometry(np.array(az), np.array(el), np.array(dist), a_r, a_t, rho,
                          a_user, cfg.echo_model, tuple(cfg.ris_grid), cfg.element_spacing)
