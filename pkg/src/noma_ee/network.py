"""Scenario configuration, topology and uncertain channel generation.

One macro access unit sits at the origin of a disk-shaped service area,
surrounded by low-power units and uniformly dropped users.  Channels are
Rayleigh with d^-alpha path loss; the BBU only knows an estimate h_est of
each channel plus a per-link uncertainty radius delta bounding the
estimation error in Euclidean norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .robust import effective_radius

log = logging.getLogger(__name__)

WATT_FLOOR = 1e-30


class ZeroDistance(ValueError):
    """A user landed on top of an AAU; the draw must be rejected."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(max(watt, WATT_FLOOR) * 1000.0)


def _as_array(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    if arr.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class NetworkConfig:
    """All scenario dimensions and physical constants.

    Index conventions follow the rest of the package: f over AAUs with
    f = 0 the macro unit, k over users, n over subcarriers.
    Power-like fields are in watts; noise_power is the per-subcarrier
    noise variance sigma^2[f, k, n] in watts.
    """

    num_users: int
    num_subcarriers: int
    num_antennas: int
    num_aaus: int
    power_budget: np.ndarray          # (F,)
    reuse_limit: np.ndarray           # (N, F) integer L_n^f
    fronthaul_capacity: np.ndarray    # (F,) bits/s/Hz
    fronthaul_weight: np.ndarray      # (F,)
    noise_power: np.ndarray           # (F, K, N) watts
    drain_efficiency: float           # beta in (0, 1)
    circuit_power: float              # watts, per antenna chain
    sleep_power: np.ndarray           # (F,) watts
    macro_radius: float = 500.0
    small_radius: float = 20.0
    pathloss_exponent: float = 3.0
    uncertainty_radius: np.ndarray = field(default=None)  # (K, N, F)
    rng_seed: int = 0
    subcarrier_bandwidth: float = 180e3  # Hz, used only for dBm/Hz conversion

    def __post_init__(self):
        K, N, M, F = self.num_users, self.num_subcarriers, self.num_antennas, self.num_aaus
        if min(K, N, M, F) < 1:
            raise ValueError("K, N, M, F must all be >= 1")
        if not 0.0 < self.drain_efficiency < 1.0:
            raise ValueError("drain_efficiency must lie in (0, 1)")
        object.__setattr__(self, "power_budget", _as_array(self.power_budget, (F,), "power_budget"))
        object.__setattr__(self, "reuse_limit", _as_array(self.reuse_limit, (N, F), "reuse_limit"))
        object.__setattr__(self, "fronthaul_capacity",
                           _as_array(self.fronthaul_capacity, (F,), "fronthaul_capacity"))
        object.__setattr__(self, "fronthaul_weight",
                           _as_array(self.fronthaul_weight, (F,), "fronthaul_weight"))
        object.__setattr__(self, "noise_power", _as_array(self.noise_power, (F, K, N), "noise_power"))
        object.__setattr__(self, "sleep_power", _as_array(self.sleep_power, (F,), "sleep_power"))
        delta = self.uncertainty_radius if self.uncertainty_radius is not None else 0.0
        object.__setattr__(self, "uncertainty_radius", _as_array(delta, (K, N, F), "uncertainty_radius"))
        if np.any(self.uncertainty_radius < 0):
            raise ValueError("uncertainty_radius must be >= 0")
        if np.any(self.power_budget < 0) or np.any(self.noise_power <= 0):
            raise ValueError("power budgets must be >= 0 and noise powers > 0")
        if np.any(self.reuse_limit < 1) or np.any(self.reuse_limit > K):
            raise ValueError("reuse_limit entries must lie in [1, K]")
        if self.circuit_power < 0 or np.any(self.sleep_power < 0):
            raise ValueError("static powers must be >= 0")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.num_users, self.num_subcarriers, self.num_antennas, self.num_aaus)

    def with_reuse_limit(self, limit: int) -> "NetworkConfig":
        return replace(self, reuse_limit=np.full((self.num_subcarriers, self.num_aaus), float(limit)))

    def with_power_budget_dbm(self, dbm: float) -> "NetworkConfig":
        return replace(self, power_budget=np.full(self.num_aaus, dbm_to_watt(dbm)))

    def with_uncertainty(self, delta: float) -> "NetworkConfig":
        K, N, _, F = self.shape
        return replace(self, uncertainty_radius=np.full((K, N, F), float(delta)))


def table2_config(rng_seed: int = 0) -> NetworkConfig:
    """Full-scale scenario: K/N/M/F = 8/5/3/4, 40/30 dBm budgets, delta = 1e-3."""
    K, N, M, F = 8, 5, 3, 4
    budgets = np.array([dbm_to_watt(40.0)] + [dbm_to_watt(30.0)] * (F - 1))
    sigma2 = dbm_to_watt(-174.0) * 180e3
    return NetworkConfig(
        num_users=K, num_subcarriers=N, num_antennas=M, num_aaus=F,
        power_budget=budgets,
        reuse_limit=np.full((N, F), 2.0),
        fronthaul_capacity=np.array([50.0] + [20.0] * (F - 1)),
        fronthaul_weight=np.ones(F),
        noise_power=np.full((F, K, N), sigma2),
        drain_efficiency=0.25,
        circuit_power=dbm_to_watt(30.0),
        sleep_power=np.full(F, 0.1),
        uncertainty_radius=np.full((K, N, F), 1e-3),
        rng_seed=rng_seed,
    )


def desk_config(rng_seed: int = 0, *, num_users: int = 4, num_subcarriers: int = 2,
                num_antennas: int = 2, num_aaus: int = 2) -> NetworkConfig:
    """Reduced scenario used by CI and the acceptance suite (K=4, N=2, M=2, F=2)."""
    K, N, M, F = num_users, num_subcarriers, num_antennas, num_aaus
    budgets = np.array([dbm_to_watt(40.0)] + [dbm_to_watt(30.0)] * (F - 1))
    sigma2 = dbm_to_watt(-174.0) * 180e3
    return NetworkConfig(
        num_users=K, num_subcarriers=N, num_antennas=M, num_aaus=F,
        power_budget=budgets,
        reuse_limit=np.full((N, F), float(min(2, K))),
        fronthaul_capacity=np.array([50.0] + [20.0] * (F - 1)),
        fronthaul_weight=np.ones(F),
        noise_power=np.full((F, K, N), sigma2),
        drain_efficiency=0.25,
        circuit_power=dbm_to_watt(30.0),
        sleep_power=np.full(F, 0.1),
        uncertainty_radius=np.full((K, N, F), 1e-3),
        rng_seed=rng_seed,
    )


@dataclass(frozen=True)
class Topology:
    aau_xy: np.ndarray      # (F, 2); row 0 is the macro unit at the origin
    user_xy: np.ndarray     # (K, 2)
    distances: np.ndarray   # (K, F) meters


@dataclass(frozen=True)
class ChannelSet:
    """Estimated channels plus the derived matrix-uncertainty radii.

    h_est[k, n, f] is the length-M channel estimate; e[k, n, f] is the
    Frobenius radius delta^2 + 2*delta*||h_est|| bounding the lifted error
    matrix.  H_lift caches the rank-one outer products h h^dagger.
    """

    h_est: np.ndarray       # (K, N, F, M) complex
    delta: np.ndarray       # (K, N, F)
    e: np.ndarray           # (K, N, F)
    distances: np.ndarray   # (K, F)
    H_lift: np.ndarray      # (K, N, F, M, M) complex Hermitian rank-1

    @property
    def shape(self):
        K, N, F, M = self.h_est.shape
        return K, N, M, F


def _uniform_disk(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=count))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


MIN_SMALL_SEPARATION = 40.0   # m, rejection rule for co-located small cells
MIN_USER_DISTANCE = 10.0      # m, minimum-coupling-loss exclusion around masts


def generate_topology(cfg: NetworkConfig, rng_seed: int | None = None) -> Topology:
    """Drop the macro unit at the origin, small units and users uniformly in the disk."""
    seed = cfg.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70B0]))
    F, K = cfg.num_aaus, cfg.num_users

    aau_xy = np.zeros((F, 2))
    for f in range(1, F):
        for _ in range(10_000):
            xy = _uniform_disk(rng, 1, cfg.macro_radius)[0]
            if all(np.linalg.norm(xy - aau_xy[j]) >= MIN_SMALL_SEPARATION for j in range(1, f)):
                aau_xy[f] = xy
                break
        else:  # pragma: no cover - astronomically unlikely at sane F
            raise RuntimeError("could not place small AAUs with the separation rule")

    user_xy = np.zeros((K, 2))
    for k in range(K):
        for _ in range(10_000):
            xy = _uniform_disk(rng, 1, cfg.macro_radius)[0]
            if np.linalg.norm(xy - aau_xy, axis=1).min() >= MIN_USER_DISTANCE:
                user_xy[k] = xy
                break
        else:  # pragma: no cover
            raise RuntimeError("could not place users away from AAUs")

    distances = np.linalg.norm(user_xy[:, None, :] - aau_xy[None, :, :], axis=2)
    return Topology(aau_xy=aau_xy, user_xy=user_xy, distances=distances)


def generate_channels(cfg: NetworkConfig, topology: Topology,
                      rng_seed: int | None = None) -> ChannelSet:
    """Rayleigh small-scale fading scaled by sqrt(d^-alpha) large-scale loss.

    The configured uncertainty_radius is dimensionless; the stored per-link
    error-ball radius is delta * ||h_est|| so that a given setting means the
    same relative estimation quality at every distance.  (With an absolute
    radius, the default 1e-3 would exceed the whole channel for any user
    beyond ~150 m and every worst-case rate would be identically zero.)
    """
    seed = cfg.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A7]))
    K, N, M, F = cfg.shape
    d = topology.distances
    if np.any(d <= 0.0):
        raise ZeroDistance("user/AAU distance is zero; resample the topology")

    g = (rng.standard_normal((K, N, F, M)) + 1j * rng.standard_normal((K, N, F, M))) / np.sqrt(2.0)
    scale = np.sqrt(d ** (-cfg.pathloss_exponent))          # (K, F)
    h_est = scale[:, None, :, None] * g
    delta = cfg.uncertainty_radius * np.linalg.norm(h_est, axis=-1)
    e = effective_radius(h_est, delta)
    H_lift = h_est[..., :, None] * h_est[..., None, :].conj()
    return ChannelSet(h_est=h_est, delta=delta, e=e, distances=d.copy(), H_lift=H_lift)


def sample_error(delta: float, num_antennas: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the error ball ||eps|| <= delta (used by oracle tests)."""
    if delta == 0.0:
        return np.zeros(num_antennas, dtype=complex)
    g = rng.standard_normal(num_antennas) + 1j * rng.standard_normal(num_antennas)
    direction = g / np.linalg.norm(g)
    radius = delta * rng.uniform() ** (1.0 / (2 * num_antennas))
    return radius * direction


# --- flat key/value scenario files -------------------------------------------

_SCALAR_FIELDS = {
    "num_users": int, "num_subcarriers": int, "num_antennas": int, "num_aaus": int,
    "drain_efficiency": float, "circuit_power": float, "macro_radius": float,
    "small_radius": float, "pathloss_exponent": float, "rng_seed": int,
    "subcarrier_bandwidth": float,
}
_VECTOR_FIELDS = {"power_budget", "fronthaul_capacity", "fronthaul_weight",
                  "sleep_power", "reuse_limit", "noise_power", "uncertainty_radius"}


def _parse_values(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()])


def load_config(path) -> NetworkConfig:
    """Read a flat key=value scenario file.

    Keys match NetworkConfig field names.  Power-like keys accept a
    `_dbm` suffix (per value), and `noise_power_dbm_per_hz` is converted
    with the configured subcarrier bandwidth.  Raw and converted values
    are echoed to the run log.
    """
    raw: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()

    kwargs: dict = {}
    for key, caster in _SCALAR_FIELDS.items():
        if key in raw:
            kwargs[key] = caster(float(raw[key]))
    bandwidth = kwargs.get("subcarrier_bandwidth", 180e3)

    for key in ("power_budget", "circuit_power", "sleep_power"):
        dbm_key = key + "_dbm"
        if dbm_key in raw:
            vals = _parse_values(raw[dbm_key])
            watts = np.array([dbm_to_watt(v) for v in vals])
            log.info("config %s: %s dBm -> %s W", key, vals.tolist(), watts.tolist())
            kwargs[key] = float(watts[0]) if key == "circuit_power" else watts
    if "noise_power_dbm_per_hz" in raw:
        vals = _parse_values(raw["noise_power_dbm_per_hz"])
        watts = dbm_to_watt(float(vals[0])) * bandwidth
        log.info("config noise_power: %s dBm/Hz x %.0f Hz -> %.3e W", vals[0], bandwidth, watts)
        kwargs["noise_power"] = watts
    for key in _VECTOR_FIELDS:
        if key in raw:
            vals = _parse_values(raw[key])
            kwargs[key] = float(vals[0]) if vals.size == 1 else vals
            log.info("config %s = %s", key, raw[key])

    K = kwargs["num_users"]
    N = kwargs["num_subcarriers"]
    F = kwargs["num_aaus"]

    def broadcast(name, shape):
        val = kwargs.get(name)
        if val is None:
            return None
        arr = np.asarray(val, dtype=float)
        if arr.ndim <= 1 and arr.size == 1:
            return np.full(shape, float(arr))
        if arr.size == np.prod(shape):
            return arr.reshape(shape)
        if name in ("power_budget", "fronthaul_capacity", "fronthaul_weight", "sleep_power"):
            return _as_array(arr, shape, name)
        raise ValueError(f"{name}: cannot broadcast {arr.size} values to {shape}")

    for name, shape in (("power_budget", (F,)), ("fronthaul_capacity", (F,)),
                        ("fronthaul_weight", (F,)), ("sleep_power", (F,)),
                        ("reuse_limit", (N, F)), ("noise_power", (F, K, N)),
                        ("uncertainty_radius", (K, N, F))):
        if name in kwargs:
            kwargs[name] = broadcast(name, shape)

    defaults = desk_config(num_users=K, num_subcarriers=N,
                           num_antennas=kwargs["num_antennas"], num_aaus=F)
    for name in ("power_budget", "fronthaul_capacity", "fronthaul_weight", "sleep_power",
                 "reuse_limit", "noise_power", "uncertainty_radius", "drain_efficiency",
                 "circuit_power", "macro_radius", "small_radius", "pathloss_exponent",
                 "rng_seed", "subcarrier_bandwidth"):
        kwargs.setdefault(name, getattr(defaults, name))
    cfg = NetworkConfig(**kwargs)
    log.info("loaded scenario K=%d N=%d M=%d F=%d budgets=%s W",
             cfg.num_users, cfg.num_subcarriers, cfg.num_antennas, cfg.num_aaus,
             np.round(cfg.power_budget, 4).tolist())
    return cfg


def dump_config(cfg: NetworkConfig, path) -> None:
    """Write a scenario back out as a flat key=value file."""
    lines = []
    for key, _ in _SCALAR_FIELDS.items():
        lines.append(f"{key} = {getattr(cfg, key)}")
    for key in ("power_budget", "fronthaul_capacity", "fronthaul_weight", "sleep_power"):
        lines.append(f"{key} = " + ", ".join(f"{v:.10g}" for v in getattr(cfg, key)))
    lines.append("reuse_limit = " + ", ".join(f"{v:g}" for v in cfg.reuse_limit.ravel()))
    lines.append("noise_power = " + ", ".join(f"{v:.10g}" for v in cfg.noise_power.ravel()))
    lines.append("uncertainty_radius = "
                 + ", ".join(f"{v:.10g}" for v in cfg.uncertainty_radius.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
