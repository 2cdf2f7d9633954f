"""Seeded synthetic range-measurement world.

Satellites sit static on an orbital sphere, a vehicle drives a waypoint
path, and pseudoranges are corrupted by Gaussian thermal noise plus
block-correlated NLOS biases drawn from a truncated, occasionally
sign-flipped Gamma distribution: heavy-tailed, skewed, positive-dominated
errors with rare large negative ones.

All randomness is counter-based: each draw uses a Philox stream keyed by
(seed, purpose, satellite, epoch), so datasets are bit-identical for a
seed regardless of generation order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geo
from .measurement import LOS, NLOS, PseudorangeObservation, SatelliteState

FILE_VERSION = "rangeloc-dataset-v1"

TRUTH_COLUMNS = ["epoch", "t", "x", "y", "z", "vx", "vy", "vz", "clock_bias", "clock_drift"]
OBS_COLUMNS = ["epoch", "sat_id", "sat_x", "sat_y", "sat_z", "sat_clock_bias",
               "rho", "cn0", "label", "true_error"]


class DatasetFormatError(ValueError):
    """Malformed or incompatible dataset file; message carries the line."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def stream(seed: int, *tags) -> np.random.Generator:
    """Deterministic generator keyed by (seed, tags)."""
    h = hashlib.blake2b(repr(tags).encode(), digest_size=8).digest()
    return np.random.default_rng(np.random.Philox(key=[seed & (2**64 - 1), int.from_bytes(h, "big")]))


@dataclass
class NlosConfig:
    probability: float = 0.0  # per (satellite, epoch block)
    bias_shape: float = 2.0  # Gamma shape
    bias_scale_m: float = 15.0  # Gamma scale
    sign_flip_prob: float = 0.1
    block_length_epochs: int = 20
    max_bias_m: float = 600.0
    bias_drift_mps: float = 0.0  # within-block bias drift while the vehicle moves
    # reflection-path geometry: fraction of the range change since block
    # start that feeds back into the bias (coefficient drawn per block)
    range_coupling: float = 0.0

    def validate(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ValueError(f"nlos.probability out of [0,1]: {self.probability}")
        if not (0.0 <= self.sign_flip_prob <= 1.0):
            raise ValueError(f"nlos.sign_flip_prob out of [0,1]: {self.sign_flip_prob}")
        if min(self.bias_shape, self.bias_scale_m, self.max_bias_m) <= 0:
            raise ValueError("nlos bias parameters must be positive")
        if self.block_length_epochs < 1:
            raise ValueError("nlos.block_length_epochs must be >= 1")
        if self.range_coupling < 0:
            raise ValueError("nlos.range_coupling must be non-negative")


@dataclass
class ClockConfig:
    bias_init_m: float = 1000.0
    drift_init_mps: float = 0.5
    drift_noise: float = 0.01  # m/s per sqrt(s)


@dataclass
class ScenarioConfig:
    seed: int = 0
    duration_s: float = 100.0
    epoch_rate_hz: float = 1.0
    n_satellites: int = 8
    orbit_radius_m: float = 26_560_000.0
    ref_lat_deg: float = 50.0
    ref_lon_deg: float = 7.0
    waypoints_enu: list = field(default_factory=lambda: [[0.0, 0.0, 0.0], [500.0, 0.0, 0.0]])
    speed_mps: float = 5.0
    los_noise_sigma_m: float = 1.0
    nlos: NlosConfig = field(default_factory=NlosConfig)
    elevation_cutoff_deg: float = 10.0
    blockages: list = field(default_factory=list)  # [{"sat_id": optional, "start_s", "end_s"}]
    clock: ClockConfig = field(default_factory=ClockConfig)
    nlos_cn0_drop_mean: float = 8.0
    nlos_cn0_drop_std: float = 3.0

    def validate(self):
        if self.duration_s <= 0 or self.epoch_rate_hz <= 0:
            raise ValueError("duration and epoch rate must be positive")
        if self.n_satellites < 1:
            raise ValueError("need at least one satellite")
        if self.los_noise_sigma_m <= 0:
            raise ValueError("los_noise_sigma_m must be positive")
        if len(self.waypoints_enu) < 1:
            raise ValueError("need at least one waypoint")
        self.nlos.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config fields: {sorted(unknown)}")
        if "nlos" in d:
            d["nlos"] = NlosConfig(**d["nlos"])
        if "clock" in d:
            d["clock"] = ClockConfig(**d["clock"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TruthState:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    clock_bias: float
    clock_drift: float


@dataclass
class EpochData:
    index: int
    t: float
    truth: TruthState | None
    records: list  # [(PseudorangeObservation, SatelliteState)]


@dataclass
class EpochDataset:
    meta: dict
    epochs: list[EpochData]

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)

    def reference_position(self) -> np.ndarray:
        m = self.meta.get("ref_ecef")
        if m is not None:
            return np.asarray(m, dtype=float)
        return geo.geodetic_to_ecef(50.0, 7.0)


def _path_position(waypoints: np.ndarray, speed: float, t: float):
    """Position and velocity (ENU) along a piecewise-linear waypoint path."""
    if len(waypoints) == 1:
        return waypoints[0], np.zeros(3)
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = min(speed * t, cum[-1])
    i = int(np.searchsorted(cum[1:], s, side="right"))
    i = min(i, len(seg) - 1)
    if seg_len[i] == 0:
        return waypoints[i], np.zeros(3)
    frac = (s - cum[i]) / seg_len[i]
    pos = waypoints[i] + frac * seg[i]
    vel = seg[i] / seg_len[i] * speed if s < cum[-1] else np.zeros(3)
    return pos, vel


def _place_satellites(cfg: ScenarioConfig, ref: np.ndarray) -> list[SatelliteState]:
    rot = geo.enu_rotation(ref)
    sats = []
    for i in range(cfg.n_satellites):
        rng = stream(cfg.seed, "sat", i)
        el = np.radians(rng.uniform(15.0, 80.0))
        az = np.radians(rng.uniform(0.0, 360.0))
        enu_dir = np.array([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])
        d = rot.T @ enu_dir
        # satellite at ref + t*d with |ref + t*d| = orbit radius
        b = 2.0 * ref @ d
        c = ref @ ref - cfg.orbit_radius_m**2
        t = (-b + np.sqrt(b * b - 4 * c)) / 2.0
        sats.append(SatelliteState(id=f"G{i:02d}", position=ref + t * d,
                                   clock_bias=float(rng.uniform(-100.0, 100.0))))
    return sats


def _blocked(cfg: ScenarioConfig, sat_id: str, t: float) -> bool:
    for b in cfg.blockages:
        if b.get("sat_id") not in (None, sat_id):
            continue
        if b["start_s"] <= t < b["end_s"]:
            return True
    return False


def generate(cfg: ScenarioConfig) -> EpochDataset:
    """Generate a labeled observation stream for one scenario."""
    cfg.validate()
    ref = geo.geodetic_to_ecef(cfg.ref_lat_deg, cfg.ref_lon_deg)
    rot = geo.enu_rotation(ref)
    sats = _place_satellites(cfg, ref)
    dt = 1.0 / cfg.epoch_rate_hz
    n_epochs = int(round(cfg.duration_s * cfg.epoch_rate_hz))
    waypoints = np.asarray(cfg.waypoints_enu, dtype=float)

    # receiver clock: drift random walk integrated into bias
    clock_bias = np.empty(n_epochs)
    clock_drift = np.empty(n_epochs)
    cb, cd = cfg.clock.bias_init_m, cfg.clock.drift_init_mps
    for e in range(n_epochs):
        clock_bias[e], clock_drift[e] = cb, cd
        cd += float(stream(cfg.seed, "clock", e).normal(0.0, cfg.clock.drift_noise * np.sqrt(dt)))
        cb += cd * dt

    epochs: list[EpochData] = []
    any_visible = False
    block_len = cfg.nlos.block_length_epochs
    for e in range(n_epochs):
        t = e * dt
        pos_enu, vel_enu = _path_position(waypoints, cfg.speed_mps, t)
        pos = ref + rot.T @ pos_enu
        vel = rot.T @ vel_enu
        truth = TruthState(t, pos, vel, clock_bias[e], clock_drift[e])
        records = []
        for si, sat in enumerate(sats):
            el, _ = geo.elevation_azimuth(sat.position, pos)
            if el < cfg.elevation_cutoff_deg or _blocked(cfg, sat.id, t):
                continue
            any_visible = True
            block = e // block_len
            brng = stream(cfg.seed, "nlosblock", si, block)
            is_nlos = brng.random() < cfg.nlos.probability
            rng_m = float(np.linalg.norm(pos - sat.position))
            bias = 0.0
            if is_nlos:
                bias = float(brng.gamma(cfg.nlos.bias_shape, cfg.nlos.bias_scale_m))
                if brng.random() < cfg.nlos.sign_flip_prob:
                    bias = -bias
                bias += cfg.nlos.bias_drift_mps * (e - block * block_len) * dt
                if cfg.nlos.range_coupling > 0:
                    kappa = float(brng.uniform(-cfg.nlos.range_coupling,
                                               cfg.nlos.range_coupling))
                    pos0_enu, _ = _path_position(waypoints, cfg.speed_mps,
                                                 block * block_len * dt)
                    r0 = float(np.linalg.norm(ref + rot.T @ pos0_enu - sat.position))
                    bias += kappa * (rng_m - r0)
                bias = float(np.clip(bias, -cfg.nlos.max_bias_m, cfg.nlos.max_bias_m))
            noise = float(stream(cfg.seed, "noise", si, e).normal(0.0, cfg.los_noise_sigma_m))
            true_error = bias + noise
            rho = rng_m + clock_bias[e] - sat.clock_bias + sat.corrections + true_error
            crng = stream(cfg.seed, "cn0", si, e)
            cn0 = crng.normal(45.0, 4.0)
            if is_nlos:
                cn0 -= crng.normal(cfg.nlos_cn0_drop_mean, cfg.nlos_cn0_drop_std)
            obs = PseudorangeObservation(
                sat_id=sat.id, epoch=e, rho=rho, cn0=float(np.clip(cn0, 0.0, 60.0)),
                label=NLOS if is_nlos else LOS, true_error=true_error)
            records.append((obs, sat))
        epochs.append(EpochData(e, t, truth, records))

    if not any_visible:
        import warnings
        warnings.warn("no satellite visible during the whole scenario")

    meta = {"version": FILE_VERSION, "scenario": cfg.to_dict(),
            "ref_ecef": [float(v) for v in ref], "epoch_dt_s": dt}
    return EpochDataset(meta, epochs)


def dataset_stats(ds: EpochDataset) -> dict:
    """Satellite-count, worst-error, and label-ratio summary of a dataset."""
    if not ds.epochs:
        raise ValueError("empty dataset")
    counts = [len(ep.records) for ep in ds.epochs]
    errors = [abs(o.true_error) for ep in ds.epochs for o, _ in ep.records if o.true_error is not None]
    labels = [o.label for ep in ds.epochs for o, _ in ep.records]
    n = len(labels)
    n_nlos = sum(1 for l in labels if l == NLOS)
    return {
        "n_avg_sat": float(np.mean(counts)),
        "n_max_sat": int(max(counts)),
        "n_min_sat": int(min(counts)),
        "sigma_max_rho_m": float(max(errors)) if errors else 0.0,
        "r_los_pct": 100.0 * (n - n_nlos) / n if n else 0.0,
        "r_nlos_pct": 100.0 * n_nlos / n if n else 0.0,
    }


def write_dataset(ds: EpochDataset, path) -> None:
    lines = [f"#{FILE_VERSION}", "#META " + json.dumps(ds.meta, sort_keys=True)]
    lines.append("#TRUTH")
    lines.append(",".join(TRUTH_COLUMNS))
    for ep in ds.epochs:
        tr = ep.truth
        lines.append(",".join([str(ep.index), _fmt(ep.t)]
                              + [_fmt(v) for v in tr.position] + [_fmt(v) for v in tr.velocity]
                              + [_fmt(tr.clock_bias), _fmt(tr.clock_drift)]))
    lines.append("#OBSERVATIONS")
    lines.append(",".join(OBS_COLUMNS))
    for ep in ds.epochs:
        for obs, sat in ep.records:
            lines.append(",".join([
                str(ep.index), obs.sat_id,
                _fmt(sat.position[0]), _fmt(sat.position[1]), _fmt(sat.position[2]),
                _fmt(sat.clock_bias), _fmt(obs.rho), _fmt(obs.cn0), obs.label,
                _fmt(obs.true_error) if obs.true_error is not None else "",
            ]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_dataset(path) -> EpochDataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != f"#{FILE_VERSION}":
        raise DatasetFormatError(f"line 1: expected version header '#{FILE_VERSION}'")
    if len(lines) < 2 or not lines[1].startswith("#META "):
        raise DatasetFormatError("line 2: missing #META header")
    meta = json.loads(lines[1][len("#META "):])

    truths: dict[int, TruthState] = {}
    records: dict[int, list] = {}
    section = None
    columns = None
    for lineno, line in enumerate(lines[2:], start=3):
        if line == "#TRUTH":
            section, columns = "truth", None
            continue
        if line == "#OBSERVATIONS":
            section, columns = "obs", None
            continue
        if section is None:
            raise DatasetFormatError(f"line {lineno}: data before a section marker")
        if columns is None:
            columns = line.split(",")
            expected = TRUTH_COLUMNS if section == "truth" else OBS_COLUMNS
            if columns != expected:
                raise DatasetFormatError(
                    f"line {lineno}: schema mismatch, expected columns {expected}, got {columns}")
            continue
        parts = line.split(",")
        if len(parts) != len(columns):
            raise DatasetFormatError(f"line {lineno}: expected {len(columns)} fields, got {len(parts)}")
        try:
            if section == "truth":
                e = int(parts[0])
                truths[e] = TruthState(
                    t=float(parts[1]),
                    position=np.array([float(parts[2]), float(parts[3]), float(parts[4])]),
                    velocity=np.array([float(parts[5]), float(parts[6]), float(parts[7])]),
                    clock_bias=float(parts[8]), clock_drift=float(parts[9]))
            else:
                e = int(parts[0])
                sat = SatelliteState(id=parts[1],
                                     position=np.array([float(parts[2]), float(parts[3]), float(parts[4])]),
                                     clock_bias=float(parts[5]))
                obs = PseudorangeObservation(
                    sat_id=parts[1], epoch=e, rho=float(parts[6]), cn0=float(parts[7]),
                    label=parts[8], true_error=float(parts[9]) if parts[9] else None)
                records.setdefault(e, []).append((obs, sat))
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc

    if not truths:
        raise DatasetFormatError("no truth rows found")
    dt = meta.get("epoch_dt_s", 1.0)
    epochs = [EpochData(e, truths[e].t, truths[e], records.get(e, []))
              for e in sorted(truths)]
    for e, recs in records.items():
        if e not in truths:
            raise DatasetFormatError(f"observation references unknown epoch {e}")
    return EpochDataset(meta, epochs)


def split_sequences(ds: EpochDataset, table: list[tuple[str, float, float]]) -> dict[str, list[int]]:
    """Named epoch slices by [start_s, end_s) time bounds."""
    duration = ds.epochs[-1].t if ds.epochs else 0.0
    out: dict[str, list[int]] = {}
    for name, start_s, end_s in table:
        if name in out:
            raise ValueError(f"duplicate sequence name {name!r}")
        if start_s >= end_s:
            raise ValueError(f"sequence {name!r}: empty range [{start_s}, {end_s})")
        if start_s < 0 or start_s > duration:
            raise ValueError(f"sequence {name!r}: start {start_s}s outside dataset")
        idx = [ep.index for ep in ds.epochs if start_s <= ep.t < end_s]
        if not idx:
            raise ValueError(f"sequence {name!r}: no epochs in range")
        out[name] = idx
    return out
