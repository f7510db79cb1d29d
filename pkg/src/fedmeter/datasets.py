"""Community datasets: synthetic generator, CSV loader, per-client scaling.

Each sample carries five features, in this order::

    net_load (kW), irradiance (W/m2), temperature (C), humidity (%), wind_speed (m/s)

and a target, the community PV output in kW.  Train/test splits are taken
in time order (first 70% train, last 30% test).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

FEATURES = ("net_load", "irradiance", "temperature", "humidity", "wind_speed")
CSV_COLUMNS = ("timestamp",) + FEATURES + ("pv",)

IRRADIANCE_STC = 1000.0  # W/m2 at which panels deliver rated capacity
STEPS_PER_DAY = 48  # half-hourly readings
START_TIME = datetime(2023, 1, 1)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    features: tuple[float, ...]
    target: float


@dataclass(frozen=True)
class CommunityProfile:
    community_id: int
    pv_capacity: float  # kW
    temp_coefficient: float  # 1/C derating above 25 C
    irradiance_scale: float  # clear-sky peak relative to 1000 W/m2
    load_scale: float  # kW
    noise_std: float  # kW
    climate_temp: float = 22.0  # mean daily temperature, C
    cloudiness: float = 0.3  # share of days leaving the clear regime
    cooling: float = 0.1  # extra load per C above 24 C, relative to load_scale

    def __post_init__(self):
        if self.pv_capacity <= 0:
            raise ValueError("pv_capacity must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0 < self.irradiance_scale <= 2:
            raise ValueError("irradiance_scale must lie in (0, 2]")
        if not 0 <= self.cloudiness <= 1:
            raise ValueError("cloudiness must lie in [0, 1]")


@dataclass
class ClientDataset:
    community_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    # (min, max) per feature; None until normalize() has been applied
    normalization: list[tuple[float, float]] | None = None
    timestamps: list[str] = field(default_factory=list)
    profile: CommunityProfile | None = None

    def __post_init__(self):
        if len(self.train_y) == 0 or len(self.test_y) == 0:
            raise DatasetError(f"community {self.community_id}: train and test must be nonempty")

    @property
    def num_train(self) -> int:
        return int(self.train_y.shape[0])

    def train_samples(self) -> list[Sample]:
        return [Sample(tuple(map(float, x)), float(t)) for x, t in zip(self.train_x, self.train_y)]

    def test_samples(self) -> list[Sample]:
        return [Sample(tuple(map(float, x)), float(t)) for x, t in zip(self.test_x, self.test_y)]


def split_index(n: int) -> int:
    return n * 7 // 10


def _from_rows(community_id, x, y, timestamps=None, profile=None) -> ClientDataset:
    k = split_index(len(y))
    if k == 0 or k == len(y):
        raise DatasetError(f"community {community_id}: {len(y)} rows is too few for a 70/30 split")
    return ClientDataset(
        community_id=community_id,
        train_x=np.ascontiguousarray(x[:k]),
        train_y=np.ascontiguousarray(y[:k]),
        test_x=np.ascontiguousarray(x[k:]),
        test_y=np.ascontiguousarray(y[k:]),
        timestamps=list(timestamps or []),
        profile=profile,
    )


# ---------------------------------------------------------------- synthetic


def draw_profile(community_id: int, rng: np.random.Generator, heterogeneity: float = 0.7) -> CommunityProfile:
    """Random community configuration; ``heterogeneity`` widens every spread."""
    h = heterogeneity
    capacity = 5.0 * math.exp(h * rng.uniform(-0.5, 0.5))
    return CommunityProfile(
        community_id=community_id,
        pv_capacity=capacity,
        temp_coefficient=float(rng.uniform(0.003, 0.006)),
        irradiance_scale=float(np.clip(1.0 + h * rng.uniform(-0.15, 0.15), 0.05, 2.0)),
        load_scale=3.0 * math.exp(h * rng.uniform(-0.5, 0.5)),
        noise_std=0.05 * capacity,
        climate_temp=float(rng.uniform(15.0, 32.0)),
        cloudiness=float(rng.uniform(0.1, 0.6)),
        cooling=0.1,
    )


def pv_output(profile: CommunityProfile, irradiance, temperature, noise) -> np.ndarray:
    """Capacity x clamped irradiance ratio x linear temperature derating, plus noise."""
    ratio = np.clip(np.asarray(irradiance) / IRRADIANCE_STC, 0.0, 1.0)
    derate = 1.0 - profile.temp_coefficient * np.maximum(0.0, np.asarray(temperature) - 25.0)
    return profile.pv_capacity * ratio * derate + noise


# day regimes: clear, broken cloud, overcast
_REGIME_CLOUD = np.array([0.05, 0.45, 0.85])
_REGIME_FLICKER = np.array([0.05, 0.35, 0.10])
REGIME_PERSISTENCE = 0.92
WARMING = 5.0  # C rise of the daily mean from first to last day


def _ar1(rng, n, phi):
    out = np.empty(n)
    c = 0.0
    for i, e in enumerate(rng.normal(0.0, 1.0, n)):
        c = phi * c + e
        out[i] = c
    return out


def synthesize(profile: CommunityProfile, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Half-hourly weather, load and PV series for one community.

    Cloud cover follows persistent day regimes plus fast half-hourly flicker.
    The ``irradiance`` feature is a gridded estimate that only sees the day
    regime (with multiplicative error); PV responds to the true site
    irradiance, so part of its variation shows up only through net load.
    """
    t = np.arange(n)
    hour = (t % STEPS_PER_DAY) / 2.0
    day = t // STEPS_PER_DAY
    n_days = int(day[-1]) + 1

    sun = np.clip(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0, None) ** 1.3
    clear = IRRADIANCE_STC * profile.irradiance_scale * sun

    regime = np.empty(n_days, dtype=int)
    regime[0] = rng.integers(3)
    leave = [1.0 - profile.cloudiness, 0.6 * profile.cloudiness, 0.4 * profile.cloudiness]
    for d in range(1, n_days):
        stay = rng.random() < REGIME_PERSISTENCE
        regime[d] = regime[d - 1] if stay else rng.choice(3, p=leave)
    day_cloud = np.clip(_REGIME_CLOUD[regime] + rng.normal(0.0, 0.05, n_days), 0.0, 1.0)[day]
    flicker = _REGIME_FLICKER[regime][day] * _ar1(rng, n, 0.5)
    site_irradiance = clear * (1.0 - 0.8 * np.clip(day_cloud + flicker, 0.0, 1.0))
    irradiance = clear * (1.0 - 0.8 * day_cloud) * np.exp(rng.normal(0.0, 0.1, n))

    day_temp = profile.climate_temp + WARMING * np.linspace(-0.5, 0.5, n_days) + rng.normal(0.0, 3.0, n_days)
    temperature = (
        day_temp[day]
        + 6.0 * np.sin(np.pi * (hour - 9.0) / 12.0)
        + 0.006 * site_irradiance
        + rng.normal(0.0, 0.5, n)
    )
    humidity = np.clip(
        60.0 - 1.5 * (temperature - profile.climate_temp) + 25.0 * day_cloud + rng.normal(0.0, 4.0, n),
        5.0, 100.0,
    )
    wind_speed = rng.gamma(2.0, 1.5, n)

    noise = rng.normal(0.0, profile.noise_std, n) if profile.noise_std > 0 else np.zeros(n)
    pv = pv_output(profile, site_irradiance, temperature, noise)

    # morning and evening peaks on a base load, plus cooling on hot afternoons
    daily = 0.5 + 0.4 * np.exp(-((hour - 8.0) ** 2) / 4.0) + 0.8 * np.exp(-((hour - 19.0) ** 2) / 6.0)
    cooling = profile.cooling * np.maximum(0.0, temperature - 24.0)
    jitter = np.exp(rng.normal(0.0, 0.3, n) + rng.normal(0.0, 0.2, n_days)[day])
    load = profile.load_scale * (daily + cooling) * jitter
    net_load = load - pv
    return {
        "net_load": net_load,
        "irradiance": irradiance,
        "temperature": temperature,
        "humidity": humidity,
        "wind_speed": wind_speed,
        "pv": pv,
        "load": load,
        "site_irradiance": site_irradiance,
    }


def timestamps_for(n: int) -> list[str]:
    step = timedelta(minutes=30)
    return [(START_TIME + i * step).isoformat() for i in range(n)]


def generate_synthetic(
    num_communities: int,
    samples_per_community: int,
    seed: int,
    profiles: list[CommunityProfile] | None = None,
    heterogeneity: float = 0.7,
) -> list[ClientDataset]:
    """Heterogeneous community datasets, deterministic in ``seed``.

    Community ``i`` draws everything from a stream keyed on ``(seed, i)`` so
    the result does not depend on generation order.  Pass ``profiles`` to
    pin the community configurations instead of drawing them.
    """
    if num_communities < 1:
        raise DatasetError(f"num_communities must be >= 1, got {num_communities}")
    if samples_per_community < 20:
        raise DatasetError(f"samples_per_community must be >= 20, got {samples_per_community}")
    if profiles is not None and len(profiles) != num_communities:
        raise DatasetError("one profile per community required")

    out = []
    for cid in range(num_communities):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cid,)))
        profile = draw_profile(cid, rng, heterogeneity) if profiles is None else profiles[cid]
        series = synthesize(profile, samples_per_community, rng)
        x = np.column_stack([series[f] for f in FEATURES])
        out.append(_from_rows(cid, x, series["pv"], timestamps_for(samples_per_community), profile))
    return out


# ---------------------------------------------------------------------- csv


def load_csv(path, community_id: int = 0) -> ClientDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        rows, stamps = [], []
        for i, rec in enumerate(reader, start=1):
            vals = []
            for col in FEATURES + ("pv",):
                raw = rec[col]
                try:
                    v = float(raw)
                except (TypeError, ValueError):
                    raise DatasetError(f"{path}: row {i}: cannot parse {col}={raw!r} as a number") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {i}: {col} is not finite")
                vals.append(v)
            rows.append(vals)
            stamps.append(rec["timestamp"])
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return _from_rows(community_id, arr[:, :-1], arr[:, -1], stamps)


def load_csv_dir(directory) -> list[ClientDataset]:
    """One community per ``*.csv`` file, numbered in sorted filename order."""
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise DatasetError(f"{directory}: no .csv files found")
    return [load_csv(f, cid) for cid, f in enumerate(files)]


def write_csv(ds: ClientDataset, path) -> None:
    """Inverse of :func:`load_csv` for unnormalized datasets."""
    x = np.vstack([ds.train_x, ds.test_x])
    y = np.concatenate([ds.train_y, ds.test_y])
    stamps = ds.timestamps or timestamps_for(len(y))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for ts, row, target in zip(stamps, x, y):
            w.writerow([ts, *(repr(float(v)) for v in row), repr(float(target))])


# ---------------------------------------------------------------- scaling


def normalize(ds: ClientDataset) -> ClientDataset:
    """Min-max scale features with ranges fitted on the training split.

    Constant training columns map to 0.  Test values outside the training
    range extrapolate linearly.  Targets stay in kW.
    """
    lo = ds.train_x.min(axis=0)
    hi = ds.train_x.max(axis=0)
    span = hi - lo
    const = span <= 0
    safe = np.where(const, 1.0, span)

    def scale(x):
        z = (x - lo) / safe
        z[:, const] = 0.0
        return np.ascontiguousarray(z)

    return replace(
        ds,
        train_x=scale(ds.train_x),
        test_x=scale(ds.test_x),
        normalization=[(float(a), float(b)) for a, b in zip(lo, hi)],
    )
