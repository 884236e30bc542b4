"""Scenario data: synthetic generation and CSV ingestion.

A scenario bundles per-household base-load and PV series (kW per hourly
slot), a time-of-use price schedule, and generator metadata. Real data
drops in through three CSVs:

    loads.csv   slot,household_id,kW     one row per (slot, household)
    pv.csv      slot,household_id,kW     same layout
    prices.csv  slot,p_os,p_in,p_ob      one row per slot

with a manifest.json naming the files, the dimensions, and a content
hash. ``validate_scenario`` is the single well-formedness authority for
both generated and loaded scenarios.

The synthetic generator produces a deliberately non-stationary world:
PV-owning and PV-less households (so the internal market has both
sides), multi-day sunny/cloudy weather spells, and a slow seasonal PV
ramp. Yesterday therefore resembles today often but not always, which
is exactly the regime where a trained behavior predictor must beat the
previous-day lag.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market import PriceSchedule

__all__ = [
    "Scenario",
    "ScenarioError",
    "validate_scenario",
    "generate_synthetic",
    "save_scenario",
    "load_scenario",
]

_FLOAT_FMT = "%.10g"  # canonical float formatting for byte-stable CSVs


class ScenarioError(ValueError):
    """A scenario failed validation; the message cites the location."""


@dataclass
class Scenario:
    """Immutable-by-convention bundle of exogenous simulation inputs."""

    base_load: np.ndarray  # (n_households, n_slots) kW
    pv: np.ndarray  # (n_households, n_slots) kW
    prices: PriceSchedule
    n_households: int
    days: int
    slots_per_day: int = 24
    meta: dict = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return self.days * self.slots_per_day

    def config_hash(self) -> str:
        """Stable hash of dimensions, meta, and series contents."""
        h = hashlib.sha256()
        h.update(json.dumps({"n": self.n_households, "days": self.days,
                             "spd": self.slots_per_day,
                             "meta": self.meta}, sort_keys=True).encode())
        for arr in (self.base_load, self.pv, self.prices.p_os,
                    self.prices.p_in, self.prices.p_ob):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def validate_scenario(sc: Scenario) -> None:
    """Raise ScenarioError on any shape, sign, or price-order violation."""
    expected = (sc.n_households, sc.n_slots)
    if sc.base_load.shape != expected:
        raise ScenarioError(f"base_load shape {sc.base_load.shape} != {expected}")
    if sc.pv.shape != expected:
        raise ScenarioError(f"pv shape {sc.pv.shape} != {expected}")
    if len(sc.prices) != sc.n_slots:
        raise ScenarioError(f"price schedule has {len(sc.prices)} slots, "
                            f"expected {sc.n_slots}")
    for name, arr in (("base_load", sc.base_load), ("pv", sc.pv)):
        if not np.isfinite(arr).all():
            raise ScenarioError(f"{name} contains non-finite values")
        if (arr < 0).any():
            hh, slot = np.argwhere(arr < 0)[0]
            raise ScenarioError(f"negative {name} at household {hh}, "
                                f"slot {slot}")
    p = sc.prices
    bad = np.flatnonzero(~((p.p_os <= p.p_in) & (p.p_in <= p.p_ob)))
    if bad.size:
        t = int(bad[0])
        raise ScenarioError(
            f"price ordering violated at slot {t}: "
            f"({p.p_os[t]}, {p.p_in[t]}, {p.p_ob[t]})")


def _diurnal_load_profile(slots_per_day: int) -> np.ndarray:
    """Double-hump residential shape (morning and evening peaks), mean 1."""
    h = np.arange(slots_per_day)
    base = (0.55
            + 0.8 * np.exp(-0.5 * ((h - 8.0) / 1.6) ** 2)
            + 1.25 * np.exp(-0.5 * ((h - 19.5) / 2.1) ** 2))
    return base / base.mean()


def _pv_shape(slots_per_day: int) -> np.ndarray:
    """Daylight bell between 06:00 and 18:00, peak 1 at noon."""
    h = np.arange(slots_per_day)
    x = (h - 6.0) / 12.0
    shape = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)) ** 1.5,
                     0.0)
    return shape


def generate_synthetic(n_households: int, days: int, seed: int = 0, *,
                       mean_load: float = 1.2, pv_fraction: float = 0.6,
                       pv_peak_range=(2.0, 4.5), cloudy_factor: float = 0.35,
                       weather_persistence: float = 0.7,
                       seasonal_pv_drift: float = 0.4,
                       offpeak_end: int = 8, p_ob_offpeak: float = 0.08,
                       p_ob_peak: float = 0.28,
                       feed_in_ratio: float = 0.3,
                       slots_per_day: int = 24) -> Scenario:
    """Deterministic synthetic scenario.

    Base load: per-household scaled double-hump diurnal profile with
    multiplicative noise. PV: a daylight bell for the pv_fraction of
    households that own panels, modulated by persistent sunny/cloudy
    weather spells (stay probability weather_persistence per day), a
    seasonal ramp of +seasonal_pv_drift over the horizon, and mild
    intraday noise. Prices: two-tier TOU — slots [0, offpeak_end) cheap,
    the rest expensive — with the feed-in (export) price a fixed ratio
    of the import price and the internal price at the midpoint.
    """
    if n_households < 1:
        raise ValueError("need at least one household")
    if days < 2:
        raise ValueError("need at least two days (bounds use the prior day)")
    rng = np.random.default_rng(seed)
    n_slots = days * slots_per_day

    # Base load.
    profile = _diurnal_load_profile(slots_per_day)
    scale = mean_load * rng.lognormal(mean=0.0, sigma=0.25, size=n_households)
    tiled = np.tile(profile, days)
    noise = rng.uniform(0.8, 1.2, size=(n_households, n_slots))
    base_load = scale[:, None] * tiled[None, :] * noise
    base_load = np.maximum(base_load, 0.05)

    # PV ownership and capacity.
    owners = rng.random(n_households) < pv_fraction
    peak = rng.uniform(*pv_peak_range, size=n_households) * owners

    # Weather: two-state Markov chain over days (sunny=1, cloudy=0).
    sunny = np.empty(days, dtype=bool)
    sunny[0] = True
    for d in range(1, days):
        stay = rng.random() < weather_persistence
        sunny[d] = sunny[d - 1] if stay else ~sunny[d - 1]
    weather = np.where(sunny, 1.0, cloudy_factor)
    season = 1.0 + seasonal_pv_drift * np.arange(days) / max(days - 1, 1)

    bell = _pv_shape(slots_per_day)
    day_factor = (weather * season)[:, None] * bell[None, :]  # (days, spd)
    pv_noise = rng.uniform(0.9, 1.1, size=(n_households, n_slots))
    pv = peak[:, None] * day_factor.reshape(-1)[None, :] * pv_noise
    pv = np.maximum(pv, 0.0)

    # Two-tier TOU prices.
    slot_of_day = np.arange(n_slots) % slots_per_day
    p_ob = np.where(slot_of_day < offpeak_end, p_ob_offpeak, p_ob_peak)
    p_os = feed_in_ratio * p_ob
    prices = PriceSchedule(p_os=p_os, p_ob=p_ob)

    meta = {
        "generator": "synthetic-v1", "seed": seed, "mean_load": mean_load,
        "pv_fraction": pv_fraction, "pv_peak_range": list(pv_peak_range),
        "cloudy_factor": cloudy_factor,
        "weather_persistence": weather_persistence,
        "seasonal_pv_drift": seasonal_pv_drift,
        "offpeak_end": offpeak_end, "p_ob_offpeak": p_ob_offpeak,
        "p_ob_peak": p_ob_peak, "feed_in_ratio": feed_in_ratio,
    }
    sc = Scenario(base_load=base_load, pv=pv, prices=prices,
                  n_households=n_households, days=days,
                  slots_per_day=slots_per_day, meta=meta)
    validate_scenario(sc)
    return sc


# -- CSV persistence ----------------------------------------------------------


def _write_series_csv(path: Path, arr: np.ndarray) -> None:
    """(n_households, n_slots) kW matrix as slot,household_id,kW rows."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "household_id", "kW"])
        n_households, n_slots = arr.shape
        for t in range(n_slots):
            for i in range(n_households):
                w.writerow([t, i, _FLOAT_FMT % arr[i, t]])


def _read_series_csv(path: Path, n_households: int,
                     n_slots: int, what: str) -> np.ndarray:
    arr = np.full((n_households, n_slots), np.nan)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"slot", "household_id", "kW"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ScenarioError(f"{path.name}: missing columns "
                                f"{sorted(need - set(reader.fieldnames or []))}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row["slot"])
                i = int(row["household_id"])
                kw = float(row["kW"])
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"{path.name} row {lineno}: {exc}") from exc
            if not (0 <= t < n_slots and 0 <= i < n_households):
                raise ScenarioError(f"{path.name} row {lineno}: slot {t} / "
                                    f"household {i} out of range")
            if kw < 0:
                raise ScenarioError(f"{path.name} row {lineno}: negative "
                                    f"{what} {kw}")
            arr[i, t] = kw
    missing = np.argwhere(np.isnan(arr))
    if missing.size:
        i, t = missing[0]
        raise ScenarioError(f"{path.name}: no row for household {i}, slot {t}")
    return arr


def save_scenario(sc: Scenario, out_dir) -> Path:
    """Write loads.csv, pv.csv, prices.csv, and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_series_csv(out / "loads.csv", sc.base_load)
    _write_series_csv(out / "pv.csv", sc.pv)
    with (out / "prices.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "p_os", "p_in", "p_ob"])
        for t in range(sc.n_slots):
            w.writerow([t, _FLOAT_FMT % sc.prices.p_os[t],
                        _FLOAT_FMT % sc.prices.p_in[t],
                        _FLOAT_FMT % sc.prices.p_ob[t]])
    manifest = {
        "n_households": sc.n_households,
        "days": sc.days,
        "slots_per_day": sc.slots_per_day,
        "files": {"loads": "loads.csv", "pv": "pv.csv",
                  "prices": "prices.csv"},
        "meta": sc.meta,
        "config_hash": sc.config_hash(),
    }
    with (out / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_scenario(path) -> Scenario:
    """Load and validate a scenario directory written by save_scenario
    (or assembled by hand to the same schema)."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ScenarioError(f"{root}: manifest.json not found")
    with manifest_path.open() as fh:
        manifest = json.load(fh)
    try:
        n = int(manifest["n_households"])
        days = int(manifest["days"])
        spd = int(manifest.get("slots_per_day", 24))
        files = manifest["files"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"manifest.json malformed: {exc}") from exc
    n_slots = days * spd

    base_load = _read_series_csv(root / files["loads"], n, n_slots, "load")
    pv = _read_series_csv(root / files["pv"], n, n_slots, "PV")

    p_os = np.full(n_slots, np.nan)
    p_in = np.full(n_slots, np.nan)
    p_ob = np.full(n_slots, np.nan)
    prices_path = root / files["prices"]
    with prices_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"slot", "p_os", "p_in", "p_ob"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ScenarioError(
                f"{prices_path.name}: missing columns "
                f"{sorted(need - set(reader.fieldnames or []))}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row["slot"])
                vals = (float(row["p_os"]), float(row["p_in"]),
                        float(row["p_ob"]))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(
                    f"{prices_path.name} row {lineno}: {exc}") from exc
            if not 0 <= t < n_slots:
                raise ScenarioError(f"{prices_path.name} row {lineno}: "
                                    f"slot {t} out of range")
            if not vals[0] <= vals[1] <= vals[2]:
                raise ScenarioError(
                    f"{prices_path.name} row {lineno}: price ordering "
                    f"violated {vals}")
            p_os[t], p_in[t], p_ob[t] = vals
    if np.isnan(p_os).any():
        t = int(np.flatnonzero(np.isnan(p_os))[0])
        raise ScenarioError(f"{prices_path.name}: no row for slot {t}")

    sc = Scenario(base_load=base_load, pv=pv,
                  prices=PriceSchedule(p_os=p_os, p_ob=p_ob, p_in=p_in),
                  n_households=n, days=days, slots_per_day=spd,
                  meta=manifest.get("meta", {}))
    validate_scenario(sc)
    return sc
