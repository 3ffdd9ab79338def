"""Log-distance path loss with Gaussian shadowing, and its inverse."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TX_DBM = -8
DEFAULT_TX_OFFSETS = {-20: -12.0, -14: -6.0, -8: 0.0, -2: 6.0, 4: 12.0}

# Allowed gap between adjacent TX-power curves, dB.
MIN_TX_GAP_DB = 5.0
MAX_TX_GAP_DB = 7.0

DEFAULT_SENSITIVITY_DBM = -100.0


class RadioConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RadioModel:
    """Mean RSS at 1 m is ``rss_at_1m_dbm`` plus the TX setting's offset.

    The offset table is relative to the reference setting (offset 0,
    normally -8 dBm).
    """

    rss_at_1m_dbm: float = -60.0
    path_loss_exponent: float = 2.0
    shadowing_sigma_db: float = 2.0
    min_distance_m: float = 0.1
    tx_offset_table: dict = field(default_factory=lambda: dict(DEFAULT_TX_OFFSETS))

    def __post_init__(self):
        if not self.path_loss_exponent > 0:
            raise RadioConfigError("path_loss_exponent must be > 0")
        if not self.shadowing_sigma_db >= 0:
            raise RadioConfigError("shadowing_sigma_db must be >= 0")
        if not self.min_distance_m > 0:
            raise RadioConfigError("min_distance_m must be > 0")
        if not self.tx_offset_table:
            raise RadioConfigError("tx_offset_table is empty")
        table = {int(k): float(v) for k, v in self.tx_offset_table.items()}
        object.__setattr__(self, "tx_offset_table", table)
        offsets = [table[k] for k in sorted(table)]
        for lo, hi in zip(offsets, offsets[1:]):
            gap = hi - lo
            if not MIN_TX_GAP_DB <= gap <= MAX_TX_GAP_DB:
                raise RadioConfigError(
                    f"adjacent TX offsets must differ by {MIN_TX_GAP_DB}-{MAX_TX_GAP_DB} dB, got {gap}")

    def rss_at_1m(self, tx: int) -> float:
        try:
            return self.rss_at_1m_dbm + self.tx_offset_table[int(tx)]
        except KeyError:
            raise RadioConfigError(
                f"TX power {tx} dBm not in configured set {sorted(self.tx_offset_table)}") from None

    def with_sigma(self, sigma_db: float) -> "RadioModel":
        return RadioModel(self.rss_at_1m_dbm, self.path_loss_exponent, sigma_db,
                          self.min_distance_m, dict(self.tx_offset_table))


def mean_rss(model: RadioModel, tx: int, d_m: float) -> float:
    if d_m < 0:
        raise ValueError("distance must be >= 0")
    d = max(d_m, model.min_distance_m)
    return model.rss_at_1m(tx) - 10.0 * model.path_loss_exponent * math.log10(d)


def sample_rss(model: RadioModel, tx: int, d_m: float, rng: np.random.Generator) -> float:
    mu = mean_rss(model, tx, d_m)
    if model.shadowing_sigma_db == 0:
        return mu
    return mu + float(rng.normal(0.0, model.shadowing_sigma_db))


def distance_from_rss(model: RadioModel, tx: int, rss_dbm: float) -> float:
    exponent = (model.rss_at_1m(tx) - rss_dbm) / (10.0 * model.path_loss_exponent)
    return max(10.0 ** exponent, model.min_distance_m)


def max_range(model: RadioModel, tx: int, floor_dbm: float = DEFAULT_SENSITIVITY_DBM) -> float:
    """Distance at which the mean RSS reaches ``floor_dbm``."""
    return distance_from_rss(model, tx, floor_dbm)


# -- calibration ------------------------------------------------------------

def read_calibration_csv(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["tx_dbm", "distance_m", "rss_dbm"]
        if reader.fieldnames != expected:
            raise RadioConfigError(f"calibration CSV header must be {','.join(expected)}")
        for row in reader:
            rows.append((int(float(row["tx_dbm"])), float(row["distance_m"]), float(row["rss_dbm"])))
    return rows


def fit_calibration(rows, base: RadioModel | None = None) -> RadioModel:
    """Least-squares fit of (rss_at_1m, path-loss exponent).

    TX offsets are taken from ``base``; samples closer than the near-field
    clamp carry no slope information and are dropped.
    """
    base = base or RadioModel()
    xs, ys = [], []
    for tx, d, rss in rows:
        if d < base.min_distance_m:
            continue
        xs.append(-10.0 * math.log10(d))
        ys.append(rss - base.tx_offset_table[int(tx)])
    if len(set(xs)) < 2:
        raise RadioConfigError("need measurements at >= 2 distinct distances to fit")
    A = np.column_stack([np.ones(len(xs)), xs])
    (intercept, eta), *_ = np.linalg.lstsq(A, np.asarray(ys), rcond=None)
    if eta <= 0:
        raise RadioConfigError(f"fitted path-loss exponent is not positive ({eta:.3g})")
    return RadioModel(float(intercept), float(eta), base.shadowing_sigma_db,
                      base.min_distance_m, dict(base.tx_offset_table))


def format_offset_table(table: dict) -> str:
    return ",".join(f"{k}:{table[k]:g}" for k in sorted(table))


def parse_offset_table(text: str) -> dict:
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            k, v = item.split(":")
            out[int(k)] = float(v)
        except ValueError:
            raise RadioConfigError(f"bad tx_offset_table entry {item!r} (want dbm:offset)") from None
    return out
