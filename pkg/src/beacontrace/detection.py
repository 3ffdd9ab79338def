"""Receiver-to-receiver distance estimation and contact extraction.

Two receivers that heard the same beacons each turn RSSI into a distance
per beacon.  Their separation is estimated as the largest absolute
difference between the two distance vectors; windows whose estimate is
within the distance threshold are merged into contact events.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .radio import RadioModel, distance_from_rss

DEFAULT_WINDOW_S = 60.0
DEFAULT_D_THRESH_M = 2.0
DEFAULT_T_THRESH_S = 600.0


@dataclass(frozen=True)
class ScanRecord:
    timestamp_s: float
    beacon_mac: bytes
    ephemeral_id: bytes
    rssi_dbm: float


@dataclass(frozen=True)
class ContactEvent:
    window_start_s: float
    window_end_s: float
    min_estimated_distance_m: float
    matched_ids: frozenset = field(default_factory=frozenset)

    @property
    def duration_s(self) -> float:
        return self.window_end_s - self.window_start_s


def aggregate_rssi(values) -> float:
    """Per-beacon, per-window RSSI aggregate: arithmetic mean in dBm."""
    return math.fsum(values) / len(values)


def distance_vector(log, model: RadioModel, tx: int, window) -> dict:
    """Estimated distance per ephemeral ID heard inside ``window``.

    ``window`` is a half-open ``(start_s, end_s)`` interval.
    """
    start, end = window
    if not end > start:
        raise ValueError("window must be non-empty")
    by_key = defaultdict(list)
    for rec in log:
        if start <= rec.timestamp_s < end:
            by_key[rec.ephemeral_id].append(rec.rssi_dbm)
    return {k: distance_from_rss(model, tx, aggregate_rssi(v)) for k, v in by_key.items()}


def mad_distance(v1: dict, v2: dict) -> float | None:
    """Maximum absolute difference over common keys; ``None`` if none shared."""
    common = v1.keys() & v2.keys()
    if not common:
        return None
    return max(abs(v1[k] - v2[k]) for k in common)


def trilaterate(v: dict, positions: dict, *, collinear_tol: float = 1e-9):
    """Least-squares position from ranges to known beacons.

    Returns ``(x, y)`` or ``None`` when fewer than three beacons with known
    positions are present or they are (numerically) collinear.
    """
    keys = [k for k in v if k in positions]
    if len(keys) < 3:
        return None
    P = np.array([positions[k] for k in keys], dtype=float)
    d = np.array([v[k] for k in keys], dtype=float)
    centered = P - P.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < collinear_tol:
        return None

    # Linearised start: subtract the first range equation from the rest.
    A = 2.0 * (P[1:] - P[0])
    b = (d[0] ** 2 - d[1:] ** 2) + (P[1:] ** 2).sum(axis=1) - (P[0] ** 2).sum()
    x0, *_ = np.linalg.lstsq(A, b, rcond=None)

    def residual(p):
        return np.hypot(P[:, 0] - p[0], P[:, 1] - p[1]) - d

    sol = least_squares(residual, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return float(sol.x[0]), float(sol.x[1])


def _window_index(t: float, window_s: float) -> int:
    return math.floor(t / window_s)


def window_estimates(log1, log2, model: RadioModel, tx: int, window_s: float):
    """Map window index -> (mad estimate, common ids) for windows with common ids."""
    buckets1, buckets2 = defaultdict(list), defaultdict(list)
    for rec in log1:
        buckets1[_window_index(rec.timestamp_s, window_s)].append(rec)
    for rec in log2:
        buckets2[_window_index(rec.timestamp_s, window_s)].append(rec)
    out = {}
    for idx in sorted(buckets1.keys() & buckets2.keys()):
        span = (idx * window_s, (idx + 1) * window_s)
        v1 = distance_vector(buckets1[idx], model, tx, span)
        v2 = distance_vector(buckets2[idx], model, tx, span)
        est = mad_distance(v1, v2)
        if est is not None:
            out[idx] = (est, frozenset(v1.keys() & v2.keys()))
    return out


def detect_contacts(log1, log2, model: RadioModel, tx: int,
                    d_thresh_m: float = DEFAULT_D_THRESH_M,
                    t_thresh_s: float = DEFAULT_T_THRESH_S,
                    window_s: float = DEFAULT_WINDOW_S) -> list[ContactEvent]:
    if d_thresh_m <= 0 or t_thresh_s <= 0 or window_s <= 0:
        raise ValueError("thresholds and window must be positive")
    estimates = window_estimates(log1, log2, model, tx, window_s)

    events = []
    run: list[int] = []

    def flush():
        if not run:
            return
        start, end = run[0] * window_s, (run[-1] + 1) * window_s
        if end - start >= t_thresh_s:
            ids = frozenset().union(*(estimates[i][1] for i in run))
            events.append(ContactEvent(start, end, min(estimates[i][0] for i in run), ids))
        run.clear()

    for idx in sorted(estimates):
        est, _ = estimates[idx]
        if est <= d_thresh_m and (not run or idx == run[-1] + 1):
            run.append(idx)
            continue
        flush()
        if est <= d_thresh_m:
            run.append(idx)
    flush()
    return events


# -- file formats -----------------------------------------------------------

SCAN_LOG_HEADER = ["timestamp_s", "beacon_mac", "ephemeral_id_hex", "rssi_dbm"]
EVENT_HEADER = ["start_s", "end_s", "min_distance_m", "n_matched_ids"]


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def parse_mac(text: str) -> bytes:
    raw = bytes.fromhex(text.replace(":", "").replace("-", ""))
    if len(raw) != 6:
        raise ValueError(f"MAC must be 6 bytes: {text!r}")
    return raw


def write_scan_log(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SCAN_LOG_HEADER)
    for r in records:
        w.writerow([repr(float(r.timestamp_s)), format_mac(r.beacon_mac),
                    r.ephemeral_id.hex(), repr(float(r.rssi_dbm))])


def read_scan_log(fh) -> list[ScanRecord]:
    reader = csv.DictReader(fh)
    if reader.fieldnames != SCAN_LOG_HEADER:
        raise ValueError(f"scan log header must be {','.join(SCAN_LOG_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            rssi = float(row["rssi_dbm"])
            if not math.isfinite(rssi):
                raise ValueError("rssi must be finite")
            out.append(ScanRecord(float(row["timestamp_s"]), parse_mac(row["beacon_mac"]),
                                  bytes.fromhex(row["ephemeral_id_hex"]), rssi))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def write_events(events, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    for e in events:
        w.writerow([f"{e.window_start_s:g}", f"{e.window_end_s:g}",
                    f"{e.min_estimated_distance_m:.6f}", len(e.matched_ids)])
