"""Entities of the tracing protocol: scan-only users, hospital, authority.

Users only ever receive.  A positive user's retained log goes to the
authority through a hospital; the authority publishes ``(ephemeral ID,
time bucket, RSSI)`` entries that every other user matches locally.
"""

from __future__ import annotations

import csv
import hashlib
import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .detection import (DEFAULT_D_THRESH_M, DEFAULT_T_THRESH_S, DEFAULT_WINDOW_S,
                        ContactEvent, ScanRecord, aggregate_rssi, detect_contacts)
from .radio import DEFAULT_SENSITIVITY_DBM, RadioModel, sample_rss

DEFAULT_RETENTION_S = 14 * 86400
DEFAULT_BUCKET_S = 3600


class ReportRefused(ValueError):
    """Nothing retained in the user's log, so no report can be built."""


@dataclass
class UserDevice:
    label: str
    log: list = field(default_factory=list)
    scan_on_s: float = 1.0
    scan_period_s: float = 1.0
    sensitivity_dbm: float = DEFAULT_SENSITIVITY_DBM

    def scan_open(self, clock_s: float) -> bool:
        if self.scan_on_s >= self.scan_period_s:
            return True
        return (clock_s % self.scan_period_s) < self.scan_on_s


def user_scan_tick(device: UserDevice, in_range_broadcasts, model: RadioModel, tx: int,
                   clock_s: float, rng: np.random.Generator) -> UserDevice:
    """Log every broadcast whose sampled RSS clears the sensitivity floor.

    ``in_range_broadcasts`` is an iterable of ``(payload, true_distance_m)``.
    Nothing is logged while the duty-cycled scan window is closed.
    """
    if not device.scan_open(clock_s):
        return device
    for payload, distance in in_range_broadcasts:
        rssi = sample_rss(model, tx, distance, rng)
        if rssi >= device.sensitivity_dbm:
            device.log.append(ScanRecord(clock_s, payload.mac, payload.ephemeral_id, rssi))
    return device


@dataclass(frozen=True)
class PositiveReport:
    report_id: str
    upload_time_s: float
    records: tuple

    def __post_init__(self):
        if not self.records:
            raise ValueError("a positive report needs at least one record")


def hospital_report(device: UserDevice, clock_s: float,
                    retention_s: float = DEFAULT_RETENTION_S,
                    report_id: str | None = None) -> PositiveReport:
    retained = tuple(r for r in device.log if clock_s - retention_s <= r.timestamp_s <= clock_s)
    if not retained:
        raise ReportRefused(f"{device.label}: no records within the retention window")
    if report_id is None:
        report_id = hashlib.sha256(f"{device.label}|{clock_s!r}".encode()).hexdigest()[:16]
    return PositiveReport(report_id, clock_s, retained)


@dataclass(frozen=True, order=True)
class PublishedEntry:
    ephemeral_id: bytes
    time_bucket_start_s: float
    rssi_dbm: float


@dataclass(frozen=True)
class PublishedList:
    version: int
    entries: frozenset


def bucket_start(t: float, bucket_s: float) -> float:
    """Start of the time bucket holding ``t``; ``bucket_s == 0`` keeps raw times."""
    if bucket_s <= 0:
        return float(t)
    return float((t // bucket_s) * bucket_s)


def bucket_records(records, bucket_s: float) -> dict:
    """Collapse records to ``(id, bucket) -> mean RSSI``."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.ephemeral_id, bucket_start(r.timestamp_s, bucket_s))].append(r.rssi_dbm)
    return {k: aggregate_rssi(v) for k, v in groups.items()}


class AuthorityStore:
    """Deduplicated store of positive users' bucketed records.

    Ingests are serialised by a lock; readers get immutable snapshots.
    """

    def __init__(self, bucket_s: float = DEFAULT_BUCKET_S):
        self.bucket_s = bucket_s
        self.version = 0
        self._entries: dict = {}  # (id, bucket) -> (rssi, version added)
        self._reports: set = set()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._entries)

    def ingest(self, report: PositiveReport) -> PublishedList:
        with self._lock:
            if report.report_id in self._reports:
                return self._snapshot(0)
            self._reports.add(report.report_id)
            self.version += 1
            for key, rssi in bucket_records(report.records, self.bucket_s).items():
                if key not in self._entries:
                    self._entries[key] = (rssi, self.version)
            return self._snapshot(0)

    def published(self, since: int = 0) -> PublishedList:
        with self._lock:
            return self._snapshot(since)

    def _snapshot(self, since: int) -> PublishedList:
        entries = frozenset(PublishedEntry(eid, b, rssi)
                            for (eid, b), (rssi, v) in self._entries.items() if v > since)
        return PublishedList(self.version, entries)


def authority_ingest(store: AuthorityStore, report: PositiveReport) -> PublishedList:
    return store.ingest(report)


def user_reconcile(device: UserDevice, published: PublishedList, model: RadioModel, tx: int,
                   d_thresh_m: float = DEFAULT_D_THRESH_M,
                   t_thresh_s: float = DEFAULT_T_THRESH_S,
                   window_s: float = DEFAULT_WINDOW_S,
                   bucket_s: float = DEFAULT_BUCKET_S) -> list[ContactEvent]:
    """Match the device log against published entries, entirely on-device.

    The published side has no timestamps finer than its bucket, so each
    matched entry is placed at the device's own observation times of that
    ID; contact duration is therefore measured on the device's clock.
    """
    index = {(e.ephemeral_id, e.time_bucket_start_s): e.rssi_dbm for e in published.entries}
    if not index:
        return []
    mine, theirs = [], []
    for rec in device.log:
        rssi = index.get((rec.ephemeral_id, bucket_start(rec.timestamp_s, bucket_s)))
        if rssi is None:
            continue
        mine.append(rec)
        theirs.append(ScanRecord(rec.timestamp_s, rec.beacon_mac, rec.ephemeral_id, rssi))
    if not mine:
        return []
    return detect_contacts(mine, theirs, model, tx, d_thresh_m, t_thresh_s, window_s)


# -- published-list snapshot file -------------------------------------------

SNAPSHOT_HEADER = ["ephemeral_id_hex", "time_bucket_start_s", "rssi_dbm"]


def write_snapshot(published: PublishedList, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SNAPSHOT_HEADER)
    for e in sorted(published.entries):
        w.writerow([e.ephemeral_id.hex(), f"{e.time_bucket_start_s:g}", repr(float(e.rssi_dbm))])


def read_snapshot(fh, version: int = 0) -> PublishedList:
    reader = csv.DictReader(fh)
    if reader.fieldnames != SNAPSHOT_HEADER:
        raise ValueError(f"snapshot header must be {','.join(SNAPSHOT_HEADER)}")
    entries = frozenset(PublishedEntry(bytes.fromhex(r["ephemeral_id_hex"]),
                                       float(r["time_bucket_start_s"]), float(r["rssi_dbm"]))
                        for r in reader)
    return PublishedList(version, entries)
