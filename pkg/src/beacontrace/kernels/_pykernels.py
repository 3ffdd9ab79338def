"""Vectorised numpy implementation of the Monte Carlo trial kernel."""

import numpy as np

from ._rng import uniforms

CHUNK = 4096


def draws_per_trial(n_beacons: int, packets: int) -> int:
    return 2 * n_beacons + 4 + 4 * n_beacons * packets


def run_batch(seeds, n_beacons, width, height, rss_1m, eta, sigma, min_d,
              floor_dbm, packets, beacon_xy=None, receiver_xy=None):
    """Simulate one two-receiver trial per seed.

    Returns ``(true_distance, estimate)``; the estimate is NaN when the
    receivers share no heard beacon.
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
    true_out = np.empty(len(seeds))
    est_out = np.empty(len(seeds))
    for lo in range(0, len(seeds), CHUNK):
        hi = min(lo + CHUNK, len(seeds))
        t, e = _chunk(seeds[lo:hi], n_beacons, width, height, rss_1m, eta, sigma, min_d,
                      floor_dbm, packets, beacon_xy, receiver_xy)
        true_out[lo:hi] = t
        est_out[lo:hi] = e
    return true_out, est_out


def _chunk(seeds, n, width, height, rss_1m, eta, sigma, min_d, floor_dbm, k,
           beacon_xy, receiver_xy):
    m = len(seeds)
    scale = np.array([width, height])
    if beacon_xy is None:
        beacons = uniforms(seeds, 0, 2 * n).reshape(m, n, 2) * scale
    else:
        beacons = np.broadcast_to(np.asarray(beacon_xy, dtype=float), (m, n, 2))
    if receiver_xy is None:
        receivers = uniforms(seeds, 2 * n, 4).reshape(m, 2, 2) * scale
    else:
        receivers = np.broadcast_to(np.asarray(receiver_xy, dtype=float), (m, 2, 2))

    # (m, 2 receivers, n beacons)
    diff = receivers[:, :, None, :] - beacons[:, None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    mean = rss_1m - 10.0 * eta * np.log10(np.maximum(dist, min_d))

    u = uniforms(seeds, 2 * n + 4, 4 * n * k).reshape(m, 2, n, k, 2)
    if sigma > 0:
        noise = np.sqrt(-2.0 * np.log(1.0 - u[..., 0])) * np.cos(2.0 * np.pi * u[..., 1])
        samples = mean[..., None] + sigma * noise
    else:
        samples = np.broadcast_to(mean[..., None], (m, 2, n, k))
    heard = samples >= floor_dbm
    count = heard.sum(axis=-1)
    total = np.where(heard, samples, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        agg = total / count
    est_d = np.maximum(10.0 ** ((rss_1m - agg) / (10.0 * eta)), min_d)

    both = (count[:, 0, :] > 0) & (count[:, 1, :] > 0)
    absdiff = np.where(both, np.abs(est_d[:, 0, :] - est_d[:, 1, :]), -np.inf)
    est = absdiff.max(axis=1)
    est[~both.any(axis=1)] = np.nan
    rd = receivers[:, 0, :] - receivers[:, 1, :]
    return np.hypot(rd[:, 0], rd[:, 1]), est


def mad_rows(d1, d2):
    """Row-wise max |d1 - d2|, ignoring NaN entries; NaN if a row has none."""
    diff = np.abs(np.asarray(d1, dtype=float) - np.asarray(d2, dtype=float))
    out = np.full(diff.shape[0], np.nan)
    ok = ~np.isnan(diff)
    rows = ok.any(axis=1)
    out[rows] = np.where(ok, diff, -np.inf)[rows].max(axis=1)
    return out
