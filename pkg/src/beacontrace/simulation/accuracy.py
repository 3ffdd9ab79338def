"""Monte Carlo accuracy of the max-absolute-difference separation estimate.

Each trial drops beacons and two receivers uniformly in a rectangle; both
receivers average ``packets_per_beacon`` noisy RSS samples per beacon,
invert the path-loss model and take the largest per-beacon distance
difference as their separation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from .. import kernels
from ..kernels._rng import derive_trial_seed, derive_trial_seeds
from ..radio import DEFAULT_SENSITIVITY_DBM, DEFAULT_TX_DBM, RadioModel

Z95 = 1.96


@dataclass(frozen=True)
class DeploymentScenario:
    width_m: float = 10.0
    height_m: float = 10.0
    n_beacons: int = 1
    n_receivers: int = 2
    beacon_positions: tuple | None = None
    receiver_positions: tuple | None = None
    tx: int = DEFAULT_TX_DBM
    seed: int = 0
    packets_per_beacon: int = 10
    sensitivity_dbm: float = DEFAULT_SENSITIVITY_DBM

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValueError("area must be positive")
        if self.n_beacons < 1:
            raise ValueError("need at least one beacon")
        if self.packets_per_beacon < 1:
            raise ValueError("packets_per_beacon must be >= 1")
        for pts, n, what in ((self.beacon_positions, self.n_beacons, "beacon"),
                             (self.receiver_positions, self.n_receivers, "receiver")):
            if pts is None:
                continue
            if len(pts) != n:
                raise ValueError(f"expected {n} {what} positions, got {len(pts)}")
            for x, y in pts:
                if not (0 <= x <= self.width_m and 0 <= y <= self.height_m):
                    raise ValueError(f"{what} position ({x}, {y}) outside the area")


@dataclass(frozen=True)
class TrialResult:
    true_distance_m: float
    estimated_distance_m: float | None

    @property
    def abs_error_m(self) -> float | None:
        if self.estimated_distance_m is None:
            return None
        return abs(self.true_distance_m - self.estimated_distance_m)


@dataclass(frozen=True)
class AccuracyRow:
    n_beacons: int
    mean_error_m: float
    ci95_m: float
    trials: int
    excluded: int


@dataclass(frozen=True)
class AccuracyReport:
    rows: tuple

    def mean_errors(self):
        return [r.mean_error_m for r in self.rows]

    def trend(self) -> float:
        """Spearman correlation between beacon count and mean error."""
        return float(spearmanr([r.n_beacons for r in self.rows], self.mean_errors()).statistic)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_beacons", "mean_error_m", "ci95_m", "trials", "excluded"])
        for r in self.rows:
            w.writerow([r.n_beacons, f"{r.mean_error_m:.6f}", f"{r.ci95_m:.6f}", r.trials, r.excluded])


def _kernel_args(scenario: DeploymentScenario, model: RadioModel):
    if scenario.n_receivers != 2:
        raise ValueError("the accuracy experiment uses exactly two receivers")
    return dict(
        n_beacons=scenario.n_beacons, width=scenario.width_m, height=scenario.height_m,
        rss_1m=model.rss_at_1m(scenario.tx), eta=model.path_loss_exponent,
        sigma=model.shadowing_sigma_db, min_d=model.min_distance_m,
        floor_dbm=scenario.sensitivity_dbm, packets=scenario.packets_per_beacon,
        beacon_xy=None if scenario.beacon_positions is None else np.asarray(scenario.beacon_positions, float),
        receiver_xy=None if scenario.receiver_positions is None else np.asarray(scenario.receiver_positions, float),
    )


def run_trial(scenario: DeploymentScenario, model: RadioModel, trial: int = 0) -> TrialResult:
    """One trial, seeded from ``(scenario.seed, n_beacons, trial)``."""
    seed = derive_trial_seed(scenario.seed, scenario.n_beacons, trial)
    true, est = kernels.run_batch(np.array([seed], dtype=np.uint64), **_kernel_args(scenario, model))
    e = float(est[0])
    return TrialResult(float(true[0]), None if math.isnan(e) else e)


def sweep_errors(scenario: DeploymentScenario, model: RadioModel, trials: int):
    """Absolute errors of all trials for one beacon count (NaN = no estimate)."""
    seeds = derive_trial_seeds(scenario.seed, scenario.n_beacons, np.arange(trials))
    true, est = kernels.run_batch(seeds, **_kernel_args(scenario, model))
    return np.abs(true - est)


def summarize(n_beacons: int, errors: np.ndarray) -> AccuracyRow:
    ok = errors[~np.isnan(errors)]
    excluded = len(errors) - len(ok)
    if len(ok) == 0:
        return AccuracyRow(n_beacons, math.nan, math.nan, len(errors), excluded)
    mean = float(ok.mean())
    ci = Z95 * float(ok.std(ddof=1)) / math.sqrt(len(ok)) if len(ok) > 1 else math.nan
    return AccuracyRow(n_beacons, mean, ci, len(errors), excluded)


def accuracy_sweep(base: DeploymentScenario, model: RadioModel,
                   beacon_counts=range(1, 11), trials: int = 10_000) -> AccuracyReport:
    if trials < 100:
        raise ValueError("trials must be >= 100")
    rows = []
    for n in beacon_counts:
        scenario = replace(base, n_beacons=int(n), beacon_positions=None)
        rows.append(summarize(int(n), sweep_errors(scenario, model, trials)))
    return AccuracyReport(tuple(rows))
