"""Light-harvesting beacon power chain: harvest, supercapacitor, backup cell.

Energy bookkeeping is in joules.  Battery charge is tracked in mAh and
converted at the operating voltage, since the load is modelled as a
current drawn at that (regulated) voltage.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

SECONDS_PER_DAY = 86400.0
SECONDS_PER_YEAR = 365.25 * SECONDS_PER_DAY
MIN_ADV_INTERVAL_MS = 20.0

# Radio energy per advertising event relative to the -8 dBm setting.
DEFAULT_TX_EVENT_SCALE = {-20: 0.85, -14: 0.90, -8: 1.0, -2: 1.15, 4: 1.40}

ENERGY_NEUTRAL = math.inf

PROFILE_DIR = Path(__file__).parent / "data" / "profiles"
SOCIAL_PROFILES = ("office", "cafe", "shopping_mall", "outdoor_bus_stop")


class EnergyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PowerChainConfig:
    operating_voltage_v: float = 1.8
    supercap_capacitance_f: float = 1.0
    supercap_max_v: float = 5.5
    backup_battery_mah: float = 235.0
    harvest_w_per_lux: float = 1.0e-7
    min_harvest_lux: float = 100.0
    firmware_current_a: float = 12.2e-6
    sleep_current_a: float = 2.0e-6
    reference_adv_interval_ms: float = 100.0
    reference_tx_dbm: int = -8
    boot_energy_j: float = 5.0e-5
    tx_event_scale: dict = field(default_factory=lambda: dict(DEFAULT_TX_EVENT_SCALE))

    def __post_init__(self):
        for name in ("operating_voltage_v", "supercap_capacitance_f", "supercap_max_v",
                     "backup_battery_mah", "harvest_w_per_lux", "firmware_current_a",
                     "reference_adv_interval_ms"):
            if not getattr(self, name) > 0:
                raise EnergyConfigError(f"{name} must be positive")
        if self.min_harvest_lux < 0 or self.sleep_current_a < 0 or self.boot_energy_j < 0:
            raise EnergyConfigError("min_harvest_lux, sleep_current_a and boot_energy_j must be >= 0")
        if self.sleep_current_a >= self.firmware_current_a:
            raise EnergyConfigError("sleep_current_a must be below firmware_current_a")
        if self.supercap_max_v <= self.operating_voltage_v:
            raise EnergyConfigError("supercap_max_v must exceed operating_voltage_v")
        object.__setattr__(self, "tx_event_scale",
                           {int(k): float(v) for k, v in self.tx_event_scale.items()})
        if self.tx_event_scale.get(int(self.reference_tx_dbm)) != 1.0:
            raise EnergyConfigError("tx_event_scale must be 1.0 at the reference TX power")

    def cap_energy(self, v: float) -> float:
        return 0.5 * self.supercap_capacitance_f * v * v

    def cap_voltage(self, e: float) -> float:
        return math.sqrt(2.0 * max(e, 0.0) / self.supercap_capacitance_f)

    def mah_to_joules(self, mah: float) -> float:
        return mah * 3.6 * self.operating_voltage_v

    def joules_to_mah(self, j: float) -> float:
        return j / (3.6 * self.operating_voltage_v)


@dataclass(frozen=True)
class EnergyState:
    supercap_v: float
    battery_remaining_mah: float
    alive: bool = True

    @classmethod
    def initial(cls, config: PowerChainConfig, supercap_v: float | None = None,
                battery_mah: float | None = None) -> "EnergyState":
        v = config.operating_voltage_v if supercap_v is None else supercap_v
        b = config.backup_battery_mah if battery_mah is None else battery_mah
        return cls(v, b, is_alive(config, v, b))


def is_alive(config: PowerChainConfig, supercap_v: float, battery_mah: float) -> bool:
    return supercap_v >= config.operating_voltage_v or battery_mah > 0


def consumption_current(config: PowerChainConfig, adv_interval_ms: float, tx: int) -> float:
    """Average firmware current (A) for an advertising interval and TX power.

    Sleep floor plus a per-event charge.  The event charge is fixed by the
    measured point at the reference interval and TX power, and is scaled by
    ``tx_event_scale`` for other TX settings.
    """
    if adv_interval_ms < MIN_ADV_INTERVAL_MS:
        raise EnergyConfigError(f"advertising interval below BLE minimum ({MIN_ADV_INTERVAL_MS} ms)")
    try:
        scale = config.tx_event_scale[int(tx)]
    except KeyError:
        raise EnergyConfigError(f"no per-event energy entry for TX {tx} dBm") from None
    event_current = config.firmware_current_a - config.sleep_current_a
    rate = config.reference_adv_interval_ms / adv_interval_ms
    return config.sleep_current_a + event_current * rate * scale


def event_energy_j(config: PowerChainConfig, tx: int) -> float:
    """Energy of one advertising event at ``tx`` (J)."""
    events_per_s = 1000.0 / config.reference_adv_interval_ms
    ref = (config.firmware_current_a - config.sleep_current_a) * config.operating_voltage_v / events_per_s
    return ref * config.tx_event_scale[int(tx)]


def harvest_power(config: PowerChainConfig, lux: float) -> float:
    if lux < config.min_harvest_lux:
        return 0.0
    return config.harvest_w_per_lux * lux


@dataclass(frozen=True)
class StepFlows:
    """Where one step's energy went (J).  All terms are >= 0."""

    harvested: float
    load: float
    wasted: float = 0.0
    unserved: float = 0.0
    boot: float = 0.0

    @property
    def net(self) -> float:
        # Expected change of stored (supercap + battery) energy.
        return self.harvested - self.load - self.wasted + self.unserved - self.boot


def step_energy_flows(state: EnergyState, config: PowerChainConfig, lux: float,
                      load_a: float, dt_s: float) -> tuple[EnergyState, StepFlows]:
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    harvested = harvest_power(config, lux) * dt_s
    load = load_a * config.operating_voltage_v * dt_s
    e_op = config.cap_energy(config.operating_voltage_v)
    e_max = config.cap_energy(config.supercap_max_v)
    e_cap = config.cap_energy(state.supercap_v)
    batt_j = config.mah_to_joules(state.battery_remaining_mah)

    wasted = unserved = boot = 0.0
    if state.supercap_v >= config.operating_voltage_v:
        e_new = e_cap + harvested - load
        from_batt = 0.0
        if e_new < e_op:
            # Below the operating voltage the backup cell takes over; once it
            # is empty the load browns the supercap out further.
            short = e_op - e_new
            from_batt = min(short, batt_j)
            e_new = e_op - (short - from_batt)
            if e_new < 0:
                unserved = -e_new
                e_new = 0.0
    else:
        e_new = e_cap + harvested
        from_batt = min(load, batt_j)
        unserved = load - from_batt
    if e_new > e_max:
        wasted = e_new - e_max
        e_new = e_max

    batt_new = batt_j - from_batt
    if not state.alive and e_new >= e_op:
        # Cold start: the primary buffer boots the radio out of the supercap.
        boot = min(config.boot_energy_j, e_new)
        e_new -= boot

    v_new = config.cap_voltage(e_new)
    if e_new >= e_op:
        v_new = max(v_new, config.operating_voltage_v)
    mah_new = config.joules_to_mah(batt_new) if batt_new > 0 else 0.0
    alive = is_alive(config, v_new, mah_new)
    flows = StepFlows(harvested, load, wasted, unserved, boot)
    return EnergyState(v_new, mah_new, alive), flows


def step_energy(state: EnergyState, config: PowerChainConfig, lux: float,
                load_a: float, dt_s: float) -> EnergyState:
    return step_energy_flows(state, config, lux, load_a, dt_s)[0]


def stored_energy(state: EnergyState, config: PowerChainConfig) -> float:
    return config.cap_energy(state.supercap_v) + config.mah_to_joules(state.battery_remaining_mah)


# -- lighting ---------------------------------------------------------------

@dataclass(frozen=True)
class LightingProfile:
    """Piecewise-constant illuminance over one 24 h day.

    Each ``(time_of_day_s, lux)`` sample holds until the next one; the last
    sample wraps around midnight.
    """

    samples: tuple
    name: str = ""

    def __post_init__(self):
        if not self.samples:
            raise EnergyConfigError("lighting profile has no samples")
        pts = tuple(sorted((float(t), float(l)) for t, l in self.samples))
        for t, lux in pts:
            if not 0 <= t < SECONDS_PER_DAY:
                raise EnergyConfigError(f"time_of_day_s out of range: {t}")
            if lux < 0:
                raise EnergyConfigError(f"negative illuminance: {lux}")
        object.__setattr__(self, "samples", pts)

    @classmethod
    def constant(cls, lux: float, name: str = "") -> "LightingProfile":
        return cls(((0.0, lux),), name)

    def segments(self):
        """Yield ``(start_s, duration_s, lux)`` covering [0, 24 h)."""
        pts = self.samples
        if pts[0][0] > 0:
            yield 0.0, pts[0][0], pts[-1][1]
        for (t, lux), nxt in zip(pts, pts[1:] + ((SECONDS_PER_DAY, None),)):
            yield t, nxt[0] - t, lux

    def lux_at(self, t_s: float) -> float:
        tod = t_s % SECONDS_PER_DAY
        current = self.samples[-1][1]
        for t, lux in self.samples:
            if t <= tod:
                current = lux
            else:
                break
        return current

    def hours_lit_per_day(self, min_lux: float = 100.0) -> float:
        return sum(d for _, d, lux in self.segments() if lux >= min_lux) / 3600.0

    def scaled(self, factor: float) -> "LightingProfile":
        return LightingProfile(tuple((t, lux * factor) for t, lux in self.samples), self.name)


def read_profile_csv(path, name: str | None = None) -> LightingProfile:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["time_of_day_s", "lux"]:
            raise EnergyConfigError(f"{path}: header must be time_of_day_s,lux")
        for row in reader:
            samples.append((float(row["time_of_day_s"]), float(row["lux"])))
    if name is None:
        name = Path(path).stem
    return LightingProfile(tuple(samples), name)


def bundled_profile(name: str) -> LightingProfile:
    path = PROFILE_DIR / f"{name}.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled lighting profile named {name!r}")
    return read_profile_csv(path)


def daily_harvest_j(config: PowerChainConfig, profile: LightingProfile) -> float:
    return math.fsum(harvest_power(config, lux) * d for _, d, lux in profile.segments())


def break_even_lux(config: PowerChainConfig, adv_interval_ms: float = 100.0, tx: int = -8) -> float:
    """Constant 24 h illuminance at which harvest equals consumption."""
    p_load = consumption_current(config, adv_interval_ms, tx) * config.operating_voltage_v
    return max(p_load / config.harvest_w_per_lux, config.min_harvest_lux)


@dataclass(frozen=True)
class LifetimePrediction:
    lifetime_years: float
    baseline_years: float
    daily_harvest_j: float
    daily_consumption_j: float

    @property
    def energy_neutral(self) -> bool:
        return math.isinf(self.lifetime_years)

    @property
    def extension_pct(self) -> float:
        return 100.0 * (self.lifetime_years / self.baseline_years - 1.0)


def predict_lifetime(config: PowerChainConfig, profile: LightingProfile,
                     adv_interval_ms: float = 100.0, tx: int = -8) -> LifetimePrediction:
    load_a = consumption_current(config, adv_interval_ms, tx)
    consumed = load_a * config.operating_voltage_v * SECONDS_PER_DAY
    harvested = daily_harvest_j(config, profile)
    battery_j = config.mah_to_joules(config.backup_battery_mah)
    baseline = battery_j / consumed * SECONDS_PER_DAY / SECONDS_PER_YEAR
    deficit = consumed - harvested
    if deficit <= 0:
        lifetime = ENERGY_NEUTRAL
    else:
        lifetime = battery_j / deficit * SECONDS_PER_DAY / SECONDS_PER_YEAR
    return LifetimePrediction(lifetime, baseline, harvested, consumed)


def simulate_trace(config: PowerChainConfig, profile: LightingProfile, load_a: float,
                   duration_s: float, dt_s: float = 60.0, state: EnergyState | None = None,
                   start_s: float = 0.0):
    """Step the power chain; return ``(times, states, flows)`` lists."""
    state = state or EnergyState.initial(config)
    times, states, flows = [start_s], [state], []
    n = int(round(duration_s / dt_s))
    for i in range(n):
        t = start_s + i * dt_s
        state, f = step_energy_flows(state, config, profile.lux_at(t), load_a, dt_s)
        times.append(t + dt_s)
        states.append(state)
        flows.append(f)
    return times, states, flows


# -- architecture comparison ------------------------------------------------

@dataclass(frozen=True)
class ArchitectureCosts:
    alpha: float  # RF transmission cost per device per day
    beta: float  # RF receiving (scanning) cost per device per day
    gamma: float  # LTE/server cost per device per day
    n: float  # smartphones
    m: float  # infrastructure devices

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.n, self.m) < 0:
            raise EnergyConfigError("architecture costs and counts must be >= 0")
        if not (self.alpha <= self.beta <= self.gamma and self.n > self.m):
            warnings.warn("costs outside the intended regime alpha << beta << gamma, n > m",
                          stacklevel=3)


def architecture_energy(costs: ArchitectureCosts) -> dict:
    a, b, g, n, m = costs.alpha, costs.beta, costs.gamma, costs.n, costs.m
    return {
        "decentralized": n * (a + b),
        "hybrid": n * (a + b),
        "iotrace": n * a + m * (b + g),
        "this_work": n * b + m * a,
    }


def with_battery(config: PowerChainConfig, mah: float) -> PowerChainConfig:
    return replace(config, backup_battery_mah=mah)
