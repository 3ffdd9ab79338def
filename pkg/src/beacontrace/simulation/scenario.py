"""Discrete-event runner for scripted end-to-end protocol scenarios.

Script lines (``#`` starts a comment)::

    set <key> <value>
    beacon <id> at <x> <y> tx <dbm> [adv <ms>] [battery <mah>] [supercap <v>]
    user <id> path <x>,<y>@<t> [<x>,<y>@<t> ...]
    user <id> at <x> <y>
    lighting <beacon> <profile.csv | dark | lux:<value>>
    at <t> report <user>
    at <t> reconcile <user>

Users that never report reconcile against the authority's list at the end
of the run unless the script schedules them explicitly.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..energy import (EnergyState, LightingProfile, PowerChainConfig, consumption_current,
                      read_profile_csv, step_energy)
from ..identity import BeaconConfig, make_broadcast
from ..protocol import (AuthorityStore, ReportRefused, UserDevice, hospital_report,
                        user_reconcile, user_scan_tick)
from ..radio import RadioModel

BUNDLED = Path(__file__).resolve().parent.parent / "data"

SETTINGS = {
    "duration": 3600.0,
    "seed": 0,
    "epoch": 900,
    "sigma": None,
    "d_thresh": 2.0,
    "t_thresh": 600.0,
    "window": 60.0,
    "bucket": 3600.0,
    "retention": 14 * 86400.0,
    "scan_on": 1.0,
    "scan_period": 1.0,
    "energy_step": 60.0,
}


class ScenarioError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, source: str = "<scenario>"):
        where = f"{source}:{lineno}: " if lineno is not None else f"{source}: "
        super().__init__(where + message)
        self.lineno = lineno


@dataclass
class BeaconSpec:
    name: str
    x: float
    y: float
    tx: int
    adv_ms: float = 1000.0
    battery_mah: float | None = None
    supercap_v: float = 3.0
    lighting: LightingProfile | None = None


@dataclass
class UserSpec:
    name: str
    waypoints: list  # [(t, x, y)] sorted by t

    def position(self, t: float):
        wp = self.waypoints
        if t <= wp[0][0]:
            return wp[0][1], wp[0][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(wp, wp[1:]):
            if t <= t1:
                if t1 == t0:
                    return x1, y1
                f = (t - t0) / (t1 - t0)
                return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        return wp[-1][1], wp[-1][2]


@dataclass
class Script:
    settings: dict = field(default_factory=lambda: dict(SETTINGS))
    beacons: dict = field(default_factory=dict)
    users: dict = field(default_factory=dict)
    actions: list = field(default_factory=list)  # (t, kind, user)
    source: str = "<scenario>"
    explicit: set = field(default_factory=set)  # settings given by `set` lines


def _num(tok: str, lineno: int, source: str, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ScenarioError(f"expected a number for {what}, got {tok!r}", lineno, source) from None
    if not math.isfinite(v):
        raise ScenarioError(f"{what} must be finite", lineno, source)
    return v


def _profile(tok: str, base_dir: Path, lineno: int, source: str) -> LightingProfile:
    if tok == "dark":
        return LightingProfile.constant(0.0, "dark")
    if tok.startswith("lux:"):
        return LightingProfile.constant(_num(tok[4:], lineno, source, "lux"), tok)
    for cand in (base_dir / tok, BUNDLED / "profiles" / tok, BUNDLED / "profiles" / f"{tok}.csv"):
        if cand.is_file():
            try:
                return read_profile_csv(cand)
            except (ValueError, KeyError) as exc:
                raise ScenarioError(str(exc), lineno, source) from None
    raise ScenarioError(f"lighting profile not found: {tok}", lineno, source)


def parse_script(text: str, source: str = "<scenario>", base_dir: Path | None = None) -> Script:
    base_dir = base_dir or Path.cwd()
    sc = Script(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        head = toks[0]
        num = lambda tok, what: _num(tok, lineno, source, what)  # noqa: E731
        if head == "set":
            if len(toks) != 3 or toks[1] not in SETTINGS:
                raise ScenarioError(f"usage: set <{'|'.join(SETTINGS)}> <value>", lineno, source)
            sc.settings[toks[1]] = num(toks[2], toks[1])
            sc.explicit.add(toks[1])
        elif head == "beacon":
            if len(toks) < 7 or toks[2] != "at" or toks[5] != "tx":
                raise ScenarioError("usage: beacon <id> at <x> <y> tx <dbm> [adv <ms>] "
                                    "[battery <mah>] [supercap <v>]", lineno, source)
            name = toks[1]
            if name in sc.beacons:
                raise ScenarioError(f"duplicate beacon {name}", lineno, source)
            b = BeaconSpec(name, num(toks[3], "x"), num(toks[4], "y"), int(num(toks[6], "tx")))
            opts = toks[7:]
            if len(opts) % 2:
                raise ScenarioError("beacon options come in <key> <value> pairs", lineno, source)
            for key, val in zip(opts[::2], opts[1::2]):
                if key == "adv":
                    b.adv_ms = num(val, "adv")
                elif key == "battery":
                    b.battery_mah = num(val, "battery")
                elif key == "supercap":
                    b.supercap_v = num(val, "supercap")
                else:
                    raise ScenarioError(f"unknown beacon option {key!r}", lineno, source)
            if b.adv_ms < 20:
                raise ScenarioError("adv interval below BLE minimum (20 ms)", lineno, source)
            sc.beacons[name] = b
        elif head == "user":
            if len(toks) < 3:
                raise ScenarioError("usage: user <id> path <x>,<y>@<t> ... | user <id> at <x> <y>",
                                    lineno, source)
            name = toks[1]
            if name in sc.users:
                raise ScenarioError(f"duplicate user {name}", lineno, source)
            if toks[2] == "at" and len(toks) == 5:
                wps = [(0.0, num(toks[3], "x"), num(toks[4], "y"))]
            elif toks[2] == "path" and len(toks) > 3:
                wps = []
                for wp in toks[3:]:
                    try:
                        xy, t = wp.split("@")
                        x, y = xy.split(",")
                    except ValueError:
                        raise ScenarioError(f"bad waypoint {wp!r} (want x,y@t)", lineno, source) from None
                    wps.append((num(t, "time"), num(x, "x"), num(y, "y")))
                if any(b[0] < a[0] for a, b in zip(wps, wps[1:])):
                    raise ScenarioError("waypoint times must be non-decreasing", lineno, source)
            else:
                raise ScenarioError("usage: user <id> path <x>,<y>@<t> ... | user <id> at <x> <y>",
                                    lineno, source)
            sc.users[name] = UserSpec(name, wps)
        elif head == "lighting":
            if len(toks) != 3:
                raise ScenarioError("usage: lighting <beacon> <profile>", lineno, source)
            if toks[1] not in sc.beacons:
                raise ScenarioError(f"unknown beacon {toks[1]}", lineno, source)
            sc.beacons[toks[1]].lighting = _profile(toks[2], base_dir, lineno, source)
        elif head == "at":
            if len(toks) != 4 or toks[2] not in ("report", "reconcile"):
                raise ScenarioError("usage: at <t> report|reconcile <user>", lineno, source)
            if toks[3] not in sc.users:
                raise ScenarioError(f"unknown user {toks[3]}", lineno, source)
            sc.actions.append((num(toks[1], "time"), toks[2], toks[3]))
        else:
            raise ScenarioError(f"unknown directive {head!r}", lineno, source)
    if not sc.beacons:
        raise ScenarioError("scenario defines no beacons", None, source)
    return sc


def load_script(path) -> Script:
    path = Path(path)
    if not path.is_file():
        bundled = BUNDLED / "scenarios" / path.name
        if bundled.is_file() and path.parent == Path("."):
            path = bundled
        else:
            raise FileNotFoundError(f"scenario file not found: {path}")
    return parse_script(path.read_text(), str(path), path.parent)


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    time_s: float
    kind: str  # broadcast | receive | depleted | revived | report | refused | ingest | reconcile
    actor_kind: str  # beacon | user | hospital | authority
    actor: str
    ref: int | None = None  # seq of the causing event (receive -> broadcast, ingest -> report)
    detail: str = ""


@dataclass
class ScenarioResult:
    ledger: list
    contacts: dict  # user -> [ContactEvent]
    devices: dict
    store: AuthorityStore
    script: Script

    def count(self, kind: str, actor_kind: str | None = None) -> int:
        return sum(1 for e in self.ledger
                   if e.kind == kind and (actor_kind is None or e.actor_kind == actor_kind))

    def user_transmissions(self) -> int:
        return self.count("broadcast", "user")


def _beacon_identity(seed: int, name: str):
    h = hashlib.sha256(f"beacon|{seed}|{name}".encode()).digest()
    mac = bytes([(h[18] | 0x02) & 0xFE]) + h[19:24]  # locally administered, unicast
    return h[:18], mac


# Event priorities at equal times: energy bookkeeping and broadcasts first,
# then reports, then reconciliation.
_PRIO = {"broadcast": 0, "report": 1, "reconcile": 2}


def run_scenario(script: Script, model: RadioModel | None = None,
                 power: PowerChainConfig | None = None,
                 defaults: dict | None = None) -> ScenarioResult:
    """Run a parsed script.  ``defaults`` replaces settings the script leaves unset."""
    unknown = set(defaults or {}) - set(SETTINGS)
    if unknown:
        raise ScenarioError(f"unknown settings {sorted(unknown)}", None, script.source)
    s = {**script.settings, **(defaults or {}),
         **{k: script.settings[k] for k in script.explicit}}
    model = model or RadioModel()
    if s["sigma"] is not None:
        model = model.with_sigma(s["sigma"])
    power = power or PowerChainConfig()
    seed = int(s["seed"])
    rng = np.random.default_rng(seed)
    duration = s["duration"]
    tx_default = next(iter(script.beacons.values())).tx

    ledger: list[LedgerEvent] = []

    def emit(*args, **kw) -> int:
        ev = LedgerEvent(len(ledger), *args, **kw)
        ledger.append(ev)
        return ev.seq

    devices = {name: UserDevice(name, scan_on_s=s["scan_on"], scan_period_s=s["scan_period"])
               for name in script.users}
    store = AuthorityStore(bucket_s=s["bucket"])

    configs, energy, last_t, loads = {}, {}, {}, {}
    for b in script.beacons.values():
        dev_id, mac = _beacon_identity(seed, b.name)
        configs[b.name] = BeaconConfig(dev_id, mac, b.adv_ms, b.tx, int(s["epoch"]))
        energy[b.name] = EnergyState.initial(power, b.supercap_v, b.battery_mah)
        last_t[b.name] = 0.0
        loads[b.name] = consumption_current(power, b.adv_ms, b.tx)

    def advance_energy(b: BeaconSpec, t: float):
        profile = b.lighting or LightingProfile.constant(0.0)
        was_alive = energy[b.name].alive
        while last_t[b.name] < t:
            dt = min(s["energy_step"], t - last_t[b.name])
            energy[b.name] = step_energy(energy[b.name], power, profile.lux_at(last_t[b.name]),
                                         loads[b.name], dt)
            last_t[b.name] += dt
        if was_alive and not energy[b.name].alive:
            emit(t, "depleted", "beacon", b.name)
        elif not was_alive and energy[b.name].alive:
            emit(t, "revived", "beacon", b.name)

    queue: list = []
    n = 0
    for b in script.beacons.values():
        heapq.heappush(queue, (0.0, _PRIO["broadcast"], n, "broadcast", b.name)); n += 1
    reporters = set()
    scheduled_reconcile = set()
    for t, kind, user in sorted(script.actions):
        heapq.heappush(queue, (t, _PRIO[kind], n, kind, user)); n += 1
        (reporters if kind == "report" else scheduled_reconcile).add(user)
    for user in script.users:
        if user not in reporters and user not in scheduled_reconcile:
            heapq.heappush(queue, (duration, _PRIO["reconcile"], n, "reconcile", user)); n += 1

    contacts: dict = {u: [] for u in script.users}
    while queue:
        t, _, _, kind, name = heapq.heappop(queue)
        if kind == "broadcast":
            if t >= duration:
                continue
            b = script.beacons[name]
            advance_energy(b, t)
            payload = make_broadcast(configs[name], int(t), energy[name])
            if payload is not None:
                bseq = emit(t, "broadcast", "beacon", name, detail=payload.ephemeral_id.hex())
                for uname, spec in script.users.items():
                    ux, uy = spec.position(t)
                    dist = math.hypot(ux - b.x, uy - b.y)
                    dev = devices[uname]
                    before = len(dev.log)
                    user_scan_tick(dev, [(payload, dist)], model, b.tx, t, rng)
                    for rec in dev.log[before:]:
                        emit(t, "receive", "user", uname, ref=bseq, detail=f"{rec.rssi_dbm:.3f}")
            heapq.heappush(queue, (t + b.adv_ms / 1000.0, _PRIO["broadcast"], n, "broadcast", name))
            n += 1
        elif kind == "report":
            try:
                report = hospital_report(devices[name], t, s["retention"])
            except ReportRefused as exc:
                emit(t, "refused", "hospital", name, detail=str(exc))
                continue
            rseq = emit(t, "report", "hospital", name, detail=f"{len(report.records)} records")
            pub = store.ingest(report)
            emit(t, "ingest", "authority", "authority", ref=rseq, detail=f"version {pub.version}")
        elif kind == "reconcile":
            events = user_reconcile(devices[name], store.published(0), model, tx_default,
                                    s["d_thresh"], s["t_thresh"], s["window"], s["bucket"])
            contacts[name] = events
            emit(t, "reconcile", "user", name, detail=f"{len(events)} contact events")
    return ScenarioResult(ledger, contacts, devices, store, script)


def bundled_scenarios() -> list[Path]:
    return sorted((BUNDLED / "scenarios").glob("*.scn"))


def write_contacts(result: ScenarioResult, fh) -> None:
    fh.write("user,start_s,end_s,min_distance_m,n_matched_ids\n")
    for user in sorted(result.contacts):
        for e in result.contacts[user]:
            fh.write(f"{user},{e.window_start_s:g},{e.window_end_s:g},"
                     f"{e.min_estimated_distance_m:.6f},{len(e.matched_ids)}\n")


def write_ledger(result: ScenarioResult, fh) -> None:
    fh.write("seq,time_s,kind,actor_kind,actor,ref,detail\n")
    for e in result.ledger:
        ref = "" if e.ref is None else e.ref
        fh.write(f"{e.seq},{e.time_s:g},{e.kind},{e.actor_kind},{e.actor},{ref},{e.detail}\n")
