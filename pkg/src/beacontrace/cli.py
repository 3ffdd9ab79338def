"""Command-line entry point.

CSV goes to stdout (or ``--out``); diagnostics and the effective config go
to stderr.  Exit codes: 0 ok, 1 internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import random
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config

log = logging.getLogger("beacontrace")



class InputError(Exception):
    pass


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _echo_config(cfg, sections):
    sub = type(cfg)({s: cfg.values[s] for s in sections})
    for line in sub.dump().splitlines():
        print(f"# {line}" if line else "#", file=sys.stderr)


def _parse_counts(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out or min(out) < 1:
        raise InputError(f"bad beacon counts {text!r}")
    return out


# -- subcommands ------------------------------------------------------------

def cmd_idgen(args, cfg):
    from .identity import (DEVICE_ID_LEN, encode_preimage, ephemeral_id, format_vector_line,
                           parse_hex)
    epoch = args.epoch if args.epoch is not None else cfg["identity"]["epoch_s"]
    with _output(args.out) as out:
        if args.vectors is not None:
            rng = random.Random(args.seed if args.seed is not None else cfg["simulation"]["seed"])
            for _ in range(args.vectors):
                dev = bytes(rng.getrandbits(8) for _ in range(DEVICE_ID_LEN))
                pre = encode_preimage(dev, rng.getrandbits(8), rng.randrange(2**40), epoch)
                out.write(format_vector_line(pre))
            return 0
        dev = parse_hex(args.device_id, DEVICE_ID_LEN, "device ID")
        pre = encode_preimage(dev, args.battery, args.timestamp, epoch)
        out.write(format_vector_line(pre))
        log.info("ephemeral id %s", ephemeral_id(pre).hex())
    return 0


def cmd_calibrate(args, cfg):
    from .radio import fit_calibration, format_offset_table, read_calibration_csv
    model = fit_calibration(read_calibration_csv(args.csv), cfg.radio_model())
    with _output(args.out) as out:
        out.write("[radio]\n")
        out.write(f"rss_at_1m_dbm = {model.rss_at_1m_dbm!r}\n")
        out.write(f"path_loss_exponent = {model.path_loss_exponent!r}\n")
        out.write(f"shadowing_sigma_db = {model.shadowing_sigma_db!r}\n")
        out.write(f"min_distance_m = {model.min_distance_m!r}\n")
        out.write(f"tx_offset_table = {format_offset_table(model.tx_offset_table)}\n")
    return 0


def _load_profile(token: str):
    from .energy import PROFILE_DIR, LightingProfile, read_profile_csv
    if token == "dark":
        return LightingProfile.constant(0.0, "dark"), "dark"
    if token.startswith("lux:"):
        return LightingProfile.constant(float(token[4:]), token), token
    p = Path(token)
    if not p.is_file():
        bundled = PROFILE_DIR / f"{token}.csv"
        if not bundled.is_file():
            raise InputError(f"lighting profile not found: {token}")
        p = bundled
    return read_profile_csv(p), p.name


def cmd_lifetime(args, cfg):
    from .energy import SOCIAL_PROFILES, predict_lifetime
    power = cfg.power_chain()
    tokens = args.profiles or list(SOCIAL_PROFILES)
    with _output(args.out) as out:
        out.write("location,lux_profile,lifetime_years,extension_pct\n")
        for token in tokens:
            profile, source = _load_profile(token)
            res = predict_lifetime(power, profile, args.adv, args.tx)
            if res.energy_neutral:
                out.write(f"{profile.name},{source},energy-neutral,inf\n")
            else:
                out.write(f"{profile.name},{source},{res.lifetime_years:.4f},{res.extension_pct:.2f}\n")
    return 0


def cmd_accuracy(args, cfg):
    from .kernels import BACKEND
    from .simulation import DeploymentScenario, accuracy_sweep
    sim = cfg["simulation"]
    seed = args.seed if args.seed is not None else sim["seed"]
    trials = args.trials if args.trials is not None else sim["trials"]
    if trials < 100:
        raise InputError("--trials must be >= 100")
    base = DeploymentScenario(width_m=sim["width_m"], height_m=sim["height_m"],
                              tx=args.tx if args.tx is not None else cfg["detection"]["tx_dbm"],
                              seed=seed, packets_per_beacon=sim["packets_per_beacon"],
                              sensitivity_dbm=cfg["protocol"]["sensitivity_dbm"])
    report = accuracy_sweep(base, cfg.radio_model(), _parse_counts(args.counts), trials)
    with _output(args.out) as out:
        report.write_csv(out)
    if len(report.rows) >= 2:
        rho = report.trend()
        verdict = "PASS" if rho <= -0.8 else "FAIL"
        print(f"# trend: spearman(n_beacons, mean_error) = {rho:.4f} ({verdict} at <= -0.8); "
              f"kernel={BACKEND}", file=sys.stderr)
    return 0


def cmd_scenario(args, cfg):
    from .simulation.scenario import load_script, run_scenario, write_contacts, write_ledger
    try:
        script = load_script(args.file)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    det, proto = cfg["detection"], cfg["protocol"]
    defaults = {"epoch": cfg["identity"]["epoch_s"], "d_thresh": det["d_thresh_m"],
                "t_thresh": det["t_thresh_s"], "window": det["window_s"],
                "bucket": proto["bucket_s"], "retention": proto["retention_s"]}
    if args.seed is not None:
        defaults["seed"] = args.seed
    result = run_scenario(script, cfg.radio_model(), cfg.power_chain(), defaults)
    with _output(args.out) as out:
        write_contacts(result, out)
    if args.ledger:
        with open(args.ledger, "w") as fh:
            write_ledger(result, fh)
    n_events = sum(len(v) for v in result.contacts.values())
    print(f"# {script.source}: {result.count('broadcast')} broadcasts, "
          f"{result.count('receive')} receptions, {n_events} contact events, "
          f"{result.user_transmissions()} user transmissions", file=sys.stderr)
    return 0


def cmd_serve(args, cfg):
    from .protocol import AuthorityStore
    from .service import AuthorityServer
    store = AuthorityStore(bucket_s=cfg["protocol"]["bucket_s"])
    server = AuthorityServer(store, args.credential, args.host, args.port)
    print(f"# authority listening on {server.url}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
    return 0


def cmd_submit(args, cfg):
    from .detection import read_scan_log
    from .protocol import UserDevice, hospital_report
    from .service import AuthorityClient
    with open(args.log) as fh:
        dev = UserDevice(args.label, read_scan_log(fh))
    clock = args.clock if args.clock is not None else max(r.timestamp_s for r in dev.log)
    report = hospital_report(dev, clock, cfg["protocol"]["retention_s"], args.report_id)
    reply = AuthorityClient(args.authority, args.credential).submit_report(report)
    print(f"version,duplicate\n{reply['version']},{str(reply['duplicate']).lower()}")
    return 0


def _fetch_published(args):
    from .protocol import read_snapshot
    from .service import AuthorityClient
    if args.authority:
        return AuthorityClient(args.authority).get_published(args.since)
    with open(args.published) as fh:
        return read_snapshot(fh)


def cmd_fetch(args, cfg):
    from .protocol import write_snapshot
    published = _fetch_published(args)
    print(f"# version {published.version}, {len(published.entries)} entries", file=sys.stderr)
    with _output(args.out) as out:
        write_snapshot(published, out)
    return 0


def cmd_reconcile(args, cfg):
    from .detection import read_scan_log, write_events
    from .protocol import UserDevice, user_reconcile
    with open(args.log) as fh:
        dev = UserDevice("local", read_scan_log(fh))
    det = cfg["detection"]
    events = user_reconcile(dev, _fetch_published(args), cfg.radio_model(), det["tx_dbm"],
                            det["d_thresh_m"], det["t_thresh_s"], det["window_s"],
                            cfg["protocol"]["bucket_s"])
    with _output(args.out) as out:
        write_events(events, out)
    return 0


SECTIONS = {
    "idgen": ["identity"], "calibrate": ["radio"], "lifetime": ["energy"],
    "accuracy": ["radio", "simulation"], "scenario": ["radio", "energy", "detection", "protocol"],
    "serve": ["protocol"], "submit": ["protocol"], "fetch": [],
    "reconcile": ["radio", "detection", "protocol"],
}


def _add_common(parser, default=None):
    # Accepted before or after the subcommand; the subcommand copies use
    # SUPPRESS so they never clobber a value given before it.
    parser.add_argument("--config", metavar="FILE", default=default,
                        help="INI file overriding module defaults")
    parser.add_argument("--seed", type=int, metavar="U64", default=default,
                        help="master RNG seed")
    parser.add_argument("--out", metavar="PATH", default=default,
                        help="write CSV here instead of stdout")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=False if default is None else default,
                        help="log diagnostics to stderr")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="beacontrace",
                                description="Beacon-infrastructure contact tracing toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(p)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("idgen", parents=[common], help="derive ephemeral IDs / test vectors")
    s.add_argument("--device-id", default="00" * 18, help="18-byte device ID, hex")
    s.add_argument("--battery", type=int, default=0, help="battery status byte 0..255")
    s.add_argument("--timestamp", type=int, default=0, help="UNIX seconds")
    s.add_argument("--epoch", type=int, help="rotation epoch in seconds")
    s.add_argument("--vectors", type=int, metavar="N", help="emit N random test vectors")
    s.set_defaults(func=cmd_idgen)

    s = sub.add_parser("calibrate", parents=[common], help="fit the path-loss model to measurements")
    s.add_argument("csv", help="CSV with header tx_dbm,distance_m,rss_dbm")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("lifetime", parents=[common], help="predict beacon lifetime per lighting profile")
    s.add_argument("profiles", nargs="*",
                   help="profile CSVs, bundled names, 'dark' or lux:<value> (default: bundled four)")
    s.add_argument("--adv", type=float, default=100.0, help="advertising interval, ms")
    s.add_argument("--tx", type=int, default=-8, help="TX power, dBm")
    s.set_defaults(func=cmd_lifetime)

    s = sub.add_parser("accuracy", parents=[common], help="Monte Carlo separation-error sweep")
    s.add_argument("--trials", type=int, help="trials per beacon count (default 10000)")
    s.add_argument("--counts", default="1-10", help="beacon counts, e.g. 1-10 or 1,2,5")
    s.add_argument("--tx", type=int, help="TX power, dBm")
    s.set_defaults(func=cmd_accuracy)

    s = sub.add_parser("scenario", parents=[common], help="run a protocol scenario script")
    s.add_argument("file", help="scenario file (bundled names like colocated.scn also work)")
    s.add_argument("--ledger", metavar="PATH", help="write the full event ledger CSV")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("serve", parents=[common], help="run the authority service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8731)
    s.add_argument("--credential", required=True, help="hospital bearer credential")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("submit", parents=[common], help="hospital: upload a positive user's log")
    s.add_argument("--authority", required=True, metavar="URL")
    s.add_argument("--credential", required=True)
    s.add_argument("--log", required=True, help="scan-log CSV")
    s.add_argument("--label", default="patient")
    s.add_argument("--report-id")
    s.add_argument("--clock", type=float, help="report time (default: last record)")
    s.set_defaults(func=cmd_submit)

    for name, helptext, fn in (("fetch", "download the published list as a snapshot CSV", cmd_fetch),
                               ("reconcile", "match a scan log against the published list",
                                cmd_reconcile)):
        s = sub.add_parser(name, parents=[common], help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--authority", metavar="URL")
        src.add_argument("--published", metavar="CSV", help="published-list snapshot file")
        s.add_argument("--since", type=int, default=0, help="delta since this version")
        if name == "reconcile":
            s.add_argument("--log", required=True, help="scan-log CSV")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    from .service import WireError
    try:
        cfg = load_config(args.config)
        print("# argv: " + " ".join(sys.argv[1:] if argv is None else argv), file=sys.stderr)
        _echo_config(cfg, SECTIONS[args.command])
        return args.func(args, cfg)
    except (InputError, ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WireError as exc:
        print(f"error: authority replied {exc}", file=sys.stderr)
        return 2 if 400 <= exc.status < 500 else 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
