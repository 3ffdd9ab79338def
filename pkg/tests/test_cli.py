import csv
import io
import re
import subprocess
import sys
import time

import numpy as np
import pytest

from beacontrace.cli import main
from beacontrace.detection import ScanRecord, write_scan_log
from beacontrace.radio import RadioModel, mean_rss, sample_rss
from oracles.sha256_ref import reference_id


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# -- idgen ------------------------------------------------------------------

def test_idgen_zero_inputs(capsys):
    code, out, err = run(capsys, "idgen")
    assert code == 0
    pre, eid = out.strip().split(",")
    assert pre == "00" * 27
    assert eid == reference_id(bytes(27)).hex() == "3cc4236e"
    assert "# [identity]" in err


def test_idgen_malformed_hex(capsys):
    code, out, err = run(capsys, "idgen", "--device-id", "zz")
    assert code == 2 and out == "" and "error" in err


def test_idgen_vectors_deterministic(capsys):
    _, a, _ = run(capsys, "idgen", "--vectors", "20", "--seed", "5")
    _, b, _ = run(capsys, "--seed", "5", "idgen", "--vectors", "20")
    assert a == b
    lines = a.splitlines()
    assert len(lines) == 20
    for line in lines:
        pre, eid = line.split(",")
        assert reference_id(bytes.fromhex(pre)).hex() == eid


def test_idgen_out_file(capsys, tmp_path):
    target = tmp_path / "v.txt"
    assert run(capsys, "idgen", "--vectors", "3", "--out", str(target))[0] == 0
    assert len(target.read_text().splitlines()) == 3


# -- lifetime ---------------------------------------------------------------

def test_lifetime_dark_and_bright(capsys):
    code, out, _ = run(capsys, "lifetime", "dark", "lux:5000")
    assert code == 0
    dark, bright = rows(out)
    assert float(dark["lifetime_years"]) == pytest.approx(2.2, abs=0.05)
    assert bright["lifetime_years"] == "energy-neutral"


def test_lifetime_bundled_four(capsys):
    code, out, _ = run(capsys, "lifetime")
    table = rows(out)
    assert code == 0 and len(table) == 4
    assert list(table[0]) == ["location", "lux_profile", "lifetime_years", "extension_pct"]
    for row in table:
        assert row["lifetime_years"] == "energy-neutral" or float(row["extension_pct"]) >= 70


def test_lifetime_csv_path(capsys, tmp_path):
    p = tmp_path / "lab.csv"
    p.write_text("time_of_day_s,lux\n0,0\n28800,300\n64800,0\n")
    code, out, _ = run(capsys, "lifetime", str(p))
    assert code == 0 and rows(out)[0]["location"] == "lab"


def test_lifetime_unknown_profile(capsys):
    assert run(capsys, "lifetime", "atlantis")[0] == 2


# -- accuracy ---------------------------------------------------------------

def test_accuracy_default_shape_and_trend(capsys):
    code, out, err = run(capsys, "accuracy", "--trials", "2000", "--seed", "1")
    assert code == 0
    table = rows(out)
    assert [int(r["n_beacons"]) for r in table] == list(range(1, 11))
    assert "PASS" in re.search(r"# trend: .*", err).group(0)


def test_accuracy_repeatable_and_ci_narrows(capsys):
    _, small, _ = run(capsys, "accuracy", "--trials", "100", "--counts", "1,5", "--seed", "2")
    _, again, _ = run(capsys, "accuracy", "--trials", "100", "--counts", "1,5", "--seed", "2")
    _, large, _ = run(capsys, "accuracy", "--trials", "10000", "--counts", "1,5", "--seed", "2")
    assert small == again
    for s, l in zip(rows(small), rows(large)):
        assert float(s["ci95_m"]) > float(l["ci95_m"])


def test_accuracy_rejects_few_trials(capsys):
    assert run(capsys, "accuracy", "--trials", "50")[0] == 2
    assert run(capsys, "accuracy", "--counts", "0-3")[0] == 2


# -- scenario ---------------------------------------------------------------

def test_scenario_colocated(capsys, tmp_path):
    ledger = tmp_path / "ledger.csv"
    code, out, err = run(capsys, "scenario", "colocated.scn", "--ledger", str(ledger))
    assert code == 0
    events = rows(out)
    assert len(events) == 1 and events[0]["user"] == "bob"
    assert "0 user transmissions" in err
    assert ledger.read_text().startswith("seq,time_s,kind")


def test_scenario_missing_file(capsys):
    assert run(capsys, "scenario", "does_not_exist.scn")[0] == 2


def test_scenario_parse_error(capsys, tmp_path):
    p = tmp_path / "bad.scn"
    p.write_text("beacon b at 0 0 tx -8\nwobble\n")
    code, _, err = run(capsys, "scenario", str(p))
    assert code == 2 and "bad.scn:2:" in err


# -- config -----------------------------------------------------------------

def test_config_override_changes_output(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[energy]\nbackup_battery_mah = 470\n")
    _, out, err = run(capsys, "lifetime", "dark", "--config", str(cfg))
    assert float(rows(out)[0]["lifetime_years"]) == pytest.approx(2 * 2.1974, abs=1e-3)
    assert "# backup_battery_mah = 470.0" in err


def test_config_unknown_key_rejected(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[radio]\nwarp_factor = 9\n")
    assert run(capsys, "lifetime", "--config", str(cfg))[0] == 2


def test_config_invalid_value_rejected(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[radio]\ntx_offset_table = -8:0,-2:20\n")
    assert run(capsys, "lifetime", "--config", str(cfg))[0] == 2


# -- calibrate --------------------------------------------------------------

def test_calibrate_emits_loadable_config(capsys, tmp_path):
    truth = RadioModel(rss_at_1m_dbm=-57.0, path_loss_exponent=2.4)
    lines = ["tx_dbm,distance_m,rss_dbm"]
    lines += [f"{tx},{d},{mean_rss(truth, tx, d)!r}" for tx in (-8, -2) for d in (0.5, 1, 2, 4)]
    meas = tmp_path / "m.csv"
    meas.write_text("\n".join(lines) + "\n")
    out_ini = tmp_path / "fit.ini"
    assert run(capsys, "calibrate", str(meas), "--out", str(out_ini))[0] == 0
    text = out_ini.read_text()
    assert re.search(r"path_loss_exponent = 2\.4(0000000000)?\d*", text)
    # the fitted file is itself a valid --config
    assert run(capsys, "lifetime", "dark", "--config", str(out_ini))[0] == 0


# -- authority round trip ---------------------------------------------------

def _scan_log(path, dist, seed):
    model, rng = RadioModel(), np.random.default_rng(seed)
    recs = [ScanRecord(float(t), bytes(6), bytes([k, 0, 0, t // 3600]),
                       sample_rss(model, -8, d, rng))
            for t in range(0, 1500, 2) for k, d in enumerate(dist)]
    with open(path, "w", newline="") as fh:
        write_scan_log(recs, fh)


def test_serve_submit_fetch_reconcile(tmp_path):
    _scan_log(tmp_path / "pos.csv", [2.0, 3.0, 4.0], 1)
    _scan_log(tmp_path / "me.csv", [2.3, 3.4, 3.7], 2)
    cli = [sys.executable, "-m", "beacontrace.cli"]
    server = subprocess.Popen(cli + ["serve", "--port", "0", "--credential", "tok"],
                              stderr=subprocess.PIPE, text=True)
    try:
        url = None
        deadline = time.time() + 10
        while url is None and time.time() < deadline:
            m = re.search(r"listening on (\S+)", server.stderr.readline())
            url = m and m.group(1)
        assert url

        def call(*args):
            return subprocess.run(cli + list(args), capture_output=True, text=True)

        bad = call("submit", "--authority", url, "--credential", "nope",
                   "--log", str(tmp_path / "pos.csv"))
        assert bad.returncode == 2
        first = call("submit", "--authority", url, "--credential", "tok",
                     "--log", str(tmp_path / "pos.csv"), "--report-id", "r1")
        again = call("submit", "--authority", url, "--credential", "tok",
                     "--log", str(tmp_path / "pos.csv"), "--report-id", "r1")
        assert first.stdout.splitlines()[1] == "1,false"
        assert again.stdout.splitlines()[1] == "1,true"

        snap = tmp_path / "pub.csv"
        assert call("fetch", "--authority", url, "--out", str(snap)).returncode == 0
        assert snap.read_text().startswith("ephemeral_id_hex,")
        live = call("reconcile", "--authority", url, "--log", str(tmp_path / "me.csv"))
        offline = call("reconcile", "--published", str(snap), "--log", str(tmp_path / "me.csv"))
        assert live.returncode == offline.returncode == 0
        assert live.stdout == offline.stdout
        assert len(rows(live.stdout)) == 1
    finally:
        server.terminate()
        server.wait(timeout=10)


def test_help_lists_global_flags(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--out"):
        assert flag in out
