import io
import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from beacontrace.radio import RadioModel
from beacontrace.simulation import (DeploymentScenario, ScenarioError, accuracy_sweep,
                                    load_script, parse_script, run_protocol_scenario,
                                    run_scenario, run_trial)
from beacontrace.simulation.accuracy import summarize
from beacontrace.simulation.scenario import bundled_scenarios, write_contacts, write_ledger

QUIET = RadioModel(shadowing_sigma_db=0.0)


# -- accuracy experiment ----------------------------------------------------

def test_equidistant_beacon_blind_spot():
    sc = DeploymentScenario(n_beacons=1, beacon_positions=((5, 0),),
                            receiver_positions=((3, 5), (7, 5)))
    res = run_trial(sc, QUIET)
    assert res.estimated_distance_m == pytest.approx(0.0, abs=1e-12)
    assert res.true_distance_m == pytest.approx(4.0)
    assert res.abs_error_m == pytest.approx(4.0)


def test_collinear_exact_case():
    sc = DeploymentScenario(n_beacons=1, beacon_positions=((0, 0),),
                            receiver_positions=((1, 0), (4, 0)))
    res = run_trial(sc, QUIET)
    assert res.estimated_distance_m == pytest.approx(3.0, rel=1e-12)
    assert res.abs_error_m == pytest.approx(0.0, abs=1e-12)


def test_trial_deterministic(model):
    sc = DeploymentScenario(n_beacons=4, seed=123)
    runs = {run_trial(sc, model, trial=7) for _ in range(5)}
    assert len(runs) == 1
    assert run_trial(sc, model, 8) != run_trial(sc, model, 7)


def test_sweep_reproducible(model):
    base = DeploymentScenario(seed=99)
    a = accuracy_sweep(base, model, range(1, 4), trials=500)
    b = accuracy_sweep(base, model, range(1, 4), trials=500)
    assert a == b


def test_counts_do_not_perturb_each_other(model):
    base = DeploymentScenario(seed=3)
    full = accuracy_sweep(base, model, [2, 5, 7], trials=300)
    alone = accuracy_sweep(base, model, [5], trials=300)
    assert full.rows[1] == alone.rows[0]


def test_excluded_plus_included_is_total():
    # A harsh floor produces no-estimate trials.
    model = RadioModel()
    base = DeploymentScenario(sensitivity_dbm=-75.0, seed=1)
    report = accuracy_sweep(base, model, range(1, 6), trials=400)
    assert any(r.excluded > 0 for r in report.rows)
    for r in report.rows:
        assert r.trials == 400 and 0 <= r.excluded <= 400


def test_summarize_ci_formula():
    errors = np.array([1.0, 2.0, np.nan, 4.0, 7.0])
    row = summarize(3, errors)
    ok = np.array([1.0, 2.0, 4.0, 7.0])
    assert row.excluded == 1 and row.trials == 5
    assert row.mean_error_m == pytest.approx(3.5)
    assert row.ci95_m == pytest.approx(1.96 * np.std(ok, ddof=1) / 2.0)


def test_ci_shrinks_with_root_trials(model):
    base = DeploymentScenario(seed=11)
    small = accuracy_sweep(base, model, [1, 5, 10], trials=2500)
    large = accuracy_sweep(base, model, [1, 5, 10], trials=10_000)
    for s, l in zip(small.rows, large.rows):
        assert s.ci95_m / l.ci95_m == pytest.approx(2.0, rel=0.2)


def test_noiseless_geometric_bias_is_nonzero():
    report = accuracy_sweep(DeploymentScenario(seed=2), QUIET, [1, 3, 10], trials=1000)
    for r in report.rows:
        assert r.mean_error_m > 0
    # Noiseless estimate never exceeds the true separation (triangle inequality).
    sc = DeploymentScenario(n_beacons=3, seed=2)
    for t in range(200):
        res = run_trial(sc, QUIET, t)
        assert res.estimated_distance_m <= res.true_distance_m + 1e-9


def test_more_beacons_lower_error(model):
    report = accuracy_sweep(DeploymentScenario(seed=5), model, [1, 10], trials=2000)
    assert report.rows[1].mean_error_m <= report.rows[0].mean_error_m


def test_sweep_validation(model):
    with pytest.raises(ValueError):
        accuracy_sweep(DeploymentScenario(), model, trials=99)
    with pytest.raises(ValueError):
        DeploymentScenario(beacon_positions=((11, 0),))
    with pytest.raises(ValueError):
        run_trial(DeploymentScenario(n_receivers=3), model)


def test_report_csv(model):
    report = accuracy_sweep(DeploymentScenario(), model, [1, 2], trials=100)
    buf = io.StringIO()
    report.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "n_beacons,mean_error_m,ci95_m,trials,excluded"
    assert len(lines) == 3


# -- scenario scripts -------------------------------------------------------

def test_bundled_ground_truth():
    assert len(run_protocol_scenario("colocated.scn").contacts["bob"]) == 1
    assert run_protocol_scenario("distant.scn").contacts["bob"] == []


def test_passby_only_lingering_user_flagged():
    res = run_protocol_scenario("passby.scn")
    assert len(res.contacts["dave"]) == 1
    assert res.contacts["carol"] == []


def test_zero_user_emissions_everywhere():
    paths = bundled_scenarios()
    assert len(paths) >= 4
    for p in paths:
        res = run_protocol_scenario(p)
        assert res.user_transmissions() == 0
        assert all(e.actor_kind == "beacon" for e in res.ledger if e.kind == "broadcast")


def test_depleted_beacon_goes_silent():
    res = run_protocol_scenario("depleted.scn")
    depleted = [e for e in res.ledger if e.kind == "depleted" and e.actor == "b3"]
    assert len(depleted) == 1
    cut = depleted[0].seq
    later = [e for e in res.ledger if e.kind == "broadcast" and e.actor == "b3" and e.seq > cut]
    assert later == []
    assert any(e.kind == "broadcast" and e.actor == "b1" and e.seq > cut for e in res.ledger)


def test_ledger_completeness():
    res = run_protocol_scenario("colocated.scn")
    seqs = [e.seq for e in res.ledger]
    assert seqs == list(range(len(seqs)))
    by_seq = {e.seq: e for e in res.ledger}
    receives = [e for e in res.ledger if e.kind == "receive"]
    for e in receives:
        src = by_seq[e.ref]
        assert src.kind == "broadcast" and src.time_s == e.time_s
    # every logged record has exactly one receive event
    per_user = Counter(e.actor for e in receives)
    assert per_user == {u: len(d.log) for u, d in res.devices.items()}
    # no (broadcast, user) pair received twice
    assert len({(e.ref, e.actor) for e in receives}) == len(receives)
    for e in res.ledger:
        if e.kind == "ingest":
            assert by_seq[e.ref].kind == "report"
    assert res.count("report") == res.count("ingest") == 1
    assert Counter(e.actor for e in res.ledger if e.kind == "reconcile") == {"bob": 1}


def test_scenario_deterministic():
    a = run_protocol_scenario("passby.scn")
    b = run_protocol_scenario("passby.scn")
    assert a.ledger == b.ledger and a.contacts == b.contacts


SOUND = """
set duration {end}
set seed 4
set sigma 0
beacon b1 at 0 5 tx -8
beacon b2 at 0 5.01 tx -8
user a at 2 5
user b path {x},5@0 {x},5@{dur} 9.5,5@{dur1}
at {end} report a
"""


@pytest.mark.parametrize("sep", [0.5, 1.8, 2.5, 4.0])
@pytest.mark.parametrize("dur", [300, 1200])
def test_noiseless_soundness_and_completeness(sep, dur):
    # Beacons on the line through both users: the estimate equals the true separation.
    end = dur + 600
    script = parse_script(SOUND.format(x=2 + sep, dur=dur, dur1=dur + 1, end=end))
    res = run_scenario(script)
    expected = sep <= 2.0 and dur >= 600
    assert (len(res.contacts["b"]) > 0) == expected


def test_refused_report_is_logged():
    script = parse_script("set duration 100\nbeacon b at 0 0 tx -8\n"
                          "user far at 500 500\nuser other at 1 1\nat 50 report far\n")
    res = run_scenario(script)
    assert res.count("refused") == 1 and res.count("ingest") == 0


def test_defaults_do_not_override_explicit_settings():
    script = parse_script("set seed 7\nset duration 30\nbeacon b at 0 0 tx -8\nuser u at 1 0\n")
    res = run_scenario(script, defaults={"seed": 99, "duration": 20})
    assert res.ledger[-1].time_s == 30
    assert res.ledger == run_scenario(script).ledger


@pytest.mark.parametrize("text,line", [
    ("beacon b at 0 0 tx -8\nuser u at 1\n", 2),
    ("beacon b at 0 0 tx -8\nfrobnicate\n", 2),
    ("set nonsense 3\n", 1),
    ("beacon b at 0 0 tx -8\nbeacon b at 1 1 tx -8\n", 2),
    ("beacon b at zero 0 tx -8\n", 1),
    ("beacon b at 0 0 tx -8\nuser u path 0,0@5 1,1@2\n", 2),
    ("beacon b at 0 0 tx -8\nat 10 report ghost\n", 2),
    ("beacon b at 0 0 tx -8\nlighting b /no/such/file.csv\n", 2),
    ("beacon b at 0 0 tx -8 adv 5\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ScenarioError) as exc:
        parse_script(text)
    assert exc.value.lineno == line
    assert f":{line}:" in str(exc.value)


def test_script_without_beacons():
    with pytest.raises(ScenarioError):
        parse_script("user u at 0 0\n")


def test_missing_script():
    with pytest.raises(FileNotFoundError):
        load_script("no_such_scenario.scn")


def test_writers():
    res = run_protocol_scenario("colocated.scn")
    buf = io.StringIO()
    write_contacts(res, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "user,start_s,end_s,min_distance_m,n_matched_ids"
    assert len(lines) == 2 and lines[1].startswith("bob,")
    buf = io.StringIO()
    write_ledger(res, buf)
    assert len(buf.getvalue().splitlines()) == len(res.ledger) + 1
