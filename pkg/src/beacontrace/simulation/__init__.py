from .accuracy import (AccuracyReport, AccuracyRow, DeploymentScenario, TrialResult,
                       accuracy_sweep, run_trial)
from .scenario import (ScenarioError, ScenarioResult, load_script, parse_script,
                       run_scenario)


def run_protocol_scenario(path, **kw) -> ScenarioResult:
    return run_scenario(load_script(path), **kw)


__all__ = [
    "AccuracyReport", "AccuracyRow", "DeploymentScenario", "TrialResult", "accuracy_sweep",
    "run_trial", "ScenarioError", "ScenarioResult", "load_script", "parse_script",
    "run_scenario", "run_protocol_scenario",
]
