"""Benchmark harness: exhaustive oracle, QoS arithmetic and multi-seed experiments."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from controller import Controller, ControllerSettings, control_loop
from simulator.client import SimulatedClient
from simulator.scenario import Scenario, evaluate_grid, evaluate_true, load_scenario
from tuning.sampler import Strategy
from utils.errors import OracleInfeasibleError, UndefinedQoSError
from utils.file_utils import read_csv, write_csv, write_jsonl
from utils.models import Bound, ControllerEvent, EventKind, Goal, KnobSetting, Measurement, OptimizationSpec

logger = logging.getLogger(__name__)

WARM_START_SEED_OFFSET = 10_000

# comparators that apply one fixed knob per phase without sampling
DEFAULT_STRATEGY = "default"
ORACLE_STRATEGY = "oracle"
PSEUDO_STRATEGIES = (DEFAULT_STRATEGY, ORACLE_STRATEGY)

TRIAL_COLUMNS = [
    "scenario", "strategy", "seed", "phase", "chosen_knob", "feasible",
    "e_obj_post", "e_obj_incl_sampling", "violation_rate",
]
SUMMARY_COLUMNS = ["scenario", "strategy", "mean_qos_post", "mean_qos_incl", "violation_rate", "n_trials"]


# ---------------------------------------------------------------- oracle + QoS

class Oracle(NamedTuple):
    knob: KnobSetting
    value: float


def feasible_mask(spec: OptimizationSpec, c: np.ndarray) -> np.ndarray:
    """strict feasibility of every row of c (one column per constraint)"""
    c = np.asarray(c, dtype=float).reshape(len(c), len(spec.constraints))
    ok = np.ones(len(c), dtype=bool)
    for j, cs in enumerate(spec.constraints):
        ok &= c[:, j] < cs.set_point if cs.direction == Bound.below else c[:, j] > cs.set_point
    return ok


def brute_force_oracle(scenario: Scenario, phase_idx: int = 0, spec: Optional[OptimizationSpec] = None) -> Oracle:
    """Feasible-optimal knob on the noiseless surfaces; first in lexicographic order on ties."""
    spec = spec or scenario.optimization_spec()
    o, c = evaluate_grid(scenario, phase_idx)
    ok = feasible_mask(spec, c)
    if not ok.any():
        raise OracleInfeasibleError(f"no setting satisfies the constraints in phase {phase_idx}")
    score = np.where(ok, o if spec.maximize else -o, -np.inf)
    best = int(np.argmax(score))
    return Oracle(scenario.space.setting_at(best), float(o[best]))


def qos(expected_ctrl: float, expected_oracle: float, direction: Union[Goal, str]) -> float:
    """Percent of the oracle's expected objective; reciprocal ratio when minimizing."""
    if expected_oracle == 0:
        raise UndefinedQoSError("oracle expectation is zero")
    if Goal(direction) == Goal.maximize:
        return expected_ctrl / expected_oracle * 100.0
    if expected_ctrl == 0:
        raise UndefinedQoSError("controller expectation is zero")
    return expected_oracle / expected_ctrl * 100.0


# ---------------------------------------------------------------- records

class PhaseOutcome(BaseModel):
    """How one trial did in one true phase of the workload."""
    phase: int
    chosen_knob: Optional[KnobSetting] = None
    feasible: bool = False
    # the controller flagged its choice as the least-violating fallback
    infeasible_fallback: bool = False
    e_obj_post: float = math.nan
    e_obj_incl_sampling: float = math.nan
    violation_rate: float = math.nan


class TrialRecord(BaseModel):
    scenario: str
    strategy: str
    seed: int
    knobs: List[KnobSetting] = Field(default_factory=list)
    o_true: List[float] = Field(default_factory=list)
    c_true: List[List[float]] = Field(default_factory=list)
    post_choice: List[bool] = Field(default_factory=list)
    phases: List[PhaseOutcome] = Field(default_factory=list)
    first_phase_history: List[Measurement] = Field(default_factory=list)
    events: List[ControllerEvent] = Field(default_factory=list)
    error: Optional[str] = None


class QoSReport(BaseModel):
    scenario: str
    strategy: str
    mean_qos_post: float
    mean_qos_incl: float
    violation_rate: float
    n_trials: int
    per_seed_qos: List[float] = Field(default_factory=list)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: str
    strategies: List[str] = Field(default_factory=lambda: [Strategy.hybrid.value, Strategy.random.value], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: list(range(40)), min_length=1)
    n_rounds: int = Field(default=12, ge=2)
    init_rounds: Optional[int] = Field(default=None, ge=1)
    delta: float = Field(default=0.10, gt=0, lt=1)
    consecutive: int = Field(default=2, ge=1)
    noise_cv: Optional[float] = Field(default=None, ge=0)
    warm_start: bool = False
    workers: int = Field(default=4, ge=1)
    events_dir: Optional[Path] = None

    @field_validator("strategies")
    @classmethod
    def _known(cls, v: List[str]) -> List[str]:
        known = [s.value for s in Strategy] + list(PSEUDO_STRATEGIES)
        for name in v:
            if name not in known:
                raise ValueError(f"unknown strategy '{name}' (known: {', '.join(known)})")
        return v

    def controller_settings(self, strategy: str, seed: int) -> ControllerSettings:
        return ControllerSettings(
            n_rounds=self.n_rounds, init_rounds=self.init_rounds, strategy=Strategy(strategy),
            delta=self.delta, consecutive=self.consecutive, seed=seed,
        )


@dataclass
class ExperimentResult:
    trials: List[TrialRecord]
    rows: List[dict]
    reports: List[QoSReport]
    out_files: List[Path] = field(default_factory=list)


# ---------------------------------------------------------------- trials

def scenario_id(name_or_path: str) -> str:
    return Path(name_or_path).stem


def _true_values(scenario: Scenario, knobs: Sequence[KnobSetting]) -> Tuple[List[float], List[List[float]]]:
    cache: Dict[Tuple[int, KnobSetting], Tuple[float, List[float]]] = {}
    o_true, c_true = [], []
    for t, knob in enumerate(knobs):
        key = (scenario.phase_at(t), knob)
        if key not in cache:
            cache[key] = evaluate_true(scenario, *key)
        o_true.append(cache[key][0])
        c_true.append(cache[key][1])
    return o_true, c_true


def _phase_outcomes(
    scenario: Scenario,
    record: TrialRecord,
    chosen: Sequence[Tuple[int, KnobSetting, bool]],
) -> List[PhaseOutcome]:
    spec = scenario.optimization_spec()
    ok = feasible_mask(spec, np.array(record.c_true).reshape(len(record.c_true), len(spec.constraints)))
    o = np.array(record.o_true)
    post = np.array(record.post_choice, dtype=bool)
    outcomes = []
    for p, (start, end) in enumerate(scenario.phase_bounds()):
        in_phase = np.zeros(len(o), dtype=bool)
        in_phase[start:min(end, len(o))] = True
        window = in_phase & post
        # the choice in effect when the phase ended
        in_effect = [(k, flag) for t, k, flag in chosen if t < end]
        outcome = PhaseOutcome(phase=p)
        if in_effect:
            knob, flag = in_effect[-1]
            _, c_knob = evaluate_true(scenario, p, knob)
            outcome = PhaseOutcome(
                phase=p, chosen_knob=knob, infeasible_fallback=flag,
                feasible=bool(feasible_mask(spec, np.array([c_knob]))[0]),
            )
        if in_phase.any():
            outcome.e_obj_incl_sampling = float(o[in_phase].mean())
        if window.any():
            outcome.e_obj_post = float(o[window].mean())
            outcome.violation_rate = float((~ok[window]).mean())
        outcomes.append(outcome)
    return outcomes


def run_trial(
    scenario: Scenario,
    name: str,
    strategy: str,
    seed: int,
    config: ExperimentConfig,
    oracles: Sequence[Oracle],
    warm_start: Optional[Sequence[Measurement]] = None,
) -> TrialRecord:
    """One end-to-end run of the workload under one strategy."""
    record = TrialRecord(scenario=name, strategy=strategy, seed=seed)
    total = scenario.total_intervals
    if strategy in PSEUDO_STRATEGIES:
        if strategy == DEFAULT_STRATEGY:
            per_phase = [scenario.space.default_setting] * len(scenario.phases)
        else:
            per_phase = [oracle.knob for oracle in oracles]
        record.knobs = [per_phase[scenario.phase_at(t)] for t in range(total)]
        record.post_choice = [True] * total
        chosen = [(start, per_phase[p], False) for p, (start, _) in enumerate(scenario.phase_bounds())]
    else:
        controller = Controller(config.controller_settings(strategy, seed), f"{name}.{strategy}.{seed}", warm_start)
        client = SimulatedClient(scenario, session_seed=seed)
        events = control_loop(controller, client)
        record.knobs = [k for _, k in client.timeline]
        monitored = {e.interval_index for e in events if e.kind == EventKind.monitor_tick}
        record.post_choice = [t in monitored for t in range(len(record.knobs))]
        chosen = [(e.interval_index, e.knob, e.infeasible) for e in events if e.kind == EventKind.knob_chosen]
        record.events = events
        if controller.phase_histories:
            record.first_phase_history = list(controller.phase_histories[0])
        if len(record.knobs) != total:
            record.error = f"session ended after {len(record.knobs)} of {total} intervals"
            logger.error("trial %s/%s/%d: %s", name, strategy, seed, record.error)
    record.o_true, record.c_true = _true_values(scenario, record.knobs)
    record.phases = _phase_outcomes(scenario, record, chosen)
    return record


def _guarded_trial(scenario, name, strategy, seed, config, oracles) -> TrialRecord:
    try:
        warm = None
        if config.warm_start and strategy not in PSEUDO_STRATEGIES:
            prior = run_trial(scenario, name, strategy, seed + WARM_START_SEED_OFFSET, config, oracles)
            warm = prior.first_phase_history
        return run_trial(scenario, name, strategy, seed, config, oracles, warm)
    except Exception as e:
        logger.exception("trial %s/%s/%d aborted", name, strategy, seed)
        return TrialRecord(
            scenario=name, strategy=strategy, seed=seed, error=f"{type(e).__name__}: {e}",
            phases=[PhaseOutcome(phase=p) for p in range(len(scenario.phases))],
        )


# ---------------------------------------------------------------- CSV + summary

def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6f}"


def _knob_text(knob: Optional[KnobSetting]) -> str:
    return "" if knob is None else " ".join(str(i) for i in knob)


def trial_rows(record: TrialRecord) -> List[dict]:
    return [
        {
            "scenario": record.scenario,
            "strategy": record.strategy,
            "seed": record.seed,
            "phase": p.phase,
            "chosen_knob": p.chosen_knob,
            "feasible": p.feasible,
            "e_obj_post": p.e_obj_post,
            "e_obj_incl_sampling": p.e_obj_incl_sampling,
            "violation_rate": p.violation_rate,
        }
        for p in record.phases
    ]


def _csv_row(row: dict) -> dict:
    out = dict(row)
    out["chosen_knob"] = _knob_text(row["chosen_knob"])
    out["feasible"] = "true" if row["feasible"] else "false"
    for key in ("e_obj_post", "e_obj_incl_sampling", "violation_rate"):
        out[key] = _fmt(row[key])
    return out


def parse_trial_row(raw: Dict[str, str]) -> dict:
    knob = raw["chosen_knob"].strip()
    return {
        "scenario": raw["scenario"],
        "strategy": raw["strategy"],
        "seed": int(raw["seed"]),
        "phase": int(raw["phase"]),
        "chosen_knob": tuple(int(i) for i in knob.split()) if knob else None,
        "feasible": raw["feasible"] == "true",
        "e_obj_post": float(raw["e_obj_post"]),
        "e_obj_incl_sampling": float(raw["e_obj_incl_sampling"]),
        "violation_rate": float(raw["violation_rate"]),
    }


def _mean(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.nan


def summarize(
    rows: Sequence[dict],
    oracles: Dict[str, Sequence[Oracle]],
    directions: Dict[str, Goal],
) -> List[QoSReport]:
    """One QoSReport per (scenario, strategy), in first-seen order.

    QoS is averaged over rows whose chosen knob is truly feasible.
    """
    groups: Dict[Tuple[str, str], List[dict]] = {}
    for row in rows:
        groups.setdefault((row["scenario"], row["strategy"]), []).append(row)

    reports = []
    for (name, strategy), group in groups.items():
        post, incl = [], []
        for row in group:
            if not row["feasible"]:
                continue
            oracle_value = oracles[name][row["phase"]].value
            try:
                post.append(qos(row["e_obj_post"], oracle_value, directions[name]))
                incl.append(qos(row["e_obj_incl_sampling"], oracle_value, directions[name]))
            except UndefinedQoSError as e:
                logger.warning("%s/%s seed %d: %s", name, strategy, row["seed"], e)
        reports.append(QoSReport(
            scenario=name,
            strategy=strategy,
            mean_qos_post=_mean(post),
            mean_qos_incl=_mean(incl),
            violation_rate=_mean([row["violation_rate"] for row in group]),
            n_trials=len({row["seed"] for row in group}),
            per_seed_qos=post,
        ))
    return reports


def _summary_row(report: QoSReport) -> dict:
    return {
        "scenario": report.scenario,
        "strategy": report.strategy,
        "mean_qos_post": _fmt(report.mean_qos_post),
        "mean_qos_incl": _fmt(report.mean_qos_incl),
        "violation_rate": _fmt(report.violation_rate),
        "n_trials": report.n_trials,
    }


def write_summary(reports: Sequence[QoSReport], out_dir: Union[str, Path]) -> Path:
    return write_csv(Path(out_dir) / "summary.csv", SUMMARY_COLUMNS, [_summary_row(r) for r in reports])


def write_results(rows: Sequence[dict], reports: Sequence[QoSReport], out_dir: Union[str, Path]) -> List[Path]:
    trials = write_csv(Path(out_dir) / "trials.csv", TRIAL_COLUMNS, [_csv_row(r) for r in rows])
    return [trials, write_summary(reports, out_dir)]


def phase_oracles(scenario: Scenario) -> List[Oracle]:
    return [brute_force_oracle(scenario, p) for p in range(len(scenario.phases))]


def qos_from_csv(trials_csv: Union[str, Path]) -> List[QoSReport]:
    """Recompute the summary from a trials.csv, loading each scenario for its oracle."""
    rows = [parse_trial_row(raw) for raw in read_csv(trials_csv)]
    oracles, directions = {}, {}
    for name in dict.fromkeys(row["scenario"] for row in rows):
        scenario = load_scenario(name)
        oracles[name] = phase_oracles(scenario)
        directions[name] = scenario.optimization_spec().objective.direction
    return summarize(rows, oracles, directions)


# ---------------------------------------------------------------- experiments

def run_experiment(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> ExperimentResult:
    """Every (strategy, seed) pair end to end; rows come back in submission order."""
    scenario = load_scenario(config.scenario)
    if config.noise_cv is not None:
        scenario = scenario.model_copy(update={"noise_cv": config.noise_cv})
    name = scenario_id(config.scenario)
    oracles = phase_oracles(scenario)
    logger.info("%s: %d settings, oracle %s", name, scenario.space.size,
                ", ".join(f"{o.knob}={o.value:.4g}" for o in oracles))

    jobs = [(strategy, seed) for strategy in config.strategies for seed in config.seeds]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            pool.submit(_guarded_trial, scenario, name, strategy, seed, config, oracles)
            for strategy, seed in jobs
        ]
        trials = [f.result() for f in futures]

    if config.events_dir is not None:
        for t in trials:
            if t.events:
                write_jsonl(Path(config.events_dir) / f"{t.scenario}.{t.strategy}.{t.seed}.jsonl", t.events)

    rows = [row for t in trials for row in trial_rows(t)]
    direction = scenario.optimization_spec().objective.direction
    reports = summarize(rows, {name: oracles}, {name: direction})
    for r in reports:
        logger.info("%s/%s: QoS %.2f%% (incl. sampling %.2f%%), violation rate %.3f over %d trials",
                    r.scenario, r.strategy, r.mean_qos_post, r.mean_qos_incl, r.violation_rate, r.n_trials)
    result = ExperimentResult(trials=trials, rows=rows, reports=reports)
    if out_dir is not None:
        result.out_files = write_results(rows, reports, out_dir)
    return result
