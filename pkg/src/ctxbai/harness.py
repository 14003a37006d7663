"""Scenario registry, seeded replication and report files.

Trial ``k`` of a scenario always uses ``SeededStream(scenario.seed, k)``,
so results do not depend on how trials are spread over worker processes.
Quantiles use the nearest-rank definition on the sorted sample.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cts import CtsConfig, run_cts
from .gaussian import run_alpha_elimination
from .model import (
    RNG_ALGORITHM,
    BernoulliInstance,
    GaussianTwoArmInstance,
    SeededStream,
    collapse_context,
    instance_from_dict,
)

ALGORITHMS = ("cts", "cts_no_context", "alpha_elim", "alpha_elim_no_context")
SUMMARY_FIELDS = (
    "name", "trials", "delta", "error_rate", "tau_mean",
    "tau_p25", "tau_p50", "tau_p75", "truncated",
)
TRIAL_FIELDS = ("trial", "seed", "tau", "recommended", "correct", "truncated")
ZTRACE_FIELDS = ("t", "z_p25", "z_p50", "z_p75")


@dataclass(frozen=True)
class Scenario:
    name: str
    instance: BernoulliInstance | GaussianTwoArmInstance
    algorithm: str
    delta: float = 0.05
    trials: int = 1000
    seed: int = 0
    update_period: int = 10
    max_rounds: int = 10_000_000
    ztrace_horizon: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        gaussian = isinstance(self.instance, GaussianTwoArmInstance)
        if gaussian != self.algorithm.startswith("alpha_elim"):
            raise ValueError(f"{self.algorithm} does not apply to this instance kind")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.ztrace_horizon is not None and gaussian:
            raise ValueError("Z traces are only available for CTS scenarios")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["instance"] = self.instance.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        doc = dict(doc)
        doc["instance"] = instance_from_dict(doc["instance"])
        return cls(**doc)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    tau: int
    recommended: int
    correct: bool
    truncated: bool
    z: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ScenarioSummary:
    name: str
    trials: int
    delta: float
    error_rate: float
    tau_mean: float
    tau_p25: int
    tau_p50: int
    tau_p75: int
    truncated: int
    wall_clock: float = 0.0


@dataclass
class AggregateReport:
    summaries: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    ztraces: dict = field(default_factory=dict)
    scenarios: dict = field(default_factory=dict)

    def merge(self, other: "AggregateReport") -> "AggregateReport":
        self.summaries.extend(other.summaries)
        self.records.update(other.records)
        self.ztraces.update(other.ztraces)
        self.scenarios.update(other.scenarios)
        return self


def nearest_rank(sorted_values, q: float):
    """Nearest-rank quantile of an already sorted sample."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(q * n))
    return sorted_values[min(rank, n) - 1]


def run_trial(scenario: Scenario, k: int) -> TrialRecord:
    stream = SeededStream(scenario.seed, k)
    inst = scenario.instance
    if scenario.algorithm.startswith("cts"):
        target = collapse_context(inst) if scenario.algorithm == "cts_no_context" else inst
        tracing = scenario.ztrace_horizon is not None
        config = CtsConfig(
            delta=scenario.delta,
            update_period=scenario.update_period,
            max_rounds=scenario.ztrace_horizon if tracing else scenario.max_rounds,
            seed=scenario.seed,
            stopping=not tracing,
            record_trace=tracing,
        )
        tr = run_cts(target, config, stream)
        return TrialRecord(
            k, scenario.seed, tr.tau, tr.recommended, tr.recommended == inst.best_arm,
            tr.truncated, tr.z if tracing else None,
        )
    res = run_alpha_elimination(
        inst, scenario.delta, max_rounds=scenario.max_rounds,
        use_context=scenario.algorithm == "alpha_elim", stream=stream,
    )
    return TrialRecord(
        k, scenario.seed, res.tau, res.recommended, res.recommended == inst.best_arm, res.truncated
    )


def _run_block(args):
    scenario, ks = args
    return [run_trial(scenario, k) for k in ks]


def summarize(scenario: Scenario, records: list) -> ScenarioSummary:
    taus = sorted(r.tau for r in records)
    completed = [r for r in records if not r.truncated]
    wrong = sum(not r.correct for r in completed)
    return ScenarioSummary(
        name=scenario.name,
        trials=len(records),
        delta=scenario.delta,
        error_rate=wrong / len(completed) if completed else math.nan,
        tau_mean=float(np.mean(taus)),
        tau_p25=int(nearest_rank(taus, 0.25)),
        tau_p50=int(nearest_rank(taus, 0.50)),
        tau_p75=int(nearest_rank(taus, 0.75)),
        truncated=sum(r.truncated for r in records),
    )


def ztrace_bands(records: list) -> np.ndarray:
    """Per-round quartiles of Z(t) across trials, shape ``(T, 4)``: t, p25, p50, p75."""
    z = np.vstack([r.z for r in records])
    z.sort(axis=0)
    n = z.shape[0]
    rows = [max(1, math.ceil(q * n)) - 1 for q in (0.25, 0.5, 0.75)]
    t = np.arange(1, z.shape[1] + 1, dtype=float)
    return np.column_stack([t, z[rows[0]], z[rows[1]], z[rows[2]]])


def run_scenario(scenario: Scenario, jobs: int = 1) -> AggregateReport:
    """Run every trial of ``scenario`` and aggregate in trial order."""
    start = time.perf_counter()
    ks = list(range(scenario.trials))
    if jobs <= 1 or scenario.trials == 1:
        records = _run_block((scenario, ks))
    else:
        blocks = [(scenario, ks[i::jobs]) for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = [r for block in pool.map(_run_block, blocks) for r in block]
        records.sort(key=lambda r: r.trial)
    summary = summarize(scenario, records)
    summary.wall_clock = time.perf_counter() - start
    report = AggregateReport([summary], {scenario.name: records}, {}, {scenario.name: scenario})
    if scenario.ztrace_horizon is not None:
        report.ztraces[scenario.name] = ztrace_bands(records)
    return report


def run_scenarios(scenarios, jobs: int = 1) -> AggregateReport:
    report = AggregateReport()
    for sc in scenarios:
        report.merge(run_scenario(sc, jobs))
    return report


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_report(report: AggregateReport, out_dir) -> list[Path]:
    """Write summary, per-trial, Z-trace CSVs and a manifest into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    written = [
        _write_csv(
            out / "summary.csv",
            SUMMARY_FIELDS,
            ([getattr(s, f) for f in SUMMARY_FIELDS] for s in report.summaries),
        )
    ]
    for name, records in report.records.items():
        written.append(
            _write_csv(
                out / f"trials_{name}.csv",
                TRIAL_FIELDS,
                ([getattr(r, f) for f in TRIAL_FIELDS] for r in records),
            )
        )
    for name, bands in report.ztraces.items():
        rows = ([int(row[0]), row[1], row[2], row[3]] for row in bands)
        written.append(_write_csv(out / f"ztrace_{name}.csv", ZTRACE_FIELDS, rows))
    manifest = {
        "library": "ctxbai",
        "version": __version__,
        "numpy": np.__version__,
        "rng": RNG_ALGORITHM,
        "scenarios": {
            name: {"seed": sc.seed, "trials": sc.trials, "scenario": sc.to_dict()}
            for name, sc in report.scenarios.items()
        },
        "wall_clock_seconds": {s.name: s.wall_clock for s in report.summaries},
    }
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    written.append(path)
    return written


def load_summary(path) -> list[ScenarioSummary]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(
            ScenarioSummary(
                name=row["name"],
                trials=int(row["trials"]),
                delta=float(row["delta"]),
                error_rate=float(row["error_rate"]),
                tau_mean=float(row["tau_mean"]),
                tau_p25=int(row["tau_p25"]),
                tau_p50=int(row["tau_p50"]),
                tau_p75=int(row["tau_p75"]),
                truncated=int(row["truncated"]),
            )
        )
    return out


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


# registry ------------------------------------------------------------------

FOUR_ARM_CONTEXT1 = [0.5, 0.01, 0.4, 0.01]


def _bernoulli(context2) -> BernoulliInstance:
    return BernoulliInstance(np.column_stack([FOUR_ARM_CONTEXT1, context2]), [0.5, 0.5])


FOUR_ARM_INSTANCE = _bernoulli([0.1, 0.41, 0.0, 0.37])
BERNOULLI_INSTANCES = {
    "fig2-bernoulli": FOUR_ARM_INSTANCE,
    "figH-bernoulli-2": _bernoulli([0.5, 0.89, 0.46, 0.79]),
    "figH-bernoulli-3a": BernoulliInstance(
        np.column_stack([[0.5, 0.2, 0.2, 0.1], [0.1, 0.22, 0.2, 0.28]]), [0.5, 0.5]
    ),
    "figH-bernoulli-3b": BernoulliInstance(
        np.column_stack([[0.5, 0.2, 0.2, 0.1], [0.5, 0.7, 0.66, 0.7]]), [0.5, 0.5]
    ),
}
FIG3_RHOS = (-0.9, -0.5, 0.0, 0.5, 0.9)
FIG3_VARIANCES = (1.0, 2.0)


def fig3_instance(var1: float, rho1: float) -> GaussianTwoArmInstance:
    return GaussianTwoArmInstance(
        mu1=1.0, mu2=0.0, sigma1=math.sqrt(var1), sigma2=1.0, mu_x=0.0, sigma_x=1.0,
        rho1=rho1, rho2=0.5,
    )


def _build_registry() -> tuple[dict, dict]:
    scenarios: dict[str, Scenario] = {}
    groups: dict[str, list[str]] = {}
    for group, inst in BERNOULLI_INSTANCES.items():
        stem = group.replace("-bernoulli", "")
        names = []
        for algo, tag in (("cts", "cts"), ("cts_no_context", "ts")):
            name = f"{stem}-{tag}"
            scenarios[name] = Scenario(name, inst, algo, trials=20, ztrace_horizon=5000)
            names.append(name)
        groups[group] = names
    scenarios["pac-cts"] = Scenario("pac-cts", FOUR_ARM_INSTANCE, "cts", trials=1000)
    scenarios["pac-ts"] = Scenario("pac-ts", FOUR_ARM_INSTANCE, "cts_no_context", trials=1000)
    groups["pac-bernoulli"] = ["pac-cts", "pac-ts"]
    fig3 = []
    for var1 in FIG3_VARIANCES:
        for rho in FIG3_RHOS:
            inst = fig3_instance(var1, rho)
            for algo, tag in (("alpha_elim", "ctx"), ("alpha_elim_no_context", "noctx")):
                name = f"fig3-var{var1:g}-rho{rho:+g}-{tag}"
                scenarios[name] = Scenario(name, inst, algo, trials=1000, seed=7)
                fig3.append(name)
    groups["fig3-gaussian"] = fig3
    return scenarios, groups


SCENARIOS, GROUPS = _build_registry()


def resolve(name: str) -> list[Scenario]:
    """A registered scenario, or every member of a registered group."""
    if name in SCENARIOS:
        return [SCENARIOS[name]]
    if name in GROUPS:
        return [SCENARIOS[n] for n in GROUPS[name]]
    raise KeyError(f"no scenario or group named {name!r}")


def with_trials(scenarios, trials: int | None):
    if trials is None:
        return list(scenarios)
    return [replace(sc, trials=trials) for sc in scenarios]
