"""Batch reproduction runs: binary markers x users x presets, multiclass k, reference comparison, acceptance bands."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import RunConfig
from .dataset import MarkerClass
from .experiments import (
    ExperimentReport,
    compare_with_reference,
    load_reference_tables,
    run_binary_experiment,
    run_multiclass_experiment,
)
from .structnet import FC, STRUCTURED

# acceptance bands on real data (fractions unless noted)
MIN_MARKER_ACCURACY = 0.90
MEAN_BAND_PP = 5.0
MAX_BINARY_RUNTIME_S = 120.0
MIN_STRUCTURED_WINS = 7
MIN_MULTICLASS_ACCURACY = {3: 0.90, 9: 0.88}
# synthetic acceptance
SYN_MIN_TRAIN = 0.99
SYN_MIN_TEST = 0.90
SYN_FC_SLACK = 0.02


def parse_markers(text: str) -> list[MarkerClass]:
    if text in ("", "all"):
        return list(MarkerClass)
    return [MarkerClass.parse(t) for t in text.split(",") if t.strip()]


def parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class Task:
    kind: str
    args: tuple
    config: dict
    data_root: str | None
    synthetic: bool

    @property
    def task_id(self) -> str:
        if self.kind == "binary":
            marker, user, preset = self.args
            return f"binary/{user}/{marker}/{preset}"
        k, user, _ = self.args
        return f"multiclass/{user}/k{k}"


def run_task(task: Task) -> ExperimentReport:
    cfg = RunConfig.build(task.config)
    if task.kind == "binary":
        marker, user, preset = task.args
        return run_binary_experiment(MarkerClass(marker), user, preset, cfg, task.data_root, task.synthetic).report
    k, user, policy = task.args
    return run_multiclass_experiment(k, user, policy, cfg, task.data_root, task.synthetic)


def plan(cfg: RunConfig, data_root=None, synthetic=None) -> list[Task]:
    synthetic = cfg["data.synthetic"] if synthetic is None else synthetic
    root = None if data_root is None else str(data_root)
    tasks = []
    users = parse_list(cfg["bench.users"])
    for user in users:
        for marker in parse_markers(cfg["bench.markers"]):
            for preset in parse_list(cfg["bench.presets"]):
                tasks.append(Task("binary", (marker.value, user, preset), cfg.values, root, synthetic))
        for k in parse_list(cfg["bench.multiclass"]):
            tasks.append(Task("multiclass", (int(k), user, cfg["bench.combos"]), cfg.values, root, synthetic))
    return tasks


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class BenchResult:
    reports: list[ExperimentReport]
    deviations: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "experiments": [r.to_dict() for r in self.reports],
            "comparisons": [d.to_dict() for d in self.deviations],
            "summary": self.summary,
            "acceptance": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


def _binary(reports, preset, user) -> dict[str, ExperimentReport]:
    return {
        r.markers[0]: r for r in reports if r.kind == "binary" and r.preset == preset and r.users[0] == user
    }


def summarize(reports: list[ExperimentReport]) -> dict:
    """Per preset: mean accuracy per user column, the grand mean over all cells, and the mean of column means."""
    out = {}
    for preset in (STRUCTURED, FC):
        cols = {}
        cells = []
        for user in ("a", "b", "ab"):
            accs = [100.0 * r.test_accuracy for r in _binary(reports, preset, user).values()]
            if accs:
                cols[user] = statistics.fmean(accs)
                cells.extend(accs)
        if cells:
            out[preset] = {
                "column_means": cols,
                "grand_mean_over_cells": statistics.fmean(cells),
                "mean_of_column_means": statistics.fmean(cols.values()),
            }
    mc = {r.experiment_id: 100.0 * r.test_accuracy for r in reports if r.kind == "multiclass"}
    if mc:
        out["multiclass"] = mc
    return out


def real_data_checks(reports: list[ExperimentReport], reference: dict) -> list[Check]:
    checks = []
    structured = _binary(reports, STRUCTURED, "a")
    fc = _binary(reports, FC, "a")
    markers = [m.value for m in MarkerClass]
    for m in markers:
        if m in structured:
            r = structured[m]
            ok = r.test_accuracy >= MIN_MARKER_ACCURACY and r.duration_s < MAX_BINARY_RUNTIME_S
            checks.append(
                Check(f"binary accuracy {m} (user a)", ok, f"test {100 * r.test_accuracy:.2f}% (>= 90%), {r.duration_s:.1f}s (< 120s)")
            )
    if all(m in structured for m in markers):
        mean = statistics.fmean(100.0 * structured[m].test_accuracy for m in markers)
        target = reference["binary_accuracy"]["aggregate_mean"]["structured"]["a"]
        checks.append(
            Check("binary mean (user a)", abs(mean - target) <= MEAN_BAND_PP, f"{mean:.2f}% vs {target}% (+/- {MEAN_BAND_PP} pp)")
        )
        if all(m in fc for m in markers):
            wins = sum(structured[m].test_accuracy > fc[m].test_accuracy for m in markers)
            checks.append(Check("structured beats FC (user a)", wins >= MIN_STRUCTURED_WINS, f"{wins}/9 markers (>= 7)"))
    for r in reports:
        if r.kind == "multiclass" and r.users[0] == "a":
            k = len(r.combinations[0]["markers"])
            if k in MIN_MULTICLASS_ACCURACY:
                lo = MIN_MULTICLASS_ACCURACY[k]
                checks.append(
                    Check(f"multiclass k={k} (user a)", r.test_accuracy >= lo, f"mean {100 * r.test_accuracy:.2f}% (>= {100 * lo:.0f}%) over {len(r.combinations)} combos")
                )
    return checks


def synthetic_checks(reports: list[ExperimentReport]) -> list[Check]:
    checks = []
    for r in reports:
        if r.kind == "binary" and r.preset == STRUCTURED:
            ok = r.train_metrics.accuracy >= SYN_MIN_TRAIN and r.test_metrics.accuracy >= SYN_MIN_TEST
            checks.append(
                Check(f"synthetic {r.experiment_id}", ok, f"train {100 * r.train_metrics.accuracy:.2f}%, test {100 * r.test_metrics.accuracy:.2f}%")
            )
            twin = next((f for f in reports if f.kind == "binary" and f.preset == FC and f.markers == r.markers and f.users == r.users), None)
            if twin is not None:
                ok = r.test_accuracy >= twin.test_accuracy - SYN_FC_SLACK
                checks.append(
                    Check(f"synthetic structured >= FC - 2pp {r.markers[0]}/{r.users[0]}", ok, f"{100 * r.test_accuracy:.2f}% vs FC {100 * twin.test_accuracy:.2f}%")
                )
        elif r.kind == "multiclass":
            checks.append(Check(f"synthetic {r.experiment_id}", r.test_accuracy >= SYN_MIN_TEST, f"mean test {100 * r.test_accuracy:.2f}%"))
    return checks


def run_bench(cfg: RunConfig, data_root=None, synthetic=None, jobs: int = 1, log=print) -> BenchResult:
    synthetic = cfg["data.synthetic"] if synthetic is None else synthetic
    tasks = plan(cfg, data_root, synthetic)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_task, tasks))
    else:
        reports = []
        for t in tasks:
            log(f"running {t.task_id}")
            reports.append(run_task(t))
    reports.sort(key=lambda r: r.experiment_id)
    reference = load_reference_tables()
    result = BenchResult(reports)
    if not synthetic:
        # synthetic runs have no reference counterpart
        for r in reports:
            result.deviations.extend(compare_with_reference(r, reference))
    result.summary = summarize(reports)
    result.checks = synthetic_checks(reports) if synthetic else real_data_checks(reports, reference)
    return result
