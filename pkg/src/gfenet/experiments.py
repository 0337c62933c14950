"""Training loop, metrics and the binary / multiclass experiment protocols."""

from __future__ import annotations

import io
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Mapping

import numpy as np

from .config import RunConfig, TrainConfig, derive_seed
from .dataset import (
    MarkerClass,
    MarkerDataset,
    SyntheticSpec,
    concat_datasets,
    generate_synthetic_dataset,
    load_user_marker,
)
from .optim import AdamState, adam_step, lr_at
from .preprocess import PreparedSet, prepare
from .structnet import (
    STRUCTURED,
    ConnectivitySpec,
    NetworkParams,
    build_spec,
    loss_and_grad,
    predict_proba,
    xavier_init,
)

MULTICLASS_K = (3, 5, 7, 9)
DEFAULT_SAMPLED_COMBOS = 10
# expected pooled positives per marker class in the multiclass protocol (soft check)
MULTICLASS_POOL_RANGE = (200, 225)


class LabelOutOfRange(ValueError):
    pass


class InvalidK(ValueError):
    pass


class UnknownReferenceKey(KeyError):
    pass


# -- training ---------------------------------------------------------------


@dataclass
class History:
    mean_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    steps: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,mean_loss,lr\n")
        for i, (loss, lr) in enumerate(zip(self.mean_loss, self.lr), start=1):
            buf.write(f"{i},{loss!r},{lr!r}\n")
        return buf.getvalue()


def steps_per_epoch(n: int, batch_size: int | None) -> int:
    return 1 if batch_size is None else math.ceil(n / batch_size)


def train(spec: ConnectivitySpec, prepared: PreparedSet, config: TrainConfig) -> tuple[NetworkParams, History]:
    """Mini-batch Adam with the staircase schedule; one schedule step per batch update."""
    x, y = prepared.features, np.asarray(prepared.labels)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if y.min() < 0 or y.max() >= spec.num_outputs:
        raise LabelOutOfRange(f"labels must lie in 0..{spec.num_outputs - 1}")
    bs = n if config.batch_size is None else min(config.batch_size, n)

    params = xavier_init(spec, config.seed, config.xavier_fans)
    state = AdamState.zeros_like(params, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    history = History()
    order = np.arange(n)
    step = 0
    for _ in range(config.epochs):
        if config.shuffle_each_epoch:
            order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            lr = lr_at(config.schedule, step)
            loss, grads = loss_and_grad(spec, params, x[idx], y[idx], config.loss)
            state, params = adam_step(state, params, grads, lr)
            losses.append(loss)
            step += 1
        history.mean_loss.append(float(np.mean(losses)))
        history.lr.append(lr)
    history.steps = step
    return params, history


# -- metrics ----------------------------------------------------------------


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.n)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f_score(self) -> float:
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
        }


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return _ratio(float(np.trace(self.confusion)), self.n)

    @property
    def per_class(self) -> list[ClassMetrics]:
        cm = self.confusion
        out = []
        for c in range(len(cm)):
            tp = int(cm[c, c])
            fp = int(cm[:, c].sum()) - tp
            fn = int(cm[c, :].sum()) - tp
            out.append(ClassMetrics(tp, fp, fn, self.n - tp - fp - fn))
        return out

    def macro(self, name: str) -> float:
        return float(np.mean([getattr(c, name) for c in self.per_class]))

    @property
    def positive(self) -> ClassMetrics:
        """Class 1 (expression present) of a binary problem."""
        return self.per_class[1]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_precision": self.macro("precision"),
            "macro_recall": self.macro("recall"),
            "macro_f_score": self.macro("f_score"),
            "confusion": self.confusion.tolist(),
            "per_class": [c.to_dict() for c in self.per_class],
        }


def metrics_from_predictions(labels, predicted, k: int) -> Metrics:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return Metrics(cm)


def predict(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(np.atleast_2d(probs), axis=1)


def evaluate(spec: ConnectivitySpec, params: NetworkParams, prepared: PreparedSet) -> Metrics:
    if len(prepared) == 0:
        raise ValueError("empty evaluation set")
    probs = predict_proba(spec, params, prepared.features)
    return metrics_from_predictions(prepared.labels, predict(probs), spec.num_outputs)


# -- reports ----------------------------------------------------------------


@dataclass
class ExperimentReport:
    experiment_id: str
    kind: str
    markers: list[str]
    users: list[str]
    preset: str
    config: dict
    history: History | None = None
    train_metrics: Metrics | None = None
    test_metrics: Metrics | None = None
    duration_s: float = 0.0
    provenance: dict = field(default_factory=dict)
    combinations: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def test_accuracy(self) -> float:
        if self.kind == "multiclass":
            return float(np.mean([c["test_accuracy"] for c in self.combinations]))
        return self.test_metrics.accuracy

    def to_dict(self) -> dict:
        doc = {
            "experiment_id": self.experiment_id,
            "kind": self.kind,
            "markers": self.markers,
            "users": self.users,
            "preset": self.preset,
            "config": self.config,
            "duration_s": self.duration_s,
            "provenance": self.provenance,
            "notes": self.notes,
        }
        if self.history is not None:
            doc["history"] = asdict(self.history)
        if self.train_metrics is not None:
            doc["train_metrics"] = self.train_metrics.to_dict()
        if self.test_metrics is not None:
            doc["test_metrics"] = self.test_metrics.to_dict()
        if self.kind == "multiclass":
            doc["combinations"] = self.combinations
            doc["mean_test_accuracy"] = self.test_accuracy
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass
class ExperimentResult:
    report: ExperimentReport
    spec: ConnectivitySpec | None = None
    params: NetworkParams | None = None


# -- data sources -----------------------------------------------------------


def parse_regions(text: str) -> list:
    """Comma-separated region names or indices; ``""``/``"none"`` means no signal.

    :func:`synthetic_marker_dataset` also accepts ``"per-marker"`` (region = marker index).
    """
    if not text or text.lower() == "none":
        return []
    return [int(tok) if tok.isdigit() else tok for tok in (t.strip() for t in text.split(","))]


def synthetic_marker_dataset(marker: MarkerClass, user: str, cfg: RunConfig, regions=None) -> MarkerDataset:
    """Seeded stand-in for one marker's dataset; users share nothing, markers of a user share the face."""
    if user == "ab":
        return concat_datasets([synthetic_marker_dataset(marker, u, cfg, regions) for u in "ab"], user="ab")
    spec = SyntheticSpec(
        signal_strength=cfg["synth.signal_strength"], placeholder_fraction=cfg["synth.placeholder_fraction"]
    )
    if regions is None:
        text = cfg["synth.signal_regions"]
        regions = [marker.index] if text == "per-marker" else parse_regions(text)
    return generate_synthetic_dataset(
        derive_seed(cfg["seed"], f"synth/{user}/{marker.value}"),
        cfg["synth.n_positive"],
        cfg["synth.n_negative"],
        regions,
        marker=marker,
        user=user,
        params=spec,
        template_seed=derive_seed(cfg["seed"], f"synth/{user}"),
    )


def load_dataset(marker: MarkerClass, user: str, cfg: RunConfig, data_root=None, synthetic=None) -> MarkerDataset:
    synthetic = cfg["data.synthetic"] if synthetic is None else synthetic
    if synthetic:
        return synthetic_marker_dataset(marker, user, cfg)
    return load_user_marker(data_root or cfg["data.root"], marker, user)


# -- binary protocol --------------------------------------------------------


def binary_experiment_id(marker: MarkerClass, user: str, preset: str) -> str:
    return f"binary/{user}/{marker.value}/{preset}"


def run_binary_experiment(
    marker: MarkerClass,
    user: str,
    preset: str,
    config: RunConfig,
    data_root=None,
    synthetic: bool | None = None,
    dataset: MarkerDataset | None = None,
) -> ExperimentResult:
    """load -> impute -> balance -> split -> standardize -> train -> evaluate, K=2.

    Data and training seeds depend on (marker, user) only, so the structured
    and fully connected presets see the identical split and batch order.
    """
    t0 = time.perf_counter()
    synthetic = config["data.synthetic"] if synthetic is None else synthetic
    cfg = config.with_values({"data.marker": marker.value, "data.user": user, "model.preset": preset, "data.synthetic": synthetic})
    if data_root is not None:
        cfg = cfg.with_values({"data.root": str(data_root)})
    ds = dataset if dataset is not None else load_dataset(marker, user, cfg, data_root, synthetic)
    data_key = f"binary/{user}/{marker.value}"
    seed = cfg["seed"]
    train_set, test_set = prepare(
        ds,
        cfg.preprocess_config(),
        (derive_seed(seed, data_key + "/balance"), derive_seed(seed, data_key + "/split")),
    )
    spec = build_spec(preset, 2)
    train_seed = derive_seed(seed, data_key + "/train")
    params, history = train(spec, train_set, cfg.train_config(train_seed))
    report = ExperimentReport(
        experiment_id=binary_experiment_id(marker, user, preset),
        kind="binary",
        markers=[marker.value],
        users=[user],
        preset=preset,
        config=cfg.snapshot(),
        history=history,
        train_metrics=evaluate(spec, params, train_set),
        test_metrics=evaluate(spec, params, test_set),
        provenance=dict(train_set.provenance, synthetic=bool(synthetic), loss_kind=cfg["loss.kind"],
                        batch_size=cfg["train.batch_size"], iteration="mini-batch step",
                        train_seed=train_seed),
    )
    report.duration_s = time.perf_counter() - t0
    return ExperimentResult(report, spec, params)


# -- multiclass protocol ----------------------------------------------------


def select_combinations(k: int, policy="default", seed: int = 0) -> list[tuple[MarkerClass, ...]]:
    """``policy``: ``"all"``, ``"sample:N"``, ``("sample", N)`` or ``"default"``
    (10 sampled for k < 9, all for k = 9)."""
    if k not in MULTICLASS_K:
        raise InvalidK(f"k must be one of {MULTICLASS_K}, got {k}")
    combos = list(itertools.combinations(list(MarkerClass), k))
    if isinstance(policy, str):
        if policy == "default":
            policy = "all" if k == 9 else f"sample:{DEFAULT_SAMPLED_COMBOS}"
        if policy == "all":
            return combos
        name, _, count = policy.partition(":")
        if name != "sample" or not count.isdigit():
            raise ValueError(f"bad combination policy {policy!r}")
        policy = ("sample", int(count))
    _, count = policy
    if count >= len(combos):
        return combos
    rng = np.random.default_rng(derive_seed(seed, f"combos/{k}"))
    pick = np.sort(rng.choice(len(combos), size=count, replace=False))
    return [combos[i] for i in pick]


def pool_positives(datasets: list[MarkerDataset], user: str) -> MarkerDataset:
    """Positive frames of each marker become class ``i`` of a k-class set."""
    parts = []
    for i, ds in enumerate(datasets):
        pos = ds.subset(np.flatnonzero(ds.labels == 1))
        parts.append((pos.timestamps, pos.coords, np.full(len(pos), i)))
    markers = tuple(ds.marker for ds in datasets)
    return MarkerDataset(
        markers,
        user,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        n_classes=len(datasets),
    )


def run_multiclass_experiment(
    k: int, user: str, combination_policy, config: RunConfig, data_root=None, synthetic: bool | None = None
) -> ExperimentReport:
    """Train one K=k structured net per selected marker combination; report the mean test accuracy.

    Classes are the pooled positive frames of each marker. Pools are not
    balanced; the split is stratified.
    """
    t0 = time.perf_counter()
    combos = select_combinations(k, combination_policy, derive_seed(config["seed"], f"multiclass/{user}"))
    synthetic = config["data.synthetic"] if synthetic is None else synthetic
    cfg = config.with_values({"data.user": user, "model.preset": STRUCTURED, "data.synthetic": synthetic})
    if data_root is not None:
        cfg = cfg.with_values({"data.root": str(data_root)})
    needed = sorted({m for c in combos for m in c}, key=lambda m: m.index)
    if synthetic:
        # one signal region per marker so pooled positives differ between markers
        datasets = {m: synthetic_marker_dataset(m, user, cfg, regions=[m.index]) for m in needed}
    else:
        datasets = {m: load_user_marker(data_root or cfg["data.root"], m, user) for m in needed}
    pre = replace(cfg.preprocess_config(), balance=False)
    notes = []
    lo, hi = MULTICLASS_POOL_RANGE
    pool_sizes = {m.value: int(np.sum(datasets[m].labels == 1)) for m in needed}
    outside = {name: n for name, n in pool_sizes.items() if not lo <= n <= hi}
    if outside and not synthetic:
        notes.append(f"pooled positives outside the expected {lo}-{hi} per class: {outside}")
    rows = []
    spec = build_spec(STRUCTURED, k)
    for combo in combos:
        cid = "+".join(m.value for m in combo)
        pooled = pool_positives([datasets[m] for m in combo], user)
        key = f"multiclass/{user}/{k}/{cid}"
        seed = cfg["seed"]
        train_set, test_set = prepare(pooled, pre, (derive_seed(seed, key + "/balance"), derive_seed(seed, key + "/split")))
        params, history = train(spec, train_set, cfg.train_config(derive_seed(seed, key + "/train")))
        test_m = evaluate(spec, params, test_set)
        rows.append(
            {
                "markers": [m.value for m in combo],
                "train_accuracy": evaluate(spec, params, train_set).accuracy,
                "test_accuracy": test_m.accuracy,
                "test_macro_f_score": test_m.macro("f_score"),
                "final_loss": history.mean_loss[-1],
                "steps": history.steps,
                "class_counts": np.bincount(pooled.labels, minlength=k).tolist(),
            }
        )
    report = ExperimentReport(
        experiment_id=f"multiclass/{user}/k{k}",
        kind="multiclass",
        markers=[m.value for m in needed],
        users=[user],
        preset=STRUCTURED,
        config=cfg.snapshot(),
        combinations=rows,
        provenance={
            "policy": combination_policy if isinstance(combination_policy, str) else list(combination_policy),
            "n_combinations": len(combos),
            "pool_sizes": pool_sizes,
            "synthetic": bool(synthetic),
        },
        notes=notes,
    )
    report.duration_s = time.perf_counter() - t0
    return report


# -- reference comparison ---------------------------------------------------

# advisory deviation bands: accuracies in percentage points, P/R/F as fractions
BANDS = {"binary_accuracy": 5.0, "multiclass_accuracy": 5.0, "binary_prf": 0.05}


def load_reference_tables() -> dict:
    return json.loads(resources.files("gfenet").joinpath("data/reference_tables.json").read_text())


def reference_value(reference: Mapping, key: str) -> float:
    node = reference
    for part in key.split("/"):
        if not isinstance(node, Mapping) or part not in node:
            raise UnknownReferenceKey(key)
        node = node[part]
    if not isinstance(node, (int, float)):
        raise UnknownReferenceKey(key)
    return float(node)


def report_cells(report: ExperimentReport) -> dict[str, float]:
    """Cells of the reference tables that ``report`` reproduces."""
    user = report.users[0]
    if report.kind == "multiclass":
        k = len(report.combinations[0]["markers"]) if report.combinations else 0
        return {f"multiclass_accuracy/{k}/{user}": 100.0 * report.test_accuracy}
    marker = report.markers[0]
    cells = {f"binary_accuracy/{report.preset}/{marker}/{user}": 100.0 * report.test_metrics.accuracy}
    if report.preset == STRUCTURED:
        pos = report.test_metrics.positive
        for name in ("f_score", "precision", "recall"):
            cells[f"binary_prf/{STRUCTURED}/{marker}/{name}"] = getattr(pos, name)
    return cells


@dataclass
class Deviation:
    key: str
    reproduced: float
    reference: float
    band: float

    @property
    def deviation(self) -> float:
        return self.reproduced - self.reference

    @property
    def within(self) -> bool:
        return abs(self.deviation) <= self.band + 1e-12

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "reproduced": self.reproduced,
            "reference": self.reference,
            "deviation": self.deviation,
            "band": self.band,
            "within": self.within,
        }


def compare_with_reference(report, reference: Mapping | None = None) -> list[Deviation]:
    """Per-cell ``reproduced - reference``; ``report`` is a report or a ``{key: value}`` mapping."""
    reference = load_reference_tables() if reference is None else reference
    cells = report_cells(report) if isinstance(report, ExperimentReport) else dict(report)
    out = []
    for key, value in sorted(cells.items()):
        ref = reference_value(reference, key)
        out.append(Deviation(key, float(value), ref, BANDS.get(key.split("/")[0], 0.0)))
    return out
