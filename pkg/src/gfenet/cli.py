"""``gfenet`` command line: validate, train, bench, gradcheck, synth.

Exit codes: 0 ok, 2 data, 3 pipeline, 4 config, 5 acceptance, 6 gradcheck.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .bench import run_bench
from .config import ConfigError, RunConfig
from .dataset import (
    USERS,
    DatasetError,
    LengthMismatch,
    MarkerClass,
    MarkerDataset,
    dataset_summary,
    discover,
    parse_datapoints_array,
    parse_targets_file,
    write_dataset,
)
from .experiments import load_reference_tables, run_binary_experiment, synthetic_marker_dataset
from .structnet import model_to_json

EXIT_OK, EXIT_DATA, EXIT_PIPELINE, EXIT_CONFIG, EXIT_ACCEPT, EXIT_GRADCHECK = 0, 2, 3, 4, 5, 6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# flag dest -> config key
_FLAG_KEYS = {
    "data_root": "data.root",
    "preset": "model.preset",
    "loss": "loss.kind",
    "reg_beta": "loss.reg_beta",
    "lr": "schedule.initial_rate",
    "epochs": "train.epochs",
    "batch": "train.batch_size",
    "seed": "seed",
    "synthetic": "data.synthetic",
    "fit_stats_on": "preprocess.fit_stats_on",
    "balance_order": "preprocess.balance_order",
    "xavier_fans": "model.xavier_fans",
    "combos": "bench.combos",
    "multiclass": "bench.multiclass",
    "presets": "bench.presets",
    "n_positive": "synth.n_positive",
    "n_negative": "synth.n_negative",
    "regions": "synth.signal_regions",
    "signal_strength": "synth.signal_strength",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config (flat dotted keys) or a report JSON to replay")
    p.add_argument("--data-root")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int)
    p.add_argument("--synthetic", action="store_const", const=True, help="use the seeded synthetic stand-in data")


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=("structured", "fc"))
    p.add_argument("--loss", choices=("ce", "mse"))
    p.add_argument("--reg-beta", type=float)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", help="mini-batch size or 'all'")
    p.add_argument("--fit-stats-on", choices=("train", "all"))
    p.add_argument("--balance-order", choices=("before", "after"))
    p.add_argument("--xavier-fans", choices=("mask", "dense"))
    p.add_argument("--n-positive", type=int)
    p.add_argument("--n-negative", type=int)
    p.add_argument("--regions", help="synthetic signal regions: names/indices, 'none' or 'per-marker'")
    p.add_argument("--signal-strength", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gfenet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse every dataset file and compare counts with the reference table")
    p.add_argument("--data-root", required=True)
    p.add_argument("--strict", action="store_true", help="count mismatches are errors")

    p = sub.add_parser("train", help="one binary experiment; writes model, report and history")
    _common(p)
    _model_flags(p)
    p.add_argument("--marker")
    p.add_argument("--user", choices=("a", "b", "ab"))

    p = sub.add_parser("bench", help="batch reproduction with reference comparison")
    _common(p)
    _model_flags(p)
    p.add_argument("--marker", "--markers", dest="markers", help="comma list or 'all'")
    p.add_argument("--user", "--users", dest="users", help="comma list of a, b, ab")
    p.add_argument("--presets", help="comma list of structured, fc")
    p.add_argument("--multiclass", help="comma list of k values (3,5,7,9)")
    p.add_argument("--combos", help="'all', 'default' or 'sample:N'")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--accept", action="store_true", help="apply acceptance bands; exit 5 on violation")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("synth", help="write synthetic datasets in the UCI file layout")
    _common(p)
    p.add_argument("--marker", default="affirmative", help="marker name or 'all'")
    p.add_argument("--user", default="a", choices=("a", "b", "ab"), help="'ab' writes both users")
    p.add_argument("--n-positive", type=int)
    p.add_argument("--n-negative", type=int)
    p.add_argument("--regions")
    p.add_argument("--signal-strength", type=float)
    return parser


def resolve_config(args) -> RunConfig:
    layers = []
    if getattr(args, "config", None):
        layers.append(RunConfig.from_file(args.config))
    flags = {}
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            flags[key] = value
    if args.command == "train":
        if args.marker is not None:
            flags["data.marker"] = MarkerClass.parse(args.marker).value
        if args.user is not None:
            flags["data.user"] = args.user
    if args.command == "bench":
        if args.markers is not None:
            flags["bench.markers"] = ",".join(
                m.value for m in (MarkerClass if args.markers == "all" else map(MarkerClass.parse, args.markers.split(",")))
            )
        if args.users is not None:
            flags["bench.users"] = args.users
    layers.append(flags)
    return RunConfig.build(*layers)


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    files = discover(args.data_root)
    if not files:
        print(f"no datasets found under {args.data_root}", file=sys.stderr)
        return EXIT_DATA
    rows = load_reference_tables()["sample_counts"]["rows"]
    mismatches = 0
    print(f"{'dataset':<22}{'pos':>7}{'neg':>7}{'total':>7}   expected pos/neg")
    for f in files:
        try:
            ts, coords = parse_datapoints_array(f.datapoints.read_text())
        except DatasetError as exc:
            print(f"{f.datapoints}: {exc}", file=sys.stderr)
            return EXIT_DATA
        try:
            labels = parse_targets_file(f.targets.read_text())
            if len(labels) != len(ts):
                raise LengthMismatch(len(ts), len(labels))
        except DatasetError as exc:
            print(f"{f.targets}: {exc}", file=sys.stderr)
            return EXIT_DATA
        ds = MarkerDataset(f.marker, f.user, ts, coords, labels)
        pos, neg, total = dataset_summary(ds)
        exp = rows[f.marker.value]
        match = (pos, neg) == (exp["positive"], exp["negative"])
        mismatches += not match
        flag = "ok" if match else "differs"
        print(f"{f.user + '_' + f.marker.value:<22}{pos:>7}{neg:>7}{total:>7}   {exp['positive']}/{exp['negative']} {flag}")
    print(f"{len(files)} dataset(s) parsed; {mismatches} count mismatch(es) against the reference table")
    if mismatches and args.strict:
        return EXIT_DATA
    return EXIT_OK


def _print_metrics(report):
    print(f"{'split':<7}{'acc':>8}{'prec':>8}{'rec':>8}{'F':>8}")
    for name, m in (("train", report.train_metrics), ("test", report.test_metrics)):
        pos = m.positive
        print(f"{name:<7}{m.accuracy:>8.4f}{pos.precision:>8.4f}{pos.recall:>8.4f}{pos.f_score:>8.4f}")


def cmd_train(args) -> int:
    try:
        cfg = resolve_config(args)
        marker = MarkerClass.parse(cfg["data.marker"])
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_binary_experiment(marker, cfg["data.user"], cfg["model.preset"], cfg)
    except (DatasetError, OSError, ValueError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = result.report
    seed = report.provenance.get("train_seed")
    (out / "model.json").write_text(model_to_json(result.spec, result.params, seed))
    (out / "report.json").write_text(report.to_json())
    (out / "history.csv").write_text(report.history.to_csv())
    print(f"{report.experiment_id}: {report.history.steps} steps, {report.duration_s:.1f}s")
    _print_metrics(report)
    print(f"wrote {out / 'model.json'}, {out / 'report.json'}, {out / 'history.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not cfg["data.synthetic"] and not discover(cfg["data.root"]):
        print(f"SKIP: no dataset under {cfg['data.root']}; pass --synthetic for the synthetic subset", file=sys.stderr)
        return EXIT_DATA
    try:
        result = run_bench(cfg, jobs=args.jobs)
    except (DatasetError, OSError, ValueError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = result.to_dict()
    doc["config"] = cfg.snapshot()
    (out / "bench_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{'experiment':<40}{'train':>8}{'test':>8}")
    for r in result.reports:
        if r.kind == "multiclass":
            train_acc = sum(c["train_accuracy"] for c in r.combinations) / len(r.combinations)
        else:
            train_acc = r.train_metrics.accuracy
        print(f"{r.experiment_id:<40}{train_acc:>8.4f}{r.test_accuracy:>8.4f}")
    if result.deviations:
        print(f"{'reference cell':<48}{'ours':>8}{'ref':>8}{'dev':>8}")
    for d in result.deviations:
        print(f"{d.key:<48}{d.reproduced:>8.2f}{d.reference:>8.2f}{d.deviation:>+8.2f}{'' if d.within else '  outside band'}")
    for preset, s in result.summary.items():
        if preset != "multiclass":
            print(f"{preset}: grand mean {s['grand_mean_over_cells']:.2f}%, mean of column means {s['mean_of_column_means']:.2f}%")
    if args.accept:
        for c in result.checks:
            print(c.line())
        if not result.accepted:
            return EXIT_ACCEPT
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.default_sweep(seed=args.seed, corrupt=args.corrupt_gradient)
    for r in results:
        print(f"{r.name:<16}{r.loss:<5}{r.n_params:>7} params  rel err {r.max_rel_error:.3e}  abs err {r.max_abs_error:.3e}  {'ok' if r.ok else 'FAIL'}")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_GRADCHECK


def cmd_synth(args) -> int:
    try:
        cfg = resolve_config(args)
        markers = list(MarkerClass) if args.marker == "all" else [MarkerClass.parse(args.marker)]
        users = list(USERS) if args.user == "ab" else [args.user]
        datasets = [synthetic_marker_dataset(m, u, cfg) for u in users for m in markers]
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for ds in datasets:
        dp, tg = write_dataset(ds, args.out)
        pos, neg, _ = dataset_summary(ds)
        print(f"wrote {dp.name} / {tg.name} ({pos} positive, {neg} negative)")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "train": cmd_train,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
