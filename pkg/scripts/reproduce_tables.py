"""Full reproduction run on the public dataset: binary accuracy for both presets
and users, per-marker P/R/F, and multiclass k = 3, 5, 7, 9.

Writes one bench report per call and prints deviations from the reference tables.

    python3 scripts/reproduce_tables.py --data-root data --out out/tables --jobs 4
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from gfenet.bench import run_bench
from gfenet.config import RunConfig
from gfenet.dataset import discover


@dataclass
class ReproConfig:
    data_root: str = "data"
    out: str = "out/tables"
    users: str = "a,b,ab"
    multiclass: str = "3,5,7,9"
    combos: str = "default"
    epochs: int = 750
    batch: str = "32"
    loss: str = "ce"
    seed: int = 0
    jobs: int = 1


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name, default in vars(ReproConfig()).items():
        p.add_argument(f"--{name.replace('_', '-')}", type=type(default), default=default)
    rc = ReproConfig(**vars(p.parse_args()))
    if not discover(rc.data_root):
        print(f"SKIP: no dataset under {rc.data_root}", file=sys.stderr)
        return 2
    cfg = RunConfig.build(
        {
            "data.root": rc.data_root,
            "bench.users": rc.users,
            "bench.multiclass": rc.multiclass,
            "bench.combos": rc.combos,
            "train.epochs": rc.epochs,
            "train.batch_size": rc.batch,
            "loss.kind": rc.loss,
            "seed": rc.seed,
        }
    )
    result = run_bench(cfg, data_root=rc.data_root, jobs=rc.jobs)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(result.to_dict(), config=cfg.snapshot())
    (out / "bench_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    for d in result.deviations:
        flag = "" if d.within else "  outside band"
        print(f"{d.key:<48}{d.reproduced:>8.2f}{d.reference:>8.2f}{d.deviation:>+8.2f}{flag}")
    print(json.dumps(result.summary, indent=2))
    for c in result.checks:
        print(c.line())
    return 0


if __name__ == "__main__":
    sys.exit(main())
