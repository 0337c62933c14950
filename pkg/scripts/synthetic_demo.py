"""Train both presets on the seeded synthetic data and print a comparison.

    python3 scripts/synthetic_demo.py --epochs 200 --markers affirmative,negative
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

from gfenet.bench import parse_markers
from gfenet.config import RunConfig
from gfenet.experiments import run_binary_experiment


@dataclass
class DemoConfig:
    markers: str = "affirmative"
    user: str = "a"
    epochs: int = 200
    seed: int = 0
    signal_strength: float = 1.0


def run(demo: DemoConfig) -> list[tuple[str, str, float, float, float]]:
    cfg = RunConfig.build(
        {
            "data.synthetic": True,
            "train.epochs": demo.epochs,
            "seed": demo.seed,
            "synth.signal_strength": demo.signal_strength,
        }
    )
    rows = []
    for marker in parse_markers(demo.markers):
        for preset in ("structured", "fc"):
            r = run_binary_experiment(marker, demo.user, preset, cfg).report
            rows.append((marker.value, preset, r.train_metrics.accuracy, r.test_metrics.accuracy, r.duration_s))
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name, default in vars(DemoConfig()).items():
        p.add_argument(f"--{name.replace('_', '-')}", type=type(default), default=default)
    demo = DemoConfig(**vars(p.parse_args()))
    print(f"{'marker':<16}{'preset':<12}{'train':>8}{'test':>8}{'secs':>7}")
    for marker, preset, tr, te, secs in run(demo):
        print(f"{marker:<16}{preset:<12}{tr:>8.4f}{te:>8.4f}{secs:>7.1f}")


if __name__ == "__main__":
    main()
