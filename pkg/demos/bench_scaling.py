"""Per-iteration solve time of the structured and dense paths over a
horizon sweep, with the fitted log-log slopes.

    python demos/bench_scaling.py [8,16,32]
"""
import sys
from pathlib import Path

from pumpsched.cli import cmd_bench, format_bench
from pumpsched.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    horizons = [int(v) for v in sys.argv[1].split(",")] if len(sys.argv) > 1 else [8, 16, 32]
    cfg = ExperimentConfig.load(ROOT / "configs" / "table1-desk.json")
    rows, report = cmd_bench(cfg, horizons)
    print(format_bench(rows, report))
