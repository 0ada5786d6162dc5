"""Run the bundled reference scenario and print its summary.

Usage: python3 scripts/reference_run.py [--output DIR] [--contrast C]
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from layered_enclosure.cli import bundled_config, run_scenario
from layered_enclosure.config import load_config


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--output", default="results/reference")
    p.add_argument("--contrast", type=float, default=None, help="override the obstacle contrast")
    args = p.parse_args(argv)
    cfg = load_config(bundled_config())
    if args.contrast is not None:
        cfg = replace(cfg, scenario=cfg.scenario.with_contrast(args.contrast))
    out = Path(args.output)
    status = run_scenario(cfg, out)
    summary = json.loads((out / "summary.json").read_text())
    for k in ("l_DB_true", "l_DB_est", "relative_error", "slope_estimate", "sign_class", "oracles"):
        print(f"{k}: {summary[k]}")
    return status


if __name__ == "__main__":
    sys.exit(main())
