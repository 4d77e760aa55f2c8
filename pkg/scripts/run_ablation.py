"""Run every variant of a scenario and print the per-variant summary table."""

import argparse
from pathlib import Path

from packsim.harness import emit_summary, format_csv, parse_scenario, parse_seeds, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="default_soap")
    ap.add_argument("--seeds", default=None, help="inclusive range a..b")
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", default="out/ablation")
    args = ap.parse_args()

    sc = parse_scenario(args.scenario)
    seeds = parse_seeds(args.seeds) if args.seeds else None
    rows = [a.row for a in run_scenario(sc, seeds=seeds, workers=args.workers)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(format_csv(rows))
    text, _ = emit_summary(rows, out / "summary.txt")
    print(text, end="")


if __name__ == "__main__":
    main()
