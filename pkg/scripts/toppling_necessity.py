"""Compare V2 (toppling) and V4 (no toppling) on piles that hide the large face."""

import argparse

from packsim.harness import parse_scenario, parse_seeds
from packsim.pipeline import run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0..9")
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    sc = parse_scenario("adversarial")
    seeds = parse_seeds(args.seeds)
    for v in ("V2", "V4"):
        reps = run_batch(sc.config_for(v), seeds, workers=args.workers).reports
        picks = sum(r.pick_attempts for r in reps)
        transfers = sum(r.transfers_attempted for r in reps)
        failed = sum(r.failure_reason == "no feasible pick" for r in reps)
        ratio = picks / transfers if transfers else float("inf")
        print(f"{v}: transfers {transfers}, picks/transfer {ratio:.2f}, 'no feasible pick' in {failed}/{len(reps)}")


if __name__ == "__main__":
    main()
