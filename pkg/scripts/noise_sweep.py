"""Sweep pose-estimate translation noise and report mean unoccupied fraction for V1 and V2."""

import argparse

import numpy as np

from packsim.perception import PoseNoiseConfig
from packsim.pipeline import PipelineConfig, run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas-mm", default="0,1,3,5")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    print("sigma_mm\tV1\tV2")
    for mm in [float(s) for s in args.sigmas_mm.split(",")]:
        means = []
        for v in ("V1", "V2"):
            cfg = PipelineConfig(variant=v, pose_noise=PoseNoiseConfig(mm / 1000, np.radians(2), 0.1))
            means.append(run_batch(cfg, range(args.seeds), workers=args.workers).aggregate["unoccupied_fraction"][0])
        print(f"{mm:g}\t{means[0]:.4f}\t{means[1]:.4f}")


if __name__ == "__main__":
    main()
