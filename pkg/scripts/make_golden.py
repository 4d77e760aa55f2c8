"""Regenerate the golden V1 episode used by the replay tests.

Only run this after an intentional change to world physics or the pipeline.
"""

from pathlib import Path

from packsim.harness import format_log
from packsim.pipeline import PipelineConfig, simulate_episode
from packsim.world import snapshot

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def main():
    _, trace = simulate_episode(PipelineConfig(variant="V1"), 0)
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "v1_seed0_initial.json").write_text(trace.initial_snapshot)
    (GOLDEN / "v1_seed0_actions.jsonl").write_text(format_log(trace.world.history))
    (GOLDEN / "v1_seed0_final.json").write_text(snapshot(trace.world))
    print(f"wrote {len(trace.world.history)} actions to {GOLDEN}")


if __name__ == "__main__":
    main()
