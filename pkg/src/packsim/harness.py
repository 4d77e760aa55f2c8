"""Scenario files, batch CLI, report tables and replay."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import yaml

from .geom import Face, Pose
from .perception import PoseNoiseConfig
from .pipeline import (
    PipelineConfig,
    Variant,
    simulate_episode,
)
from .primitives import CorrectionTolerances
from .world import Bin, ReachableRegion, apply_action, load_snapshot, snapshot, write_ply

SCHEMA_VERSION = 1
LOG_FORMAT = "packsim-log"
LOG_VERSION = 1
OUT_DIR_ENV = "PACKSIM_OUT_DIR"
UNIT_SUFFIXES = ("_m", "_rad", "_px")
FOREIGN_UNITS = ("_mm", "_cm", "_deg", "_degrees", "_meters", "_in")


class ScenarioError(ValueError):
    """Schema problem in a scenario file; carries the dotted field path and line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None, path=None):
        self.field = field
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " if where else ""
        tag = f"[{field}] " if field else ""
        super().__init__(f"{prefix}{tag}{message}")


class ReplayError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

# leaf spec: (kind, constraint); kinds: float, int, str, vec2, vec3, list
_POS, _NONNEG, _ANY, _PROB = "positive", "non-negative", "any", "probability"

SCHEMA = {
    "schema_version": ("int", _POS),
    "name": ("str", _ANY),
    "object": {
        "dims_m": ("vec3", _POS),
        "sample_pitch_m": ("float", _POS),
    },
    "source_bin": {
        "center_m": ("vec3", _ANY),
        "interior_dims_m": ("vec3", _POS),
        "wall_compliance_m": ("float", _NONNEG),
        "wall_thickness_m": ("float", _POS),
    },
    "goal_bin": {
        "center_m": ("vec3", _ANY),
        "interior_dims_m": ("vec3", _POS),
        "wall_compliance_m": ("float", _NONNEG),
        "wall_thickness_m": ("float", _POS),
    },
    "reach": {
        "inner_radius_m": ("float", _NONNEG),
        "outer_radius_m": ("float", _POS),
        "center_m": ("vec2", _ANY),
    },
    "camera": {
        "height_m": ("float", _POS),
        "focal_px": ("float", _POS),
        "width_px": ("int", _POS),
        "height_px": ("int", _POS),
        "depth_sigma_m": ("float", _NONNEG),
    },
    "grid": {
        "rows": ("int", _POS),
        "cols": ("int", _POS),
        "layers": ("int", _POS),
    },
    "pile": {
        "faces": ("faces", _ANY),
    },
    "noise": {
        "segmentation": {
            "erosion_px": ("int", _NONNEG),
            "label_swap_rate": ("float", _PROB),
            "confidence_mean": ("float", _PROB),
            "confidence_sigma": ("float", _NONNEG),
            "min_pixels": ("int", _NONNEG),
            "min_confidence": ("float", _PROB),
        },
        "pose": {
            "translation_sigma_m": ("float", _NONNEG),
            "yaw_sigma_rad": ("float", _NONNEG),
            "face_confusion": ("float", _PROB),
        },
    },
    "tolerances": {
        "epsilon_m": ("float", _POS),
        "cup_radius_m": ("float", _POS),
        "drop_height_m": ("float", _NONNEG),
        "push_step_m": ("float", _POS),
        "push_max_iters": ("int", _POS),
        "correction_timeout": ("int", _NONNEG),
        "normal_tol_rad": ("float", _POS),
        "footprint_tol_m": ("float", _NONNEG),
        "max_correction_m": ("float", _POS),
        "voxel_resolution_m": ("float", _POS),
    },
    "variants": ("variants", _ANY),
    "seeds": ("seeds", _ANY),
    "batch_seed": ("int", _NONNEG),
    "output": {
        "dir": ("str", _ANY),
    },
}

REQUIRED = ("schema_version",)


def _stem(key: str) -> str:
    for suf in UNIT_SUFFIXES + FOREIGN_UNITS:
        if key.endswith(suf):
            return key[: -len(suf)]
    return key


def _line_index(node, prefix="", out=None) -> dict[str, int]:
    """Map dotted key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    return out


def parse_seeds(text) -> tuple[int, ...]:
    """``a..b`` inclusive, a single integer, or a list of integers."""
    if isinstance(text, bool):
        raise ValueError("seeds must be a range or integers")
    if isinstance(text, int):
        return (text,)
    if isinstance(text, (list, tuple)):
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in text):
            raise ValueError("seed list must contain integers")
        return tuple(text)
    s = str(text).strip()
    if ".." in s:
        a, b = s.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {s!r}")
        return tuple(range(lo, hi + 1))
    return (int(s),)


def parse_variants(text) -> tuple[Variant, ...]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    out = []
    for v in items:
        v = str(v).strip().upper()
        try:
            out.append(Variant(v))
        except ValueError:
            raise ValueError(f"unknown variant {v!r}") from None
    if not out:
        raise ValueError("no variants given")
    return tuple(out)


def _check_leaf(path: str, spec, value, lines, src):
    kind, cons = spec
    line = lines.get(path)

    def fail(msg):
        raise ScenarioError(msg, path, line, src)

    if kind == "faces" and (not isinstance(value, list) or not value):
        fail("expected a non-empty list of faces")
    try:
        if kind == "faces":
            return tuple(Face(str(f)).value for f in value)
        if kind == "variants":
            return parse_variants(value)
        if kind == "seeds":
            return parse_seeds(value)
    except ValueError as e:
        fail(str(e))
    if kind == "str":
        if not isinstance(value, str):
            fail("expected a string")
        return value
    if kind in ("vec2", "vec3"):
        n = int(kind[-1])
        if not isinstance(value, list) or len(value) != n:
            fail(f"expected a list of {n} numbers")
        vals = [_number(v, fail) for v in value]
    elif kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            fail("expected an integer")
        vals = [value]
    else:
        vals = [_number(value, fail)]
    for v in vals:
        if cons == _POS and not v > 0:
            fail(f"must be positive, got {v}")
        if cons == _NONNEG and not v >= 0:
            fail(f"must be non-negative, got {v}")
        if cons == _PROB and not 0 <= v <= 1:
            fail(f"must lie in [0, 1], got {v}")
    return tuple(vals) if kind.startswith("vec") else vals[0]


def _number(v, fail) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        fail("expected a finite number")
    return float(v)


def _validate(doc, schema, prefix, lines, src) -> dict:
    if not isinstance(doc, dict):
        raise ScenarioError("expected a mapping", prefix or None, lines.get(prefix), src)
    out = {}
    for key, value in doc.items():
        key = str(key)
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            near = [k for k in schema if _stem(k) == _stem(key) and k != key]
            if near:
                raise ScenarioError(f"unit suffix violation: use {near[0]!r}", path, lines.get(path), src)
            raise ScenarioError(f"unknown field {key!r}", path, lines.get(path), src)
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _validate(value, spec, path, lines, src)
        else:
            out[key] = _check_leaf(path, spec, value, lines, src)
    return out


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    config: PipelineConfig
    variants: tuple[Variant, ...]
    seeds: tuple[int, ...]
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    def config_for(self, variant) -> PipelineConfig:
        return replace(self.config, variant=Variant(variant))


def bundled_scenarios() -> list[str]:
    root = resources.files("packsim") / "scenarios"
    return sorted(p.name[: -len(".scenario")] for p in root.iterdir() if p.name.endswith(".scenario"))


def resolve_scenario(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = resources.files("packsim") / "scenarios" / f"{name_or_path}.scenario"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"scenario not found: {name_or_path}")


def parse_scenario(path) -> ScenarioFile:
    """Load and validate a YAML scenario file (path or bundled name)."""
    p = resolve_scenario(path)
    text = p.read_text()
    return parse_scenario_text(text, source=str(p))


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioFile:
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {getattr(e, 'problem', e)}", None,
                            None if mark is None else mark.line + 1, source) from None
    lines = _line_index(node)
    doc = _validate(doc or {}, SCHEMA, "", lines, source)
    for key in REQUIRED:
        if key not in doc:
            raise ScenarioError("missing required field", key, None, source)
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {doc['schema_version']} (expected {SCHEMA_VERSION})",
                            "schema_version", lines.get("schema_version"), source)
    cfg = _build_config(doc)
    try:
        from .pipeline import goal_arrangement

        goal_arrangement(cfg.scene.goal, cfg.scene.model(), cfg.grid, cfg.epsilon)
    except ValueError as e:
        raise ScenarioError(str(e), "grid", lines.get("grid"), source) from None
    return ScenarioFile(
        name=doc.get("name", Path(source).stem),
        config=cfg,
        variants=doc.get("variants", tuple(Variant)),
        seeds=doc.get("seeds", tuple(range(10))),
        output_dir=doc.get("output", {}).get("dir"),
    )


def _bin(d: dict, default: Bin) -> Bin:
    center = d.get("center_m", default.pose.position)
    return Bin(Pose(tuple(center)), tuple(d.get("interior_dims_m", default.interior_dims)),
               d.get("wall_compliance_m", default.wall_compliance), d.get("wall_thickness_m", default.wall_thickness))


def _build_config(doc: dict) -> PipelineConfig:
    base = PipelineConfig()
    sc = base.scene
    obj = doc.get("object", {})
    cam = doc.get("camera", {})
    reach = doc.get("reach", {})
    rr = sc.reachable
    scene = replace(
        sc,
        object_dims=tuple(obj.get("dims_m", sc.object_dims)),
        sample_pitch=obj.get("sample_pitch_m", sc.sample_pitch),
        source=_bin(doc.get("source_bin", {}), sc.source),
        goal=_bin(doc.get("goal_bin", {}), sc.goal),
        reachable=ReachableRegion(reach.get("inner_radius_m", rr.inner_radius),
                                  reach.get("outer_radius_m", rr.outer_radius),
                                  tuple(reach.get("center_m", rr.center))),
        camera_height=cam.get("height_m", sc.camera_height),
        camera_focal_px=cam.get("focal_px", sc.camera_focal_px),
        camera_width_px=cam.get("width_px", sc.camera_width_px),
        camera_height_px=cam.get("height_px", sc.camera_height_px),
        pile_faces=doc.get("pile", {}).get("faces", sc.pile_faces),
    )
    g = doc.get("grid", {})
    grid = (g.get("rows", base.grid[0]), g.get("cols", base.grid[1]), g.get("layers", base.grid[2]))
    seg = doc.get("noise", {}).get("segmentation", {})
    pose = doc.get("noise", {}).get("pose", {})
    pn = base.pose_noise
    tol = doc.get("tolerances", {})
    ct = base.correction
    return replace(
        base,
        scene=scene,
        grid=grid,
        depth_sigma=cam.get("depth_sigma_m", base.depth_sigma),
        seg_noise=replace(base.seg_noise, **seg),
        pose_noise=PoseNoiseConfig(pose.get("translation_sigma_m", pn.translation_sigma),
                                   pose.get("yaw_sigma_rad", pn.yaw_sigma),
                                   pose.get("face_confusion", pn.face_confusion)),
        epsilon=tol.get("epsilon_m", base.epsilon),
        cup_radius=tol.get("cup_radius_m", base.cup_radius),
        drop_height=tol.get("drop_height_m", base.drop_height),
        push_step=tol.get("push_step_m", base.push_step),
        push_max_iters=tol.get("push_max_iters", base.push_max_iters),
        correction_timeout=tol.get("correction_timeout", base.correction_timeout),
        correction=CorrectionTolerances(tol.get("normal_tol_rad", ct.normal_tol),
                                        tol.get("footprint_tol_m", ct.footprint_tol),
                                        tol.get("max_correction_m", ct.max_correction),
                                        ct.normal_gain),
        voxel_resolution=tol.get("voxel_resolution_m", base.voxel_resolution),
        batch_seed=doc.get("batch_seed", base.batch_seed),
    )


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "variant",
    "seed",
    "n_targets",
    "transfers_succeeded",
    "transfers_attempted",
    "pick_attempts",
    "topple_count",
    "correction_count",
    "unoccupied_fraction",
    "goal_satisfied",
    "correction_timed_out",
    "sensing_steps",
    "failure_reason",
)
_INT_COLS = {"seed", "n_targets", "transfers_succeeded", "transfers_attempted", "pick_attempts", "topple_count",
             "correction_count", "sensing_steps"}
_BOOL_COLS = {"goal_satisfied", "correction_timed_out"}
_FLOAT_COLS = {"unoccupied_fraction"}


@dataclass(frozen=True)
class ReportRow:
    """One episode, flattened; wall time is deliberately not part of the row."""

    variant: str
    seed: int
    n_targets: int
    transfers_succeeded: int
    transfers_attempted: int
    pick_attempts: int
    topple_count: int
    correction_count: int
    unoccupied_fraction: float
    goal_satisfied: bool
    correction_timed_out: bool
    sensing_steps: int
    failure_reason: str

    @classmethod
    def from_report(cls, variant, seed: int, n_targets: int, report) -> ReportRow:
        return cls(Variant(variant).value, int(seed), int(n_targets), report.transfers_succeeded,
                   report.transfers_attempted, report.pick_attempts, report.topple_count, report.correction_count,
                   float(report.unoccupied_fraction), bool(report.goal_satisfied), bool(report.correction_timed_out),
                   report.sensing_steps, report.failure_reason or "")

    @property
    def success_fraction(self) -> float:
        return self.transfers_succeeded / self.n_targets if self.n_targets else 0.0


def _fmt(col, v) -> str:
    if col in _FLOAT_COLS:
        return "%.9g" % v
    if col in _BOOL_COLS:
        return "true" if v else "false"
    return str(v)


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(c, getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> list[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_COLUMNS:
        raise ValueError("unexpected report columns")
    rows = []
    for rec in reader:
        vals = {}
        for c, s in zip(CSV_COLUMNS, rec):
            if c in _INT_COLS:
                vals[c] = int(s)
            elif c in _FLOAT_COLS:
                vals[c] = float(s)
            elif c in _BOOL_COLS:
                vals[c] = s == "true"
            else:
                vals[c] = s
        rows.append(ReportRow(**vals))
    return rows


SUMMARY_METRICS = (
    "success_fraction",
    "unoccupied_fraction",
    "pick_attempts",
    "topple_count",
    "correction_count",
    "transfers_attempted",
    "goal_satisfied",
)


def summarize(rows) -> dict[str, dict]:
    """Per-variant mean and population sd of each summary metric, variants sorted."""
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one report")
    out = {}
    for v in sorted({r.variant for r in rows}):
        sel = [r for r in rows if r.variant == v]
        entry = {"episodes": len(sel)}
        for m in SUMMARY_METRICS:
            vals = [float(getattr(r, m)) for r in sel]
            entry[m] = {"mean": math.fsum(vals) / len(vals), "sd": statistics.pstdev(vals) if len(vals) > 1 else 0.0}
        out[v] = entry
    return out


def emit_summary(rows, path=None) -> tuple[str, dict]:
    """Fixed-column text table plus the same numbers as a dict; optionally written to ``path`` and ``path``.json."""
    summary = summarize(rows)
    head = ["variant", "n"] + [f"{m}_mean" for m in SUMMARY_METRICS] + [f"{m}_sd" for m in SUMMARY_METRICS]
    lines = ["\t".join(head)]
    for v, e in summary.items():
        cells = [v, str(e["episodes"])]
        cells += ["%.9g" % e[m]["mean"] for m in SUMMARY_METRICS]
        cells += ["%.9g" % e[m]["sd"] for m in SUMMARY_METRICS]
        lines.append("\t".join(cells))
    text = "\n".join(lines) + "\n"
    if path is not None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        Path(str(p) + ".json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return text, summary


# ---------------------------------------------------------------------------
# action logs and replay
# ---------------------------------------------------------------------------


def format_log(history) -> str:
    lines = [json.dumps({"format": LOG_FORMAT, "version": LOG_VERSION}, sort_keys=True)]
    lines += [json.dumps(rec, sort_keys=True) for rec in history]
    return "\n".join(lines) + "\n"


def parse_log(text: str) -> list[dict]:
    records = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ReplayError(f"malformed record: {e.msg}", i) from None
        if not isinstance(rec, dict):
            raise ReplayError("record is not an object", i)
        if i == 1 and rec.get("format") == LOG_FORMAT:
            if rec.get("version") != LOG_VERSION:
                raise ReplayError(f"log version {rec.get('version')} != supported {LOG_VERSION}", i)
            continue
        if "action" not in rec:
            raise ReplayError("record has no 'action'", i)
        rec["_line"] = i
        records.append(rec)
    return records


def replay_text(snapshot_text: str, log_text: str):
    try:
        world = load_snapshot(snapshot_text)
    except (ValueError, KeyError) as e:
        raise ReplayError(f"bad snapshot: {e}") from None
    for rec in parse_log(log_text):
        line = rec.pop("_line")
        try:
            world = apply_action(world, rec)
        except (KeyError, TypeError, ValueError) as e:
            raise ReplayError(f"cannot apply record: {e}", line) from None
    return world


def replay(snapshot_path, log_path):
    """Rebuild the final world from an initial snapshot and an action log."""
    return replay_text(Path(snapshot_path).read_text(), Path(log_path).read_text())


# ---------------------------------------------------------------------------
# batch execution
# ---------------------------------------------------------------------------


@dataclass
class EpisodeArtifacts:
    row: ReportRow
    initial_snapshot: str
    final_snapshot: str
    log: str
    clouds: list


def _job(args) -> EpisodeArtifacts:
    cfg, seed, keep_clouds = args
    report, trace = simulate_episode(cfg, seed, keep_clouds=keep_clouds)
    row = ReportRow.from_report(cfg.variant, seed, len(trace.arrangement), report)
    return EpisodeArtifacts(row, trace.initial_snapshot, snapshot(trace.world), format_log(trace.world.history),
                            trace.clouds)


def run_scenario(scenario: ScenarioFile, variants=None, seeds=None, workers: int = 1, keep_clouds: bool = False):
    variants = tuple(Variant(v) for v in (variants or scenario.variants))
    seeds = tuple(scenario.seeds if seeds is None else seeds)
    jobs = [(scenario.config_for(v), s, keep_clouds) for v in variants for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield from ex.map(_job, jobs)
    else:
        for j in jobs:
            yield _job(j)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="packsim", description="Simulated bin-to-bin packing experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a batch of episodes and write a report table")
    run.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--variants", help="comma-separated variants, e.g. V1,V5 (default: from scenario)")
    run.add_argument("--seeds", help="inclusive range a..b (default: from scenario)")
    run.add_argument("--out", help=f"report CSV path (default: ${OUT_DIR_ENV}/report.csv)")
    run.add_argument("--summary", help="summary table path; a .json twin is written beside it")
    run.add_argument("--dump-clouds", action="store_true", help="write one PLY per sensing step next to the CSV")
    run.add_argument("--record", help="directory for initial/final snapshots and action logs")
    run.add_argument("--workers", type=int, default=1)
    rep = sub.add_parser("replay", help="replay an action log onto a snapshot and print the final snapshot")
    rep.add_argument("--snapshot", required=True)
    rep.add_argument("--log", required=True)
    rep.add_argument("--out", help="write the final snapshot here instead of stdout")
    return ap


def _default_out(scenario: ScenarioFile) -> Path:
    base = os.environ.get(OUT_DIR_ENV) or scenario.output_dir or "out"
    return Path(base) / "report.csv"


def cli_run(args: argparse.Namespace) -> int:
    try:
        scenario = parse_scenario(args.scenario)
        variants = parse_variants(args.variants) if args.variants else None
        seeds = parse_seeds(args.seeds) if args.seeds else None
    except (ScenarioError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else _default_out(scenario)
    out.parent.mkdir(parents=True, exist_ok=True)
    record = Path(args.record) if args.record else None
    if record is not None:
        record.mkdir(parents=True, exist_ok=True)
    rows = []
    for art in run_scenario(scenario, variants, seeds, args.workers, args.dump_clouds):
        r = art.row
        rows.append(r)
        stem = f"{r.variant}_seed{r.seed}"
        for k, cloud in enumerate(art.clouds):
            write_ply(cloud, out.parent / f"{stem}_step{k:03d}.ply")
        if record is not None:
            (record / f"{stem}_initial.json").write_text(art.initial_snapshot)
            (record / f"{stem}_final.json").write_text(art.final_snapshot)
            (record / f"{stem}_actions.jsonl").write_text(art.log)
    out.write_text(format_csv(rows))
    text, _ = emit_summary(rows, args.summary)
    print(text, end="")
    return 0


def cli_replay(args: argparse.Namespace) -> int:
    try:
        world = replay(args.snapshot, args.log)
    except (ReplayError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    text = snapshot(world)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return cli_run(args)
        return cli_replay(args)
    except Exception as e:  # noqa: BLE001 - the CLI maps every failure to an exit code
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
