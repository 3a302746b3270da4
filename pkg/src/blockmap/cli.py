from __future__ import annotations

import argparse
import json
import traceback
from pathlib import Path
from typing import Any, List, Optional

from . import __version__
from .change.schema import RECENT, REMOVED, RETAINED
from .config import PipelineConfig
from .errors import BlockmapError, ConfigError, DataError, InvariantViolation
from .evaluation import ate, read_tum, recon_metrics
from .evaluation.report import write_ate_report, write_recon_report
from .io import export_events, export_map, export_objects, export_semantic_map, load_checkpoint, read_ply
from .io.checkpoint import STATE_NAME, MapCheckpoint
from .pipeline import CHECKPOINT_DIR, EVENTS_NAME, TRACEBACK_NAME, BlockPipeline
from .provenance import PROVENANCE_NAME, hash_tree
from .spatial import EgoState, colocated, distances, pairwise_distances
from .stream import SceneSpec, SyntheticProvider, SyntheticScene, synth_generate
from .stream.provider import export_predictions
from .util import configure_logging

EXPORTS = ("map", "semantic", "objects", "events")
STATES = (RECENT, RETAINED, REMOVED)


def _checkpoint_dir(p: Path) -> Path:
    """Accept either a run directory or its checkpoint directory."""
    p = Path(p)
    if (p / CHECKPOINT_DIR / STATE_NAME).exists():
        return p / CHECKPOINT_DIR
    return p


def _load(p: Path) -> MapCheckpoint:
    return load_checkpoint(_checkpoint_dir(p))


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_run(args: argparse.Namespace) -> int:
    overrides: List[str] = list(args.set or [])
    if args.stream is not None:
        overrides.append(f"stream.path={json.dumps(args.stream)}")
    cfg = PipelineConfig.load(Path(args.config) if args.config else None, overrides)
    if args.out is not None:
        cfg = cfg.with_output(args.out)
    out_dir = Path(cfg.output.dir)
    try:
        run_dir = BlockPipeline(cfg=cfg).run(resume=bool(args.resume))
    except Exception:
        tb = traceback.format_exc()
        # best effort: keep the traceback next to the manifest
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / TRACEBACK_NAME).write_text(tb, encoding="utf-8")
            print(f"[INFO] Wrote traceback: {out_dir / TRACEBACK_NAME}")
        except Exception:
            pass
        raise
    print(f"[OK] Run folder: {run_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.mode == "ate":
        est, gt = read_tum(Path(args.est)), read_tum(Path(args.gt))
        rigid = ate(est, gt, max_dt=args.max_dt)
        sim = ate(est, gt, max_dt=args.max_dt, with_scale=True)
        report = write_ate_report(rigid, sim, out, plot=not args.no_plot)
        print(f"[OK] ate_rmse={report['ate_rmse']:.9f} ate_rmse_sim3={report['ate_rmse_sim3']:.9f} matched={report['n_matched']}")
    else:
        m = recon_metrics(read_ply(Path(args.est)), read_ply(Path(args.gt)), align=args.align, aggregate=args.aggregate)
        write_recon_report(m, out)
        print(f"[OK] accuracy={m.accuracy:.9f} completion={m.completion:.9f} chamfer={m.chamfer:.9f}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if args.what == "events":
        ck_dir = _checkpoint_dir(Path(args.checkpoint))
        _load(ck_dir)
        export_events(ck_dir.parent / EVENTS_NAME, path)
    else:
        ck = _load(Path(args.checkpoint))
        if args.what == "map":
            export_map(ck.gmap, path)
        elif args.what == "semantic":
            export_semantic_map(ck.gmap, ck.registry, path)
        else:
            export_objects(ck.registry, path)
    print(f"[OK] {args.what} -> {path}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SceneSpec.load(Path(args.spec))
    out = Path(args.out)
    manifest = synth_generate(spec, seed=int(args.seed), out_dir=out)
    print(f"[OK] Stream: {manifest} ({spec.n_frames} frames)")
    if args.predictions:
        cfg = PipelineConfig.load(Path(args.config) if args.config else None)
        a = cfg.align
        written = export_predictions(
            SyntheticProvider(SyntheticScene(spec, seed=int(args.seed))),
            stream_dir=out,
            block_size=a.block_size,
            keyframe_count=a.keyframe_count,
            grid_stride=cfg.tracker.grid_stride,
        )
        print(f"[OK] Stored {len(written)} frame-list predictions")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    ck_dir = _checkpoint_dir(Path(args.checkpoint))
    ck = load_checkpoint(ck_dir)
    summary = ck.summary()
    summary["files"] = hash_tree(ck_dir)["sha256"]
    prov = ck_dir.parent / PROVENANCE_NAME
    if prov.exists():
        summary["deliverables"] = json.loads(prov.read_text(encoding="utf-8")).get("deliverables")
    _print_json(summary)
    return 0


def _cmd_distances(args: argparse.Namespace) -> int:
    ck = _load(Path(args.checkpoint))
    states = tuple(args.state) if args.state else (RECENT, RETAINED)
    if args.pairwise:
        _print_json(pairwise_distances(ck.registry, states))
        return 0
    if args.colocated:
        class_a, class_b = args.colocated
        pairs = colocated(ck.registry, class_a, class_b, float(args.radius), states)
        _print_json([{"a": a, "b": b, "distance": d} for a, b, d in pairs])
        return 0
    g = ck.gmap
    if g.last_pose is None or g.last_frame is None:
        raise DataError("checkpoint holds no camera pose yet")
    ego = EgoState.from_pose(g.last_frame, g.last_pose)
    _print_json([d.to_dict() for d in distances(ego, ck.registry, states)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="blockmap",
        description="Streaming block-wise 3-D semantic mapping: align, track, detect change, evaluate",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--log-level", type=str, default=None, help="Overrides BLOCKMAP_LOG_LEVEL (DEBUG|INFO|WARNING|ERROR)")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="Process a frame stream block by block")
    r.add_argument("--config", type=str, default=None, help="JSON (or YAML) pipeline config")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a config value (repeatable)")
    r.add_argument("--stream", type=str, default=None, help="Stream directory or manifest.jsonl (sets stream.path)")
    r.add_argument("--out", type=str, default=None, help="Output directory (sets output.dir)")
    r.add_argument("--resume", action="store_true", help="Continue from the checkpoint in the output directory")

    e = sub.add_parser("eval", help="Trajectory (ATE) or reconstruction metrics")
    e.add_argument("est", type=str, help="Estimated trajectory (TUM) or point cloud (PLY)")
    e.add_argument("gt", type=str, help="Ground-truth trajectory (TUM) or point cloud (PLY)")
    e.add_argument("--mode", choices=("ate", "recon"), default="ate")
    e.add_argument("--max-dt", type=float, default=0.02, help="Timestamp association tolerance [s]")
    e.add_argument("--align", action="store_true", help="recon: ICP-align the prediction first")
    e.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    e.add_argument("--no-plot", action="store_true")
    e.add_argument("--out", type=str, default="eval")

    x = sub.add_parser("export", help="Export map, semantic map, objects or events from a checkpoint")
    x.add_argument("checkpoint", type=str, help="Run directory or its checkpoint/ directory")
    x.add_argument("what", choices=EXPORTS)
    x.add_argument("path", type=str)

    s = sub.add_parser("synth", help="Generate a synthetic stream from a scene spec")
    s.add_argument("spec", type=str)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=str, required=True)
    s.add_argument("--predictions", action="store_true", help="Also store file-provider predictions")
    s.add_argument("--config", type=str, default=None, help="Pipeline config that sizes the stored frame lists (align) and track grids (tracker)")

    i = sub.add_parser("inspect", help="Print a checkpoint summary")
    i.add_argument("checkpoint", type=str)

    d = sub.add_parser("distances", help="Object distances from the last camera pose")
    d.add_argument("checkpoint", type=str)
    d.add_argument("--state", action="append", choices=STATES, help="Object states to include (default Recent, Retained)")
    d.add_argument("--pairwise", action="store_true", help="Centroid distances between objects instead")
    d.add_argument("--colocated", nargs=2, metavar=("CLASS_A", "CLASS_B"), help="Pairs of these classes within --radius")
    d.add_argument("--radius", type=float, default=0.5)
    return ap


_COMMANDS = {
    "run": _cmd_run,
    "eval": _cmd_eval,
    "export": _cmd_export,
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
    "distances": _cmd_distances,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return _COMMANDS[args.cmd](args)
    except ConfigError as e:
        print(f"[FAIL] config error: {e}")
        return e.exit_code
    except DataError as e:
        print(f"[FAIL] data error: {e}")
        return e.exit_code
    except BlockmapError as e:
        print(f"[FAIL] internal error: {e}")
        return e.exit_code
    except Exception as e:
        print(f"[FAIL] {type(e).__name__}: {e}")
        return InvariantViolation.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
