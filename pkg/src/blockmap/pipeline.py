from __future__ import annotations

import itertools
import json
import logging
import platform
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import pandas as pd
import pypeln as pl

from .alignment import BlockInput, GlobalMap, align_block, form_block_inputs
from .change import run_block_update
from .config import PipelineConfig
from .errors import BlockmapError, ConfigError, with_context
from .evaluation.trajectory import format_tum_line
from .io import MapCheckpoint, export_map, export_objects, export_semantic_map, load_checkpoint, save_checkpoint
from .provenance import write_provenance
from .semantics import ObjectRegistry, integrate_block
from .stream import FileProvider, GeometryProvider, ProviderOutput, SyntheticProvider, open_stream, provider_infer
from .util import append_jsonl, append_lines, ensure_dir, truncate_lines, write_json

logger = logging.getLogger(__name__)

TRAJECTORY_NAME = "trajectory.txt"
SMOOTHED_NAME = "trajectory_smoothed.txt"
EVENTS_NAME = "events.jsonl"
BLOCKS_NAME = "blocks.jsonl"
BLOCKS_CSV = "blocks.csv"
TIMINGS_NAME = "timings.jsonl"
MAP_NAME = "map.ply"
SEMANTIC_MAP_NAME = "map_semantic.ply"
OBJECTS_NAME = "objects.json"
REPORT_NAME = "run_report.json"
RUN_MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"
CHECKPOINT_DIR = "checkpoint"
TRACEBACK_NAME = "EXCEPTION_TRACEBACK.txt"

# appended block by block; the checkpoint records their line counts
STREAMED = (TRAJECTORY_NAME, SMOOTHED_NAME, EVENTS_NAME, BLOCKS_NAME, TIMINGS_NAME)
# wall-clock timings differ between runs and stay out of the hashed deliverables
DELIVERABLES = (TRAJECTORY_NAME, SMOOTHED_NAME, EVENTS_NAME, BLOCKS_NAME) + (MAP_NAME, SEMANTIC_MAP_NAME, OBJECTS_NAME, REPORT_NAME)

TIMED_STAGES = ("provider", "align", "track", "change")

_CSV_COLUMNS = (
    "block_index", "first_frame", "last_frame", "n_frames", "block_scale", "scale_mode",
    "points_added", "n_detected", "n_new", "n_merges", "untracked", "n_events", "map_points", "objects",
)


def stream_dir(cfg: PipelineConfig) -> Path:
    if not cfg.stream.path:
        raise ConfigError("stream.path is not set")
    p = Path(cfg.stream.path)
    return p if p.is_dir() else p.parent


def make_provider(cfg: PipelineConfig) -> GeometryProvider:
    sdir = stream_dir(cfg)
    if cfg.stream.provider == "synthetic":
        return SyntheticProvider.from_dir(sdir)
    pred = Path(cfg.stream.predictions_dir) if cfg.stream.predictions_dir else None
    return FileProvider(sdir, pred)


def _where(block: BlockInput) -> str:
    return f"block {block.block_index} (frames {block.first_frame}..{block.last_frame})"


def _guarded(blocks: Iterable[BlockInput]) -> Iterator[Any]:
    """Yield the blocks; an ingest error is yielded once as a value and ends the stream."""
    try:
        yield from blocks
    except Exception as e:
        yield e


@dataclass
class BlockPipeline:
    cfg: PipelineConfig
    # injected in tests; otherwise chosen from stream.provider
    provider: Optional[GeometryProvider] = None

    def _infer(self, provider: GeometryProvider, item: Any) -> Any:
        # errors travel down the pipeline as values so the consumer re-raises them unchanged
        if isinstance(item, BaseException):
            return item
        try:
            t0 = time.perf_counter()
            out = provider_infer(provider, item.frame_list, item.query_points)
            return item, out, time.perf_counter() - t0
        except BlockmapError as e:
            return with_context(e, _where(item)).with_traceback(e.__traceback__)
        except Exception as e:
            return e

    def _outputs(
        self, blocks: Iterable[BlockInput], provider: GeometryProvider
    ) -> Iterator[Tuple[BlockInput, ProviderOutput, float]]:
        """Provider outputs in block order, with the provider's elapsed seconds.

        Threaded: ingest runs in pypeln's source thread and the provider in a
        single-worker stage, both behind queues of ``runner.queue_depth``; the
        caller (map update) consumes in the calling thread.
        """
        r = self.cfg.runner
        items = _guarded(blocks)
        if r.threaded:
            stage: Iterable[Any] = pl.thread.map(lambda b: self._infer(provider, b), items, workers=1, maxsize=int(r.queue_depth))
        else:
            stage = (self._infer(provider, b) for b in items)
        for item in stage:
            if isinstance(item, BaseException):
                raise item
            yield item

    def run(self, resume: bool = False) -> Path:
        """Process the configured stream block by block.

        Parameters
        ----------
        resume:
            Continue from the checkpoint in the output directory. The config
            hash must match; streamed outputs are cut back to the line counts
            the checkpoint recorded.

        Returns
        -------
        out_dir:
            The output directory. A manifest is always written.
        """
        cfg = self.cfg
        created_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        stage_log: List[Dict[str, Any]] = []
        blocking_errors: List[str] = []
        status = "started"
        config_hash = cfg.hash()
        out_dir = ensure_dir(Path(cfg.output.dir))
        ck_dir = out_dir / CHECKPOINT_DIR

        def _stage(name: str, ok: bool, **kw: Any) -> None:
            stage_log.append({"stage": name, "ok": bool(ok), **kw})

        def _write_manifest(extra: Dict[str, Any]) -> None:
            manifest = {
                "created_utc": created_utc,
                "status": status,
                "blocking_errors": blocking_errors,
                "stage_log": stage_log,
                "platform": {"python": platform.python_version(), "system": platform.platform()},
                "config_hash": config_hash,
                "stream": cfg.stream.path,
                "provider": cfg.stream.provider,
                "resumed": bool(resume),
            }
            manifest.update(extra)
            write_json(out_dir / RUN_MANIFEST_NAME, manifest)

        gmap: Optional[GlobalMap] = None
        n_done = 0
        try:
            sdir = stream_dir(cfg)
            stream = open_stream(Path(cfg.stream.path))
            provider = self.provider or make_provider(cfg)
            _stage("open_stream", True, stream_dir=str(sdir), frames=len(stream), provider=cfg.stream.provider)
            write_json(out_dir / CONFIG_NAME, cfg.to_dict())

            if resume:
                ck = load_checkpoint(ck_dir, expected_hash=config_hash)
                gmap, registry = ck.gmap, ck.registry
                start_block = ck.last_block + 1
                counts = {n: int(ck.outputs.get(n, 0)) for n in STREAMED}
                for n in STREAMED:
                    truncate_lines(out_dir / n, counts[n])
                _stage("resume", True, from_block=start_block, map_points=len(gmap.cloud), objects=len(registry))
            else:
                gmap = GlobalMap.empty(cfg.map.voxel_size)
                registry = ObjectRegistry(voxel_size=cfg.tracker.object_voxel_size)
                start_block = 0
                counts = {n: 0 for n in STREAMED}
                for n in STREAMED:
                    (out_dir / n).write_text("", encoding="utf-8")

            a = cfg.align
            blocks: Iterable[BlockInput] = form_block_inputs(
                stream, a.block_size, a.keyframe_count, cfg.tracker.grid_stride, start_block
            )
            if cfg.runner.max_blocks is not None:
                limit = int(cfg.runner.max_blocks)
                blocks = itertools.takewhile(lambda b: b.block_index < limit, blocks)

            t0 = time.perf_counter()
            totals = dict.fromkeys(TIMED_STAGES, 0.0)
            for block, output, provider_s in self._outputs(blocks, provider):
                timing = self._update(gmap, registry, block, output, out_dir, counts, provider_s)
                for k in TIMED_STAGES:
                    totals[k] += timing[k]
                n_done += 1
                if cfg.output.checkpoint:
                    save_checkpoint(ck_dir, MapCheckpoint(config_hash, block.block_index, gmap, registry, dict(counts)))
            _stage(
                "blocks",
                True,
                processed=n_done,
                total=gmap.blocks_processed,
                elapsed_s=round(time.perf_counter() - t0, 3),
                stage_s={k: round(v, 3) for k, v in totals.items()},
            )
            if gmap.blocks_processed == 0:
                blocking_errors.append("stream produced no blocks")

            export_map(gmap, out_dir / MAP_NAME)
            export_semantic_map(gmap, registry, out_dir / SEMANTIC_MAP_NAME)
            export_objects(registry, out_dir / OBJECTS_NAME)
            report = self._report(gmap, registry, counts, config_hash)
            write_json(out_dir / REPORT_NAME, report)
            self._blocks_csv(out_dir)
            _stage("export", True, map_points=len(gmap.cloud), objects=len(registry))

            hashes = write_provenance(out_dir, DELIVERABLES, config_hash)
            _stage("provenance", True, n_files=sum(h is not None for h in hashes.values()))

            status = "success" if not blocking_errors else "failed"
            _write_manifest({"report": report})
            logger.info("processed %d blocks, %d poses, %d objects", n_done, gmap.n_poses, len(registry))
            return out_dir
        except Exception as e:
            status = "failed"
            _stage("run", False, processed=n_done, error=str(e))
            _write_manifest(
                {
                    "blocks_processed": gmap.blocks_processed if gmap is not None else 0,
                    "exception": {"type": type(e).__name__, "message": str(e), "traceback": traceback.format_exc()},
                }
            )
            raise

    def _update(
        self,
        gmap: GlobalMap,
        registry: ObjectRegistry,
        block: BlockInput,
        output: ProviderOutput,
        out_dir: Path,
        counts: Dict[str, int],
        provider_s: float = 0.0,
    ) -> Dict[str, float]:
        """Map-update stage: align, integrate semantics, update states, then stream the block's outputs.

        Returns the block's elapsed seconds per entry of ``TIMED_STAGES``.
        """
        cfg = self.cfg
        timing = {"provider": float(provider_s)}
        try:
            t = time.perf_counter()
            bs = align_block(gmap, block, cfg.align, smoother=cfg.smoother, output=output)
            timing["align"] = time.perf_counter() - t
            t = time.perf_counter()
            tracking = integrate_block(gmap, bs, registry, cfg.tracker)
            timing["track"] = time.perf_counter() - t
            t = time.perf_counter()
            events = run_block_update(registry, bs, tracking, cfg.change)
            timing["change"] = time.perf_counter() - t
        except BlockmapError as e:
            raise with_context(e, _where(block)) from e

        entries = gmap.drain_trajectory()
        counts[TRAJECTORY_NAME] += append_lines(out_dir / TRAJECTORY_NAME, (format_tum_line(e.timestamp, e.raw) for e in entries))
        counts[SMOOTHED_NAME] += append_lines(out_dir / SMOOTHED_NAME, (format_tum_line(e.timestamp, e.smoothed) for e in entries))
        counts[EVENTS_NAME] += append_jsonl(out_dir / EVENTS_NAME, (ev.to_dict() for ev in events))
        rec = {
            **bs.to_report(),
            "tracking": tracking.to_report(),
            "events": [ev.event for ev in events],
            "map_points": len(gmap.cloud),
            "objects": registry.live_count(),
        }
        counts[BLOCKS_NAME] += append_jsonl(out_dir / BLOCKS_NAME, [rec])
        counts[TIMINGS_NAME] += append_jsonl(
            out_dir / TIMINGS_NAME,
            [{"block_index": bs.block_index, "timing": {f"{k}_s": round(timing[k], 6) for k in TIMED_STAGES}}],
        )
        logger.info(
            "%s: s=%.6g (%s) +%d points, %d detected, %d events",
            _where(block), bs.block_scale, bs.scale_mode, bs.points_added, len(tracking.detected), len(events),
        )
        return timing

    def _report(self, gmap: GlobalMap, registry: ObjectRegistry, counts: Dict[str, int], config_hash: str) -> Dict[str, Any]:
        by_state: Dict[str, int] = {}
        for o in registry:
            by_state[o.state] = by_state.get(o.state, 0) + 1
        return {
            "config_hash": config_hash,
            "blocks_processed": int(gmap.blocks_processed),
            "n_poses": int(gmap.n_poses),
            "last_frame": gmap.last_frame,
            "map_points": len(gmap.cloud),
            "objects": len(registry),
            "objects_by_state": dict(sorted(by_state.items())),
            "objects_created": int(registry.n_created),
            "untracked_detections": int(registry.n_untracked),
            "events": int(counts[EVENTS_NAME]),
            "outputs": sorted(DELIVERABLES),
        }

    def _blocks_csv(self, out_dir: Path, chunk_rows: int = 64) -> None:
        """Flatten blocks.jsonl into one CSV row per block, ``chunk_rows`` at a time."""
        path = out_dir / BLOCKS_CSV
        pd.DataFrame(columns=list(_CSV_COLUMNS)).to_csv(path, index=False)
        rows: List[Dict[str, Any]] = []

        def _flush() -> None:
            pd.DataFrame(rows, columns=list(_CSV_COLUMNS)).to_csv(path, mode="a", header=False, index=False)
            rows.clear()

        with (out_dir / BLOCKS_NAME).open("r", encoding="utf-8") as f:
            for ln in f:
                if not ln.strip():
                    continue
                r = json.loads(ln)
                t = r["tracking"]
                r.update(
                    n_detected=len(t["detected"]),
                    n_new=len(t["new_objects"]),
                    n_merges=len(t["merges"]),
                    untracked=t["untracked"],
                    n_events=len(r["events"]),
                )
                rows.append({k: r.get(k) for k in _CSV_COLUMNS})
                if len(rows) >= chunk_rows:
                    _flush()
        if rows:
            _flush()
