"""Block partitioning, metric scale recovery and rolling-reference alignment.

Each block is sent to the geometry provider together with the previous
block's keyframes. The provider answers in the coordinate frame of the list's
first frame (an anchor keyframe for every block but the first); right-
multiplying every list pose by ``Δ = E_ref_current⁻¹ · E_ref`` puts that
anchor back where the previous block left it, and carries the whole block
into the global frame while keeping intra-list relative poses untouched.
"""

from __future__ import annotations

import logging
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError, InvariantViolation, NonPositiveScale, NoValidScale, TooShort
from ..geometry import DepthMap, ExtrinsicPose, compose, grid_pixels, identity, invert, unproject
from ..smoothing import SmootherConfig, smooth_block_poses
from ..stream.features import frame_score
from ..stream.provider import GeometryProvider, provider_infer
from ..stream.schema import FrameRecord, ProviderOutput
from .schema import AlignConfig, BlockInput, BlockState, GlobalMap, TrajectoryEntry

logger = logging.getLogger(__name__)


def partition(stream: Iterable[FrameRecord], n: int) -> Iterator[List[FrameRecord]]:
    """Non-overlapping blocks of ``n`` frames; a trailing singleton joins the previous block.

    Holds at most one full block plus one frame of lookahead.
    """
    if int(n) < 2:
        raise ConfigError(f"block size must be >= 2, got {n}")
    pending: Optional[List[FrameRecord]] = None
    cur: List[FrameRecord] = []
    for f in stream:
        cur.append(f)
        if pending is not None and len(cur) == 2:
            yield pending
            pending = None
        if len(cur) == n:
            pending, cur = cur, []
    if pending is not None:
        yield pending + cur
    elif cur:
        yield cur


def select_keyframes(scores: Sequence[float], k: int) -> List[int]:
    n = len(scores)
    if not (0 < int(k) < n):
        raise ConfigError(f"need 0 < k < block length (k={k}, length={n})")
    order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
    return sorted(order[: int(k)])


def block_keyframes(frames: Sequence[FrameRecord], k: int) -> List[int]:
    """Keyframe positions in a block, with k clamped for short trailing blocks."""
    if len(frames) == 1:
        return [0]
    return select_keyframes([frame_score(f) for f in frames], min(int(k), len(frames) - 1))


def estimate_scale(
    d_pred: DepthMap,
    d_sensor: DepthMap,
    cfg: AlignConfig,
    pred_conf: Optional[np.ndarray] = None,
) -> Optional[float]:
    """Least-squares s minimising ‖M(s·d_pred − d_sensor)‖²; None when nothing survives the mask."""
    p = d_pred.values
    s = d_sensor.values
    if p.shape != s.shape:
        raise ConfigError(f"depth shapes differ: {p.shape} vs {s.shape}")
    m = np.isfinite(p) & np.isfinite(s)
    m &= (s > cfg.near_thresh) & (s < cfg.far_thresh)
    if pred_conf is not None and cfg.min_pred_conf is not None:
        m &= np.asarray(pred_conf, dtype=float).reshape(p.shape) >= float(cfg.min_pred_conf)
    if not m.any():
        return None
    denom = float(np.sum(p[m] * p[m]))
    if denom <= 0.0:
        return None
    return float(np.sum(p[m] * s[m]) / denom)


def block_scale(scales: Sequence[Optional[float]]) -> float:
    finite = [float(s) for s in scales if s is not None and np.isfinite(s)]
    if not finite:
        raise NoValidScale("no frame in the block produced a usable scale")
    return float(np.median(finite))


def rescale(output: ProviderOutput, s: float) -> ProviderOutput:
    if not (np.isfinite(s) and s > 0.0):
        raise NonPositiveScale(f"scale must be positive, got {s}")
    if s == 1.0:
        return output
    return ProviderOutput(
        predicted_depths=[d.scaled(s) for d in output.predicted_depths],
        extrinsics=[ExtrinsicPose(R=E.R, t=E.t * s) for E in output.extrinsics],
        tracks=output.tracks,
        depth_confidences=output.depth_confidences,
    )


def compute_delta(e_ref_current: ExtrinsicPose, e_ref: ExtrinsicPose) -> ExtrinsicPose:
    return compose(invert(e_ref_current), e_ref)


def form_block_inputs(
    stream: Iterable[FrameRecord],
    n: int,
    k: int,
    grid_stride: int,
    start_block: int = 0,
) -> Iterator[BlockInput]:
    """Blocks with their anchor keyframes and track query grid.

    Blocks before ``start_block`` are still read (the one right before it
    supplies the anchors) but not yielded.
    """
    prev: Optional[List[FrameRecord]] = None
    for i, frames in enumerate(partition(stream, n)):
        anchors: List[FrameRecord] = []
        if prev is not None:
            anchors = [prev[p] for p in block_keyframes(prev, k)]
        if i >= start_block:
            K = (anchors or frames)[0].intrinsics
            us, vs = grid_pixels(K.width, K.height, grid_stride)
            q = np.stack([us, vs], axis=1).astype(float)
            yield BlockInput(block_index=i, anchors=anchors, frames=frames, query_points=q)
        prev = frames


def _frame_scales(block: BlockInput, output: ProviderOutput, cfg: AlignConfig) -> tuple[List[Optional[float]], bool]:
    scales: List[Optional[float]] = []
    has_sensor = False
    for j, f in enumerate(block.frame_list):
        if f.sensor_depth is None:
            scales.append(None)
            continue
        has_sensor = True
        conf = output.depth_confidences[j] if output.depth_confidences is not None else None
        scales.append(estimate_scale(output.predicted_depths[j], f.sensor_depth, cfg, conf))
    return scales, has_sensor


def align_block(
    gmap: GlobalMap,
    block: BlockInput,
    cfg: AlignConfig,
    provider: Optional[GeometryProvider] = None,
    *,
    smoother: Optional[SmootherConfig] = None,
    output: Optional[ProviderOutput] = None,
) -> BlockState:
    """Align one block into the global frame and grow the map.

    Parameters
    ----------
    gmap:
        Rolling state; mutated in place (E_ref, keyframe memory, trajectory, cloud).
    block:
        Anchors plus block frames, as produced by ``form_block_inputs``.
    provider:
        Called on the frame list unless ``output`` was already computed
        (the threaded pipeline runs the provider in its own stage).
    smoother:
        CCMA settings for the smoothed trajectory; ``None`` or disabled keeps raw poses.
    """
    if block.n_anchors:
        if gmap.e_ref is None:
            raise InvariantViolation(f"block {block.block_index} has anchors but the map has no reference pose")
        anchor_idx = [int(f.frame_index) for f in block.anchors]
        if anchor_idx != gmap.keyframe_indices:
            raise InvariantViolation(
                f"block {block.block_index} anchors {anchor_idx} differ from stored keyframes {gmap.keyframe_indices}"
            )
    elif gmap.e_ref is not None:
        raise InvariantViolation(f"block {block.block_index} has no anchors but the map is already anchored")

    frames = block.frame_list
    if output is None:
        if provider is None:
            raise InvariantViolation("align_block needs a provider or a precomputed provider output")
        output = provider_infer(provider, frames, block.query_points)
    else:
        output.validate(len(frames))

    scales, has_sensor = _frame_scales(block, output, cfg)
    if not has_sensor:
        s, mode = 1.0, "monocular"
    else:
        try:
            s, mode = block_scale(scales), "sensor"
        except NoValidScale:
            s = gmap.last_scale if gmap.last_scale is not None else 1.0
            mode = "fallback"
            logger.warning("block %d: no usable sensor scale, reusing s=%.6g", block.block_index, s)
    out = rescale(output, s)

    e_ref_before = gmap.e_ref
    delta = identity() if e_ref_before is None else compute_delta(out.extrinsics[0], e_ref_before)
    aligned = [compose(E, delta) for E in out.extrinsics]
    if e_ref_before is not None and not aligned[0].allclose(e_ref_before, atol=1e-6):
        raise InvariantViolation(f"block {block.block_index}: aligned anchor does not reproduce E_ref")

    block_aligned = aligned[block.n_anchors:]
    smoothed = list(block_aligned)
    if smoother is not None and smoother.enabled:
        try:
            smoothed = smooth_block_poses(block_aligned, smoother)
        except TooShort:
            logger.warning("block %d: %d frames, smoothing skipped", block.block_index, len(block_aligned))

    kf = block_keyframes(block.frames, cfg.keyframe_count)
    anchor_src = smoothed if cfg.anchor_pose == "smoothed" else block_aligned
    gmap.e_ref = anchor_src[kf[0]]
    gmap.keyframe_indices = [int(block.frames[p].frame_index) for p in kf]
    gmap.last_scale = s

    gmap.append_trajectory(
        [
            TrajectoryEntry(frame_index=int(f.frame_index), timestamp=float(f.timestamp), raw=E, smoothed=Es)
            for f, E, Es in zip(block.frames, block_aligned, smoothed)
        ]
    )

    added = 0
    for p, f in enumerate(block.frames):
        pc = unproject(out.predicted_depths[block.n_anchors + p], f.intrinsics, block_aligned[p], stride=cfg.grid_stride)
        added += gmap.cloud.insert(pc.points, np.full(len(pc), int(f.frame_index), dtype=np.int64))
    gmap.blocks_processed = block.block_index + 1

    logger.debug(
        "block %d: frames %d..%d s=%.6g (%s) keyframes=%s +%d points",
        block.block_index, block.first_frame, block.last_frame, s, mode, gmap.keyframe_indices, added,
    )
    return BlockState(
        block_index=block.block_index,
        block=block,
        output=out,
        frame_scales=scales,
        block_scale=s,
        scale_mode=mode,
        delta=delta,
        aligned=aligned,
        smoothed=smoothed,
        keyframe_positions=kf,
        e_ref_before=e_ref_before,
        e_ref_after=gmap.e_ref,
        points_added=added,
    )
