"""Deterministic synthetic scenes.

A scene is a camera path plus planes and axis-aligned boxes, some of them
labelled objects that may be inserted or removed at block boundaries. Depth is
ray-cast exactly, masks are exact silhouettes and tracks are exact
projections, so every downstream stage can be checked against ground truth.

Object events use block granularity: ``insert_block = A`` means present from
the first frame of block A, ``remove_block = B`` means present through the last
frame of block B.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidSpec
from ..geometry import DepthMap, ExtrinsicPose, Intrinsics, compose, invert, pose_from_center, project, to_tum
from ..util import write_json
from .depth_io import write_depth
from .features import fallback_feature_score
from .manifest import MANIFEST_NAME, frame_to_dict
from .schema import FrameRecord, InstanceMask, Tracks

logger = logging.getLogger(__name__)

SCENE_NAME = "scene.json"
GT_NAME = "groundtruth.txt"
GT_TUM_NAME = "groundtruth.tum"
INVENTORY_NAME = "inventory.json"

_PRED_STREAM = 2
_SENSOR_STREAM = 1


@dataclass(frozen=True)
class SceneObject:
    name: str
    kind: str  # plane | box
    label: Optional[str]
    point: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    lo: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    hi: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    insert_block: int = 0
    remove_block: Optional[int] = None

    def present_in_block(self, block: int) -> bool:
        if block < self.insert_block:
            return False
        return self.remove_block is None or block <= self.remove_block

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"id": self.name, "kind": self.kind, "label": self.label}
        if self.kind == "plane":
            d.update(point=list(self.point), normal=list(self.normal))
        else:
            d.update(min=list(self.lo), max=list(self.hi))
        d.update(insert_block=self.insert_block, remove_block=self.remove_block)
        return d


@dataclass(frozen=True)
class SceneSpec:
    intrinsics: Intrinsics
    n_frames: int
    fps: float
    block_size: int
    poses: Tuple[ExtrinsicPose, ...]
    objects: Tuple[SceneObject, ...]
    pred_sigma: float = 0.0
    sensor_sigma: float = 0.0
    pred_scale: float = 1.0
    sensor_depth: bool = True
    occluded_track_conf: float = 0.0
    occlusion_tol: float = 0.05
    mask_confidence: float = 0.9
    predictions: Optional[Dict[str, int]] = None
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @staticmethod
    def from_dict(obj: Dict[str, Any]) -> "SceneSpec":
        try:
            return _parse_spec(obj)
        except InvalidSpec:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidSpec(f"scene spec: {type(e).__name__}: {e}") from None

    @staticmethod
    def load(path: Path) -> "SceneSpec":
        path = Path(path)
        if not path.exists():
            raise InvalidSpec(f"scene spec not found: {path}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"{path}: invalid JSON ({e.msg}, line {e.lineno})") from None
        return SceneSpec.from_dict(obj)

    def block_of(self, frame_index: int) -> int:
        return int(frame_index) // int(self.block_size)


def _yaw_rotation(yaw_deg: float) -> np.ndarray:
    """Camera-to-world rotation for a camera yawed about the world y axis."""
    a = np.deg2rad(float(yaw_deg))
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _camera_poses(cam: Dict[str, Any], n_frames: int) -> List[ExtrinsicPose]:
    if "poses" in cam:
        poses = [ExtrinsicPose.from_row12(p) for p in cam["poses"]]
        if len(poses) != n_frames:
            raise InvalidSpec(f"camera.poses has {len(poses)} entries, expected n_frames={n_frames}")
        return poses
    kfs = sorted(cam.get("keyframes") or [], key=lambda k: int(k["frame"]))
    if not kfs:
        raise InvalidSpec("camera needs 'keyframes' or 'poses'")
    frames = np.array([int(k["frame"]) for k in kfs], dtype=float)
    if len(set(frames.tolist())) != len(frames):
        raise InvalidSpec("camera keyframes repeat a frame")
    pos = np.array([[float(x) for x in k["position"]] for k in kfs])
    if pos.shape[1] != 3:
        raise InvalidSpec("camera keyframe positions must be 3-vectors")
    yaw = np.array([float(k.get("yaw_deg", 0.0)) for k in kfs])
    out: List[ExtrinsicPose] = []
    for f in range(n_frames):
        c = np.array([np.interp(f, frames, pos[:, i]) for i in range(3)])
        R_wc = _yaw_rotation(float(np.interp(f, frames, yaw)))
        out.append(pose_from_center(R_wc.T, c))
    return out


def _parse_object(i: int, o: Dict[str, Any]) -> SceneObject:
    kind = str(o.get("kind", "box"))
    name = str(o.get("id", f"obj{i}"))
    label = o.get("label")
    ins = int(o.get("insert_block", 0))
    rem = o.get("remove_block")
    rem = None if rem is None else int(rem)
    if rem is not None and rem < ins:
        raise InvalidSpec(f"objects[{i}] ({name}): remove_block {rem} before insert_block {ins}")
    if kind == "plane":
        n = np.asarray(o["normal"], dtype=float)
        if n.shape != (3,) or np.linalg.norm(n) == 0:
            raise InvalidSpec(f"objects[{i}] ({name}): plane normal must be a non-zero 3-vector")
        n = n / np.linalg.norm(n)
        return SceneObject(name=name, kind=kind, label=label, point=tuple(float(x) for x in o["point"]),
                           normal=tuple(float(x) for x in n), insert_block=ins, remove_block=rem)
    if kind == "box":
        lo = np.asarray(o["min"], dtype=float)
        hi = np.asarray(o["max"], dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise InvalidSpec(f"objects[{i}] ({name}): box needs min < max on every axis")
        return SceneObject(name=name, kind=kind, label=label, lo=tuple(lo.tolist()), hi=tuple(hi.tolist()),
                           insert_block=ins, remove_block=rem)
    raise InvalidSpec(f"objects[{i}] ({name}): unknown kind '{kind}' (plane|box)")


def _parse_spec(obj: Dict[str, Any]) -> SceneSpec:
    try:
        K = Intrinsics.from_dict(obj["intrinsics"])
    except Exception as e:
        raise InvalidSpec(f"scene intrinsics: {e}") from None
    n_frames = int(obj["n_frames"])
    if n_frames < 1:
        raise InvalidSpec("n_frames must be >= 1")
    fps = float(obj.get("fps", 10.0))
    block_size = int(obj.get("block_size", 10))
    if fps <= 0 or block_size < 1:
        raise InvalidSpec("fps must be > 0 and block_size >= 1")
    poses = _camera_poses(obj.get("camera") or {}, n_frames)
    objects = [_parse_object(i, o) for i, o in enumerate(obj.get("objects") or [])]
    if not objects:
        raise InvalidSpec("scene has no objects")
    names = [o.name for o in objects]
    if len(set(names)) != len(names):
        raise InvalidSpec("object ids must be unique")
    noise = obj.get("noise") or {}
    spec = SceneSpec(
        intrinsics=K,
        n_frames=n_frames,
        fps=fps,
        block_size=block_size,
        poses=tuple(poses),
        objects=tuple(objects),
        pred_sigma=float(noise.get("pred_sigma", 0.0)),
        sensor_sigma=float(noise.get("sensor_sigma", 0.0)),
        pred_scale=float(obj.get("pred_scale", 1.0)),
        sensor_depth=bool(obj.get("sensor_depth", True)),
        occluded_track_conf=float(obj.get("occluded_track_conf", 0.0)),
        occlusion_tol=float(obj.get("occlusion_tol", 0.05)),
        mask_confidence=float(obj.get("mask_confidence", 0.9)),
        predictions=obj.get("predictions"),
        raw=dict(obj),
    )
    if spec.pred_sigma < 0 or spec.sensor_sigma < 0:
        raise InvalidSpec("noise sigmas must be >= 0")
    if spec.pred_scale <= 0:
        raise InvalidSpec("pred_scale must be > 0")
    if not (0.0 <= spec.occluded_track_conf <= 1.0) or not (0.0 <= spec.mask_confidence <= 1.0):
        raise InvalidSpec("occluded_track_conf and mask_confidence must lie in [0, 1]")
    return spec


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


class SyntheticScene:
    """Analytic renderer for a ``SceneSpec`` and seed."""

    def __init__(self, spec: SceneSpec, seed: int = 0) -> None:
        self.spec = spec
        self.seed = int(seed)
        K = spec.intrinsics
        vv, uu = np.meshgrid(np.arange(K.height, dtype=float), np.arange(K.width, dtype=float), indexing="ij")
        self._dirs_cam = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)

    @staticmethod
    def from_dir(stream_dir: Path) -> "SyntheticScene":
        p = Path(stream_dir) / SCENE_NAME
        if not p.exists():
            raise InvalidSpec(f"synthetic provider needs {p}")
        obj = json.loads(p.read_text(encoding="utf-8"))
        return SyntheticScene(SceneSpec.from_dict(obj["scene"]), seed=int(obj.get("seed", 0)))

    @property
    def n_frames(self) -> int:
        return self.spec.n_frames

    def pose(self, frame_index: int) -> ExtrinsicPose:
        return self.spec.poses[int(frame_index)]

    def timestamp(self, frame_index: int) -> float:
        return float(frame_index) / self.spec.fps

    def present(self, frame_index: int) -> List[int]:
        b = self.spec.block_of(frame_index)
        return [i for i, o in enumerate(self.spec.objects) if o.present_in_block(b)]

    def _ray_params(self, origin: np.ndarray, dirs: np.ndarray, obj: SceneObject) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            if obj.kind == "plane":
                n = np.asarray(obj.normal)
                denom = dirs @ n
                s = (n @ (np.asarray(obj.point) - origin)) / denom
                s = np.where(np.abs(denom) > 1e-12, s, np.inf)
            else:
                d = np.where(dirs == 0.0, 1e-300, dirs)
                t1 = (np.asarray(obj.lo)[None, :] - origin[None, :]) / d
                t2 = (np.asarray(obj.hi)[None, :] - origin[None, :]) / d
                tn = np.max(np.minimum(t1, t2), axis=1)
                tf = np.min(np.maximum(t1, t2), axis=1)
                s = np.where((tn <= tf) & (tn > 0), tn, np.inf)
        return np.where(s > 1e-9, s, np.inf)

    def render(self, frame_index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Exact camera depth (NaN where nothing is hit) and per-pixel object index (-1 for none)."""
        K = self.spec.intrinsics
        E = self.pose(frame_index)
        origin = E.center
        dirs = self._dirs_cam @ E.R  # world ray directions, camera z component 1
        best = np.full(dirs.shape[0], np.inf)
        hit = np.full(dirs.shape[0], -1, dtype=np.int64)
        for i in self.present(frame_index):
            s = self._ray_params(origin, dirs, self.spec.objects[i])
            closer = s < best
            best = np.where(closer, s, best)
            hit = np.where(closer, i, hit)
        depth = np.where(np.isfinite(best), best, np.nan).reshape(K.height, K.width)
        return depth, hit.reshape(K.height, K.width)

    def _noise(self, frame_index: int, stream: int, sigma: float, shape: Tuple[int, int]) -> np.ndarray:
        if sigma <= 0:
            return np.zeros(shape)
        rng = np.random.default_rng([self.seed, int(frame_index), stream])
        return rng.normal(0.0, sigma, size=shape)

    def _noisy(self, true_depth: np.ndarray, scale: float, frame_index: int, stream: int, sigma: float) -> DepthMap:
        d = scale * true_depth + self._noise(frame_index, stream, sigma, true_depth.shape)
        d = np.where(np.isfinite(d) & (d > 1e-6), d, np.nan)
        return DepthMap(_f32(d))

    def sensor_depth(self, frame_index: int) -> DepthMap:
        depth, _ = self.render(frame_index)
        return self._noisy(depth, 1.0, frame_index, _SENSOR_STREAM, self.spec.sensor_sigma)

    def predicted_depth(self, frame_index: int) -> DepthMap:
        depth, _ = self.render(frame_index)
        return self._noisy(depth, self.spec.pred_scale, frame_index, _PRED_STREAM, self.spec.pred_sigma)

    def masks(self, frame_index: int, hit: Optional[np.ndarray] = None) -> List[InstanceMask]:
        if hit is None:
            _, hit = self.render(frame_index)
        out: List[InstanceMask] = []
        for i in self.present(frame_index):
            o = self.spec.objects[i]
            if o.label is None:
                continue
            m = hit == i
            if m.any():
                out.append(InstanceMask(class_label=str(o.label), mask=m, confidence=self.spec.mask_confidence))
        return out

    def frame(self, frame_index: int) -> FrameRecord:
        depth, hit = self.render(frame_index)
        return FrameRecord(
            frame_index=int(frame_index),
            timestamp=self.timestamp(frame_index),
            intrinsics=self.spec.intrinsics,
            sensor_depth=self._noisy(depth, 1.0, frame_index, _SENSOR_STREAM, self.spec.sensor_sigma)
            if self.spec.sensor_depth else None,
            masks=tuple(self.masks(frame_index, hit)),
            feature_score=fallback_feature_score(depth),
            pose=self.pose(frame_index),
        )

    def iter_frames(self) -> Iterator[FrameRecord]:
        for f in range(self.spec.n_frames):
            yield self.frame(f)

    def relative_extrinsics(self, frame_indices: Sequence[int]) -> List[ExtrinsicPose]:
        """Poses relative to the first listed frame, translations in predicted units."""
        E0_inv = invert(self.pose(frame_indices[0]))
        out = []
        for f in frame_indices:
            rel = compose(self.pose(f), E0_inv)
            out.append(ExtrinsicPose(R=rel.R, t=rel.t * self.spec.pred_scale))
        return out

    def tracks(self, frame_indices: Sequence[int], query_uv: np.ndarray) -> Tracks:
        K = self.spec.intrinsics
        q = np.asarray(query_uv, dtype=float).reshape(-1, 2)
        f0 = int(frame_indices[0])
        depth0, hit0 = self.render(f0)
        ui = np.clip(np.floor(q[:, 0]).astype(np.int64), 0, K.width - 1)
        vi = np.clip(np.floor(q[:, 1]).astype(np.int64), 0, K.height - 1)
        z = depth0[vi, ui]
        owner = hit0[vi, ui]
        seen = np.isfinite(z)
        Xc = np.stack([(q[:, 0] - K.cx) * z / K.fx, (q[:, 1] - K.cy) * z / K.fy, z], axis=1)
        E0 = self.pose(f0)
        X = (np.where(seen[:, None], Xc, 0.0) - E0.t[None, :]) @ E0.R

        L = len(frame_indices)
        uv = np.empty((q.shape[0], L, 2))
        conf = np.zeros((q.shape[0], L))
        for j, f in enumerate(frame_indices):
            pr = project(X, K, self.pose(f))
            u = np.where(np.isfinite(pr.u), pr.u, -1.0)
            v = np.where(np.isfinite(pr.v), pr.v, -1.0)
            uv[:, j, 0] = u
            uv[:, j, 1] = v
            depth_j, _ = self.render(int(f)) if j else (depth0, hit0)
            present = np.isin(owner, self.present(int(f)))
            c = np.zeros(q.shape[0])
            ui, vi, inside = pr.pixels(K.width, K.height)
            inb = inside & seen & present
            if np.any(inb):
                uj, vj = ui[inb], vi[inb]
                d_obs = depth_j[vj, uj]
                visible = ~(np.isfinite(d_obs) & (pr.z[inb] > d_obs + self.spec.occlusion_tol))
                c[inb] = np.where(visible, 1.0, self.spec.occluded_track_conf)
            conf[:, j] = c
        uv[:, 0, :] = q
        return Tracks(uv=uv, conf=conf)

    def inventory(self) -> Dict[str, Any]:
        events = []
        for o in self.spec.objects:
            if o.insert_block > 0:
                events.append({"block": int(o.insert_block), "event": "insert", "object": o.name, "label": o.label})
            if o.remove_block is not None:
                events.append({"block": int(o.remove_block), "event": "remove", "object": o.name, "label": o.label})
        events.sort(key=lambda e: (e["block"], e["object"], e["event"]))
        return {
            "block_size": int(self.spec.block_size),
            "n_frames": int(self.spec.n_frames),
            "pred_scale": float(self.spec.pred_scale),
            "objects": [o.to_dict() for o in self.spec.objects],
            "events": events,
        }


def synth_generate(spec: SceneSpec | Dict[str, Any], seed: int, out_dir: Path) -> Path:
    """Write a synthetic stream; returns the manifest path.

    Outputs: manifest.jsonl, depth/*.dpth (sensor and predicted), scene.json
    (spec + seed, read back by the synthetic provider), groundtruth.txt
    (``frame_index tx ty tz qx qy qz qw``), groundtruth.tum (same with
    timestamps) and inventory.json. When the scene spec carries ``predictions``,
    file-backed provider lists are written under predictions/ too.
    """
    if not isinstance(spec, SceneSpec):
        spec = SceneSpec.from_dict(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = SyntheticScene(spec, seed=seed)
    write_json(out_dir / SCENE_NAME, {"scene": spec.raw, "seed": int(seed)})

    gt_lines: List[str] = []
    tum_lines: List[str] = []
    with (out_dir / MANIFEST_NAME).open("w", encoding="utf-8", newline="\n") as f:
        for rec in scene.iter_frames():
            fi = rec.frame_index
            sensor_rel = None
            if rec.sensor_depth is not None:
                sensor_rel = f"depth/sensor_{fi:06d}.dpth"
                write_depth(out_dir / sensor_rel, rec.sensor_depth)
            pred_rel = f"depth/pred_{fi:06d}.dpth"
            write_depth(out_dir / pred_rel, scene.predicted_depth(fi))
            obj = frame_to_dict(rec)
            obj["depth_sensor"] = sensor_rel
            obj["depth_pred"] = pred_rel
            f.write(json.dumps(obj, sort_keys=True) + "\n")
            tum = to_tum(rec.pose)
            vals = " ".join(f"{x:.12f}" for x in tum)
            gt_lines.append(f"{fi} {vals}")
            tum_lines.append(f"{rec.timestamp:.6f} {vals}")

    (out_dir / GT_NAME).write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    (out_dir / GT_TUM_NAME).write_text("\n".join(tum_lines) + "\n", encoding="utf-8")
    write_json(out_dir / INVENTORY_NAME, scene.inventory())

    if spec.predictions:
        from .provider import SyntheticProvider, export_predictions

        p = spec.predictions
        export_predictions(
            SyntheticProvider(scene),
            stream_dir=out_dir,
            block_size=int(p.get("block_size", spec.block_size)),
            keyframe_count=int(p.get("keyframe_count", 3)),
            grid_stride=int(p.get("grid_stride", 8)),
        )
    logger.info("synthetic stream: %d frames -> %s", spec.n_frames, out_dir)
    return out_dir / MANIFEST_NAME
