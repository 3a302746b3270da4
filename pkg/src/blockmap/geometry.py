"""Pinhole camera and rigid transform primitives.

Pose convention: camera-from-world. A world point X maps to camera
coordinates as ``R @ X + t``; the camera centre is ``-R.T @ t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataError

ORTHO_TOL = 1e-9
# Poses read from files or built by callers are accepted up to this drift and
# snapped back onto SO(3) when composed.
POSE_ACCEPT_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise DataError(f"intrinsics: focal lengths must be > 0 (fx={self.fx}, fy={self.fy})")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise DataError(f"intrinsics: image size must be positive ({self.width}x{self.height})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError(
                f"intrinsics: principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.height), int(self.width))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @staticmethod
    def from_dict(obj: Dict[str, Any]) -> "Intrinsics":
        return Intrinsics(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )


@dataclass(frozen=True, eq=False)
class ExtrinsicPose:
    """Camera-from-world rigid transform ``[R | t]``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise DataError("pose has non-finite entries")
        drift = rotation_drift(R)
        if drift > POSE_ACCEPT_TOL:
            raise DataError(f"pose rotation is not orthonormal (drift {drift:.3e})")
        object.__setattr__(self, "R", _readonly(R))
        object.__setattr__(self, "t", _readonly(t))

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def matrix(self) -> np.ndarray:
        """3x4 ``[R | t]``."""
        return np.hstack([self.R, self.t[:, None]])

    def to_row12(self) -> list:
        """Row-major R followed by t."""
        return [float(x) for x in self.R.reshape(-1)] + [float(x) for x in self.t]

    @staticmethod
    def from_row12(vals: Sequence[float]) -> "ExtrinsicPose":
        v = np.asarray(vals, dtype=float)
        if v.shape != (12,):
            raise DataError(f"pose needs 12 reals, got {v.size}")
        return ExtrinsicPose(R=v[:9].reshape(3, 3), t=v[9:])

    def allclose(self, other: "ExtrinsicPose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0))


def identity() -> ExtrinsicPose:
    return ExtrinsicPose(R=np.eye(3), t=np.zeros(3))


def rotation_drift(R: np.ndarray) -> float:
    """max(|RᵀR − I|, |det R − 1|)."""
    R = np.asarray(R, dtype=float)
    return float(max(np.max(np.abs(R.T @ R - np.eye(3))), abs(np.linalg.det(R) - 1.0)))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def to_homogeneous(E: ExtrinsicPose) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = E.R
    T[:3, 3] = E.t
    return T


def from_homogeneous(T: np.ndarray, orthonormalize: bool = True) -> ExtrinsicPose:
    T = np.asarray(T, dtype=float)
    R = T[:3, :3]
    if orthonormalize and rotation_drift(R) > ORTHO_TOL:
        R = nearest_rotation(R)
    return ExtrinsicPose(R=R, t=T[:3, 3])


def compose(A: ExtrinsicPose, B: ExtrinsicPose) -> ExtrinsicPose:
    """Homogeneous product ``A @ B``."""
    return from_homogeneous(to_homogeneous(A) @ to_homogeneous(B))


def invert(E: ExtrinsicPose) -> ExtrinsicPose:
    Rt = E.R.T
    return ExtrinsicPose(R=Rt, t=-Rt @ E.t)


def relative(a: ExtrinsicPose, b: ExtrinsicPose) -> ExtrinsicPose:
    """``a @ b⁻¹``: maps camera-b coordinates into camera-a coordinates."""
    return compose(a, invert(b))


def pose_from_center(R: np.ndarray, center: np.ndarray) -> ExtrinsicPose:
    R = np.asarray(R, dtype=float)
    return ExtrinsicPose(R=R, t=-R @ np.asarray(center, dtype=float))


def to_tum(E: ExtrinsicPose) -> Tuple[float, ...]:
    """(tx, ty, tz, qx, qy, qz, qw) of the camera-to-world pose."""
    c = E.center
    q = Rotation.from_matrix(E.R.T).as_quat()
    if q[3] < 0:
        q = -q
    return (float(c[0]), float(c[1]), float(c[2]), float(q[0]), float(q[1]), float(q[2]), float(q[3]))


def from_tum(vals: Sequence[float]) -> ExtrinsicPose:
    tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
    R_wc = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
    return pose_from_center(nearest_rotation(R_wc.T), np.array([tx, ty, tz]))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth in metres; non-finite values are invalid."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise DataError(f"depth map must be a non-empty 2-D raster, got shape {v.shape}")
        finite = np.isfinite(v)
        if np.any(v[finite] <= 0):
            raise DataError("depth map has non-positive valid values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def scaled(self, s: float) -> "DepthMap":
        return DepthMap(self.values * float(s))

    def check_matches(self, K: Intrinsics, what: str = "depth") -> None:
        if (self.height, self.width) != K.shape:
            raise DataError(f"{what} is {self.width}x{self.height} but intrinsics are {K.width}x{K.height}")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    object_ids: Optional[np.ndarray] = None
    frame_indices: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(P)):
            raise DataError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", P)
        n = P.shape[0]
        for name, dtype, shape in (
            ("colors", np.uint8, (n, 3)),
            ("object_ids", np.int64, (n,)),
            ("frame_indices", np.int64, (n,)),
        ):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.asarray(a, dtype=dtype).reshape(shape)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(points=np.zeros((0, 3)))

    def take(self, idx: np.ndarray) -> "PointCloud":
        return PointCloud(
            points=self.points[idx],
            colors=None if self.colors is None else self.colors[idx],
            object_ids=None if self.object_ids is None else self.object_ids[idx],
            frame_indices=None if self.frame_indices is None else self.frame_indices[idx],
        )

    @staticmethod
    def concat(clouds: Iterable["PointCloud"]) -> "PointCloud":
        cs = [c for c in clouds if len(c) > 0]
        if not cs:
            return PointCloud.empty()

        def _cat(name: str) -> Optional[np.ndarray]:
            parts = [getattr(c, name) for c in cs]
            if any(p is None for p in parts):
                return None
            return np.concatenate(parts, axis=0)

        return PointCloud(
            points=np.concatenate([c.points for c in cs], axis=0),
            colors=_cat("colors"),
            object_ids=_cat("object_ids"),
            frame_indices=_cat("frame_indices"),
        )


@dataclass(frozen=True, eq=False)
class Projection:
    """Per-point projection: pixel (u, v), camera depth z and the in-bounds flag."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    in_bounds: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.u.shape[0])

    def pixels(self, width: int, height: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``pixel_index`` of the projections; ``inside`` also requires positive depth."""
        ui, vi, inside = pixel_index(self.u, self.v, width, height)
        return ui, vi, inside & (self.z > 0)


def pixel_index(u: np.ndarray, v: np.ndarray, width: int, height: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest pixel for sub-pixel positions: (ui, vi, inside).

    Pixel centres sit at integer coordinates, as in ``unproject``. Non-finite
    positions map outside the image.
    """
    u = np.nan_to_num(np.asarray(u, dtype=float), nan=-1.0, posinf=-1.0, neginf=-1.0)
    v = np.nan_to_num(np.asarray(v, dtype=float), nan=-1.0, posinf=-1.0, neginf=-1.0)
    ui = np.floor(np.clip(u, -1.0, width) + 0.5).astype(np.int64)
    vi = np.floor(np.clip(v, -1.0, height) + 0.5).astype(np.int64)
    inside = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
    return ui, vi, inside


def to_world(Xc: np.ndarray, E: ExtrinsicPose) -> np.ndarray:
    return (Xc - E.t[None, :]) @ E.R


def unproject_pixels(
    d: DepthMap,
    K: Intrinsics,
    E: ExtrinsicPose,
    us: np.ndarray,
    vs: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """World points for pixel lists; returns (points of valid pixels, validity mask)."""
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    z = d.values[vs, us]
    ok = np.isfinite(z)
    z = z[ok]
    u = us[ok].astype(float)
    v = vs[ok].astype(float)
    Xc = np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=1)
    return to_world(Xc, E), ok


def grid_pixels(width: int, height: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-major pixel grid at multiples of ``stride``: (us, vs)."""
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    vv, uu = np.meshgrid(np.arange(0, height, stride), np.arange(0, width, stride), indexing="ij")
    return uu.reshape(-1), vv.reshape(-1)


def unproject(
    d: DepthMap,
    K: Intrinsics,
    E: ExtrinsicPose,
    stride: int = 1,
    frame_index: Optional[int] = None,
) -> PointCloud:
    d.check_matches(K)
    us, vs = grid_pixels(K.width, K.height, stride)
    P, ok = unproject_pixels(d, K, E, us, vs)
    fi = None if frame_index is None else np.full(P.shape[0], int(frame_index), dtype=np.int64)
    return PointCloud(points=P, frame_indices=fi)


def project(P: PointCloud | np.ndarray, K: Intrinsics, E: ExtrinsicPose) -> Projection:
    X = P.points if isinstance(P, PointCloud) else np.asarray(P, dtype=float).reshape(-1, 3)
    Xc = X @ E.R.T + E.t[None, :]
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[:, 0] / z + K.cx
        v = K.fy * Xc[:, 1] / z + K.cy
    inb = (z > 0) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return Projection(u=u, v=v, z=z, in_bounds=inb)
