"""Voxel-grid keep-first subsampling.

Points are bucketed into cubes of ``voxel_size``; the first point inserted
into a cube is kept and every later point falling into an occupied cube is
dropped. Insertion order is preserved, so the stored cloud depends only on
the order of the inserted batches.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..geometry import PointCloud

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Pack integer voxel coordinates into one int64 per point (±2^20 cells per axis)."""
    ijk = np.floor(np.asarray(points, dtype=float).reshape(-1, 3) / float(voxel_size)).astype(np.int64)
    ijk = np.clip(ijk + _OFFSET, 0, _MASK)
    return (ijk[:, 0] << (2 * _BITS)) | (ijk[:, 1] << _BITS) | ijk[:, 2]


def first_per_voxel(keys: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of each key, ascending."""
    _, first = np.unique(keys, return_index=True)
    return np.sort(first)


class VoxelCloud:
    """Growing point cloud with keep-first voxel dedup.

    ``voxel_size <= 0`` disables subsampling.
    """

    def __init__(self, voxel_size: float) -> None:
        self.voxel_size = float(voxel_size)
        self.points = np.zeros((0, 3))
        self.frame_indices = np.zeros(0, dtype=np.int64)
        self._keys = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def insert(self, points: np.ndarray, frame_indices: Optional[np.ndarray] = None) -> int:
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        if P.shape[0] == 0:
            return 0
        fi = np.full(P.shape[0], -1, dtype=np.int64) if frame_indices is None else np.asarray(frame_indices, dtype=np.int64)
        if self.voxel_size <= 0:
            keep = np.arange(P.shape[0])
            keys = np.zeros(P.shape[0], dtype=np.int64)
        else:
            keys_all = voxel_keys(P, self.voxel_size)
            keep = first_per_voxel(keys_all)
            keep = keep[~np.isin(keys_all[keep], self._keys)]
            keys = keys_all[keep]
        if keep.size == 0:
            return 0
        self.points = np.concatenate([self.points, P[keep]], axis=0)
        self.frame_indices = np.concatenate([self.frame_indices, fi[keep]])
        self._keys = np.concatenate([self._keys, keys])
        return int(keep.size)

    def to_cloud(self, object_id: Optional[int] = None) -> PointCloud:
        ids = None if object_id is None else np.full(len(self), int(object_id), dtype=np.int64)
        return PointCloud(points=self.points.copy(), object_ids=ids, frame_indices=self.frame_indices.copy())

    @staticmethod
    def from_state(voxel_size: float, points: np.ndarray, frame_indices: np.ndarray) -> "VoxelCloud":
        vc = VoxelCloud(voxel_size)
        vc.points = np.asarray(points, dtype=float).reshape(-1, 3)
        vc.frame_indices = np.asarray(frame_indices, dtype=np.int64).reshape(-1)
        vc._keys = voxel_keys(vc.points, vc.voxel_size) if vc.voxel_size > 0 else np.zeros(len(vc), dtype=np.int64)
        return vc
