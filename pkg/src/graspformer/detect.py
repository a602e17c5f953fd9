"""Grasp extraction from predicted maps, conversion to gripper poses, and metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .decoder import GraspMaps
from .geometry import quat_mul
from .tsdf import WorkspaceTransform, voxel_to_world


class NoGraspsPredicted(ValueError):
    """GSR is undefined when no grasp was attempted."""


@dataclass(frozen=True)
class ExtractionConfig:
    threshold: float = 0.9
    local_max_window: int = 0
    max_candidates: int | None = None

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"quality threshold must lie in (0, 1), got {self.threshold}")
        if self.local_max_window < 0 or (self.local_max_window and self.local_max_window % 2 == 0):
            raise ValueError("local maximum window must be 0 (off) or an odd extent")


@dataclass
class Candidate:
    index: tuple[int, int, int]
    quality: float
    rotation: np.ndarray
    width: float


@dataclass
class GraspPose:
    position: np.ndarray
    rotation: np.ndarray
    width: float
    quality: float

    def to_json(self) -> dict:
        return {"position_m": [float(c) for c in self.position],
                "quaternion_wxyz": [float(c) for c in self.rotation],
                "width_m": float(self.width), "quality": float(self.quality)}


def _local_max(q: np.ndarray, window: int) -> np.ndarray:
    r = window // 2
    padded = np.pad(q, r, constant_values=-np.inf)
    n0, n1, n2 = q.shape
    best = np.full(q.shape, -np.inf)
    for a in range(window):
        for b in range(window):
            for c in range(window):
                best = np.maximum(best, padded[a:a + n0, b:b + n1, c:c + n2])
    return q >= best


def extract_candidates(maps, cfg: ExtractionConfig = ExtractionConfig()) -> list[Candidate]:
    """Voxels with quality strictly above the threshold, best first.

    Ties are broken by ascending ``(i, j, k)``. ``maps`` may be a
    :class:`GraspMaps` or a ``(Q, R, W)`` tuple of arrays.
    """
    q, r, w = maps.numpy() if isinstance(maps, GraspMaps) else maps
    q = np.asarray(q).reshape(np.shape(q)[-3:])
    mask = q > cfg.threshold
    if cfg.local_max_window:
        mask &= _local_max(q, cfg.local_max_window)
    idx = np.argwhere(mask)
    # argwhere is already lexicographic; a stable sort on -q keeps that as the tie-break
    order = np.argsort(-q[mask], kind="stable")
    if cfg.max_candidates is not None:
        order = order[:cfg.max_candidates]
    w = np.asarray(w).reshape(q.shape)
    out = []
    for i, j, k in idx[order]:
        out.append(Candidate((int(i), int(j), int(k)), float(q[i, j, k]),
                             np.asarray(r[:, i, j, k], dtype=float), float(w[i, j, k])))
    return out


def to_gripper_config(candidate: Candidate, xf: WorkspaceTransform) -> GraspPose:
    """Voxel-frame grasp to base-frame pose: position and width in meters."""
    r = np.asarray(candidate.rotation, dtype=float)
    if abs(np.linalg.norm(r) - 1) > 1e-6:
        raise ValueError("candidate rotation must be a unit quaternion")
    return GraspPose(voxel_to_world(candidate.index, xf), quat_mul(xf.rotation, r),
                     candidate.width / xf.v, candidate.quality)


def gsr(n_suc: int, n_pred: int) -> float:
    if n_pred < 1:
        raise NoGraspsPredicted("no grasps predicted")
    if not 0 <= n_suc <= n_pred:
        raise ValueError(f"successes {n_suc} outside [0, {n_pred}]")
    return n_suc / n_pred


def dr(n_rem: int, n_obj: int) -> float:
    if n_obj < 1:
        raise ValueError("declutter rate needs at least one object")
    if not 0 <= n_rem <= n_obj:
        raise ValueError(f"removed count {n_rem} outside [0, {n_obj}]")
    return n_rem / n_obj


def poses_to_json(poses: list[GraspPose]) -> str:
    return json.dumps([p.to_json() for p in poses], indent=2)
