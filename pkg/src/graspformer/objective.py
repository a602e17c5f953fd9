"""Grasp training objective with a wrist-symmetric quaternion distance."""
from __future__ import annotations

import numpy as np

from .decoder import GraspMaps
from .tensor import Tensor, abs_, as_tensor, clip, log, minimum, sum_
from .tsdf import GraspLabel

BCE_CLAMP = 1e-7


def _check_unit(q: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(q, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        raise ValueError(f"{what} must be unit quaternions (norms {norms})")


def rotate_pi_wrist(r):
    """Rotate by 180° about the gripper's local z (wrist) axis: ``r ⊗ (0, 0, 0, 1)``.

    Works on a single quaternion or on a ``4 × n`` array of them.
    """
    w, x, y, z = np.asarray(r, dtype=float)
    return np.stack([-z, y, -x, w])


def quat_loss(r_hat, r) -> Tensor:
    """``1 - |r̂ · r|`` along axis 0; inputs are ``4`` or ``4 × n``."""
    r_hat = as_tensor(r_hat)
    r = np.asarray(r, dtype=r_hat.dtype)
    _check_unit(r_hat.data, "predicted rotation")
    _check_unit(r, "target rotation")
    return 1.0 - abs_(sum_(r_hat * r.reshape(r_hat.shape), axis=0))


def rotation_loss(r_hat, r) -> Tensor:
    return minimum(quat_loss(r_hat, r), quat_loss(r_hat, rotate_pi_wrist(r)))


def grasp_loss(q_hat, r_hat, w_hat, q, r, w) -> Tensor:
    """Per-voxel loss ``BCE(q̂, q) + q · (rotation_loss + (ŵ - w)²)``.

    Predicted quantities may be scalars or vectors over voxels (rotations as
    ``4 × n``); targets are arrays of matching shape. ``q̂`` is clamped to
    ``[1e-7, 1 - 1e-7]`` before the logarithms.
    """
    q_hat, w_hat = as_tensor(q_hat), as_tensor(w_hat)
    q = np.asarray(q, dtype=q_hat.dtype)
    w = np.asarray(w, dtype=w_hat.dtype)
    qc = clip(q_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -(q * log(qc) + (1.0 - q) * log(1.0 - qc))
    r = np.asarray(r, dtype=float)
    if np.any(q == 0):
        # negatives carry placeholder rotations; swap in identity so the unit check holds
        r = np.where(q.reshape((1,) + q.shape) == 0, np.array([1.0, 0, 0, 0]).reshape((4,) + (1,) * q.ndim), r)
    diff = w_hat - w
    return bce + q * (rotation_loss(r_hat, r) + diff * diff)


def gather_labels(labels: list[GraspLabel]) -> tuple[tuple, np.ndarray, np.ndarray, np.ndarray]:
    idx = tuple(np.array([lab.index[a] for lab in labels]) for a in range(3))
    q = np.array([lab.quality for lab in labels], dtype=float)
    r = np.array([lab.rotation for lab in labels], dtype=float).T
    w = np.array([lab.width for lab in labels], dtype=float)
    return idx, q, r, w


def batch_loss(maps: GraspMaps, labels: list[GraspLabel]) -> Tensor:
    """Mean per-voxel loss over the labeled voxels only."""
    if not labels:
        raise ValueError("batch_loss needs at least one label")
    n = maps.quality.shape[-1]
    for lab in labels:
        if not all(0 <= c < n for c in lab.index):
            raise IndexError(f"label index {lab.index} outside the {n}³ grid")
    (i, j, k), q, r, w = gather_labels(labels)
    q_hat = maps.quality[0, i, j, k]
    r_hat = maps.rotation[:, i, j, k]
    w_hat = maps.width[0, i, j, k]
    return grasp_loss(q_hat, r_hat, w_hat, q, r, w).mean()
