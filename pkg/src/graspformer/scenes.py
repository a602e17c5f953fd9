"""Synthetic primitive scenes, analytic grasp labels and a geometric success check.

This stands in for physics simulation: a grasp succeeds when the closing
segment spans exactly one object, both open fingers are collision-free, the
width fits the gripper and the contact normals are antipodal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import gripper_quaternion, quat_from_axis_angle, quat_to_matrix
from .tsdf import GraspLabel, ScenePrimitive, TsdfVolume, WorkspaceTransform, save_labels, save_tsdf, \
    scene_sdf, tsdf_from_primitives, voxel_to_world

SCENARIOS = ("pile", "packed")
ANTIPODAL_DEG = 25.0


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Gripper:
    max_width: float = 0.08
    finger_thickness: float = 0.01
    finger_breadth: float = 0.02
    finger_length: float = 0.04

    def finger_points(self, side: int, samples: int = 5) -> np.ndarray:
        """Sample points filling one open finger, in the gripper frame (y = closing, z = approach)."""
        x = np.linspace(-self.finger_breadth / 2, self.finger_breadth / 2, samples)
        y = side * (self.max_width / 2 + np.linspace(0.0, self.finger_thickness, 3))
        z = np.linspace(-self.finger_length * 0.75, self.finger_length * 0.25, samples)
        return np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass
class ToyScene:
    primitives: list[ScenePrimitive]
    scenario: str
    seed: int
    n: int = 16
    side_length: float = 0.16
    meta: dict = field(default_factory=dict)

    def volume(self, primitives=None) -> TsdfVolume:
        prims = self.primitives if primitives is None else primitives
        return tsdf_from_primitives(prims, self.n, self.side_length)

    def to_json(self) -> str:
        return json.dumps({"scenario": self.scenario, "seed": self.seed, "n": self.n,
                           "side_length": self.side_length,
                           "primitives": [p.to_dict() for p in self.primitives]})

    @classmethod
    def from_json(cls, text: str) -> ToyScene:
        d = json.loads(text)
        return cls([ScenePrimitive.from_dict(p) for p in d["primitives"]], d["scenario"], d["seed"],
                   d["n"], d["side_length"])


def line_interval(prim: ScenePrimitive, origin, direction):
    """Where the line ``origin + t·direction`` crosses ``prim``.

    Returns ``(t_in, t_out, n_in, n_out)`` with outward surface normals, or None.
    """
    origin, direction = np.asarray(origin, float), np.asarray(direction, float)
    if prim.kind == "sphere":
        oc = origin - prim.position
        b = oc @ direction
        disc = b * b - (oc @ oc - prim.dims[0] ** 2)
        if disc <= 0:
            return None
        s = np.sqrt(disc)
        t0, t1 = -b - s, -b + s
        n0 = (origin + t0 * direction - prim.position) / prim.dims[0]
        n1 = (origin + t1 * direction - prim.position) / prim.dims[0]
        return t0, t1, n0, n1
    rot = prim.rotation
    o = (origin - prim.position) @ rot
    d = direction @ rot
    t0, t1, a0, a1 = -np.inf, np.inf, None, None
    for ax in range(3):
        if abs(d[ax]) < 1e-12:
            if abs(o[ax]) > prim.dims[ax]:
                return None
            continue
        lo, hi = (-prim.dims[ax] - o[ax]) / d[ax], (prim.dims[ax] - o[ax]) / d[ax]
        if lo > hi:
            lo, hi = hi, lo
        if lo > t0:
            t0, a0 = lo, ax
        if hi < t1:
            t1, a1 = hi, ax
    if t0 >= t1:
        return None
    n0 = -np.sign(d[a0]) * rot[:, a0]
    n1 = np.sign(d[a1]) * rot[:, a1]
    return t0, t1, n0, n1


def check_grasp(position, rotation, width: float, primitives, gripper: Gripper = Gripper()):
    """Evaluate a grasp; returns ``(success, index of the grasped primitive or None)``."""
    if width > gripper.max_width or not primitives:
        return False, None
    rot = quat_to_matrix(rotation)
    closing = rot[:, 1]
    half = gripper.max_width / 2
    hits = []
    for idx, prim in enumerate(primitives):
        iv = line_interval(prim, position, closing)
        if iv is not None and iv[1] > -half and iv[0] < half:
            hits.append((idx, iv))
    if len(hits) != 1:
        return False, None
    idx, (t0, t1, n0, n1) = hits[0]
    if t0 <= -half or t1 >= half:
        return False, None
    fingers = np.concatenate([gripper.finger_points(+1), gripper.finger_points(-1)]) @ rot.T + position
    if np.any(scene_sdf(primitives, fingers) <= 0):
        return False, None
    cos_tol = np.cos(np.deg2rad(ANTIPODAL_DEG))
    if abs(n0 @ closing) < cos_tol or abs(n1 @ closing) < cos_tol:
        return False, None
    return True, idx


def success_check(pose, scene, gripper: Gripper = Gripper()) -> bool:
    prims = scene.primitives if isinstance(scene, ToyScene) else scene
    return check_grasp(pose.position, pose.rotation, pose.width, prims, gripper)[0]


# --- scene generation ------------------------------------------------------

def _sample_primitive(rng: np.random.Generator, scenario: str, side: float) -> ScenePrimitive:
    if scenario == "packed" or rng.random() < 0.5:
        # disjoint ranges keep the closing axis unambiguous from the shape alone
        narrow = rng.uniform(0.012, 0.018)
        wide = rng.uniform(0.026, 0.034)
        height = rng.uniform(0.02, 0.035)
        dims = np.array([narrow, wide, height])
        if scenario == "packed":
            yaw = (np.pi / 2) * rng.integers(0, 2)
            orient = quat_from_axis_angle([0, 0, 1], yaw)
        else:
            q = rng.standard_normal(4)
            orient = q / np.linalg.norm(q)
        prim = ScenePrimitive("box", np.zeros(3), orient, dims)
    else:
        prim = ScenePrimitive("sphere", np.zeros(3), dims=[rng.uniform(0.018, 0.03)])
    margin = prim.bounding_radius + 0.005
    pos = rng.uniform(margin, side - margin, size=3)
    if scenario == "packed":
        pos[2] = prim.dims[2] + 0.005
    prim.position = pos
    return prim


def _interior_points(prim: ScenePrimitive, samples: int = 7) -> np.ndarray:
    ext = prim.dims if prim.kind == "box" else np.repeat(prim.dims, 3)
    axes = [np.linspace(-e, e, samples) for e in ext]
    local = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = local @ prim.rotation.T + prim.position
    return pts[prim.sdf(pts) <= 1e-12]


def _clearance(a: ScenePrimitive, b: ScenePrimitive) -> float:
    """Approximate gap between two primitives (negative when they overlap)."""
    if np.linalg.norm(a.position - b.position) > a.bounding_radius + b.bounding_radius + 0.1:
        return np.inf
    return float(min(b.sdf(_interior_points(a)).min(), a.sdf(_interior_points(b)).min()))


def _grasp_axes(prim: ScenePrimitive):
    """Candidate (approach, closing) pairs for ``prim``, in preference order."""
    down = np.array([0.0, 0.0, -1.0])
    if prim.kind == "sphere":
        return [(down, np.array([np.cos(a), np.sin(a), 0.0])) for a in np.deg2rad([0, 90, 45, 135])]
    rot = prim.rotation
    order = np.argsort(-np.abs(rot.T @ down))
    approach_ax = order[0]
    rest = [a for a in range(3) if a != approach_ax]
    rest.sort(key=lambda a: prim.dims[a])
    approach = rot[:, approach_ax] * (1.0 if rot[:, approach_ax] @ down >= 0 else -1.0)
    out = []
    for closing_ax in rest:
        for ap in (approach, -approach):
            out.append((ap, rot[:, closing_ax]))
    return out


def _object_width(prim: ScenePrimitive, closing) -> float:
    if prim.kind == "sphere":
        return 2 * prim.dims[0]
    local = prim.rotation.T @ closing
    return 2 * float(np.abs(local) @ prim.dims)


def positive_labels(prims, idx: int, n: int, side: float, gripper: Gripper, limit: int = 8) -> list[GraspLabel]:
    """Analytic antipodal grasps for primitive ``idx`` at voxels near its center."""
    prim = prims[idx]
    xf = WorkspaceTransform(n / side, n=n)
    center = prim.position * n / side - 0.5
    base = np.floor(center).astype(int)
    cand = np.array([base + np.array(o) for o in np.ndindex(3, 3, 3)]) - 1
    cand = cand[np.all((cand >= 0) & (cand < n), axis=1)]
    cand = cand[np.argsort(np.linalg.norm(cand - center, axis=1), kind="stable")]
    labels = []
    for voxel in cand:
        p = voxel_to_world(voxel, xf)
        if prim.sdf(p) >= 0:
            continue
        for approach, closing in _grasp_axes(prim):
            q = gripper_quaternion(approach, closing)
            width = _object_width(prim, closing)
            ok, hit = check_grasp(p, q, width, prims, gripper)
            if ok and hit == idx:
                labels.append(GraspLabel(tuple(voxel), 1, q, width * n / side))
                break
        if len(labels) >= limit:
            break
    return labels


def gen_scene(seed: int, scenario: str = "packed", n: int = 16, side_length: float = 0.16,
              count: tuple[int, int] = (1, 4), negatives: int = 16, gripper: Gripper = Gripper(),
              max_attempts: int = 200) -> tuple[ToyScene, TsdfVolume, list[GraspLabel]]:
    """Deterministic scene, TSDF and labels for ``seed``.

    Every object receives at least one positive label; negatives are free-space
    voxels (TSDF exactly 1).
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    rng = np.random.default_rng([seed, SCENARIOS.index(scenario)])
    for _ in range(max_attempts):
        k = int(rng.integers(count[0], count[1] + 1))
        prims: list[ScenePrimitive] = []
        for _ in range(20 * k):
            cand = _sample_primitive(rng, scenario, side_length)
            if all(_clearance(cand, p) > gripper.finger_thickness for p in prims):
                prims.append(cand)
            if len(prims) == k:
                break
        if len(prims) < k:
            continue
        positives = [positive_labels(prims, i, n, side_length, gripper) for i in range(k)]
        if not all(positives):
            continue
        vol = tsdf_from_primitives(prims, n, side_length)
        free = np.argwhere(vol.values >= 1.0)
        picks = rng.choice(len(free), size=min(negatives, len(free)), replace=False)
        labels = [lab for group in positives for lab in group]
        labels += [GraspLabel(tuple(free[p]), 0) for p in np.sort(picks)]
        return ToyScene(prims, scenario, seed, n, side_length), vol, labels
    raise GenerationError(f"generation failed for seed {seed} ({scenario}) after {max_attempts} attempts")


def write_dataset(out_dir, count: int, seed: int, scenario: str, **kwargs) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(count):
        scene, vol, labels = gen_scene(seed + i, scenario, **kwargs)
        stem = out / f"scene_{i:05d}"
        save_tsdf(vol, stem.with_suffix(".tsdf"))
        save_labels(labels, stem.with_suffix(".labels"))
        stem.with_suffix(".json").write_text(scene.to_json())
        stems.append(stem)
    return stems
