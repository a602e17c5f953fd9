"""Declutter-round evaluation against the geometric success check, and latency benchmarking."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .detect import Candidate, ExtractionConfig, GraspPose, extract_candidates, gsr, to_gripper_config
from .model import ModelConfig, forward
from .scenes import Gripper, ToyScene, check_grasp, gen_scene
from .tsdf import ScenePrimitive, TsdfVolume, WorkspaceTransform, tsdf_from_primitives

# Agents see the scene and the primitives still present, and return a pose or None.
Agent = Callable[[ToyScene, list], "GraspPose | None"]

EVAL_SEED_OFFSET = 1_000_003
MAX_CONSECUTIVE_FAILURES = 2


class ModelAgent:
    """Executes the highest-quality voxel above the threshold, if any."""

    def __init__(self, cfg: ModelConfig, params: dict, extraction: ExtractionConfig = ExtractionConfig()):
        self.cfg, self.params, self.extraction = cfg, params, extraction

    def predict(self, vol: TsdfVolume) -> list[GraspPose]:
        maps = forward(vol.values, self.cfg, self.params)
        xf = WorkspaceTransform.for_volume(vol)
        return [to_gripper_config(c, xf) for c in extract_candidates(maps, self.extraction)]

    def __call__(self, scene: ToyScene, remaining: list) -> GraspPose | None:
        vol = tsdf_from_primitives(remaining, scene.n, scene.side_length)
        poses = self.predict(vol)
        return poses[0] if poses else None


class LabelReplayAgent:
    """Replays the generator's positive labels for objects that are still present."""

    def __init__(self, labels, gripper: Gripper = Gripper()):
        self.labels = [lab for lab in labels if lab.quality == 1]
        self.gripper = gripper
        self._targets: dict[int, ScenePrimitive] = {}

    def __call__(self, scene: ToyScene, remaining: list) -> GraspPose | None:
        xf = WorkspaceTransform(scene.n / scene.side_length, n=scene.n)
        for i, lab in enumerate(self.labels):
            pose = to_gripper_config(_label_candidate(lab), xf)
            if i not in self._targets:
                _, hit = check_grasp(pose.position, pose.rotation, pose.width, scene.primitives, self.gripper)
                self._targets[i] = scene.primitives[hit] if hit is not None else None
            if any(self._targets[i] is p for p in remaining):
                return pose
        return None


class FreeSpaceAgent:
    """Baseline that only ever grasps at empty voxels."""

    def __init__(self, labels):
        self.labels = [lab for lab in labels if lab.quality == 0]

    def __call__(self, scene: ToyScene, remaining: list) -> GraspPose | None:
        if not self.labels:
            return None
        xf = WorkspaceTransform(scene.n / scene.side_length, n=scene.n)
        lab = self.labels[0]
        return to_gripper_config(_label_candidate(lab, width=2.0), xf)


def _label_candidate(lab, width: float | None = None) -> Candidate:
    return Candidate(lab.index, float(lab.quality), lab.rotation, lab.width if width is None else width)


@dataclass
class RoundResult:
    n_obj: int
    n_pred: int = 0
    n_suc: int = 0
    n_rem: int = 0


def run_round(scene: ToyScene, agent: Agent, gripper: Gripper = Gripper()) -> RoundResult:
    """Grasp until the scene is empty, the agent abstains, or two attempts fail in a row."""
    remaining = list(scene.primitives)
    res = RoundResult(len(remaining))
    failures = 0
    # every success removes an object, so at most n_obj + failure-cap attempts
    while remaining and failures < MAX_CONSECUTIVE_FAILURES:
        pose = agent(scene, remaining)
        if pose is None:
            break
        res.n_pred += 1
        ok, hit = check_grasp(pose.position, pose.rotation, pose.width, remaining, gripper)
        if ok:
            remaining.pop(hit)
            res.n_suc += 1
            res.n_rem += 1
            failures = 0
        else:
            failures += 1
    return res


@dataclass
class EvalSummary:
    gsr: list = field(default_factory=list)
    dr: list = field(default_factory=list)
    rounds: list = field(default_factory=list)

    @staticmethod
    def _stats(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None, None
        return statistics.fmean(vals), (statistics.stdev(vals) if len(vals) > 1 else 0.0)

    def to_dict(self) -> dict:
        gm, gs = self._stats(self.gsr)
        dm, ds = self._stats(self.dr)
        return {"gsr_mean": gm, "gsr_sd": gs, "dr_mean": dm, "dr_sd": ds, "gsr_per_repeat": self.gsr,
                "dr_per_repeat": self.dr}


def eval_seed(make_agent: Callable, rounds: int, seed: int, scenario: str = "packed", n: int = 16,
              side_length: float = 0.16, gripper: Gripper = Gripper()) -> tuple[float | None, float, list]:
    """Pooled GSR (None when nothing was attempted) and DR over ``rounds`` declutter rounds."""
    results = []
    for r in range(rounds):
        scene, vol, labels = gen_scene(EVAL_SEED_OFFSET * (seed + 1) + r, scenario, n, side_length,
                                       gripper=gripper)
        results.append(run_round(scene, make_agent(scene, vol, labels), gripper))
    n_pred = sum(r.n_pred for r in results)
    g = gsr(sum(r.n_suc for r in results), n_pred) if n_pred else None
    d = sum(r.n_rem for r in results) / sum(r.n_obj for r in results)
    return g, d, results


def eval_rounds(make_agent: Callable, rounds: int, seed: int, repeats: int = 5, **kwargs) -> EvalSummary:
    """Repeat :func:`eval_seed` over ``repeats`` consecutive seeds."""
    summary = EvalSummary()
    for rep in range(repeats):
        g, d, results = eval_seed(make_agent, rounds, seed + rep, **kwargs)
        summary.gsr.append(g)
        summary.dr.append(d)
        summary.rounds.append(results)
    return summary


def model_agent_factory(cfg: ModelConfig, params: dict, threshold: float = 0.9):
    agent = ModelAgent(cfg, params, ExtractionConfig(threshold))
    return lambda scene, vol, labels: agent


def bench(cfg: ModelConfig, params: dict, repeat: int = 10, warmup: int = 3, threshold: float = 0.9) -> dict:
    """End-to-end TSDF-to-grasp-list latency in milliseconds."""
    # a fixed centered sphere works for every resolution, unlike random scene generation
    sphere = ScenePrimitive("sphere", np.full(3, cfg.side_length / 2), dims=[0.25 * cfg.side_length])
    vol = tsdf_from_primitives([sphere], cfg.n, cfg.side_length)
    agent = ModelAgent(cfg, params, ExtractionConfig(threshold))
    for _ in range(warmup):
        agent.predict(vol)
    samples = []
    for _ in range(max(repeat, 1)):
        t0 = time.perf_counter()
        agent.predict(vol)
        samples.append((time.perf_counter() - t0) * 1e3)
    return {"config": cfg.fingerprint(), "repeat": len(samples), "mean_ms": statistics.fmean(samples),
            "sd_ms": statistics.stdev(samples) if len(samples) > 1 else 0.0,
            "min_ms": min(samples), "max_ms": max(samples), "samples_ms": samples}

