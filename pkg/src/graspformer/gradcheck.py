"""Central finite-difference checks for reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import gripper_quaternion
from .model import ModelConfig, as_parameters, forward, init_params
from .objective import batch_loss
from .tensor import Tensor, grad, precision
from .tsdf import GraspLabel, ScenePrimitive, TsdfVolume, tsdf_from_primitives


@dataclass
class ProbeResult:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / denom


def numeric_partial(loss_fn: Callable[[], Tensor], param: Tensor, index: tuple, h: float = 1e-5) -> float:
    original = param.data[index].copy()
    param.data[index] = original + h
    up = float(loss_fn().data)
    param.data[index] = original - h
    down = float(loss_fn().data)
    param.data[index] = original
    return (up - down) / (2 * h)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], probes: int = 10,
                    h: float = 1e-5, seed: int = 0) -> list[ProbeResult]:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``probes`` random coordinates are drawn per tensor (all of them when the
    tensor is smaller). Tensors are perturbed in place and restored.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters; {name} is {p.dtype}")
    rng = np.random.default_rng(seed)
    names = list(params)
    analytic = dict(zip(names, grad(loss_fn(), [params[n] for n in names])))
    results = []
    for name in names:
        p = params[name]
        flat = rng.choice(p.size, size=min(probes, p.size), replace=False)
        for f in sorted(flat):
            idx = np.unravel_index(f, p.shape)
            results.append(ProbeResult(name, tuple(int(i) for i in idx), float(analytic[name][idx]),
                                       numeric_partial(loss_fn, p, idx, h)))
    return results


def probe_scene(n: int, side_length: float) -> tuple[TsdfVolume, list[GraspLabel]]:
    """A centered sphere with one positive label at its middle and two free-space negatives."""
    radius = 0.25 * side_length
    sphere = ScenePrimitive("sphere", np.full(3, side_length / 2), dims=[radius])
    vol = tsdf_from_primitives([sphere], n, side_length)
    rot = gripper_quaternion([0.0, 0.0, -1.0], [np.cos(0.3), np.sin(0.3), 0.0])
    mid = n // 2
    labels = [GraspLabel((mid, mid, mid), 1, rot, 2 * radius * n / side_length),
              GraspLabel((0, 0, 0), 0), GraspLabel((n - 1, 0, n - 1), 0)]
    return vol, labels


def model_gradcheck(cfg: ModelConfig, probes: int = 10, seed: int = 0, h: float = 1e-5) -> list[ProbeResult]:
    """Finite-difference check of the full training loss for ``cfg`` in float64."""
    vol, labels = probe_scene(cfg.n, cfg.side_length)
    with precision(np.float64):
        params = as_parameters(init_params(cfg, seed, dtype=np.float64))
        return check_gradients(lambda: batch_loss(forward(vol.values, cfg, params), labels), params,
                               probes=probes, h=h, seed=seed)
