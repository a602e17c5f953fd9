"""Deconvolution decoder with token skip-connections, input fusion and grasp heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, as_tensor, concat, default_dtype, reshape
from .tsdf import TsdfVolume


@dataclass(frozen=True)
class DecoderConfig:
    stages: int = 3
    widths: tuple[int, ...] = (256, 128, 64)
    features: int = 16
    tsdf_channels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if len(self.widths) != self.stages:
            raise ValueError(f"need one channel width per stage: {self.stages} stages, widths {self.widths}")


@dataclass
class GraspMaps:
    """Per-voxel quality ``1×N³``, unit quaternion ``4×N³`` (w first) and width ``1×N³`` (voxels)."""

    quality: Tensor
    rotation: Tensor
    width: Tensor

    @property
    def n(self) -> int:
        return self.quality.shape[-1]

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.quality.data, self.rotation.data, self.width.data


def project_tokens(z, grid: int | None = None) -> Tensor:
    """Lay a ``K × M`` token sequence out as a ``K × g × g × g`` volume in serialization order."""
    z = as_tensor(z)
    k, m = z.shape
    g = grid if grid is not None else int(round(m ** (1 / 3)))
    if g**3 != m:
        raise ValueError(f"{m} tokens do not form a {g}³ grid")
    return reshape(z, (k, g, g, g))


def stage_taps(taps: tuple[int, ...], stages: int) -> list[int | None]:
    """Deepest tap feeds the first (coarsest) stage; stages past the taps get no skip."""
    if len(taps) > stages:
        raise ValueError(f"{len(taps)} tap layers but only {stages} decoder stages")
    ordered = list(reversed(taps))
    return ordered + [None] * (stages - len(ordered))


def init_decoder(cfg: DecoderConfig, tokens_width: int, taps: tuple[int, ...],
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    dt = default_dtype()

    def conv(cout, cin, k=3, gain=2.0):
        return (rng.standard_normal((cout, cin, k, k, k)) * np.sqrt(gain / (cin * k**3))).astype(dt)

    def deconv(cin, cout):
        return (rng.standard_normal((cin, cout, 2, 2, 2)) * np.sqrt(1.0 / cin)).astype(dt)

    params = {}
    cin = tokens_width
    for s, tap in enumerate(stage_taps(taps, cfg.stages), start=1):
        w = cfg.widths[s - 1]
        p = f"dec.stage{s}"
        params[f"{p}.up.W"], params[f"{p}.up.b"] = deconv(cin, w), np.zeros(w, dt)
        merged = w
        if tap is not None:
            c = tokens_width
            # stage s works at grid·2^s, so its tap needs s doublings
            for j in range(1, s + 1):
                params[f"{p}.skip{j}.W"], params[f"{p}.skip{j}.b"] = deconv(c, w), np.zeros(w, dt)
                c = w
            merged += w
        params[f"{p}.conv.W"], params[f"{p}.conv.b"] = conv(w, merged), np.zeros(w, dt)
        cin = w
    params["dec.fuse.in.W"] = conv(cfg.tsdf_channels, 1)
    params["dec.fuse.in.b"] = np.zeros(cfg.tsdf_channels, dt)
    params["dec.fuse.out.W"] = conv(cfg.features, cin + cfg.tsdf_channels)
    params["dec.fuse.out.b"] = np.zeros(cfg.features, dt)
    for name, c in (("q", 1), ("r", 4), ("w", 1)):
        params[f"head.{name}.W"] = conv(c, cfg.features, gain=1.0)
        params[f"head.{name}.b"] = np.zeros(c, dt)
    return params


def decode_stage(y, z_tap, params: dict, prefix: str) -> Tensor:
    """One up-sampling stage: ``ReLU(CONV(DECONV(y) ⊕ DECONV-chain(Proj(z_tap))))``.

    ``z_tap`` may be None for a stage without a token skip.
    """
    up = F.deconv3d(y, params[f"{prefix}.up.W"], params[f"{prefix}.up.b"], stride=2)
    parts = [up]
    if z_tap is not None:
        skip = project_tokens(z_tap)
        target, extent = up.shape[1], skip.shape[1]
        j = 0
        while extent < target and f"{prefix}.skip{j + 1}.W" in params:
            j += 1
            skip = F.deconv3d(skip, params[f"{prefix}.skip{j}.W"], params[f"{prefix}.skip{j}.b"], stride=2)
            extent = skip.shape[1]
        if skip.shape[1:] != up.shape[1:]:
            raise ValueError(f"skip path extent {skip.shape[1:]} does not match up-sampled extent {up.shape[1:]}")
        parts.append(skip)
    merged = concat(parts, axis=0) if len(parts) > 1 else up
    return F.relu(F.conv3d(merged, params[f"{prefix}.conv.W"], params[f"{prefix}.conv.b"], padding=1))


def final_fuse(y_last, values, params: dict) -> Tensor:
    """``ReLU(CONV(y_last ⊕ ReLU(CONV(x))))`` at full resolution."""
    if isinstance(values, TsdfVolume):
        values = values.values
    y_last = as_tensor(y_last)
    values = np.asarray(values)
    if y_last.shape[1:] != values.shape:
        raise ValueError(f"decoder output extent {y_last.shape[1:]} does not match TSDF extent {values.shape}")
    x = Tensor(values[None].astype(y_last.dtype))
    cx = F.relu(F.conv3d(x, params["dec.fuse.in.W"], params["dec.fuse.in.b"], padding=1))
    return F.relu(F.conv3d(concat([y_last, cx], axis=0), params["dec.fuse.out.W"], params["dec.fuse.out.b"],
                           padding=1))


def heads(y, params: dict) -> GraspMaps:
    """Quality via sigmoid, orientation via per-voxel normalization, width via softplus."""
    q = F.sigmoid(F.conv3d(y, params["head.q.W"], params["head.q.b"], padding=1))
    r = F.normalize(F.conv3d(y, params["head.r.W"], params["head.r.b"], padding=1), axis=0)
    w = F.softplus(F.conv3d(y, params["head.w.W"], params["head.w.b"], padding=1))
    return GraspMaps(q, r, w)


def decode(tapped: list, final, values, cfg: DecoderConfig, taps: tuple[int, ...], params: dict) -> GraspMaps:
    """Full decoder: coarse-to-fine stages, TSDF fusion and heads."""
    by_layer = dict(zip(taps, tapped))
    y = project_tokens(final)
    for s, tap in enumerate(stage_taps(taps, cfg.stages), start=1):
        y = decode_stage(y, by_layer[tap] if tap is not None else None, params, f"dec.stage{s}")
    return heads(final_fuse(y, values, params), params)
