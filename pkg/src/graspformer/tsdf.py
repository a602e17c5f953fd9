"""TSDF volumes, analytic primitives, workspace transforms and grasp-label files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import FormatError, TruncatedError
from .geometry import IDENTITY, quat_mul, quat_to_matrix

MAGIC = b"TSDF"
VERSION = 1
DEFAULT_SIDE_LENGTH = 0.3


class SizeMismatchError(FormatError):
    """Payload length disagrees with the N³ declared in the header."""


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(eq=False)
class TsdfVolume:
    """An N³ grid of truncated distances in [0, 1], indexed ``[i, j, k]``.

    ``side_length`` and ``trunc`` are kept at float32 precision so the volume
    survives a file round trip unchanged.
    """

    values: np.ndarray
    side_length: float = DEFAULT_SIDE_LENGTH
    trunc: float = 4 * DEFAULT_SIDE_LENGTH / 40

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError(f"TSDF must be a cube, got shape {self.values.shape}")
        if np.any(self.values < 0) or np.any(self.values > 1) or not np.all(np.isfinite(self.values)):
            raise ValueError("TSDF values must lie in [0, 1]")
        self.side_length = _f32(self.side_length)
        self.trunc = _f32(self.trunc)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def voxel_size(self) -> float:
        return self.side_length / self.n

    @property
    def voxels_per_meter(self) -> float:
        return self.n / self.side_length

    def __eq__(self, other) -> bool:
        return (isinstance(other, TsdfVolume) and self.side_length == other.side_length
                and self.trunc == other.trunc and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes())


@dataclass
class ScenePrimitive:
    """A sphere (``dims = [radius]``) or box (``dims`` = half extents), in meters."""

    kind: str
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    dims: np.ndarray = field(default_factory=lambda: np.array([0.03]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        self.dims = np.atleast_1d(np.asarray(self.dims, dtype=float))
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.dims.shape != ((1,) if self.kind == "sphere" else (3,)) or np.any(self.dims <= 0):
            raise ValueError(f"bad dimensions {self.dims} for {self.kind}")
        if abs(np.linalg.norm(self.orientation) - 1) > 1e-9:
            raise ValueError("primitive orientation must be a unit quaternion")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def bounding_radius(self) -> float:
        return float(self.dims[0] if self.kind == "sphere" else np.linalg.norm(self.dims))

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation

    def sdf(self, points) -> np.ndarray:
        """Signed distance from ``points`` (…×3, meters) to the surface; negative inside."""
        if self.kind == "sphere":
            return np.linalg.norm(np.asarray(points, dtype=float) - self.position, axis=-1) - self.dims[0]
        q = np.abs(self.to_local(points)) - self.dims
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "position": self.position.tolist(),
                "orientation": self.orientation.tolist(), "dims": self.dims.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ScenePrimitive:
        return cls(d["kind"], d["position"], d["orientation"], d["dims"])


def voxel_centers(n: int, side_length: float) -> np.ndarray:
    """World-frame (identity transform) centers of all voxels, shape (n, n, n, 3)."""
    c = (np.arange(n) + 0.5) * (side_length / n)
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def scene_sdf(prims, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    d = np.full(points.shape[:-1], np.inf)
    for p in prims:
        d = np.minimum(d, p.sdf(points))
    return d


def encode_distance(d, trunc: float) -> np.ndarray:
    """Map signed distance to [0, 1]: surface 0.5, deep inside 0, far outside 1."""
    return np.clip(d, -trunc, trunc) / (2 * trunc) + 0.5


def tsdf_from_primitives(prims, n: int = 40, side_length: float = DEFAULT_SIDE_LENGTH,
                         trunc: float | None = None) -> TsdfVolume:
    """Sample the truncated distance to a set of primitives at every voxel center.

    ``trunc`` defaults to four voxel sizes.
    """
    trunc = 4 * side_length / n if trunc is None else trunc
    if trunc <= 0:
        raise ValueError("truncation distance must be positive")
    d = scene_sdf(prims, voxel_centers(n, side_length))
    return TsdfVolume(encode_distance(d, trunc).astype(np.float32), side_length, trunc)


def save_tsdf(vol: TsdfVolume, path) -> None:
    header = MAGIC + struct.pack("<IIff", VERSION, vol.n, vol.side_length, vol.trunc)
    Path(path).write_bytes(header + vol.values.astype("<f4").tobytes())


def load_tsdf(path) -> TsdfVolume:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"format mismatch: expected magic {MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < 20:
        raise TruncatedError("truncated payload: header incomplete")
    version, n, side, trunc = struct.unpack_from("<IIff", buf, 4)
    if version != VERSION:
        raise FormatError(f"format mismatch: unsupported TSDF version {version}")
    expected = 4 * n**3
    payload = buf[20:]
    if len(payload) < expected:
        raise TruncatedError(f"truncated payload: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise SizeMismatchError(f"N³ mismatch: header says N={n} but payload holds {len(payload) // 4} values")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, n, n)
    return TsdfVolume(values, side, trunc)


@dataclass
class WorkspaceTransform:
    """Rigid map from the TSDF frame to the robot base frame, plus grid scale.

    ``v`` is voxels per meter; ``n`` (optional) bounds valid voxel indices.
    """

    v: float
    rotation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    n: int | None = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if abs(np.linalg.norm(self.rotation) - 1) > 1e-9:
            raise ValueError("transform rotation must be a unit quaternion")
        if self.v <= 0:
            raise ValueError("voxels per meter must be positive")

    @classmethod
    def for_volume(cls, vol: TsdfVolume, rotation=IDENTITY, translation=(0.0, 0.0, 0.0)) -> WorkspaceTransform:
        return cls(vol.voxels_per_meter, rotation, translation, vol.n)

    def apply(self, point) -> np.ndarray:
        return quat_to_matrix(self.rotation) @ np.asarray(point, dtype=float) + self.translation

    def compose(self, rotation, translation) -> WorkspaceTransform:
        """Left-compose an extra rigid motion ``G`` (applied after this transform)."""
        rotation = np.asarray(rotation, dtype=float)
        return WorkspaceTransform(self.v, quat_mul(rotation, self.rotation),
                                  quat_to_matrix(rotation) @ self.translation + np.asarray(translation, float),
                                  self.n)


def voxel_to_world(index, xf: WorkspaceTransform) -> np.ndarray:
    """Center of voxel ``(i, j, k)`` in meters, mapped through ``xf``."""
    index = np.asarray(index)
    if index.shape != (3,) or np.any(index < 0) or (xf.n is not None and np.any(index >= xf.n)):
        raise IndexError(f"voxel index {tuple(index.tolist())} outside the grid (N={xf.n})")
    return xf.apply((index + 0.5) / xf.v)


@dataclass
class GraspLabel:
    """Ground-truth grasp at one voxel; ``width`` is in voxel units."""

    index: tuple[int, int, int]
    quality: int
    rotation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    width: float = 0.0

    def __post_init__(self):
        self.index = tuple(int(i) for i in self.index)
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.quality not in (0, 1):
            raise ValueError(f"grasp quality label must be 0 or 1, got {self.quality}")
        if self.width < 0:
            raise ValueError("grasp width must be non-negative")
        if self.quality == 1 and abs(np.linalg.norm(self.rotation) - 1) > 1e-6:
            raise ValueError("positive grasp labels need a unit quaternion")


def format_labels(labels) -> str:
    lines = []
    for lab in labels:
        i, j, k = lab.index
        rw, rx, ry, rz = (repr(float(c)) for c in lab.rotation)
        lines.append(f"{i} {j} {k} {lab.quality} {rw} {rx} {ry} {rz} {float(lab.width)!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_labels(text: str, n: int | None = None) -> list[GraspLabel]:
    labels = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 9:
            raise FormatError(f"label line {lineno}: expected 9 fields, got {len(fields)}")
        try:
            i, j, k, q = (int(f) for f in fields[:4])
            rot = [float(f) for f in fields[4:8]]
            width = float(fields[8])
            label = GraspLabel((i, j, k), q, rot, width)
        except ValueError as exc:
            raise FormatError(f"label line {lineno}: {exc}") from exc
        if n is not None and not all(0 <= c < n for c in label.index):
            raise FormatError(f"label line {lineno}: index {label.index} outside the {n}³ grid")
        labels.append(label)
    return labels


def save_labels(labels, path) -> None:
    Path(path).write_text(format_labels(labels))


def load_labels(path, n: int | None = None) -> list[GraspLabel]:
    return parse_labels(Path(path).read_text(), n)
