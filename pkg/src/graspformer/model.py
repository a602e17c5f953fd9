"""Model configuration, parameter initialization and the end-to-end forward pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, GraspMaps, decode, init_decoder
from .encoder import EncoderConfig, encode, init_encoder
from .tensor import Tensor, precision
from .tsdf import DEFAULT_SIDE_LENGTH

META_KEY = "meta.model"


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    side_length: float = DEFAULT_SIDE_LENGTH

    def __post_init__(self):
        enc, dec = self.encoder, self.decoder
        if enc.grid * 2**dec.stages != enc.n:
            raise ValueError(f"{dec.stages} doubling stages take the {enc.grid}³ token grid to "
                             f"{enc.grid * 2**dec.stages}³, not N={enc.n}")
        if len(enc.taps) > dec.stages:
            raise ValueError(f"{len(enc.taps)} tap layers exceed {dec.stages} decoder stages")

    @property
    def n(self) -> int:
        return self.encoder.n

    def fingerprint(self) -> dict:
        e = self.encoder
        return {"N": e.n, "C": e.patch, "K": e.width, "H": e.heads, "L": e.depth}

    def to_dict(self) -> dict:
        e, d = self.encoder, self.decoder
        return {"N": e.n, "C": e.patch, "K": e.width, "H": e.heads, "L": e.depth, "taps": list(e.taps),
                "mlp_ratio": e.mlp_ratio, "stages": d.stages, "widths": list(d.widths), "D": d.features,
                "tsdf_channels": d.tsdf_channels, "side_length": self.side_length}

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        enc = EncoderConfig(int(d["N"]), int(d["C"]), int(d["K"]), int(d["H"]), int(d["L"]),
                            tuple(int(t) for t in d["taps"]), int(d.get("mlp_ratio", 4)))
        dec = DecoderConfig(int(d["stages"]), tuple(int(w) for w in d["widths"]), int(d["D"]),
                            int(d.get("tsdf_channels", d["D"])))
        return cls(enc, dec, float(d.get("side_length", DEFAULT_SIDE_LENGTH)))

    def meta_tensor(self) -> np.ndarray:
        """Flat float32 encoding stored alongside checkpoint weights."""
        d = self.to_dict()
        vals = [d["N"], d["C"], d["K"], d["H"], d["L"], d["mlp_ratio"], d["stages"], d["D"],
                d["tsdf_channels"], d["side_length"], len(d["taps"]), *d["taps"], *d["widths"]]
        return np.asarray(vals, dtype=np.float32)

    @classmethod
    def from_meta_tensor(cls, meta: np.ndarray) -> ModelConfig:
        # the shortest decimal that round-trips through float32 recovers e.g. 0.16 exactly
        v = [float(np.format_float_positional(np.float32(x))) for x in meta]
        ntaps = int(v[10])
        taps = [int(t) for t in v[11:11 + ntaps]]
        widths = [int(w) for w in v[11 + ntaps:]]
        return cls.from_dict({"N": v[0], "C": v[1], "K": v[2], "H": v[3], "L": v[4], "mlp_ratio": v[5],
                              "stages": v[6], "D": v[7], "tsdf_channels": v[8], "side_length": v[9],
                              "taps": taps, "widths": widths})


def full_config() -> ModelConfig:
    return ModelConfig()


def toy_config() -> ModelConfig:
    return ModelConfig(EncoderConfig(n=16, patch=4, width=64, heads=4, depth=4, taps=(2,)),
                       DecoderConfig(stages=2, widths=(32, 16), features=8, tsdf_channels=8),
                       side_length=0.16)


def tiny_config() -> ModelConfig:
    return ModelConfig(EncoderConfig(n=8, patch=4, width=8, heads=2, depth=2, taps=(1,)),
                       DecoderConfig(stages=2, widths=(6, 4), features=4, tsdf_channels=2),
                       side_length=0.08)


PRESETS = {"full": full_config, "toy": toy_config, "tiny": tiny_config}


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    with precision(dtype):
        params = init_encoder(cfg.encoder, rng)
        params.update(init_decoder(cfg.decoder, cfg.encoder.width, cfg.encoder.taps, rng))
    return params


def as_parameters(params: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, dtype=v.dtype) for k, v in params.items()}


def forward(values, cfg: ModelConfig, params: dict) -> GraspMaps:
    """TSDF grid (N³) to grasp maps."""
    tapped, final = encode(values, cfg.encoder, params)
    return decode(tapped, final, values, cfg.decoder, cfg.encoder.taps, params)
