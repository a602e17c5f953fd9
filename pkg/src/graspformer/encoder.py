"""Patch serialization and the transformer encoder.

Token sequences are ``K × M`` matrices: one column per patch token.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, as_tensor, default_dtype, matmul, reshape, transpose
from .tsdf import TsdfVolume


@dataclass(frozen=True)
class EncoderConfig:
    n: int = 40
    patch: int = 8
    width: int = 768
    heads: int = 12
    depth: int = 12
    taps: tuple[int, ...] = (4, 7)
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.n % self.patch:
            raise ValueError(f"patch size {self.patch} does not divide N={self.n}")
        if self.width % self.heads:
            raise ValueError(f"{self.heads} heads do not divide width {self.width}")
        taps = tuple(self.taps)
        if any(b <= a for a, b in zip(taps, taps[1:])) or any(t < 1 or t >= self.depth for t in taps):
            raise ValueError(f"tap layers {taps} must be increasing 1-based block indices below L={self.depth}")
        object.__setattr__(self, "taps", taps)

    @property
    def grid(self) -> int:
        return self.n // self.patch

    @property
    def tokens(self) -> int:
        return self.grid**3

    @property
    def patch_dim(self) -> int:
        return self.patch**3

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


def serialize_patches(values: np.ndarray, patch: int) -> np.ndarray:
    """Cut an N³ grid into (N/C)³ cubes; returns the ``C³ × M`` patch matrix.

    Token ``a·g² + b·g + c`` holds patch ``(a, b, c)``, flattened i-major.
    """
    n = values.shape[0]
    if values.shape != (n, n, n) or n % patch:
        raise ValueError(f"patch size {patch} does not tile a volume of shape {values.shape}")
    g = n // patch
    blocks = values.reshape(g, patch, g, patch, g, patch).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks.reshape(g**3, patch**3).T)


def deserialize_patches(patches: np.ndarray, n: int, patch: int) -> np.ndarray:
    g = n // patch
    blocks = patches.T.reshape(g, g, g, patch, patch, patch).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(blocks.reshape(n, n, n))


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "enc") -> dict[str, np.ndarray]:
    dt = default_dtype()
    k, dh, h, hidden = cfg.width, cfg.head_dim, cfg.heads, cfg.mlp_ratio * cfg.width

    def normal(shape, std):
        return (rng.standard_normal(shape) * std).astype(dt)

    params = {
        f"{prefix}.embed.W": normal((k, cfg.patch_dim), cfg.patch_dim**-0.5),
        f"{prefix}.embed.P": normal((k, cfg.tokens), 0.02),
    }
    for b in range(1, cfg.depth + 1):
        p = f"{prefix}.block{b}"
        params.update({
            f"{p}.ln1.gain": np.ones(k, dt), f"{p}.ln1.bias": np.zeros(k, dt),
            f"{p}.attn.Wq": normal((h, dh, k), k**-0.5),
            f"{p}.attn.Wk": normal((h, dh, k), k**-0.5),
            f"{p}.attn.Wv": normal((h, dh, k), k**-0.5),
            f"{p}.attn.Wo": normal((k, k), k**-0.5),
            f"{p}.ln2.gain": np.ones(k, dt), f"{p}.ln2.bias": np.zeros(k, dt),
            f"{p}.mlp.W1": normal((hidden, k), k**-0.5), f"{p}.mlp.b1": np.zeros(hidden, dt),
            f"{p}.mlp.W2": normal((k, hidden), hidden**-0.5), f"{p}.mlp.b2": np.zeros(k, dt),
        })
    return params


def embed(patches, W, P) -> Tensor:
    """Linear patch projection plus learned position table: ``W x' + P``."""
    patches, W, P = as_tensor(patches), as_tensor(W), as_tensor(P)
    if W.shape[1] != patches.shape[0] or P.shape != (W.shape[0], patches.shape[1]):
        raise ValueError(f"embedding shapes disagree: W {W.shape}, P {P.shape}, patches {patches.shape}")
    return matmul(W, patches) + P


def attention_head(z, Wk, Wq, Wv, j: int) -> Tensor:
    """One head's output for token ``j``, attending over every token."""
    z = as_tensor(z)
    scale = 1.0 / np.sqrt(as_tensor(Wq).shape[0])
    query = matmul(Wq, z[:, j:j + 1])
    alpha = F.softmax(transpose(matmul(Wk, z)) @ query * scale, axis=0)
    return reshape(matmul(Wv, z) @ alpha, (-1,))


def msa_block(z, params: dict, prefix: str, return_weights: bool = False):
    """``z + Wo · concat_h(head_h(LN(z)))``; heads are concatenated in parameter order."""
    z = as_tensor(z)
    k, m = z.shape
    zn = F.layernorm(z, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"], axis=0)
    Wq, Wk, Wv = (as_tensor(params[f"{prefix}.attn.{w}"]) for w in ("Wq", "Wk", "Wv"))
    h, dh, _ = Wq.shape

    def project(w):
        return reshape(matmul(reshape(w, (h * dh, k)), zn), (h, dh, m))

    q, key, v = project(Wq), project(Wk), project(Wv)
    # scores[h, j, m] = q_j · k_m / sqrt(dh)
    scores = matmul(transpose(q, (0, 2, 1)), key) * (1.0 / np.sqrt(dh))
    alpha = F.softmax(scores, axis=-1)
    heads = matmul(v, transpose(alpha, (0, 2, 1)))
    out = z + matmul(params[f"{prefix}.attn.Wo"], reshape(heads, (h * dh, m)))
    return (out, alpha) if return_weights else out


def ffn_block(z, params: dict, prefix: str) -> Tensor:
    """``z + MLP(LN(z))`` applied to each token independently (GELU hidden layer)."""
    z = as_tensor(z)
    zn = F.layernorm(z, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"], axis=0)
    hidden = F.gelu(matmul(params[f"{prefix}.mlp.W1"], zn) + reshape(as_tensor(params[f"{prefix}.mlp.b1"]), (-1, 1)))
    return z + matmul(params[f"{prefix}.mlp.W2"], hidden) + reshape(as_tensor(params[f"{prefix}.mlp.b2"]), (-1, 1))


def encode(values, cfg: EncoderConfig, params: dict, prefix: str = "enc") -> tuple[list[Tensor], Tensor]:
    """Run serialization, embedding and all blocks.

    Returns the outputs after each tapped block (1-based) and the final state.
    """
    if isinstance(values, TsdfVolume):
        values = values.values
    patches = serialize_patches(np.asarray(values), cfg.patch).astype(as_tensor(params[f"{prefix}.embed.W"]).dtype)
    z = embed(patches, params[f"{prefix}.embed.W"], params[f"{prefix}.embed.P"])
    tapped = []
    for b in range(1, cfg.depth + 1):
        z = ffn_block(msa_block(z, params, f"{prefix}.block{b}"), params, f"{prefix}.block{b}")
        if b in cfg.taps:
            tapped.append(z)
    return tapped, z
