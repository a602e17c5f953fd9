"""Deterministic training loop with resumable checkpoints."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .config import TrainRunConfig
from .model import META_KEY, ModelConfig, as_parameters, forward, init_params
from .objective import batch_loss
from .optim import AdamState, adam_step
from .tensor import grad, pairwise_sum
from .tsdf import GraspLabel, load_labels, load_tsdf

log = logging.getLogger(__name__)

STEP_KEY = "train.step"


class DatasetError(RuntimeError):
    pass


@dataclass
class Record:
    name: str
    values: np.ndarray
    labels: list[GraspLabel]


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    state: AdamState
    losses: list[float] = field(default_factory=list)
    skipped: int = 0


def load_dataset(data_dir, n: int | None = None) -> tuple[list[Record], int]:
    """Read every ``*.tsdf`` / ``*.labels`` pair; unreadable records are skipped and counted."""
    records, skipped = [], 0
    for path in sorted(Path(data_dir).glob("*.tsdf")):
        try:
            vol = load_tsdf(path)
            if n is not None and vol.n != n:
                raise FormatError(f"volume is {vol.n}³, model expects {n}³")
            labels = load_labels(path.with_suffix(".labels"), vol.n)
            if not labels:
                raise FormatError("no labels")
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            skipped += 1
            continue
        records.append(Record(path.stem, vol.values, labels))
    if not records:
        raise DatasetError(f"no usable records in {data_dir} ({skipped} skipped)")
    if skipped:
        log.warning("%d corrupt records skipped", skipped)
    return records, skipped


def item_loss_and_grad(values, labels, cfg: ModelConfig, params: dict[str, np.ndarray]):
    tensors = as_parameters(params)
    loss = batch_loss(forward(values, cfg, tensors), labels)
    names = list(tensors)
    return float(loss.data), dict(zip(names, grad(loss, [tensors[k] for k in names])))


def dataset_loss(records: list[Record], cfg: ModelConfig, params: dict[str, np.ndarray]) -> float:
    """Mean per-record loss without gradients."""
    return float(np.mean([batch_loss(forward(r.values, cfg, params), r.labels).data for r in records]))


def batch_order(n_records: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Record indices for ``step``: a fresh permutation per epoch, sliced into batches."""
    per_epoch = math.ceil(n_records / batch_size)
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n_records)
    return perm[pos * batch_size:(pos + 1) * batch_size]


def train_step(batch: list[Record], cfg: ModelConfig, params, state: AdamState, pool=None):
    work = [(r.values, r.labels, cfg, params) for r in batch]
    results = list(pool.map(lambda a: item_loss_and_grad(*a), work)) if pool else \
        [item_loss_and_grad(*a) for a in work]
    scale = 1.0 / len(batch)
    grads = {k: (pairwise_sum([g[k] for _, g in results]) * scale).astype(params[k].dtype) for k in params}
    loss = float(np.mean([l for l, _ in results]))
    new_params, new_state = adam_step(params, grads, state)
    return loss, new_params, new_state


def checkpoint_tensors(cfg: ModelConfig, params, state: AdamState) -> dict[str, np.ndarray]:
    out = {META_KEY: cfg.meta_tensor(), STEP_KEY: np.array([state.step], dtype=np.float32)}
    out.update(params)
    out.update({f"adam.m.{k}": v for k, v in state.m.items()})
    out.update({f"adam.v.{k}": v for k, v in state.v.items()})
    return out


def restore(path, lr: float | None = None) -> tuple[ModelConfig, dict[str, np.ndarray], AdamState | None]:
    """Model config, parameters and (if present) optimizer state from a checkpoint."""
    tensors = load_checkpoint(path)
    if META_KEY not in tensors:
        raise FormatError(f"{path}: checkpoint lacks {META_KEY}")
    cfg = ModelConfig.from_meta_tensor(tensors[META_KEY])
    params = {k: v for k, v in tensors.items() if not k.startswith(("meta.", "train.", "adam."))}
    state = None
    if STEP_KEY in tensors:
        state = AdamState(lr=lr if lr is not None else 1e-4, step=int(tensors[STEP_KEY][0]),
                          m={k: tensors[f"adam.m.{k}"] for k in params},
                          v={k: tensors[f"adam.v.{k}"] for k in params})
    return cfg, params, state


def train(data_dir, cfg: ModelConfig, run: TrainRunConfig, out_dir=None, resume=None,
          records: list[Record] | None = None) -> TrainResult:
    """Train with Adam; deterministic for a given seed, dataset and configuration.

    With ``out_dir`` set, per-step losses go to ``loss.jsonl`` and checkpoints
    to ``step_XXXXXX.gfck`` every ``ckpt_every`` steps plus ``last.gfck``.
    """
    skipped = 0
    if records is None:
        records, skipped = load_dataset(data_dir, cfg.n)
    if resume is not None:
        ckpt_cfg, params, state = restore(resume, run.lr)
        if ckpt_cfg != cfg:
            raise FormatError(f"checkpoint model {ckpt_cfg.to_dict()} differs from config {cfg.to_dict()}")
        if state is None:
            state = AdamState.for_params(params, lr=run.lr)
    else:
        params = init_params(cfg, run.init_seed)
        state = AdamState.for_params(params, lr=run.lr)
    total = run.steps or run.epochs * math.ceil(len(records) / run.batch_size)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    losses = []
    pool = ThreadPoolExecutor(run.workers) if run.workers > 1 else None
    try:
        while state.step < total:
            batch = [records[i] for i in batch_order(len(records), run.batch_size, run.seed, state.step)]
            loss, params, state = train_step(batch, cfg, params, state, pool)
            losses.append(loss)
            if out is not None:
                with open(out / "loss.jsonl", "a") as fh:
                    fh.write(json.dumps({"step": state.step, "loss": loss}) + "\n")
                if state.step % run.ckpt_every == 0:
                    save_checkpoint(checkpoint_tensors(cfg, params, state), out / f"step_{state.step:06d}.gfck")
    finally:
        if pool:
            pool.shutdown()
    if out is not None:
        save_checkpoint(checkpoint_tensors(cfg, params, state), out / "last.gfck")
    return TrainResult(params, state, losses, skipped)
