"""Adam, checkpoints and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import container
from .autodiff import backward
from .config import ModelConfig
from .data import FeatureBundle, Vocabulary, preprocess_caption
from .errors import DataError, EmptyCaptionError, IncompatibleCheckpointError, TrainingError
from .model import CaptionModel

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.dgvc"
LOSS_LOG_NAME = "loss.csv"


# -- optimiser ------------------------------------------------------------
@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], moments: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              t: int | None = None) -> AdamState:
    """Bias-corrected Adam update, applied to the arrays in ``params`` in place.

    ``t`` defaults to ``moments.t + 1``.
    """
    t = moments.t + 1 if t is None else t
    if t < 1:
        raise TrainingError(f"Adam step count must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = moments.m.get(name)
        v = moments.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        moments.m[name], moments.v[name] = m, v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    moments.t = t
    return moments


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        for k in grads:
            grads[k] = grads[k] * (max_norm / norm)
    return norm


# -- checkpoints ----------------------------------------------------------
@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    rng_state: dict | None = None
    vocab: list[str] | None = None


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    names = list(ckpt.params)
    header = {"kind": "checkpoint", "config": ckpt.config.to_dict(), "epoch": ckpt.epoch,
              "adam_t": ckpt.adam.t, "rng": ckpt.rng_state, "vocab": ckpt.vocab, "params": names}
    blobs = [(f"param/{n}", ckpt.params[n]) for n in names]
    blobs += [(f"adam_m/{n}", ckpt.adam.m[n]) for n in names if n in ckpt.adam.m]
    blobs += [(f"adam_v/{n}", ckpt.adam.v[n]) for n in names if n in ckpt.adam.v]
    container.write_atomic(path, container.encode(header, [(k, np.asarray(a, dtype=np.float64)) for k, a in blobs]))


def load_checkpoint(path: str | Path) -> Checkpoint:
    src = str(path)
    header, blobs = container.decode(Path(path).read_bytes(), src)
    if header.get("kind") != "checkpoint":
        raise DataError(f"{src}: not a checkpoint (kind={header.get('kind')!r})")
    config = ModelConfig.from_dict(header["config"])
    shapes = {n: t.shape for n, t in CaptionModel(config).params.items()}
    params, adam = {}, AdamState(t=int(header.get("adam_t", 0)))
    for n in header["params"]:
        if n not in shapes:
            raise IncompatibleCheckpointError(f"{src}: parameter {n!r} not part of the configured model")
        params[n] = container.blob_array(blobs, f"param/{n}", src).reshape(shapes[n])
        for kind, store in (("adam_m", adam.m), ("adam_v", adam.v)):
            if f"{kind}/{n}" in blobs:
                store[n] = container.blob_array(blobs, f"{kind}/{n}", src).reshape(shapes[n])
    return Checkpoint(config, params, adam, int(header["epoch"]), header.get("rng"), header.get("vocab"))


def check_compatible(config: ModelConfig, ckpt: Checkpoint) -> None:
    a, b = config.arch(), ckpt.config.arch()
    diff = {k: (a[k], b[k]) for k in a if a[k] != b[k]}
    if diff:
        detail = ", ".join(f"{k}: config={x!r} checkpoint={y!r}" for k, (x, y) in sorted(diff.items()))
        raise IncompatibleCheckpointError(f"config does not match checkpoint ({detail})")


def model_from_checkpoint(ckpt: Checkpoint, config: ModelConfig | None = None) -> CaptionModel:
    if config is not None:
        check_compatible(config, ckpt)
    model = CaptionModel(ckpt.config)
    model.load_arrays(ckpt.params)
    return model


# -- training -------------------------------------------------------------
@dataclass
class TrainResult:
    model: CaptionModel
    losses: list[tuple[int, int, float]]
    epoch_losses: list[float]
    checkpoint: Path | None = None


def _encode_references(captions: Mapping[str, Sequence[str]], vocab: Vocabulary, max_len: int):
    out = {}
    for vid, texts in captions.items():
        recs = []
        for t in texts:
            try:
                recs.append(preprocess_caption(t, vocab, vid, max_len).ids)
            except EmptyCaptionError:
                log.warning("skipping empty caption for %s", vid)
        if recs:
            out[vid] = np.array(recs, dtype=np.int64)
    return out


def train(config: ModelConfig, bundles: Sequence[FeatureBundle], captions: Mapping[str, Sequence[str]],
          vocab: Vocabulary, out_dir: str | Path | None = None, epochs: int | None = None,
          resume: Checkpoint | None = None, model: CaptionModel | None = None,
          stop_below: float | None = None) -> TrainResult:
    """Teacher-forced training with Adam over seeded shuffled batches.

    Stops early once an epoch's mean loss falls below ``stop_below``.

    Writes ``loss.csv`` and a checkpoint after every epoch when ``out_dir`` is
    given. A non-finite loss aborts with :class:`TrainingError`; the last
    checkpoint on disk is then the last good epoch.
    """
    epochs = config.epochs if epochs is None else epochs
    if len(vocab) != config.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} entries but config.vocab_size={config.vocab_size}")
    refs = _encode_references(captions, vocab, config.max_len)
    by_id = {b.video_id: b for b in bundles}
    missing = [v for v in by_id if v not in refs]
    if missing:
        raise DataError(f"no usable caption for video {missing[0]!r}")
    ids = sorted(by_id)

    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    start = 0
    if resume is not None:
        model = model_from_checkpoint(resume, config)
        adam, start = resume.adam, resume.epoch
        if resume.rng_state:
            rng.bit_generator.state = resume.rng_state
    elif model is None:
        model = CaptionModel(config)

    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / CHECKPOINT_NAME
        fh = open(out / LOSS_LOG_NAME, "a" if resume is not None else "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if resume is None:
            writer.writerow(["epoch", "batch", "loss"])

    losses: list[tuple[int, int, float]] = []
    epoch_losses: list[float] = []
    params = {k: t.data for k, t in model.params.items()}
    try:
        for epoch in range(start + 1, start + epochs + 1):
            order = [ids[i] for i in rng.permutation(len(ids))]
            batch_losses = []
            for bi, lo in enumerate(range(0, len(order), config.batch_size)):
                # sorted so a batch's loss does not depend on its shuffle order
                chunk = sorted(order[lo:lo + config.batch_size])
                caps = np.stack([refs[v][rng.integers(len(refs[v]))] for v in chunk])
                model.zero_grad()
                loss = model.loss([by_id[v] for v in chunk], caps)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
                backward(loss)
                grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
                if config.grad_clip:
                    clip_grad_norm(grads, config.grad_clip)
                adam_step(params, grads, adam, config.learning_rate)
                losses.append((epoch, bi, value))
                batch_losses.append(value)
                if writer is not None:
                    writer.writerow([epoch, bi, repr(value)])
            epoch_losses.append(float(np.mean(batch_losses)))
            if fh is not None:
                fh.flush()
                save_checkpoint(ckpt_path, Checkpoint(config, model.state_arrays(), adam, epoch,
                                                      rng.bit_generator.state, vocab.itos))
            log.info("epoch %d loss %.6f", epoch, epoch_losses[-1])
            if stop_below is not None and epoch_losses[-1] < stop_below:
                break
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, losses, epoch_losses, ckpt_path)


def read_loss_log(path: str | Path) -> list[tuple[int, int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), int(r["batch"]), float(r["loss"])) for r in rows]
