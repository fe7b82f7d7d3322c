"""Training loop, CSV loss log, per-epoch checkpoints and train-set evaluation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .checkpoint import load_into, save_checkpoint
from .config import RunConfig
from .detector import PreparedImage, Spgnn
from .evaluation import EvalReport, evaluate
from .nn import make_rng
from .optim import SGD
from .synth import Sample, ground_truth_json, load_dataset

LOSS_KEYS = ("rpn_cls", "rpn_reg", "head_cls", "head_reg", "total")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    model: Spgnn
    trace: list = field(default_factory=list)     # one dict of loss terms per step
    checkpoint: Path | None = None

    def totals(self) -> np.ndarray:
        return np.array([row["total"] for row in self.trace])


def _flip(prep: PreparedImage, model: Spgnn) -> PreparedImage:
    return model.prepare(prep.pixels[:, :, ::-1].copy())


def _flip_boxes(boxes: np.ndarray, width: int) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = width - boxes[:, 2]
    out[:, 2] = width - boxes[:, 0]
    return out


def train(cfg: RunConfig, samples: list[Sample] | None = None, out_dir=None, log=None) -> TrainResult:
    """Run the configured schedule and return the model with its per-step loss trace.

    ``out_dir=False`` keeps everything in memory; otherwise the CSV log and a
    checkpoint per epoch go under ``out_dir`` (default ``cfg.paths.out``).  A
    non-finite loss saves the last good weights and raises :class:`TrainingDiverged`.
    """
    cfg.validate()
    if samples is None:
        samples = load_dataset(cfg.paths.data)
    if not samples:
        raise ValueError("training set is empty")
    model = Spgnn(cfg)
    params = list(model.named_parameters())
    opt = SGD([p for _, p in params], cfg.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay)
    rng = make_rng(cfg.seed + 1)
    prepared = [model.prepare(s.pixels) for s in samples]
    flipped: dict = {}

    out = None if out_dir is False else Path(out_dir or cfg.paths.out)
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1), encoding="utf-8")
        log_file = open(out / "loss.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(log_file)
        writer.writerow(("step",) + LOSS_KEYS)

    sched = cfg.schedule
    bs = min(sched.batch_size, len(samples))
    steps_per_epoch = -(-len(samples) // bs)
    # max_steps, when set, is the run length and overrides epochs
    total_steps = sched.epochs * steps_per_epoch if sched.max_steps is None else sched.max_steps
    result = TrainResult(model)
    step = 0
    try:
        while step < total_steps:
            order = rng.permutation(len(samples))
            for b in range(steps_per_epoch):
                if step >= total_steps:
                    break
                batch = order[b * bs:(b + 1) * bs]
                opt.zero_grads()
                terms = dict.fromkeys(LOSS_KEYS, 0.0)
                for i in batch:
                    prep, boxes = prepared[i], samples[i].boxes
                    if sched.hflip and rng.random() < 0.5:
                        if i not in flipped:
                            flipped[i] = _flip(prep, model)
                        prep, boxes = flipped[i], _flip_boxes(boxes, prep.hw[1])
                    try:
                        losses = model.loss(prep, boxes, samples[i].classes, rng)
                    except FloatingPointError as exc:
                        raise TrainingDiverged(f"step {step + 1}: {exc}") from None
                    core.backward(core.mul(losses["total"], 1.0 / len(batch)))
                    for k in LOSS_KEYS:
                        terms[k] += float(losses[k].data) / len(batch)
                opt.step()
                step += 1
                result.trace.append(terms)
                if writer is not None:
                    writer.writerow([step] + [repr(terms[k]) for k in LOSS_KEYS])
                if log is not None:
                    log(step, terms)
            if out is not None and (step % steps_per_epoch == 0 or step == total_steps):
                epoch = -(-step // steps_per_epoch)
                result.checkpoint = out / f"epoch_{epoch:03d}.ckpt"
                save_checkpoint(result.checkpoint, params, {"step": step, "config": cfg.to_dict()})
    except TrainingDiverged:
        if out is not None:
            # the failing step never reached the optimizer, so the weights are still the last good ones
            save_checkpoint(out / "last_good.ckpt", params, {"step": step, "config": cfg.to_dict()})
        raise
    finally:
        if writer is not None:
            log_file.close()
    if out is not None and result.checkpoint is not None:
        save_checkpoint(out / "final.ckpt", params, {"step": step, "config": cfg.to_dict()})
        result.checkpoint = out / "final.ckpt"
    return result


def load_model(cfg: RunConfig, checkpoint) -> Spgnn:
    model = Spgnn(cfg)
    load_into(checkpoint, list(model.named_parameters()))
    return model


def detect_all(model: Spgnn, samples: list[Sample], prepared: list[PreparedImage] | None = None) -> list[dict]:
    prepared = prepared or [model.prepare(s.pixels) for s in samples]
    dets = []
    for s, prep in zip(samples, prepared):
        dets.extend(d.to_json(s.image_id) for d in model.detect(prep))
    return dets


def evaluate_model(model: Spgnn, samples: list[Sample], prepared=None) -> EvalReport:
    return evaluate(detect_all(model, samples, prepared), ground_truth_json(samples))
