"""Mini-batch SGD with a plateau learning-rate schedule."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from avsv.autodiff import Tape
from avsv.checkpoint import Checkpoint, restore_model, snapshot
from avsv.data.synth import Dataset
from avsv.errors import ConfigError, DataError, NumericalError
from avsv.models.zoo import Model, collate, forward_train, model_loss

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_loss", "lr")


@dataclass
class TrainConfig:
    lr: float = 0.001
    plateau_factor: float = 0.95
    plateau_patience: int = 2
    min_improvement: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 30
    t_crop: int = 100
    momentum: float = 0.0
    lambda_a: Optional[float] = None
    lambda_v: Optional[float] = None
    shards: int = 1
    seed: int = 0

    def validate(self, model: Optional[Model] = None) -> None:
        if not 0 < self.plateau_factor < 1:
            raise ConfigError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        if self.lr <= 0 or self.max_epochs < 0 or self.t_crop < 1 or self.plateau_patience < 1:
            raise ConfigError("lr, t_crop and plateau_patience must be positive, max_epochs nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.shards < 1 or self.batch_size < self.shards:
            raise ConfigError(f"batch_size {self.batch_size} cannot be split into {self.shards} shards")
        min_rows = 2 * self.shards
        if model is not None and model.topology.batchnorm and self.batch_size < min_rows:
            raise ConfigError(f"batch_size must be at least {min_rows} when batch norm trains on {self.shards} shard(s)")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    train_acc: float = float("nan")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in LOG_FIELDS}


def _labels(ds: Dataset, label_map: dict) -> np.ndarray:
    try:
        return np.array([label_map[s.speaker_id] for s in ds.samples], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"validation speaker {exc.args[0]} does not appear in the training split") from exc


def _shard_bounds(n: int, shards: int) -> list:
    edges = np.linspace(0, n, shards + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _check_finite(value: float, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


def _accuracy(outputs: dict, labels: np.ndarray) -> float:
    hits = [float((r.logits.data.argmax(axis=1) == labels).mean()) for r in outputs.values()]
    return float(np.mean(hits))


def _with_lambdas(model: Model, cfg: TrainConfig) -> Model:
    if cfg.lambda_a is not None:
        model.topology.lambda_a = cfg.lambda_a
    if cfg.lambda_v is not None:
        model.topology.lambda_v = cfg.lambda_v
    return model


def evaluate_loss(model: Model, ds: Dataset, labels: np.ndarray, cfg: TrainConfig) -> float:
    """Mean loss in infer mode over fixed, offset-zero crops."""
    total = 0.0
    topo = model.topology
    for start in range(0, len(ds), cfg.batch_size):
        chunk = ds.samples[start:start + cfg.batch_size]
        y = labels[start:start + cfg.batch_size]
        batch = collate(chunk, t_crop=cfg.t_crop, audio=topo.uses_audio, video=topo.uses_video)
        out = forward_train(model, batch, y, mode="infer")
        loss, _ = model_loss(model, out, y)
        total += float(loss.data) * len(chunk)
    return total / max(len(ds), 1)


def _shard_grads(model: Model, batch_samples, y, offsets, cfg: TrainConfig, rng_key: list) -> tuple:
    """Forward and backward for one shard on its own tape."""
    topo = model.topology
    batch = collate(batch_samples, t_crop=cfg.t_crop, offsets=offsets, audio=topo.uses_audio, video=topo.uses_video)
    rng = np.random.default_rng(rng_key)
    with Tape() as tape:
        out = forward_train(model, batch, y, rng=rng, mode="train")
        loss, _ = model_loss(model, out, y)
    grads = tape.gradients(loss)
    return float(loss.data), grads, tape, _accuracy(out, y)


def train(model: Model, train_set: Dataset, val_set: Dataset, cfg: TrainConfig,
          resume: Optional[Checkpoint] = None, log_path=None, threads: int = 1,
          on_epoch: Optional[Callable[[Checkpoint], None]] = None) -> tuple:
    """Train ``model`` in place; returns ``(final checkpoint, list of EpochLog)``.

    Each epoch's shuffle, crop offsets and dropout masks derive from
    ``(seed, epoch, batch, shard)``, so a resumed run reproduces the
    uninterrupted one. ``threads`` only changes how shards are scheduled.
    """
    cfg.validate(model)
    _with_lambdas(model, cfg)
    label_map = train_set.speaker_labels()
    if len(label_map) > model.topology.head.num_classes:
        raise ConfigError(
            f"{len(label_map)} training speakers but head.num_classes is {model.topology.head.num_classes}"
        )
    y_train = _labels(train_set, label_map)
    y_val = _labels(val_set, label_map) if len(val_set) else np.zeros(0, dtype=np.int64)
    params = model.params
    velocity = {name: np.zeros_like(p.data) for name, p in params.items()} if cfg.momentum else {}
    history: list = []
    epoch0, lr, best, bad = 0, float(cfg.lr), math.inf, 0
    if resume is not None:
        restore_model(model, resume)
        velocity.update({k: v.copy() for k, v in resume.optimizer.items()})
        epoch0, lr, best, bad = resume.epoch, resume.lr, resume.best_val, resume.bad_epochs
        history = [EpochLog(**r) for r in resume.log]

    if log_path is not None:
        # a resumed run rewrites the epochs carried in the checkpoint, so the file matches an uninterrupted run
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            writer.writeheader()
            writer.writerows(h.row() for h in history)

    pool = ThreadPoolExecutor(threads) if threads > 1 and cfg.shards > 1 else None
    n = len(train_set)
    ckpt = None
    try:
        for epoch in range(epoch0, cfg.max_epochs):
            model.train()
            rng = np.random.default_rng([cfg.seed, 3, epoch])
            order = rng.permutation(n)
            offsets = np.array([int(rng.integers(train_set.samples[i].audio.shape[0])) for i in order])
            loss_sum, acc_sum, seen = 0.0, 0.0, 0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                if len(idx) < 2 * cfg.shards and model.topology.batchnorm:
                    continue
                jobs = []
                for s, (lo, hi) in enumerate(_shard_bounds(len(idx), cfg.shards)):
                    rows = idx[lo:hi]
                    jobs.append(([train_set.samples[i] for i in rows], y_train[rows],
                                 offsets[start + lo:start + hi], [cfg.seed, 4, epoch, b, s]))
                run = lambda j: _shard_grads(model, j[0], j[1], j[2], cfg, j[3])  # noqa: E731
                results = list(pool.map(run, jobs)) if pool is not None else [run(j) for j in jobs]
                total = {}
                batch_loss = 0.0
                for (shard_loss, grads, tape, acc), job in zip(results, jobs):
                    w = len(job[1]) / len(idx)
                    _check_finite(shard_loss, epoch, b)
                    batch_loss += w * shard_loss
                    acc_sum += acc * len(job[1])
                    for key, (_, g) in grads.items():
                        g = g * g.dtype.type(w)
                        total[key] = g if key not in total else total[key] + g
                    tape.commit()
                step = np.float32(lr)
                for name, p in params.items():
                    g = total.get(id(p))
                    if g is None:
                        continue
                    if not np.all(np.isfinite(g)):
                        raise NumericalError(f"non-finite gradient for {name} at epoch {epoch}, batch {b}")
                    if cfg.momentum:
                        velocity[name] = velocity[name] * np.float32(cfg.momentum) + g
                        g = velocity[name]
                    p.data = (p.data - step * g).astype(p.dtype)
                loss_sum += batch_loss * len(idx)
                seen += len(idx)
            train_loss = loss_sum / max(seen, 1)
            model.eval()
            val_loss = evaluate_loss(model, val_set, y_val, cfg) if len(val_set) else train_loss
            _check_finite(val_loss, epoch, -1)
            if val_loss < best - cfg.min_improvement:
                best, bad = val_loss, 0
            else:
                bad += 1
                if bad >= cfg.plateau_patience:
                    lr *= cfg.plateau_factor
                    bad = 0
            entry = EpochLog(epoch + 1, train_loss, val_loss, lr, acc_sum / max(seen, 1))
            history.append(entry)
            log.info("epoch %d train %.4f val %.4f lr %.6g acc %.3f", entry.epoch, train_loss, val_loss, lr,
                     entry.train_acc)
            if log_path is not None:
                with open(log_path, "a", newline="") as fh:
                    csv.DictWriter(fh, fieldnames=LOG_FIELDS).writerow(entry.row())
            ckpt = snapshot(model, velocity, epoch + 1, lr, best, bad, asdict(cfg), [asdict(h) for h in history])
            if on_epoch is not None:
                on_epoch(ckpt)
    finally:
        if pool is not None:
            pool.shutdown()
    model.eval()
    if ckpt is None:
        ckpt = snapshot(model, velocity, epoch0, lr, best, bad, asdict(cfg), [asdict(h) for h in history])
    return ckpt, history


def read_log(path) -> list:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
