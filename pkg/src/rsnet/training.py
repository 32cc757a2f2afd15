"""Elastic-net pose loss, AMSGrad, learning-rate schedules and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import PoseSample, flip_arrays, stack
from .metrics import mpjpe, pa_mpjpe, pck_auc
from .model import RSNet, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------------ loss

def elastic_loss(Y, Y_hat, alpha: float = 0.1) -> Tensor:
    """``(1/N) [(1-alpha) sum ||y_i - y^_i||^2 + alpha sum ||y_i - y^_i||_1]``.

    ``Y`` and ``Y_hat`` are ``(N, 3)``, with ``N`` counting every joint in the batch.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    Y, Y_hat = ad.as_tensor(Y), ad.as_tensor(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ad.ShapeError("loss", Y.shape, Y_hat.shape)
    n = Y.shape[0]
    diff = Y - Y_hat
    l2 = ad.sum(ad.square(diff))
    l1 = ad.sum(ad.abs(diff))
    return ad.scale(ad.scale(l2, 1.0 - alpha) + ad.scale(l1, alpha), 1.0 / n)


# ------------------------------------------------------------------- optimizer

@dataclass
class AMSGradState:
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray
    t: int = 0


def amsgrad_step(param: np.ndarray, grad: np.ndarray, state: AMSGradState, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One in-place AMSGrad update of ``param``; returns ``param``.

    The denominator uses the running maximum of the second-moment estimate.
    Both moments are bias-corrected as in the common framework implementation.
    """
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    np.maximum(state.v_max, state.v, out=state.v_max)
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    denom = np.sqrt(state.v_max) / math.sqrt(bc2) + eps
    param -= (lr / bc1) * state.m / denom
    return param


class AMSGrad:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {k: AMSGradState(np.zeros_like(p.data), np.zeros_like(p.data),
                                      np.zeros_like(p.data)) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        for k, p in self.params.items():
            amsgrad_step(p.data, p.grad, self.state[k], lr, self.beta1, self.beta2, self.eps)


# -------------------------------------------------------------------- schedule

@dataclass
class TrainConfig:
    alpha: float = 0.1
    batch_size: int = 128
    epochs: int = 30
    lr0: float = 0.001
    decay_factor: float = 0.95
    decay_every_epochs: int = 1
    # second multiplicative decay composed with the first (0 disables)
    extra_decay_factor: float = 0.5
    extra_decay_every_epochs: int = 5
    seed: int = 42
    flip_augment: bool = True
    flip_test: bool = False
    # evaluate every this many epochs; the final epoch is always evaluated
    eval_every: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


def detector_preset(**overrides) -> tuple[TrainConfig, dict]:
    """Settings used with detector 2-D inputs; returns (train config, model overrides)."""
    cfg = TrainConfig(batch_size=512, lr0=0.005, decay_factor=0.90, decay_every_epochs=4,
                      extra_decay_factor=1.0, extra_decay_every_epochs=0)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg, {"filter_size": 96}


def gt_preset(**overrides) -> tuple[TrainConfig, dict]:
    """Settings used with ground-truth 2-D inputs."""
    cfg = TrainConfig(batch_size=128, lr0=0.001, decay_factor=0.95, decay_every_epochs=1,
                      extra_decay_factor=0.5, extra_decay_every_epochs=5)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg, {"filter_size": 64}


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = cfg.lr0
    if cfg.decay_every_epochs > 0:
        lr *= cfg.decay_factor ** (epoch // cfg.decay_every_epochs)
    if cfg.extra_decay_every_epochs > 0:
        lr *= cfg.extra_decay_factor ** (epoch // cfg.extra_decay_every_epochs)
    return lr


# --------------------------------------------------------------------- metrics

@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float | None  # None for a standalone evaluation
    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck_150: float
    auc: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def predict(model: RSNet, X: np.ndarray, flip_test: bool = False, chunk: int = 1024) -> np.ndarray:
    """Batched evaluation-mode predictions in mm, optionally averaged with the flipped input."""
    outs = [model.predict(X[i:i + chunk]) for i in range(0, len(X), chunk)]
    pred = np.concatenate(outs)
    if flip_test:
        perm = model.topology.flip_permutation()
        Xf, _ = flip_arrays(X, np.zeros(X.shape[:2] + (3,)), perm)
        pf = np.concatenate([model.predict(Xf[i:i + chunk]) for i in range(0, len(Xf), chunk)])
        _, back = flip_arrays(Xf, pf, perm)
        pred = 0.5 * (pred + back)
    return pred


def evaluate(model: RSNet, samples: Sequence[PoseSample] | tuple, flip_test: bool = False,
             epoch: int = -1, train_loss: float | None = None) -> MetricsRecord:
    X, Y = stack(samples) if not isinstance(samples, tuple) else samples
    pred = predict(model, X, flip_test)
    root = model.topology.root
    pck, auc = pck_auc(Y, pred, root=root)
    return MetricsRecord(epoch, train_loss, mpjpe(Y, pred, root), pa_mpjpe(Y, pred), pck, auc)


# ------------------------------------------------------------------------ loop

@dataclass
class TrainResult:
    records: list[MetricsRecord]
    best_checkpoint: Path | None
    metrics_log: Path | None


def train(model: RSNet, train_set: Sequence[PoseSample], cfg: TrainConfig,
          eval_set: Sequence[PoseSample] | None = None, out_dir: str | Path | None = None,
          log_every: int = 0) -> TrainResult:
    """Mini-batch AMSGrad training with per-epoch evaluation.

    Writes ``metrics.jsonl`` (one record per evaluated epoch) and ``best.json`` (the
    checkpoint with the lowest PA-MPJPE so far) into ``out_dir`` when given.
    """
    X, Y = stack(train_set)
    Xe, Ye = stack(eval_set) if eval_set is not None else (X, Y)
    if cfg.eval_every < 1:
        raise ValueError("eval_every must be >= 1")
    if X.shape[1] != model.config.num_joints:
        raise ValueError(f"data has {X.shape[1]} joints, model expects {model.config.num_joints}")
    scale = 1.0 / model.config.output_scale_mm
    n = model.config.num_joints
    rng = np.random.default_rng(cfg.seed)
    perm_flip = model.topology.flip_permutation()
    params = model.named_parameters()
    opt = AMSGrad(params)

    out = Path(out_dir) if out_dir is not None else None
    log_path = best_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        log_path.write_text("")
        best_path = out / "best.json"
    best = math.inf
    records = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(len(X))
        total, count = 0.0, 0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            if cfg.flip_augment:
                flip = rng.random(len(idx)) < 0.5
                if flip.any():
                    xf, yf = flip_arrays(xb[flip], yb[flip], perm_flip)
                    xb, yb = xb.copy(), yb.copy()
                    xb[flip], yb[flip] = xf, yf
            opt.zero_grad()
            pred = model.forward(xb, training=True, rng=rng)
            loss = elastic_loss(Tensor(yb.reshape(-1, 3) * scale), pred, cfg.alpha)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}; last good checkpoint: {best_path}")
            loss.backward()
            opt.step(lr)
            total += value * len(idx) * n
            count += len(idx) * n
        if (epoch + 1) % cfg.eval_every and epoch != cfg.epochs - 1:
            continue
        rec = evaluate(model, (Xe, Ye), cfg.flip_test, epoch, total / count)
        records.append(rec)
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            log.info("epoch %d loss %.6f mpjpe %.2f pa %.2f", epoch, rec.train_loss,
                     rec.mpjpe_mm, rec.pa_mpjpe_mm)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(rec.to_json() + "\n")
        if rec.pa_mpjpe_mm < best:
            best = rec.pa_mpjpe_mm
            if best_path is not None:
                save_checkpoint(model, best_path, {"epoch": epoch, "metrics": asdict(rec)})
    return TrainResult(records, best_path, log_path)
