"""L1 training with AdaMax, a step learning-rate schedule and triplet augmentation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import TripletSample, load_dataset
from .model import Model
from .pipeline import interpolate_tensor, to_tensor

logger = logging.getLogger(__name__)

BASE_LR = 1e-3
LR_STEP_EPOCHS = 20
DEFAULT_EPOCHS = 100


class OptimizerError(FloatingPointError):
    pass


def lr_schedule(epoch: int, base_lr: float = BASE_LR, step: int = LR_STEP_EPOCHS) -> float:
    """Initial rate halved every ``step`` epochs."""
    return base_lr * 0.5 ** (int(epoch) // step)


class AdaMax:
    """Adam's infinity-norm variant.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);  p <- p - lr/(1-b1^t) * m/(u+eps)
    """

    def __init__(self, params: Sequence[T.Tensor], lr: float = BASE_LR, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.u = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise OptimizerError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g is not None and g.shape != p.data.shape:
                raise OptimizerError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            if g is not None and not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient for {p.name or 'parameter'}; step aborted")
        self.t += 1
        step_size = self.lr / (1 - self.beta1 ** self.t)
        for p, g, m, u in zip(self.params, grads, self.m, self.u):
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            p.data = (p.data - step_size * m / (u + self.eps)).astype(p.data.dtype, copy=False)


def adamax_step(state: AdaMax, params: Sequence[T.Tensor], grads: Sequence[np.ndarray]) -> None:
    """Functional spelling of :meth:`AdaMax.step` for an existing state."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise OptimizerError("parameter list does not match optimizer state")
    state.step(grads)


@dataclass
class AugmentConfig:
    crop: int = 256
    flip_prob: float = 0.5
    swap_prob: float = 0.5
    shared_flip_coin: bool = False


def augment(sample: TripletSample, rng: np.random.Generator, config: AugmentConfig | None = None,
            offset: tuple[int, int] | None = None) -> TripletSample:
    """Random crop (same window for all frames), flips and temporal swap."""
    cfg = config or AugmentConfig()
    H, W = sample.frame1.shape[:2]
    c = cfg.crop
    if H < c or W < c:
        raise ValueError(f"image {H}x{W} smaller than crop {c}")
    if offset is None:
        offset = (int(rng.integers(0, H - c + 1)), int(rng.integers(0, W - c + 1)))
    y, x = offset
    f1, gt, f2 = (im[y:y + c, x:x + c] for im in (sample.frame1, sample.target, sample.frame2))
    hflip = rng.random() < cfg.flip_prob
    vflip = hflip if cfg.shared_flip_coin else rng.random() < cfg.flip_prob
    swap = rng.random() < cfg.swap_prob
    if hflip:
        f1, gt, f2 = f1[:, ::-1], gt[:, ::-1], f2[:, ::-1]
    if vflip:
        f1, gt, f2 = f1[::-1], gt[::-1], f2[::-1]
    if swap:
        f1, f2 = f2, f1
    return TripletSample(*(np.ascontiguousarray(im) for im in (f1, gt, f2)), name=sample.name)


def swap_temporal(sample: TripletSample) -> TripletSample:
    return TripletSample(sample.frame2, sample.target, sample.frame1, name=sample.name)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    skipped: int = 0


def train_loop(model: Model, dataset_dir=None, epochs: int = 1, batch_size: int = 4,
               crop: int = 256, seed: int = 0, checkpoint_dir=None, *,
               samples: list[TripletSample] | None = None, max_steps: int | None = None,
               augmentation: AugmentConfig | None = None, base_lr: float = BASE_LR,
               lr_step_epochs: int = LR_STEP_EPOCHS, checkpoint_every: int = 1) -> TrainReport:
    """Shuffled-epoch training on L1 loss of the pre-quantization output.

    Either ``dataset_dir`` (triplet layout) or in-memory ``samples`` is used.
    With ``checkpoint_dir`` set, ``latest.prnc`` is written after every epoch
    (and at start), ``epoch_XXX.prnc`` every ``checkpoint_every`` epochs and
    the per-epoch records are appended to ``train_log.jsonl``.
    """
    report = TrainReport()
    if samples is None:
        if dataset_dir is None:
            raise ValueError("either dataset_dir or samples is required")
        samples, report.skipped = load_dataset(dataset_dir)
    if not samples:
        raise ValueError("empty dataset")
    aug = augmentation or AugmentConfig(crop=crop)
    rng = np.random.default_rng(seed)
    opt = AdaMax(model.parameters(), lr=base_lr)
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    log = None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, ckpt / "latest.prnc")
        log = (ckpt / "train_log.jsonl").open("w")

    steps = 0
    try:
        for epoch in range(epochs):
            if max_steps is not None and steps >= max_steps:
                break
            t0 = time.perf_counter()
            opt.lr = lr_schedule(epoch, base_lr, lr_step_epochs)
            order = rng.permutation(len(samples))
            losses = []
            for start in range(0, len(order), batch_size):
                if max_steps is not None and steps >= max_steps:
                    break
                batch = [augment(samples[i], rng, aug) for i in order[start:start + batch_size]]
                f1 = to_tensor(*(b.frame1 for b in batch), dtype=model.dtype)
                f2 = to_tensor(*(b.frame2 for b in batch), dtype=model.dtype)
                gt = to_tensor(*(b.target for b in batch), dtype=model.dtype)
                model.zero_grad()
                loss = T.l1_loss(interpolate_tensor(model, f1, f2), gt)
                loss.backward()
                opt.step()
                steps += 1
                losses.append(loss.item())
                report.step_losses.append(loss.item())
            record = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": opt.lr,
                      "wall_seconds": time.perf_counter() - t0}
            report.epochs.append(record)
            logger.info("epoch %d mean L1 %.5f lr %.2e", epoch, record["mean_loss"], opt.lr)
            if ckpt is not None:
                save_checkpoint(model, ckpt / "latest.prnc")
                if (epoch + 1) % checkpoint_every == 0:
                    save_checkpoint(model, ckpt / f"epoch_{epoch:03d}.prnc")
                log.write(json.dumps(record) + "\n")
                log.flush()
    finally:
        if log is not None:
            log.close()
    return report
