"""Optimization loop: Adam with L2 weight decay, step learning-rate
schedule, per-epoch checkpointing and a CSV iteration log."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentParams, augment_sample, rng_for_sample, to_network_example
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericalError
from .loss import staged_loss
from .model import ModelConfig, StackedHourglass
from .preprocess import Sample
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    base_lr: float = 1e-3
    weight_decay: float = 1e-5
    scheduler_gamma: float = 0.5
    scheduler_step: int = 30
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.base_lr <= 0 or self.scheduler_gamma <= 0 or self.eps <= 0:
            raise ConfigError("learning rate, scheduler gamma and eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.scheduler_step < 1:
            raise ConfigError("scheduler_step must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "base_lr": self.base_lr,
            "weight_decay": self.weight_decay,
            "scheduler_gamma": self.scheduler_gamma,
            "scheduler_step": self.scheduler_step,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """base_lr * gamma^floor(epoch / step)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.base_lr * cfg.scheduler_gamma ** (epoch // cfg.scheduler_step)


class Adam:
    """Classic Adam; weight decay enters as an L2 term on the gradient."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, lr: float):
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            grad = p.grad
            if not np.isfinite(grad).all():
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            if cfg.weight_decay:
                grad = grad + cfg.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * grad * grad
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype)


def make_batch(
    samples: list[Sample],
    indices,
    model_cfg: ModelConfig,
    augment_params: AugmentParams | None,
    epoch: int,
):
    """Stack (rgb01, mask_target, depth_target) arrays for a batch.

    Augmentation draws are keyed on (augment seed, epoch, sample index)
    so runs are reproducible however loading is parallelized.
    """
    rgbs, masks, depths = [], [], []
    for i in indices:
        sample = samples[i]
        if augment_params is not None:
            rng = rng_for_sample(augment_params.seed + 0x9E3779B9 * epoch, i)
            sample = augment_sample(sample, augment_params, rng)
        rgb01, mask01, depth_t = to_network_example(
            sample, model_cfg.input_resolution, model_cfg.output_resolution
        )
        rgbs.append(rgb01)
        masks.append(mask01[None])
        depths.append(depth_t[None])
    return (
        np.stack(rgbs).astype(np.float32),
        np.stack(masks).astype(np.float32),
        np.stack(depths).astype(np.float32),
    )


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    loss_history: list[float]  # total loss per iteration

    @property
    def initial_loss(self) -> float:
        return self.loss_history[0]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


def train_model(
    model: StackedHourglass,
    samples: list[Sample],
    train_cfg: TrainConfig,
    out_dir,
    augment_params: AugmentParams | None = None,
    max_iterations: int | None = None,
    log_every: int = 1,
    checkpoint_every: int = 1,
) -> TrainResult:
    """Run the loop: shuffle, augment, forward, staged loss, backward,
    Adam step; checkpoint every ``checkpoint_every`` epochs (and at the
    end); CSV row per iteration.

    A non-finite loss aborts with the last epoch's checkpoint retained
    on disk. ``max_iterations`` caps total steps for desk-scale runs.
    """
    if not samples:
        raise DataError("training requires a non-empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = model.config
    optimizer = Adam(model.named_parameters(), train_cfg)
    shuffle_rng = np.random.default_rng(train_cfg.seed)

    log_path = out_dir / "train_log.csv"
    last_path = out_dir / "checkpoint_last.ckpt"
    stage_cols = [f"loss_stage{i}" for i in range(model_cfg.num_stages)]
    loss_history: list[float] = []
    iteration = 0

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "iteration", "lr", *stage_cols, "total"])

        for epoch in range(train_cfg.epochs):
            lr = lr_at(epoch, train_cfg)
            order = shuffle_rng.permutation(len(samples))
            model.train()
            for start in range(0, len(order), train_cfg.batch_size):
                batch_idx = order[start:start + train_cfg.batch_size]
                rgb, mask_t, depth_t = make_batch(
                    samples, batch_idx, model_cfg, augment_params, epoch
                )
                outputs = model(Tensor(rgb))
                breakdown = staged_loss(outputs, mask_t, depth_t, config=model_cfg)
                total = breakdown.total_value
                if not np.isfinite(total):
                    raise NumericalError(
                        f"non-finite loss {total} at epoch {epoch} iteration {iteration}; "
                        f"last good checkpoint: {last_path}"
                    )
                model.zero_grad()
                breakdown.total.backward()
                optimizer.step(lr)

                loss_history.append(total)
                if iteration % log_every == 0:
                    writer.writerow(
                        [epoch, iteration, f"{lr:.10g}"]
                        + [f"{v:.10g}" for v in breakdown.stage_values]
                        + [f"{total:.10g}"]
                    )
                iteration += 1
                if max_iterations is not None and iteration >= max_iterations:
                    break

            done = max_iterations is not None and iteration >= max_iterations
            if (epoch + 1) % checkpoint_every == 0 or epoch + 1 == train_cfg.epochs or done:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch:04d}.ckpt", model)
                save_checkpoint(last_path, model)
            if done:
                break

    model.eval()
    return TrainResult(checkpoint_path=last_path, log_path=log_path, loss_history=loss_history)
