"""Trajectory-MSE training: Adam with bias correction, global-norm gradient
clipping, shuffled minibatches, per-epoch validation, and early stopping on
a patience counter. The best-validation parameters are what a run returns.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .hydrodata import TrajectoryDataset
from .models import ForecastModel, checkpoint_save


class DivergenceError(RuntimeError):
    """Loss or gradients went non-finite; the last good parameters are kept."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip_norm: float = 1.0
    early_stop_patience: int = 20
    lr_decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs,
               self.grad_clip_norm, self.early_stop_patience, self.epsilon) <= 0:
            raise ValueError("all TrainConfig values must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must be in (0, 1)")
        if not (0 < self.lr_decay <= 1):
            raise ValueError("lr_decay must be in (0, 1]")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val_loss: float
    wall_seconds: float
    checkpoint_path: str | None = None
    stopped_early: bool = False
    diverged: bool = False


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    return ad.reduce_mean(ad.square(ad.sub(pred, target)))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_step(model: ForecastModel, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, lr: float | None = None) -> None:
    if lr is None:
        lr = cfg.learning_rate
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
    grads = clip_gradients(grads, cfg.grad_clip_norm)
    state.step += 1
    t = state.step
    for name, tensor in model.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def _batch_loss(model: ForecastModel, x: np.ndarray, forces: np.ndarray,
                f0: np.ndarray) -> Tensor:
    pred = model.predict_forces(Tensor(x), Tensor(f0))
    return mse_loss(pred, Tensor(forces))


def evaluate_loss(model: ForecastModel, ds: TrajectoryDataset,
                  batch_size: int = 32) -> float:
    x, forces, f0 = ds.stack()
    total, count = 0.0, 0
    for lo in range(0, len(x), batch_size):
        hi = min(lo + batch_size, len(x))
        loss = _batch_loss(model, x[lo:hi], forces[lo:hi], f0[lo:hi])
        total += loss.item() * (hi - lo)
        count += hi - lo
    return total / count


def train(model: ForecastModel, train_set: TrajectoryDataset,
          val_set: TrajectoryDataset | None, cfg: TrainConfig,
          checkpoint_path=None, log_path=None,
          stop_below_train_loss: float | None = None) -> TrainReport:
    """Run the full loop; restores the best-validation parameters at the end.

    ``stop_below_train_loss`` stops as soon as a batch loss drops under the
    given value (used by overfitting checks).
    """
    if train_set.num_trajectories == 0:
        raise ValueError("empty training set")
    x_all, forces_all, f0_all = train_set.stack()
    if x_all.shape[-1] != model.config.n_in:
        raise ShapeError(f"dataset condition dim {x_all.shape[-1]} != model n_in "
                         f"{model.config.n_in}")
    if forces_all.shape[-1] != model.config.f_out:
        raise ShapeError(f"dataset force dim {forces_all.shape[-1]} != model f_out "
                         f"{model.config.f_out}")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    best_val = math.inf
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {n: t.data.copy() for n, t in model.params.items()}
    patience = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    log_fh = open(log_path, "w") if log_path else None
    start = time.perf_counter()
    diverged = False
    stopped_early = False
    try:
        for epoch in range(cfg.max_epochs):
            lr_epoch = cfg.learning_rate * cfg.lr_decay ** epoch
            order = rng.permutation(len(x_all))
            epoch_loss, seen = 0.0, 0
            stop_now = False
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                model.params.zero_grad()
                loss = _batch_loss(model, x_all[idx], forces_all[idx], f0_all[idx])
                value = loss.item()
                if not math.isfinite(value):
                    diverged = True
                    raise DivergenceError(f"training loss became {value} at epoch {epoch}")
                ad.backward(loss)
                grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for n, t in model.params.items()}
                adam_step(model, grads, state, cfg, lr=lr_epoch)
                epoch_loss += value * len(idx)
                seen += len(idx)
                if stop_below_train_loss is not None and value < stop_below_train_loss:
                    stop_now = True
                    break
            train_loss = epoch_loss / max(seen, 1)
            train_losses.append(train_loss)
            val_loss = (evaluate_loss(model, val_set, cfg.batch_size)
                        if val_set is not None and val_set.num_trajectories
                        else train_loss)
            val_losses.append(val_loss)
            wall_ms = (time.perf_counter() - start) * 1000.0
            if log_fh:
                log_fh.write(json.dumps({"epoch": epoch, "train_loss": train_loss,
                                         "val_loss": val_loss, "wall_ms": wall_ms,
                                         "lr": lr_epoch}) + "\n")
                log_fh.flush()
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_params = {n: t.data.copy() for n, t in model.params.items()}
                patience = 0
            else:
                patience += 1
            if stop_now:
                stopped_early = True
                if val_loss <= best_val:
                    best_val, best_epoch = val_loss, epoch
                    best_params = {n: t.data.copy() for n, t in model.params.items()}
                break
            if patience >= cfg.early_stop_patience:
                stopped_early = True
                break
    except DivergenceError as e:
        diverged = True
        divergence = e
    finally:
        if log_fh:
            log_fh.close()
    for name, tensor in model.params.items():
        tensor.data = best_params[name]
    if checkpoint_path is not None:
        checkpoint_save(model, checkpoint_path)
    report = TrainReport(train_losses=train_losses, val_losses=val_losses,
                         best_epoch=best_epoch, best_val_loss=best_val,
                         wall_seconds=time.perf_counter() - start,
                         checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
                         stopped_early=stopped_early, diverged=diverged)
    if diverged:
        raise DivergenceError(f"{divergence}; best checkpoint retained from epoch "
                              f"{best_epoch}")
    return report
