#!/usr/bin/env python3
"""Train and evaluate one model on one Task 1 variant, end to end.

Generates the towing dataset, trains with the tuned recipe (annealed
learning rate, loose gradient clipping), and reports held-out RMSE both
absolutely and relative to the per-axis force standard deviation.
"""

import argparse
import dataclasses
import time

import numpy as np

from hydroforecast.autodiff import Tensor
from hydroforecast.evalbench import compute_metrics
from hydroforecast.hydrodata import generate, split_dataset
from hydroforecast.models import ModelConfig, build_model, checkpoint_save
from hydroforecast.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", choices=["1.1", "1.2", "1.3"], default="1.1")
    ap.add_argument("--encoder", choices=["attention", "mlp"], default="attention")
    ap.add_argument("--solver", choices=["euler", "rk4"], default="euler")
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--lr-decay", type=float, default=0.99)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--d-model", type=int, default=64)
    ap.add_argument("--latent", type=int, default=64)
    ap.add_argument("--mirror-augment", action="store_true",
                    help="double the training split by negating both joint "
                         "angles (the drag map is invariant under that flip)")
    ap.add_argument("--checkpoint", help="optional path to save the trained model")
    args = ap.parse_args()

    ds = generate(args.task, seed=args.seed)
    train_ds, val_ds, test_ds, _ = split_dataset(ds, seed=args.seed)
    print(f"task {args.task}: {train_ds.num_trajectories} train / "
          f"{val_ds.num_trajectories} val / {test_ds.num_trajectories} test")
    if args.mirror_augment:
        def flip(rec):
            c = rec.conditions.copy()
            c[:, 0] *= -1.0
            c[:, 1] *= -1.0
            return dataclasses.replace(rec, conditions=c)
        train_ds = dataclasses.replace(
            train_ds, records=train_ds.records + [flip(r) for r in train_ds.records])

    cfg = ModelConfig(encoder=args.encoder, n_in=ds.n, f_out=ds.f,
                      d_model=args.d_model, latent=args.latent,
                      solver=args.solver, dt=ds.dt, seed=args.seed)
    model = build_model(cfg)
    model.fit_normalizer(train_ds)
    tc = TrainConfig(learning_rate=args.lr, batch_size=16, max_epochs=args.epochs,
                     grad_clip_norm=10.0, early_stop_patience=args.epochs,
                     lr_decay=args.lr_decay, seed=args.seed)
    t0 = time.perf_counter()
    report = train(model, train_ds, val_ds, tc)
    print(f"trained {len(report.train_losses)} epochs in "
          f"{time.perf_counter() - t0:.1f} s; best val loss "
          f"{report.best_val_loss:.4g} at epoch {report.best_epoch}")

    x, forces, f0 = test_ds.stack()
    pred = model.predict_forces(Tensor(x), Tensor(f0)).data
    metrics = compute_metrics(pred, forces)
    pooled_std = float(np.sqrt(np.mean(np.var(
        forces.reshape(-1, ds.f), axis=0))))
    print(f"test MAE {metrics.mae:.4g} N, RMSE {metrics.rmse:.4g} N "
          f"({100.0 * metrics.rmse / pooled_std:.1f}% of force std)")
    if args.checkpoint:
        checkpoint_save(model, args.checkpoint)
        print(f"checkpoint written to {args.checkpoint}")


if __name__ == "__main__":
    main()
