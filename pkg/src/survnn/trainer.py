"""Fit the conditional log-hazard network by maximizing the censored likelihood.

Hyperparameters (depth, hidden width, learning rate) come from a grid; each
combination trains with Adam until the validation mean log-likelihood stops
improving for `patience` epochs.  The returned model is the (combination,
epoch) pair with the best validation log-likelihood; ties break toward the
lexicographically smallest combination.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, DegenerateDataError, OptimizationError
from .hazard import Dataset, FittedHazard, LikelihoodEvaluator

__all__ = ["TrainConfig", "FitResult", "split_dataset", "fit"]


@dataclass
class TrainConfig:
    depth_grid: tuple = (2, 3)
    width_grid: tuple = (16, 32, 64)
    lr_grid: tuple = (1e-2, 1e-3)
    max_epochs: int = 2000
    patience: int = 50
    split: tuple = (0.64, 0.16, 0.20)
    seed: int = 0
    quad_order: int = 8
    lik_subintervals: int = 4
    minibatch: int = 0
    output_bound: float | None = None
    exp_clip: float = 30.0
    allow_empty_test: bool = False
    clamp_parameters: bool = False

    def __post_init__(self):
        self.depth_grid = tuple(int(d) for d in self.depth_grid)
        self.width_grid = tuple(int(w) for w in self.width_grid)
        self.lr_grid = tuple(float(r) for r in self.lr_grid)
        self.split = tuple(float(f) for f in self.split)
        if not (self.depth_grid and self.width_grid and self.lr_grid):
            raise ConfigError("hyperparameter grids must be nonempty")
        if min(self.depth_grid) < 1 or min(self.width_grid) < 1:
            raise ConfigError("depths and widths must be positive")
        if min(self.lr_grid) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be positive")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("need 1 <= patience <= max_epochs")
        _check_fractions(self.split, self.allow_empty_test)
        if self.minibatch < 0:
            raise ConfigError("minibatch must be >= 0 (0 means full batch)")

    def to_dict(self) -> dict:
        return {
            "depth_grid": list(self.depth_grid),
            "width_grid": list(self.width_grid),
            "lr_grid": list(self.lr_grid),
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "split": list(self.split),
            "seed": self.seed,
            "quad_order": self.quad_order,
            "lik_subintervals": self.lik_subintervals,
            "minibatch": self.minibatch,
            "output_bound": self.output_bound,
            "exp_clip": self.exp_clip,
            "allow_empty_test": self.allow_empty_test,
            "clamp_parameters": self.clamp_parameters,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class FitResult:
    """A trained model plus the selection trace that produced it."""

    model: FittedHazard
    depth: int
    width: int
    learning_rate: float
    best_epoch: int
    epochs_run: int
    stop_reason: str
    best_val_loglik: float
    train_curve: list
    val_curve: list
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    failed_combos: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "depth": self.depth,
            "width": self.width,
            "learning_rate": self.learning_rate,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "best_val_loglik": self.best_val_loglik,
            "train_curve": list(self.train_curve),
            "val_curve": list(self.val_curve),
            "train_indices": self.train_indices.tolist(),
            "val_indices": self.val_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            "failed_combos": [list(map(str, fc)) for fc in self.failed_combos],
        }


def _check_fractions(fractions, allow_empty_test: bool):
    if len(fractions) != 3:
        raise ConfigError("split needs (train, validation, test) fractions")
    f1, f2, f3 = fractions
    if f1 <= 0 or f2 <= 0 or f3 < 0:
        raise ConfigError("train/validation fractions must be positive, test >= 0")
    if f3 == 0 and not allow_empty_test:
        raise ConfigError("zero test fraction requires allow_empty_test")
    if abs(f1 + f2 + f3 - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")


def split_dataset(data: Dataset, fractions, seed: int, allow_empty_test: bool = False):
    """Disjoint exhaustive random partition into (train, validation, test).

    Sizes are floor(f*n) with leftover units assigned by largest fractional
    remainder among the positive fractions, so published percentage splits
    come out exact (e.g. n=100 at 64/16/20 gives 64/16/20).
    """
    _check_fractions(fractions, allow_empty_test)
    n = len(data)
    raw = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(raw).astype(int)
    rem = n - sizes.sum()
    if rem:
        order = np.argsort(-(raw - sizes), kind="stable")
        for j in order:
            if rem == 0:
                break
            if fractions[j] > 0:
                sizes[j] += 1
                rem -= 1
    for f, s, name in zip(fractions, sizes, ("train", "validation", "test")):
        if f > 0 and s == 0:
            raise ConfigError(f"{name} fraction {f} yields an empty part at n={n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5B117])))
    perm = rng.permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    idx_train, idx_val, idx_test = np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])
    return data.subset(idx_train), data.subset(idx_val), data.subset(idx_test)


def _train_one(train_ev, val_ev, widths, lr, cfg: TrainConfig, init_seed: int,
               shuffle_seed: int):
    net = nn.MlpNetwork.init(widths, seed=init_seed, output_bound=cfg.output_bound)
    state = nn.AdamState.init_like(net, learning_rate=lr)
    best_net, best_val, best_epoch = net, val_ev.mean_loglik(net), 0
    bad = 0
    train_curve, val_curve = [], []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([shuffle_seed, 0x5F1E])))
    m = train_ev.m
    stop_reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.minibatch and cfg.minibatch < m:
            perm = rng.permutation(m)
            batch_losses = []
            for start in range(0, m, cfg.minibatch):
                idx = perm[start:start + cfg.minibatch]
                loss, grads = train_ev.loss_and_grad(net, subject_indices=idx)
                net, state = nn.adam_step(net, grads, state)
                if cfg.clamp_parameters:
                    net.clamp_parameters(1.0)
                batch_losses.append(loss)
            train_curve.append(-float(np.mean(batch_losses)))
        else:
            loss, grads = train_ev.loss_and_grad(net)
            net, state = nn.adam_step(net, grads, state)
            if cfg.clamp_parameters:
                net.clamp_parameters(1.0)
            train_curve.append(-loss)
        val_ll = val_ev.mean_loglik(net)
        val_curve.append(val_ll)
        if val_ll > best_val:
            # adam_step allocates fresh arrays, so holding the reference is safe
            best_net, best_val, best_epoch = net, val_ll, epoch
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                stop_reason = "early_stop"
                break
    return {
        "net": best_net,
        "val": best_val,
        "best_epoch": best_epoch,
        "epochs_run": len(val_curve),
        "stop_reason": stop_reason,
        "train_curve": train_curve,
        "val_curve": val_curve,
    }


def fit(data: Dataset, cfg: TrainConfig) -> FitResult:
    """Grid-searched, early-stopped maximum-likelihood fit of the hazard network."""
    ss = np.random.SeedSequence([cfg.seed, 0xF17])
    split_seed = int(ss.generate_state(1)[0])
    train, val, test = split_dataset(data, cfg.split, split_seed, cfg.allow_empty_test)
    if len(train) == 0:
        raise DataError("empty training split")
    if train.n_events == 0:
        raise DegenerateDataError("no events in the training split")
    cov_lo = train.x.min(axis=0)
    cov_hi = train.x.max(axis=0)
    tau = data.tau
    train_ev = LikelihoodEvaluator(train, tau, cov_lo, cov_hi, cfg.quad_order,
                                   cfg.lik_subintervals, cfg.exp_clip)
    val_ev = LikelihoodEvaluator(val, tau, cov_lo, cov_hi, cfg.quad_order,
                                 cfg.lik_subintervals, cfg.exp_clip)
    combos = sorted(itertools.product(cfg.depth_grid, cfg.width_grid, cfg.lr_grid))
    combo_seeds = ss.spawn(len(combos))
    p = data.p
    best = None
    best_combo = None
    failures = []
    for combo, combo_ss in zip(combos, combo_seeds):
        depth, width, lr = combo
        widths = (p + 1,) + (width,) * depth + (1,)
        init_seed, shuffle_seed = [int(s) for s in combo_ss.generate_state(2)]
        try:
            res = _train_one(train_ev, val_ev, widths, lr, cfg, init_seed, shuffle_seed)
        except OptimizationError as exc:
            failures.append((combo, str(exc)))
            continue
        if best is None or res["val"] > best["val"]:
            best, best_combo = res, combo
    if best is None:
        raise OptimizationError(
            f"training diverged on every grid point: {failures}")
    model = FittedHazard(best["net"], tau, cov_lo, cov_hi, cfg.quad_order,
                         cfg.lik_subintervals, exp_clip=cfg.exp_clip)
    return FitResult(
        model=model,
        depth=best_combo[0],
        width=best_combo[1],
        learning_rate=best_combo[2],
        best_epoch=best["best_epoch"],
        epochs_run=best["epochs_run"],
        stop_reason=best["stop_reason"],
        best_val_loglik=best["val"],
        train_curve=best["train_curve"],
        val_curve=best["val_curve"],
        train_indices=train.source_indices,
        val_indices=val.source_indices,
        test_indices=test.source_indices,
        failed_combos=failures,
    )
