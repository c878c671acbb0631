"""Training loop for the editing models.

Training tuples (prefix, condition, target time, target) mix immediate
(j = i+1) and delayed (j > i+1) pairs uniformly; delayed pairs are only
drawn over spans whose intermediate steps carry the null condition, so the
condition at t_j is the only intervention between t_i and t_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, recording
from .conditions import NULL_CONDITION
from .errors import ClefError, NonFiniteValue, TrainingDiverged
from .model import PreparedBatch
from .timeenc import time_index_matrix
from .trajectory import Trajectory


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    dropout: float | None = None      # overrides the encoder's dropout when set
    seed: int = 0
    patience: int = 5
    horizon_cap: int = 14             # H_max for delayed pair sampling
    samples_per_epoch: int = 4096
    val_pairs: int = 2048

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ClefError("epochs must be >= 0, batch_size >= 1, learning_rate > 0")
        if self.horizon_cap < 1 or self.patience < 1:
            raise ClefError("horizon_cap and patience must be >= 1")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ClefError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "seed": self.seed,
            "patience": self.patience,
            "horizon_cap": self.horizon_cap,
            "samples_per_epoch": self.samples_per_epoch,
            "val_pairs": self.val_pairs,
        }


@dataclass
class TrainResult:
    model: object
    loss_curve: list[float]
    val_curve: list[float]
    best_epoch: int


def is_null_step(tokens: list[str]) -> bool:
    return not tokens or all(t == NULL_CONDITION for t in tokens)


def pair_reach(traj: Trajectory, i: int, horizon_cap: int) -> int:
    """Largest j for prefix end i with only null conditions strictly between."""
    j = i + 1
    L = traj.length
    while j + 1 <= L - 1 and (j + 1 - i) <= horizon_cap and is_null_step(traj.conditions[j]):
        j += 1
    return j


def enumerate_pairs(trajectories: list[Trajectory], horizon_cap: int) -> list[tuple[int, int, int]]:
    """All valid (traj_index, i, j) pairs with 1 <= j - i <= horizon_cap."""
    pairs = []
    for ti, traj in enumerate(trajectories):
        for i in range(traj.length - 1):
            for j in range(i + 1, pair_reach(traj, i, horizon_cap) + 1):
                pairs.append((ti, i, j))
    return pairs


def sample_pairs(trajectories: list[Trajectory], n: int, horizon_cap: int,
                 rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """n pairs: trajectory, prefix end, then target uniform over valid range."""
    out = []
    n_traj = len(trajectories)
    for _ in range(n):
        ti = int(rng.integers(n_traj))
        traj = trajectories[ti]
        i = int(rng.integers(traj.length - 1))
        reach = pair_reach(traj, i, horizon_cap)
        j = int(rng.integers(i + 1, reach + 1))
        out.append((ti, i, j))
    return out


class FeatureCache:
    """Per-trajectory encoder inputs and time indices for one model."""

    def __init__(self, model, trajectories: list[Trajectory]):
        self.model = model
        self._features: dict[int, np.ndarray] = {}
        self._time_idx: dict[int, np.ndarray] = {}
        self._cond_cache: dict[tuple[str, ...], np.ndarray] = {}
        self.trajectories = trajectories

    def cond_embedding(self, tokens: list[str]) -> np.ndarray:
        key = tuple(tokens)
        if key not in self._cond_cache:
            self._cond_cache[key] = self.model.registry.combine_step_conditions(list(tokens))
        return self._cond_cache[key]

    def features(self, ti: int) -> np.ndarray:
        if ti not in self._features:
            traj = self.trajectories[ti]
            x = self.model.normalize(traj.values)
            z = np.stack([self.cond_embedding(c) for c in traj.conditions])
            self._features[ti] = np.concatenate([x, z], axis=1)
        return self._features[ti]

    def time_indices(self, ti: int) -> np.ndarray:
        if ti not in self._time_idx:
            self._time_idx[ti] = time_index_matrix(self.trajectories[ti].timestamps)
        return self._time_idx[ti]


def collate(cache: FeatureCache, samples: list[tuple[int, int, int]],
            with_raw: bool = False) -> PreparedBatch:
    """Build one batch; all samples must share the same prefix length."""
    trajs = cache.trajectories
    prefix_len = samples[0][1] + 1
    if any(i + 1 != prefix_len for _, i, _ in samples):
        raise ClefError("collate: mixed prefix lengths in one batch")
    feats = np.stack([cache.features(ti)[:prefix_len] for ti, _, _ in samples])
    steps = [np.ascontiguousarray(feats[:, t, :]) for t in range(prefix_len)]
    times = np.stack([cache.time_indices(ti)[:prefix_len] for ti, _, _ in samples])
    step_time_idx = [np.ascontiguousarray(times[:, t, :]) for t in range(prefix_len)]
    ti_idx = np.stack([cache.time_indices(ti)[i] for ti, i, _ in samples])
    tj_idx = np.stack([cache.time_indices(ti)[j] for ti, _, j in samples])
    cond_target = np.stack([cache.cond_embedding(trajs[ti].conditions[j]) for ti, _, j in samples])
    x_last = np.stack([trajs[ti].values[i] for ti, i, _ in samples])
    target = np.stack([trajs[ti].values[j] for ti, _, j in samples])
    raw_steps = None
    horizons = None
    if with_raw:
        raw = np.stack([trajs[ti].values[:prefix_len] for ti, _, _ in samples])
        raw_steps = [np.ascontiguousarray(raw[:, t, :]) for t in range(prefix_len)]
        horizons = np.array([j - i for _, i, j in samples], dtype=np.int64)
    return PreparedBatch(
        steps=steps, step_time_idx=step_time_idx, ti_idx=ti_idx, tj_idx=tj_idx,
        cond_target=cond_target, x_last=x_last, target=target,
        raw_steps=raw_steps, horizons=horizons,
    )


def group_by_prefix(samples: list[tuple[int, int, int]],
                    batch_size: int) -> list[list[tuple[int, int, int]]]:
    groups: dict[int, list] = {}
    for s in samples:
        groups.setdefault(s[1], []).append(s)
    batches = []
    for i in sorted(groups):
        bucket = groups[i]
        for k in range(0, len(bucket), batch_size):
            batches.append(bucket[k:k + batch_size])
    return batches


def fit_normalization(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([t.values for t in trajectories], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8)


def snapshot_params(model) -> list[np.ndarray]:
    return [p.array.copy() for _, p in model.parameters()]


def restore_params(model, snapshot: list[np.ndarray]) -> None:
    for (_, p), arr in zip(model.parameters(), snapshot):
        p.array[...] = arr


def batched_mae(model, cache: FeatureCache, samples, batch_size: int = 256) -> float:
    total, count = 0.0, 0
    for batch_samples in group_by_prefix(samples, batch_size):
        batch = collate(cache, batch_samples, with_raw=True)
        pred = model.predict_batch(batch)
        total += float(np.abs(pred.array - batch.target).sum())
        count += batch.target.size
    return total / max(count, 1)


def train(model, splits: dict[str, list[Trajectory]], config: TrainConfig) -> TrainResult:
    """Minimize the editing loss over sampled pairs; early stop on val MAE."""
    train_set = splits.get("train", [])
    val_set = splits.get("val", [])
    if not train_set:
        raise ClefError("train: empty train split")
    usable = [t for t in train_set if t.length >= 2]
    if not usable:
        raise ClefError("train: no trajectory has length >= 2")

    mean, std = fit_normalization(usable)
    model.set_normalization(mean, std)
    if config.dropout is not None and hasattr(model, "encoder"):
        model.encoder.config.dropout = config.dropout
        if hasattr(model, "config") and hasattr(model.config, "dropout"):
            model.config.dropout = config.dropout

    named_params = model.parameters()
    params = [p for _, p in named_params]
    cache = FeatureCache(model, usable)
    val_usable = [t for t in val_set if t.length >= 2]
    val_cache = FeatureCache(model, val_usable)
    val_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    val_samples = (
        sample_pairs(val_usable, config.val_pairs, config.horizon_cap, val_rng)
        if val_usable else []
    )

    loss_curve: list[float] = []
    val_curve: list[float] = []
    if config.epochs == 0 or not params:
        return TrainResult(model=model, loss_curve=loss_curve, val_curve=val_curve, best_epoch=-1)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    adam = AdamState(params, lr=config.learning_rate)
    best_mae = np.inf
    best_snapshot = snapshot_params(model)
    best_epoch = -1
    bad_epochs = 0

    for epoch in range(config.epochs):
        samples = sample_pairs(usable, config.samples_per_epoch, config.horizon_cap, rng)
        epoch_loss, seen = 0.0, 0
        for batch_samples in group_by_prefix(samples, config.batch_size):
            batch = collate(cache, batch_samples)
            tape = Tape()
            try:
                with recording(tape):
                    pred = model.predict_batch(batch, train=True, rng=rng)
                    loss = model.loss(pred, Tensor(batch.target))
            except NonFiniteValue as exc:
                raise TrainingDiverged(
                    f"non-finite forward value at epoch {epoch}: {exc}"
                ) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            ad.backward(loss, tape)
            adam_step(params, adam)
            epoch_loss += value * len(batch_samples)
            seen += len(batch_samples)
        loss_curve.append(epoch_loss / max(seen, 1))

        if val_samples:
            val_mae = batched_mae(model, val_cache, val_samples)
            val_curve.append(val_mae)
            if val_mae < best_mae - 1e-12:
                best_mae = val_mae
                best_snapshot = snapshot_params(model)
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
        else:
            best_snapshot = snapshot_params(model)
            best_epoch = epoch

    restore_params(model, best_snapshot)
    return TrainResult(model=model, loss_curve=loss_curve, val_curve=val_curve, best_epoch=best_epoch)
