"""Evaluation protocols and metrics.

Immediate: predict every next step from its prefix under the observed
condition. Delayed: single-jump predictions for sampled (i, j) pairs, never
autoregressive fill-in. Zero-shot counterfactual: feed the shared prefix
plus the counterfactual condition and score each post-divergence step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClefError, LeakageError
from .model import PreparedBatch
from .training import FeatureCache, collate, enumerate_pairs, group_by_prefix
from .trajectory import CounterfactualPair, Trajectory


@dataclass
class MetricReport:
    mae: float
    rmse: float
    r2: float | None
    per_variable: dict[str, dict[str, float | None]]
    per_horizon: dict[int, dict[str, float | None]]
    n_samples: int

    def __post_init__(self):
        if self.n_samples > 0 and self.rmse + 1e-12 < self.mae:
            raise ClefError("metric invariant violated: rmse < mae")

    def to_flat(self) -> list[dict]:
        """Flat records {metric, scope, horizon, value} for serialization."""
        rows: list[dict] = []
        for metric, value in (("mae", self.mae), ("rmse", self.rmse), ("r2", self.r2)):
            rows.append({"metric": metric, "scope": "overall", "horizon": None, "value": value})
        for name, metrics in self.per_variable.items():
            for metric, value in metrics.items():
                rows.append({"metric": metric, "scope": name, "horizon": None, "value": value})
        for horizon in sorted(self.per_horizon):
            for metric, value in self.per_horizon[horizon].items():
                rows.append({"metric": metric, "scope": "overall", "horizon": horizon, "value": value})
        rows.append({"metric": "n_samples", "scope": "overall", "horizon": None,
                     "value": self.n_samples})
        return rows


def r2_score(pred: np.ndarray, target: np.ndarray) -> float | None:
    """Per-variable 1 - SS_res/SS_tot, averaged over variables with variance."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape or pred.shape[0] < 2:
        raise ClefError("r2_score needs >= 2 matching rows")
    scores = []
    for v in range(target.shape[1]):
        ss_tot = float(np.sum((target[:, v] - target[:, v].mean()) ** 2))
        if ss_tot <= 0:
            continue
        ss_res = float(np.sum((target[:, v] - pred[:, v]) ** 2))
        scores.append(1.0 - ss_res / ss_tot)
    return float(np.mean(scores)) if scores else None


def _metric_dict(pred: np.ndarray, target: np.ndarray) -> dict[str, float | None]:
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    r2 = r2_score(pred, target) if pred.shape[0] >= 2 else None
    return {"mae": mae, "rmse": rmse, "r2": r2}


def compute_metrics(pred: np.ndarray, target: np.ndarray, variable_names: list[str],
                    horizons: np.ndarray | None = None) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ClefError("compute_metrics expects matching [N, V] arrays")
    overall = _metric_dict(pred, target)
    per_variable = {}
    for v, name in enumerate(variable_names):
        per_variable[name] = _metric_dict(pred[:, v:v + 1], target[:, v:v + 1])
    per_horizon = {}
    if horizons is not None:
        for h in np.unique(horizons):
            mask = horizons == h
            per_horizon[int(h)] = _metric_dict(pred[mask], target[mask])
    return MetricReport(
        mae=overall["mae"], rmse=overall["rmse"], r2=overall["r2"],
        per_variable=per_variable, per_horizon=per_horizon, n_samples=pred.shape[0],
    )


def _predict_pairs(model, trajectories: list[Trajectory],
                   pairs: list[tuple[int, int, int]], batch_size: int = 256):
    cache = FeatureCache(model, trajectories)
    preds, targets, horizons = [], [], []
    for batch_samples in group_by_prefix(pairs, batch_size):
        batch = collate(cache, batch_samples, with_raw=True)
        out = model.predict_batch(batch)
        preds.append(out.array.copy())
        targets.append(batch.target)
        horizons.append(batch.horizons)
    return np.vstack(preds), np.vstack(targets), np.concatenate(horizons)


def evaluate_immediate(model, trajectories: list[Trajectory]) -> MetricReport:
    """Predict t_{i+1} from every prefix under the observed condition."""
    usable = [t for t in trajectories if t.length >= 2]
    if not usable:
        raise ClefError("evaluate_immediate: no trajectory of length >= 2")
    pairs = [(ti, i, i + 1) for ti, traj in enumerate(usable) for i in range(traj.length - 1)]
    pred, target, horizons = _predict_pairs(model, usable, pairs)
    return compute_metrics(pred, target, model.variable_names, horizons)


def evaluate_delayed(model, trajectories: list[Trajectory], horizon: int,
                     seed: int = 0, max_pairs: int = 20000) -> MetricReport:
    """Single-jump predictions for all valid (i, j) with j - i <= horizon."""
    if horizon < 1:
        raise ClefError("evaluate_delayed: horizon must be >= 1")
    usable = [t for t in trajectories if t.length >= 2]
    if not usable:
        raise ClefError("evaluate_delayed: no trajectory of length >= 2")
    pairs = enumerate_pairs(usable, horizon)
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[k] for k in sorted(keep)]
    pred, target, horizons = _predict_pairs(model, usable, pairs)
    return compute_metrics(pred, target, model.variable_names, horizons)


def evaluate_zero_shot_cf(model, pairs: list[CounterfactualPair],
                          train_ids: set[str]) -> MetricReport:
    """Score counterfactual trajectories from the shared prefix onward.

    The model sees the original prefix up to D-1 and the counterfactual
    condition at D; every step >= D is a single-jump prediction scored
    against the counterfactual ground truth. Any overlap between the
    counterfactual ids and the training ids is a hard failure.
    """
    if not pairs:
        raise ClefError("evaluate_zero_shot_cf: no pairs")
    for pair in pairs:
        if pair.counterfactual.id in train_ids:
            raise LeakageError(
                f"counterfactual {pair.counterfactual.id} appears in the training split"
            )
    cfs = [p.counterfactual for p in pairs]
    eval_pairs = []
    for ci, pair in enumerate(pairs):
        D = pair.divergence
        for j in range(D, pair.counterfactual.length):
            eval_pairs.append((ci, D - 1, j))
    cache = FeatureCache(model, cfs)
    preds, targets, steps = [], [], []
    for batch_samples in group_by_prefix(eval_pairs, 256):
        # group further by j so each batch shares the target step index
        by_j: dict[int, list] = {}
        for s in batch_samples:
            by_j.setdefault(s[2], []).append(s)
        for j in sorted(by_j):
            sub = by_j[j]
            batch = _zero_shot_batch(cache, pairs, sub)
            out = model.predict_batch(batch)
            preds.append(out.array.copy())
            targets.append(batch.target)
            steps.extend([j] * len(sub))
    pred = np.vstack(preds)
    target = np.vstack(targets)
    return compute_metrics(pred, target, model.variable_names, np.asarray(steps))


def _zero_shot_batch(cache: FeatureCache, pairs: list[CounterfactualPair],
                     samples: list[tuple[int, int, int]]) -> PreparedBatch:
    """Batch whose conditions come from the divergence step, not from t_j."""
    cfs = cache.trajectories
    prefix_len = samples[0][1] + 1
    feats = np.stack([cache.features(ci)[:prefix_len] for ci, _, _ in samples])
    steps = [np.ascontiguousarray(feats[:, t, :]) for t in range(prefix_len)]
    times = np.stack([cache.time_indices(ci)[:prefix_len] for ci, _, _ in samples])
    step_time_idx = [np.ascontiguousarray(times[:, t, :]) for t in range(prefix_len)]
    ti_idx = np.stack([cache.time_indices(ci)[i] for ci, i, _ in samples])
    tj_idx = np.stack([cache.time_indices(ci)[j] for ci, _, j in samples])
    cond = np.stack([
        cache.cond_embedding(cfs[ci].conditions[pairs[ci].divergence]) for ci, _, _ in samples
    ])
    x_last = np.stack([cfs[ci].values[i] for ci, i, _ in samples])
    target = np.stack([cfs[ci].values[j] for ci, _, j in samples])
    horizons = np.array([j - i for _, i, j in samples], dtype=np.int64)
    raw = np.stack([cfs[ci].values[:prefix_len] for ci, _, _ in samples])
    raw_steps = [np.ascontiguousarray(raw[:, t, :]) for t in range(prefix_len)]
    return PreparedBatch(steps=steps, step_time_idx=step_time_idx, ti_idx=ti_idx,
                         tj_idx=tj_idx, cond_target=cond, x_last=x_last, target=target,
                         raw_steps=raw_steps, horizons=horizons)


def r2_similarity(a: Trajectory, b: Trajectory, symmetric: bool = False) -> float | None:
    """Pairwise-trajectory similarity: one trajectory as prediction of the other."""
    if a.n_variables != b.n_variables:
        raise ClefError("r2_similarity: trajectories measure different variables")
    shared = min(a.length, b.length)
    if shared < 2:
        raise ClefError("r2_similarity: needs at least two shared steps")
    forward = r2_score(a.values[:shared], b.values[:shared])
    if not symmetric:
        return forward
    backward = r2_score(b.values[:shared], a.values[:shared])
    defined = [v for v in (forward, backward) if v is not None]
    return float(np.mean(defined)) if defined else None
