"""Tau-step-ahead counterfactual outcome prediction over treated series.

An `OutcomePredictor` encodes the factual history (outcomes plus the
treatments actually given) once, then decodes a planned treatment sequence
step by step. The "clef" head produces a per-step concept and multiplies it
onto the previous prediction (or onto the last observation when
`decode_anchor` is set); the "plain" head regresses each step's outcome
directly. Training minimizes the factual MSE only; counterfactual ground
truth is touched exclusively by evaluation.

Balancing via gradient reversal is optional: an auxiliary classifier
predicts the next assigned treatment from the history representation, and
its gradient is sign-flipped (scaled by lambda) on the way back into the
encoder. Without balancing the classifier still trains as a probe, but no
gradient reaches the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, recording
from .conditions import NULL_CONDITION, ConditionRegistry
from .datagen.tumor import (
    BOTH,
    CHEMO,
    RADIO,
    TumorSimConfig,
    TumorTrajectory,
    make_random_trajectories,
    make_single_sliding,
    treatment_token,
    tumor_to_trajectory,
)
from .encoders import EncoderConfig, build_encoder
from .errors import ClefError, NonFiniteValue, TrainingDiverged
from .timeenc import TimeTables, time_index_matrix
from .trajectory import Trajectory

TOKEN_TO_PAIR = {NULL_CONDITION: (0, 0), CHEMO: (1, 0), RADIO: (0, 1), BOTH: (1, 1)}


@dataclass
class TreatmentPlan:
    """Planned condition tokens for steps t_i+1 .. t_i+tau."""

    steps: list[list[str]]

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ClefError("treatment plan must cover at least one step")

    @property
    def tau(self) -> int:
        return len(self.steps)


@dataclass
class OutcomePredictorConfig:
    n_outcomes: int = 1
    condition_dim: int = 8
    hidden_dim: int = 8
    layers: int = 1
    dropout: float = 0.0
    head: str = "clef"            # "clef" | "plain"
    balancing: str = "none"       # "none" | "gradient_reversal"
    grl_lambda: float = 1.0
    decode_anchor: bool = False   # multiply the last observation at every step

    def __post_init__(self):
        if self.head not in ("clef", "plain"):
            raise ClefError(f"unknown head {self.head!r}")
        if self.balancing not in ("none", "gradient_reversal"):
            raise ClefError(f"unknown balancing {self.balancing!r}")

    def to_dict(self) -> dict:
        return {
            "n_outcomes": self.n_outcomes,
            "condition_dim": self.condition_dim,
            "hidden_dim": self.hidden_dim,
            "layers": self.layers,
            "dropout": self.dropout,
            "head": self.head,
            "balancing": self.balancing,
            "grl_lambda": self.grl_lambda,
            "decode_anchor": self.decode_anchor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomePredictorConfig":
        return cls(**d)


@dataclass
class PlanBatch:
    """Collated factual windows or counterfactual futures; equal prefix/tau."""

    steps: list[np.ndarray]
    step_time_idx: list[np.ndarray]
    ti_idx: np.ndarray
    plan_tj_idx: list[np.ndarray]       # per future step r: [B, 4]
    plan_cond: list[np.ndarray]         # per future step r: [B, d_z]
    y_last: np.ndarray                  # [B, V]
    targets: list[np.ndarray] | None    # per future step r: [B, V]
    treat_labels: np.ndarray | None     # [B, 2] treatment at the first plan step

    @property
    def batch_size(self) -> int:
        return self.y_last.shape[0]

    @property
    def tau(self) -> int:
        return len(self.plan_tj_idx)


class OutcomePredictor:
    """Recurrent history encoder with a pluggable counterfactual head."""

    kind = "outcome"

    def __init__(self, config: OutcomePredictorConfig, registry: ConditionRegistry,
                 rng: np.random.Generator):
        if registry.dim != config.condition_dim:
            raise ClefError("registry dimension does not match condition_dim")
        self.config = config
        self.registry = registry
        enc_cfg = EncoderConfig(
            input_dim=config.n_outcomes + config.condition_dim,
            hidden_dim=config.hidden_dim, kind="recurrent",
            layers=config.layers, dropout=config.dropout, heads=1,
        )
        self.encoder = build_encoder(enc_cfg, rng)
        d_z, d_h, V = config.condition_dim, config.hidden_dim, config.n_outcomes
        self.adapter_w = Tensor(rng.standard_normal((d_z, d_h)) / np.sqrt(d_z), requires_grad=True)
        self.adapter_b = Tensor(np.zeros(d_h), requires_grad=True)
        self.concept_w = Tensor(rng.standard_normal((d_h, V)) / np.sqrt(d_h), requires_grad=True)
        # bias at GELU^-1(1) so the multiplicative head starts near identity
        self.concept_b = Tensor(np.full(V, 1.1512), requires_grad=True)
        self.plain_w1 = Tensor(rng.standard_normal((2 * d_h, d_h)) / np.sqrt(2 * d_h), requires_grad=True)
        self.plain_b1 = Tensor(np.zeros(d_h), requires_grad=True)
        self.plain_w2 = Tensor(rng.standard_normal((d_h, V)) / np.sqrt(d_h), requires_grad=True)
        self.plain_b2 = Tensor(np.zeros(V), requires_grad=True)
        self.cls_w = Tensor(rng.standard_normal((d_h, 2)) / np.sqrt(d_h), requires_grad=True)
        self.cls_b = Tensor(np.zeros(2), requires_grad=True)
        self.time_tables = TimeTables.create(d_h, rng)
        self.norm_mean = np.zeros(V)
        self.norm_std = np.ones(V)
        self.variable_names = [f"y{i}" for i in range(V)]
        self.force_concept_value: float | None = None
        self.counters = {"encoder_passes": 0, "decodes": 0}

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = list(self.encoder.parameters())
        params += [("adapter.w", self.adapter_w), ("adapter.b", self.adapter_b)]
        if self.config.head == "clef":
            params += [("concept.w", self.concept_w), ("concept.b", self.concept_b)]
        else:
            params += [
                ("plain.w1", self.plain_w1), ("plain.b1", self.plain_b1),
                ("plain.w2", self.plain_w2), ("plain.b2", self.plain_b2),
            ]
        params += [("cls.w", self.cls_w), ("cls.b", self.cls_b)]
        params.extend(self.time_tables.parameters())
        return params

    def set_normalization(self, mean, std) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64).copy()
        self.norm_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.norm_mean) / self.norm_std

    # ------------------------------------------------------------------

    def encode_history(self, batch: PlanBatch, *, train: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        steps = [Tensor(s) for s in batch.steps]
        time_embs = [self.time_tables.embed_indices(idx) for idx in batch.step_time_idx]
        h = self.encoder.encode(steps, time_embs, train=train, rng=rng)
        self.counters["encoder_passes"] += batch.batch_size
        return h

    def _step_representation(self, h: Tensor, batch: PlanBatch, r: int) -> Tensor:
        delta = ad.subtract(
            self.time_tables.embed_indices(batch.plan_tj_idx[r]),
            self.time_tables.embed_indices(batch.ti_idx),
        )
        h_s = ad.add(ad.matmul(Tensor(batch.plan_cond[r]), self.adapter_w), self.adapter_b)
        return ad.add(delta, h_s)

    def predict_plan_batch(self, batch: PlanBatch, *, train: bool = False,
                           rng: np.random.Generator | None = None,
                           h: Tensor | None = None) -> list[Tensor]:
        """Raw-scale outcome predictions for every plan step.

        The history is encoded exactly once; planned treatments reach only
        the decoding head.
        """
        if h is None:
            h = self.encode_history(batch, train=train, rng=rng)
        preds: list[Tensor] = []
        y_prev = Tensor(batch.y_last)
        for r in range(batch.tau):
            h_st = self._step_representation(h, batch, r)
            if self.config.head == "clef":
                concept = ad.gelu(ad.add(ad.matmul(ad.multiply(h, h_st), self.concept_w), self.concept_b))
                if self.force_concept_value is not None:
                    concept = Tensor(np.full_like(concept.array, self.force_concept_value))
                base = Tensor(batch.y_last) if self.config.decode_anchor else y_prev
                y = ad.multiply(concept, base)
            else:
                joined = ad.concat_cols([h, h_st])
                hidden = ad.gelu(ad.add(ad.matmul(joined, self.plain_w1), self.plain_b1))
                out_norm = ad.add(ad.matmul(hidden, self.plain_w2), self.plain_b2)
                y = ad.add(ad.multiply(out_norm, Tensor(self.norm_std)), Tensor(self.norm_mean))
            self.counters["decodes"] += batch.batch_size
            preds.append(y)
            y_prev = y
        return preds

    def classifier_logits(self, h: Tensor) -> Tensor:
        """Treatment logits from the history representation.

        With gradient-reversal balancing the encoder receives the reversed
        gradient scaled by lambda; otherwise lambda is 0 and the classifier
        acts as a probe that leaves the encoder untouched.
        """
        lam = self.config.grl_lambda if self.config.balancing == "gradient_reversal" else 0.0
        return ad.add(ad.matmul(ad.grad_reverse(h, lam), self.cls_w), self.cls_b)

    # ------------------------------------------------------------------

    def predict_tau_step(self, history: Trajectory, plan: TreatmentPlan) -> np.ndarray:
        """Outcome series for the planned treatments, shape [tau, V]."""
        if history.length < 1:
            raise ClefError("history must be non-empty")
        batch = _collate_single_plan(self, history, plan.steps)
        preds = self.predict_plan_batch(batch)
        return np.vstack([p.array[0] for p in preds])


class PersistenceOutcomePredictor:
    """Flat baseline: repeats the last observed outcome for every step."""

    kind = "persistence"

    def __init__(self, n_outcomes: int = 1):
        self.config = OutcomePredictorConfig(n_outcomes=n_outcomes)
        self.variable_names = [f"y{i}" for i in range(n_outcomes)]

    def predict_tau_step(self, history: Trajectory, plan: TreatmentPlan) -> np.ndarray:
        return np.tile(history.values[-1], (plan.tau, 1))


# ----------------------------------------------------------------------
# collation

def _future_timestamps(history: Trajectory, tau: int):
    """Grid timestamps for tau steps after the history."""
    from .timeenc import next_grid_timestamp

    times = list(history.timestamps)
    out = []
    for _ in range(tau):
        nxt = next_grid_timestamp(times)
        out.append(nxt)
        times.append(nxt)
    return out


def _collate_single_plan(model: OutcomePredictor, history: Trajectory,
                         plan: list[list[str]]) -> PlanBatch:
    """One-sample batch; plan timestamps extend the history's grid."""
    x = model.normalize(history.values)
    z = np.stack([model.registry.combine_step_conditions(c) for c in history.conditions])
    feats = np.concatenate([x, z], axis=1)
    time_idx = time_index_matrix(history.timestamps)
    future = _future_timestamps(history, len(plan))
    return PlanBatch(
        steps=[feats[t].reshape(1, -1) for t in range(history.length)],
        step_time_idx=[time_idx[t].reshape(1, -1) for t in range(history.length)],
        ti_idx=time_idx[-1].reshape(1, -1),
        plan_tj_idx=[time_index_matrix([ft]) for ft in future],
        plan_cond=[model.registry.combine_step_conditions(p).reshape(1, -1) for p in plan],
        y_last=history.values[-1].reshape(1, -1).copy(),
        targets=None,
        treat_labels=None,
    )


@dataclass
class WindowSample:
    """One prediction window rooted inside a trajectory.

    `plan` is None for factual windows (the observed treatments are used);
    counterfactual futures carry explicit plan tokens and targets.
    """

    ti: int
    origin: int
    tau: int
    plan: list[list[str]] | None = None
    targets: np.ndarray | None = None   # [tau, V]
    with_labels: bool = False


def _collate_windows(cache, samples: list[WindowSample]) -> PlanBatch:
    """Batch of windows sharing prefix length and tau; arrays come from cache."""
    trajs = cache.trajectories
    model = cache.model
    V = model.config.n_outcomes
    prefix_len = samples[0].origin + 1
    tau = samples[0].tau
    feats = np.stack([cache.features(s.ti)[:prefix_len] for s in samples])
    times = np.stack([cache.time_indices(s.ti)[:prefix_len + tau] for s in samples])
    steps = [np.ascontiguousarray(feats[:, t, :]) for t in range(prefix_len)]
    step_time_idx = [np.ascontiguousarray(times[:, t, :]) for t in range(prefix_len)]
    ti_idx = np.ascontiguousarray(times[:, prefix_len - 1, :])
    plan_tj_idx = [np.ascontiguousarray(times[:, prefix_len + r, :]) for r in range(tau)]
    plan_cond = []
    for r in range(tau):
        rows = []
        for s in samples:
            if s.plan is None:
                rows.append(cache.features(s.ti)[s.origin + 1 + r, V:])
            else:
                rows.append(cache.cond_embedding(s.plan[r]))
        plan_cond.append(np.stack(rows))
    y_last = np.stack([trajs[s.ti].values[s.origin] for s in samples])
    targets = []
    for r in range(tau):
        rows = []
        for s in samples:
            if s.targets is None:
                rows.append(trajs[s.ti].values[s.origin + 1 + r])
            else:
                rows.append(s.targets[r])
        targets.append(np.stack(rows))
    labels = None
    if samples[0].with_labels:
        labels = np.stack([
            np.array(TOKEN_TO_PAIR[trajs[s.ti].conditions[s.origin + 1][0]], dtype=np.float64)
            for s in samples
        ])
    return PlanBatch(
        steps=steps, step_time_idx=step_time_idx, ti_idx=ti_idx,
        plan_tj_idx=plan_tj_idx, plan_cond=plan_cond, y_last=y_last,
        targets=targets, treat_labels=labels,
    )


# ----------------------------------------------------------------------
# training on factual windows

@dataclass
class OutcomeTrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 3e-3
    seed: int = 0
    tau_max: int = 6
    samples_per_epoch: int = 2048
    patience: int = 4
    cls_weight: float = 1.0
    val_windows: int = 512


def _window_samples(trajs: list[Trajectory], n: int, tau_max: int,
                    rng: np.random.Generator) -> list[WindowSample]:
    """Factual windows; plans default to the observed treatments."""
    eligible = [ti for ti, t in enumerate(trajs) if t.length >= 3]
    if not eligible:
        raise ClefError("no trajectory long enough for window sampling")
    out = []
    for _ in range(n):
        ti = eligible[int(rng.integers(len(eligible)))]
        traj = trajs[ti]
        max_tau = min(tau_max, traj.length - 2)
        tau = int(rng.integers(1, max_tau + 1))
        t = int(rng.integers(1, traj.length - tau))
        out.append(WindowSample(ti=ti, origin=t, tau=tau, with_labels=True))
    return out


def _group_plan_samples(samples: list[WindowSample], batch_size: int):
    groups: dict[tuple[int, int], list] = {}
    for s in samples:
        groups.setdefault((s.origin, s.tau), []).append(s)
    batches = []
    for key in sorted(groups):
        bucket = groups[key]
        for k in range(0, len(bucket), batch_size):
            batches.append(bucket[k:k + batch_size])
    return batches


def _window_loss(model: OutcomePredictor, batch: PlanBatch, *, train: bool,
                 rng: np.random.Generator | None, cls_weight: float = 1.0) -> Tensor:
    h = model.encode_history(batch, train=train, rng=rng)
    preds = model.predict_plan_batch(batch, train=train, rng=rng, h=h)
    inv_std = 1.0 / model.norm_std
    total: Tensor | None = None
    for r, pred in enumerate(preds):
        pred_n = ad.multiply(ad.subtract(pred, Tensor(model.norm_mean)), Tensor(inv_std))
        targ_n = Tensor(model.normalize(batch.targets[r]))
        term = ad.mse_loss(pred_n, targ_n)
        total = term if total is None else ad.add(total, term)
    loss = ad.scale(total, 1.0 / batch.tau)
    if batch.treat_labels is not None and cls_weight > 0:
        logits = model.classifier_logits(h)
        bce = ad.bce_with_logits(logits, Tensor(batch.treat_labels))
        loss = ad.add(loss, ad.scale(bce, cls_weight))
    return loss


def train_outcome_predictor(model: OutcomePredictor, trajs: list[Trajectory],
                            config: OutcomeTrainConfig,
                            val_trajs: list[Trajectory] | None = None):
    """Factual-loss training; returns (loss_curve, val_curve)."""
    from .training import FeatureCache

    if not trajs:
        raise ClefError("empty training set")
    stacked = np.concatenate([t.values for t in trajs], axis=0)
    model.set_normalization(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8))
    cache = FeatureCache(model, trajs)
    val_cache = FeatureCache(model, val_trajs) if val_trajs else None
    named = model.parameters()
    params = [p for _, p in named]
    adam = AdamState(params, lr=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    val_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    val_samples = (_window_samples(val_trajs, config.val_windows, config.tau_max, val_rng)
                   if val_trajs else [])
    loss_curve: list[float] = []
    val_curve: list[float] = []
    best = [p.array.copy() for p in params]
    best_err = np.inf
    bad = 0
    for epoch in range(config.epochs):
        samples = _window_samples(trajs, config.samples_per_epoch, config.tau_max, rng)
        total, seen = 0.0, 0
        for group in _group_plan_samples(samples, config.batch_size):
            batch = _collate_windows(cache, group)
            tape = Tape()
            try:
                with recording(tape):
                    loss = _window_loss(model, batch, train=True, rng=rng,
                                        cls_weight=config.cls_weight)
            except NonFiniteValue as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            ad.backward(loss, tape)
            adam_step(params, adam)
            total += value * len(group)
            seen += len(group)
        loss_curve.append(total / max(seen, 1))
        if val_samples:
            err = _window_mae(model, val_cache, val_samples, config.batch_size)
            val_curve.append(err)
            if err < best_err - 1e-12:
                best_err = err
                best = [p.array.copy() for p in params]
                bad = 0
            else:
                bad += 1
                if bad >= config.patience:
                    break
    if val_samples:
        for p, arr in zip(params, best):
            p.array[...] = arr
    return loss_curve, val_curve


def _window_mae(model: OutcomePredictor, cache, samples, batch_size: int) -> float:
    total, count = 0.0, 0
    for group in _group_plan_samples(samples, batch_size):
        batch = _collate_windows(cache, group)
        preds = model.predict_plan_batch(batch)
        for r, pred in enumerate(preds):
            total += float(np.abs(pred.array - batch.targets[r]).sum())
            count += batch.targets[r].size
    return total / max(count, 1)


# ----------------------------------------------------------------------
# counterfactual evaluation

def evaluate_counterfactual(model, patients: list[TumorTrajectory],
                            sim_config: TumorSimConfig, setting: str, tau_max: int,
                            rng: np.random.Generator | None = None,
                            max_origins_per_patient: int | None = 4,
                            n_random: int = 10) -> dict[int, float]:
    """Normalized RMSE (percent of the death-threshold volume) per tau."""
    from .training import FeatureCache

    if setting not in ("single_sliding", "random"):
        raise ClefError(f"unknown counterfactual setting {setting!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    v_max = sim_config.params.death_volume
    sq_err: dict[int, list[float]] = {tau: [] for tau in range(1, tau_max + 1)}
    trajs = [tumor_to_trajectory(p) for p in patients]
    samples: list[WindowSample] = []
    for pi, patient in enumerate(patients):
        last = patient.length - 1 - tau_max
        origins = list(range(1, last + 1))
        if not origins:
            continue
        if max_origins_per_patient is not None and len(origins) > max_origins_per_patient:
            pick = rng.choice(len(origins), size=max_origins_per_patient, replace=False)
            origins = [origins[k] for k in sorted(pick)]
        if setting == "single_sliding":
            futures = make_single_sliding(patient, tau_max, sim_config, origins=origins)
        else:
            futures = make_random_trajectories(patient, tau_max, rng, sim_config,
                                               n=n_random, origins=origins)
        for future in futures:
            plan = [[treatment_token(future.chemo[r], future.radio[r])]
                    for r in range(tau_max)]
            samples.append(WindowSample(
                ti=pi, origin=future.origin, tau=tau_max,
                plan=plan, targets=future.volumes.reshape(-1, 1),
            ))
    if not samples:
        raise ClefError("no counterfactual futures to evaluate")
    if isinstance(model, PersistenceOutcomePredictor):
        for s in samples:
            pred = model.predict_tau_step(trajs[s.ti].prefix(s.origin + 1),
                                          TreatmentPlan(s.plan))
            for r in range(tau_max):
                sq_err[r + 1].append(float(np.mean((pred[r] - s.targets[r]) ** 2)))
    else:
        cache = FeatureCache(model, trajs)
        for group in _group_plan_samples(samples, 256):
            batch = _collate_windows(cache, group)
            preds = model.predict_plan_batch(batch)
            for r, pred in enumerate(preds):
                err = (pred.array - batch.targets[r]) ** 2
                sq_err[r + 1].extend(np.mean(err, axis=1).tolist())
    return {tau: 100.0 * float(np.sqrt(np.mean(errs))) / v_max
            for tau, errs in sq_err.items() if errs}
