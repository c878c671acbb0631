"""The core editing model: condition adapter, concept encoder/decoder,
single-jump forward pass, autoregressive rollout, and concept intervention.

The model predicts the covariates at an arbitrary future time in one step:
a concept vector (per-variable rate of change) is produced from the encoded
history, the target-time delta embedding, and the condition embedding, then
multiplied onto the last observed covariates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditions import ConditionRegistry
from .encoders import EncoderConfig, SequenceEncoder, build_encoder
from .errors import (
    ClefError,
    InvalidHorizon,
    InvalidIntervention,
    NonInvertibleValue,
    ShapeMismatch,
)
from .timeenc import Timestamp, TimeTables, next_grid_timestamp, time_index_matrix
from .trajectory import Trajectory

CONCEPT_FLOOR = -0.2  # lower bound of the exact-erf GELU range, with margin
HUBER_DELTA = 1.0


@dataclass
class ConceptVector:
    """Per-variable multiplicative rate of change between two time steps."""

    values: np.ndarray
    source_interval: tuple[Timestamp, Timestamp] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ClefError("concept values must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ClefError("concept values must be finite")
        if np.any(self.values <= CONCEPT_FLOOR):
            raise ClefError(f"concept entries must exceed {CONCEPT_FLOOR}")


@dataclass(frozen=True)
class ConceptEdit:
    index: int
    mode: str  # "set" | "scale"
    value: float

    def __post_init__(self):
        if self.mode not in ("set", "scale"):
            raise InvalidIntervention(f"unknown edit mode {self.mode!r}")


EditSpec = list[ConceptEdit]


def oracle_concept(x_i: np.ndarray, x_j: np.ndarray) -> ConceptVector:
    """Ground-truth concept: elementwise ratio x_j / x_i."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ShapeMismatch("oracle_concept: shape mismatch")
    if np.min(np.abs(x_i)) <= 1e-12:
        raise NonInvertibleValue("oracle_concept: near-zero denominator entry")
    return ConceptVector(values=x_j / x_i)


def intervene(c: ConceptVector, edits: EditSpec) -> ConceptVector:
    """Apply set/scale edits; untouched entries stay bit-identical."""
    if not edits:
        raise InvalidIntervention("edit set is empty")
    values = c.values.copy()
    for edit in edits:
        if not 0 <= edit.index < values.size:
            raise InvalidIntervention(f"edit index {edit.index} out of range")
        if edit.mode == "set":
            values[edit.index] = edit.value
        else:
            values[edit.index] *= edit.value
    if np.array_equal(values, c.values):
        raise InvalidIntervention("edits leave the concept unchanged")
    if np.any(values <= CONCEPT_FLOOR) or not np.all(np.isfinite(values)):
        raise InvalidIntervention(f"edited entries must stay finite and above {CONCEPT_FLOOR}")
    return ConceptVector(values=values, source_interval=c.source_interval)


@dataclass
class PreparedBatch:
    """Collated inputs for one batched prediction; all prefixes same length.

    `steps` holds one [B, V + d_z] array per history position (normalized
    covariates concatenated with the step condition embedding). Time
    positions are precomputed index matrices [B, 4] with columns
    (month-1, day-1, hour, year-offset).
    """

    steps: list[np.ndarray]
    step_time_idx: list[np.ndarray]
    ti_idx: np.ndarray
    tj_idx: np.ndarray
    cond_target: np.ndarray          # [B, d_z]
    x_last: np.ndarray               # [B, V] raw scale
    target: np.ndarray | None = None  # [B, V] raw scale
    raw_steps: list[np.ndarray] | None = None  # [B, V] per position, raw scale
    horizons: np.ndarray | None = None         # [B] grid-step gaps j - i

    @property
    def batch_size(self) -> int:
        return self.x_last.shape[0]


@dataclass
class ClefConfig:
    n_variables: int
    condition_dim: int = 64
    hidden_dim: int | None = None
    ffn_enabled: bool = False
    encoder_kind: str = "recurrent"
    layers: int = 4
    heads: int = 4
    dropout: float = 0.6

    def __post_init__(self):
        if self.hidden_dim is None:
            self.hidden_dim = self.n_variables
        if not self.ffn_enabled and self.hidden_dim != self.n_variables:
            raise ClefError(
                "hidden_dim must equal n_variables when the concept FFN is disabled"
            )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            input_dim=self.n_variables + self.condition_dim,
            hidden_dim=self.hidden_dim,
            kind=self.encoder_kind,
            layers=self.layers,
            heads=self.heads,
            dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        return {
            "n_variables": self.n_variables,
            "condition_dim": self.condition_dim,
            "hidden_dim": self.hidden_dim,
            "ffn_enabled": self.ffn_enabled,
            "encoder_kind": self.encoder_kind,
            "layers": self.layers,
            "heads": self.heads,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClefConfig":
        return cls(**d)


class ClefModel:
    """Sequence encoder F, condition adapter H, concept encoder E, decoder G."""

    kind = "clef"

    def __init__(self, config: ClefConfig, registry: ConditionRegistry,
                 rng: np.random.Generator, variable_names: list[str] | None = None):
        if registry.dim != config.condition_dim:
            raise ClefError("registry dimension does not match the model condition_dim")
        self.config = config
        self.registry = registry
        self.encoder: SequenceEncoder = build_encoder(config.encoder_config(), rng)
        d_z, d_h, V = config.condition_dim, config.hidden_dim, config.n_variables
        self.adapter_w = Tensor(rng.standard_normal((d_z, d_h)) / np.sqrt(d_z), requires_grad=True)
        self.adapter_b = Tensor(np.zeros(d_h), requires_grad=True)
        if config.ffn_enabled:
            self.ffn_w = Tensor(rng.standard_normal((d_h, V)) / np.sqrt(d_h), requires_grad=True)
            self.ffn_b = Tensor(np.zeros(V), requires_grad=True)
        else:
            self.ffn_w = None
            self.ffn_b = None
        self.time_tables = TimeTables.create(d_h, rng)
        self.norm_mean = np.zeros(V)
        self.norm_std = np.ones(V)
        self.variable_names = variable_names or [f"x{i}" for i in range(V)]
        self.force_concept_value: float | None = None
        self.counters = {"encoder_passes": 0, "decodes": 0}

    # ------------------------------------------------------------------
    # parameters and normalization

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = list(self.encoder.parameters())
        params.append(("adapter.w", self.adapter_w))
        params.append(("adapter.b", self.adapter_b))
        if self.ffn_w is not None:
            params.append(("ffn.w", self.ffn_w))
            params.append(("ffn.b", self.ffn_b))
        params.extend(self.time_tables.parameters())
        return params

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64).copy()
        self.norm_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.norm_mean) / self.norm_std

    # ------------------------------------------------------------------
    # component operations

    def adapt_condition(self, z_s: Tensor) -> Tensor:
        """Project a condition embedding into the hidden space."""
        if z_s.array.shape[-1] != self.config.condition_dim:
            raise ShapeMismatch("adapt_condition: wrong condition dimension")
        return ad.add(ad.matmul(z_s, self.adapter_w), self.adapter_b)

    def encode_concept(self, h_x: Tensor, delta: Tensor, h_s: Tensor) -> Tensor:
        """Concept from history summary, time delta, and condition projection."""
        h_st = ad.add(delta, h_s)
        pre = ad.multiply(h_x, h_st)
        if self.ffn_w is not None:
            pre = ad.add(ad.matmul(pre, self.ffn_w), self.ffn_b)
        elif pre.array.shape[-1] != self.config.n_variables:
            raise ShapeMismatch("concept path requires hidden_dim == n_variables without FFN")
        return ad.gelu(pre)

    def decode_concept(self, x_last: Tensor, c: Tensor) -> Tensor:
        """Apply the concept: elementwise product with the latest covariates."""
        if x_last.array.shape != c.array.shape:
            raise ShapeMismatch("decode_concept: shape mismatch")
        rows = x_last.array.shape[0] if x_last.array.ndim == 2 else 1
        self.counters["decodes"] += rows
        return ad.multiply(c, x_last)

    def loss(self, pred: Tensor, target: Tensor) -> Tensor:
        return ad.huber_loss(pred, target, delta=HUBER_DELTA)

    # ------------------------------------------------------------------
    # batched path

    def concept_batch(self, batch: PreparedBatch, *, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Concept tensor [B, V] for a prepared batch."""
        steps = [Tensor(s) for s in batch.steps]
        time_embs = [self.time_tables.embed_indices(idx) for idx in batch.step_time_idx]
        h_x = self.encoder.encode(steps, time_embs, train=train, rng=rng)
        self.counters["encoder_passes"] += batch.batch_size
        delta = ad.subtract(
            self.time_tables.embed_indices(batch.tj_idx),
            self.time_tables.embed_indices(batch.ti_idx),
        )
        h_s = self.adapt_condition(Tensor(batch.cond_target))
        concept = self.encode_concept(h_x, delta, h_s)
        if self.force_concept_value is not None:
            concept = Tensor(np.full_like(concept.array, self.force_concept_value))
        return concept

    def predict_batch(self, batch: PreparedBatch, *, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        concept = self.concept_batch(batch, train=train, rng=rng)
        return self.decode_concept(Tensor(batch.x_last), concept)

    # ------------------------------------------------------------------
    # single-sample interface

    def prepare_single(self, history: Trajectory, tokens: list[str],
                       t_j: Timestamp) -> PreparedBatch:
        if history.length < 1:
            raise ClefError("history must be non-empty")
        if history.n_variables != self.config.n_variables:
            raise ShapeMismatch("history variable count does not match the model")
        t_i = history.timestamps[-1]
        if not t_i < t_j:
            raise InvalidHorizon(f"target time {t_j.iso()} is not after {t_i.iso()}")
        steps = []
        for t in range(history.length):
            x_norm = self.normalize(history.values[t])
            z = self.registry.combine_step_conditions(history.conditions[t])
            steps.append(np.concatenate([x_norm, z]).reshape(1, -1))
        ref = self.time_tables.reference_year
        return PreparedBatch(
            steps=steps,
            step_time_idx=[time_index_matrix([ts], ref) for ts in history.timestamps],
            ti_idx=time_index_matrix([t_i], ref),
            tj_idx=time_index_matrix([t_j], ref),
            cond_target=self.registry.combine_step_conditions(tokens).reshape(1, -1),
            x_last=history.values[-1].reshape(1, -1).copy(),
        )

    def forward(self, history: Trajectory, tokens: list[str], t_j: Timestamp,
                edits: EditSpec | None = None) -> tuple[np.ndarray, ConceptVector]:
        """Single-jump prediction at t_j; returns (prediction, concept used)."""
        batch = self.prepare_single(history, tokens, t_j)
        concept_t = self.concept_batch(batch)
        concept = ConceptVector(
            values=concept_t.array[0].copy(),
            source_interval=(history.timestamps[-1], t_j),
        )
        if edits:
            concept = intervene(concept, edits)
        pred = self.decode_concept(
            Tensor(batch.x_last), Tensor(concept.values.reshape(1, -1))
        )
        return pred.array[0].copy(), concept

    def rollout(self, history: Trajectory, conditions: list[list[str]], steps: int,
                edits: EditSpec | None = None) -> Trajectory:
        """Autoregressive generation of `steps` future points.

        Each step is one immediate forward call whose prediction (and
        condition) is appended to the history before the next call. Edits,
        when given, are applied to the concept at every generated step.
        """
        if steps < 1:
            raise ClefError("rollout requires steps >= 1")
        if len(conditions) < steps:
            raise ClefError("rollout requires one condition list per generated step")
        work = history.copy()
        new_times: list[Timestamp] = []
        new_values: list[np.ndarray] = []
        new_conditions: list[list[str]] = []
        for k in range(steps):
            t_j = next_grid_timestamp(work.timestamps)
            pred, _ = self.forward(work, conditions[k], t_j, edits=edits)
            new_times.append(t_j)
            new_values.append(pred)
            new_conditions.append(list(conditions[k]))
            work = Trajectory(
                id=work.id,
                timestamps=work.timestamps + [t_j],
                values=np.vstack([work.values, pred.reshape(1, -1)]),
                conditions=[list(c) for c in work.conditions] + [list(conditions[k])],
            )
        return Trajectory(
            id=f"{history.id}:rollout",
            timestamps=new_times,
            values=np.vstack(new_values),
            conditions=new_conditions,
        )
