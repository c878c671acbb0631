"""Baseline predictors: persistence (all-ones concepts), a no-concept
conditional forecaster, and vector autoregression."""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditions import ConditionRegistry
from .encoders import build_encoder
from .errors import ClefError, ShapeMismatch
from .model import ClefConfig, PreparedBatch
from .timeenc import TimeTables
from .trajectory import Trajectory


class SimpleLinearModel:
    """Persistence: the all-ones-concept ablation, predicting x at t_i."""

    kind = "simple_linear"

    def __init__(self, n_variables: int, condition_dim: int = 1,
                 variable_names: list[str] | None = None):
        self.config = ClefConfig(
            n_variables=n_variables, condition_dim=condition_dim,
            encoder_kind="recurrent", layers=1, heads=1, dropout=0.0,
        )
        self.registry = ConditionRegistry(dim=condition_dim)
        self.norm_mean = np.zeros(n_variables)
        self.norm_std = np.ones(n_variables)
        self.variable_names = variable_names or [f"x{i}" for i in range(n_variables)]
        self.counters = {"encoder_passes": 0, "decodes": 0}

    def parameters(self) -> list:
        return []

    def set_normalization(self, mean, std) -> None:
        pass

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return values

    def predict_batch(self, batch: PreparedBatch, *, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        self.counters["decodes"] += batch.batch_size
        return Tensor(batch.x_last.copy())

    def loss(self, pred: Tensor, target: Tensor) -> Tensor:
        return ad.huber_loss(pred, target, delta=1.0)


class ConditionalForecaster:
    """Direct-regression conditional forecaster (no concept bottleneck).

    Shares the sequence encoder, condition adapter, and time embeddings
    with the concept model, but regresses the target covariates from the
    concatenated history summary and condition/time representation.
    Predictions are made in normalized space and mapped back.
    """

    kind = "forecaster"

    def __init__(self, config: ClefConfig, registry: ConditionRegistry,
                 rng: np.random.Generator, variable_names: list[str] | None = None):
        if registry.dim != config.condition_dim:
            raise ClefError("registry dimension does not match condition_dim")
        self.config = config
        self.registry = registry
        self.encoder = build_encoder(config.encoder_config(), rng)
        d_z, d_h, V = config.condition_dim, config.hidden_dim, config.n_variables
        self.adapter_w = Tensor(rng.standard_normal((d_z, d_h)) / np.sqrt(d_z), requires_grad=True)
        self.adapter_b = Tensor(np.zeros(d_h), requires_grad=True)
        self.head_w1 = Tensor(rng.standard_normal((2 * d_h, d_h)) / np.sqrt(2 * d_h), requires_grad=True)
        self.head_b1 = Tensor(np.zeros(d_h), requires_grad=True)
        self.head_w2 = Tensor(rng.standard_normal((d_h, V)) / np.sqrt(d_h), requires_grad=True)
        self.head_b2 = Tensor(np.zeros(V), requires_grad=True)
        self.time_tables = TimeTables.create(d_h, rng)
        self.norm_mean = np.zeros(V)
        self.norm_std = np.ones(V)
        self.variable_names = variable_names or [f"x{i}" for i in range(V)]
        self.counters = {"encoder_passes": 0, "decodes": 0}

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = list(self.encoder.parameters())
        params += [
            ("adapter.w", self.adapter_w), ("adapter.b", self.adapter_b),
            ("head.w1", self.head_w1), ("head.b1", self.head_b1),
            ("head.w2", self.head_w2), ("head.b2", self.head_b2),
        ]
        params.extend(self.time_tables.parameters())
        return params

    def set_normalization(self, mean, std) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64).copy()
        self.norm_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.norm_mean) / self.norm_std

    def predict_batch(self, batch: PreparedBatch, *, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        steps = [Tensor(s) for s in batch.steps]
        time_embs = [self.time_tables.embed_indices(idx) for idx in batch.step_time_idx]
        h_x = self.encoder.encode(steps, time_embs, train=train, rng=rng)
        self.counters["encoder_passes"] += batch.batch_size
        delta = ad.subtract(
            self.time_tables.embed_indices(batch.tj_idx),
            self.time_tables.embed_indices(batch.ti_idx),
        )
        h_s = ad.add(ad.matmul(Tensor(batch.cond_target), self.adapter_w), self.adapter_b)
        joined = ad.concat_cols([h_x, ad.add(delta, h_s)])
        hidden = ad.gelu(ad.add(ad.matmul(joined, self.head_w1), self.head_b1))
        out_norm = ad.add(ad.matmul(hidden, self.head_w2), self.head_b2)
        self.counters["decodes"] += batch.batch_size
        return ad.add(ad.multiply(out_norm, Tensor(self.norm_std)), Tensor(self.norm_mean))

    def loss(self, pred: Tensor, target: Tensor) -> Tensor:
        return ad.huber_loss(pred, target, delta=1.0)


class VARModel:
    """Vector autoregression of order p, forecast by iteration."""

    kind = "var"

    def __init__(self, order: int, intercept: np.ndarray, coefs: list[np.ndarray],
                 variable_names: list[str] | None = None):
        self.order = order
        self.intercept = np.asarray(intercept, dtype=np.float64)
        self.coefs = [np.asarray(a, dtype=np.float64) for a in coefs]
        V = self.intercept.size
        if any(a.shape != (V, V) for a in self.coefs) or len(self.coefs) != order:
            raise ShapeMismatch("VAR coefficient shapes are inconsistent")
        self.variable_names = variable_names or [f"x{i}" for i in range(V)]
        self.counters = {"encoder_passes": 0, "decodes": 0}
        # conditions are ignored; a stub registry keeps the eval collate uniform
        self.registry = ConditionRegistry(dim=1)
        self.norm_mean = np.zeros(V)
        self.norm_std = np.ones(V)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return values

    @property
    def n_variables(self) -> int:
        return self.intercept.size

    def step(self, lags: list[np.ndarray]) -> np.ndarray:
        """One-step prediction from lags [x_{t-1}, ..., x_{t-p}]."""
        out = self.intercept.copy()
        for a, x in zip(self.coefs, lags):
            out += a @ x
        return out

    def forecast(self, prefix: np.ndarray, horizon: int) -> np.ndarray:
        """Iterated forecasts for `horizon` steps after the prefix."""
        prefix = np.asarray(prefix, dtype=np.float64)
        if prefix.shape[0] < self.order:
            raise ClefError(f"VAR({self.order}) needs at least {self.order} history steps")
        window = [prefix[-(r + 1)].copy() for r in range(self.order)]
        preds = []
        for _ in range(horizon):
            nxt = self.step(window)
            preds.append(nxt)
            window = [nxt] + window[:-1]
        return np.vstack(preds)

    def predict_batch(self, batch: PreparedBatch, *, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        if batch.raw_steps is None or batch.horizons is None:
            raise ClefError("VAR prediction needs raw history values and horizons")
        prefix = np.stack(batch.raw_steps, axis=1)  # [B, L, V]
        out = np.empty_like(batch.x_last)
        for b in range(batch.batch_size):
            out[b] = self.forecast(prefix[b], int(batch.horizons[b]))[-1]
        self.counters["decodes"] += batch.batch_size
        return Tensor(out)


def fit_var(trajectories: list[Trajectory], order: int, ridge: float = 1e-8,
            variable_names: list[str] | None = None) -> VARModel:
    """Least-squares VAR fit over all trajectories.

    Falls back to a ridge solve (with a warning) when the design matrix is
    rank deficient.
    """
    if order < 1:
        raise ClefError("VAR order must be >= 1")
    if not trajectories:
        raise ClefError("fit_var: empty training set")
    V = trajectories[0].n_variables
    rows_x, rows_y = [], []
    for traj in trajectories:
        vals = traj.values
        for t in range(order, traj.length):
            feats = [np.ones(1)]
            for r in range(1, order + 1):
                feats.append(vals[t - r])
            rows_x.append(np.concatenate(feats))
            rows_y.append(vals[t])
    n_cols = 1 + order * V
    if len(rows_x) < n_cols:
        raise ClefError(
            f"fit_var: need at least {n_cols} usable rows, found {len(rows_x)}"
        )
    X = np.vstack(rows_x)
    Y = np.vstack(rows_y)
    theta, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < n_cols:
        warnings.warn("fit_var: singular design matrix, refitting with ridge 1e-8")
        gram = X.T @ X + ridge * np.eye(n_cols)
        theta = np.linalg.solve(gram, X.T @ Y)
    intercept = theta[0]
    coefs = []
    for r in range(order):
        block = theta[1 + r * V: 1 + (r + 1) * V]
        coefs.append(block.T.copy())
    return VARModel(order=order, intercept=intercept, coefs=coefs,
                    variable_names=variable_names)
