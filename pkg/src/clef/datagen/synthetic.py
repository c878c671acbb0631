"""Multiplicative branching-trajectory generator with matched
counterfactual pairs.

Dynamics are exponential-multiplicative: x_{t+1} = x_t * exp(drift(s_t) + eta)
with log-space Gaussian noise, so the ground-truth one-step concept is
exp(drift) and every generated value stays positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..conditions import NULL_CONDITION
from ..errors import ClefError
from ..timeenc import grid_timestamps
from ..trajectory import CounterfactualPair, Trajectory

MAX_DRIFT = 0.5


@dataclass
class GeneratorConfig:
    n_variables: int = 20
    n_tokens: int = 8
    min_length: int = 20
    max_length: int = 37
    drift_scale: float = 0.25
    noise_sigma: float = 0.05
    none_probability: float = 0.25
    init_sigma: float = 0.25
    seed: int = 0
    drift_table: np.ndarray | None = None
    token_names: list[str] | None = None
    variable_names: list[str] | None = None

    def __post_init__(self):
        if self.n_variables < 1 or self.n_tokens < 1:
            raise ClefError("generator needs at least one variable and one token")
        if not 2 <= self.min_length <= self.max_length:
            raise ClefError("length range must satisfy 2 <= min <= max")
        if self.noise_sigma < 0:
            raise ClefError("noise_sigma must be >= 0")
        if not 0.0 <= self.none_probability < 1.0:
            raise ClefError("none_probability must be in [0, 1)")
        if self.drift_table is None:
            table_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xD21F]))
            self.drift_table = table_rng.uniform(
                -self.drift_scale, self.drift_scale, (self.n_tokens, self.n_variables)
            )
        self.drift_table = np.asarray(self.drift_table, dtype=np.float64)
        if self.drift_table.shape != (self.n_tokens, self.n_variables):
            raise ClefError("drift_table must have shape [n_tokens, n_variables]")
        if np.max(np.abs(self.drift_table)) > MAX_DRIFT:
            raise ClefError(f"drift magnitudes must not exceed {MAX_DRIFT}")
        if self.token_names is None:
            self.token_names = [f"cond{k}" for k in range(self.n_tokens)]
        if len(self.token_names) != self.n_tokens:
            raise ClefError("token_names length must equal n_tokens")
        if NULL_CONDITION in self.token_names:
            raise ClefError(f"{NULL_CONDITION!r} is reserved for the null condition")

    def drift_for(self, token: str) -> np.ndarray:
        if token == NULL_CONDITION:
            return np.zeros(self.n_variables)
        return self.drift_table[self.token_names.index(token)]

    def to_dict(self) -> dict:
        return {
            "n_variables": self.n_variables,
            "n_tokens": self.n_tokens,
            "min_length": self.min_length,
            "max_length": self.max_length,
            "drift_scale": self.drift_scale,
            "noise_sigma": self.noise_sigma,
            "none_probability": self.none_probability,
            "init_sigma": self.init_sigma,
            "seed": self.seed,
            "drift_table": self.drift_table.tolist(),
            "token_names": list(self.token_names),
            "variable_names": self.variable_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if d.get("drift_table") is not None:
            d["drift_table"] = np.asarray(d["drift_table"], dtype=np.float64)
        return cls(**d)


def _sample_token(config: GeneratorConfig, rng: np.random.Generator) -> str:
    if rng.random() < config.none_probability:
        return NULL_CONDITION
    return config.token_names[int(rng.integers(config.n_tokens))]


def _evolve(config: GeneratorConfig, x_prev: np.ndarray, token: str,
            rng: np.random.Generator) -> np.ndarray:
    drift = config.drift_for(token)
    eta = rng.normal(0.0, config.noise_sigma, config.n_variables) if config.noise_sigma > 0 else 0.0
    return x_prev * np.exp(drift + eta)


def generate_trajectory(config: GeneratorConfig, rng: np.random.Generator,
                        traj_id: str = "traj", length: int | None = None) -> Trajectory:
    """One trajectory; conditions[t] is the token whose effect lands at step t."""
    L = int(rng.integers(config.min_length, config.max_length + 1)) if length is None else length
    if L < 2:
        raise ClefError("trajectory length must be >= 2")
    values = np.empty((L, config.n_variables))
    values[0] = rng.lognormal(0.0, config.init_sigma, config.n_variables)
    conditions: list[list[str]] = [[NULL_CONDITION]]
    for t in range(1, L):
        token = _sample_token(config, rng)
        values[t] = _evolve(config, values[t - 1], token, rng)
        conditions.append([token])
    if np.min(values) <= 0:
        raise ClefError("generator produced a non-positive value")
    return Trajectory(
        id=traj_id,
        timestamps=grid_timestamps(L),
        values=values,
        conditions=conditions,
    )


def generate_cf_pair(config: GeneratorConfig, divergence: int, rng: np.random.Generator,
                     original: Trajectory | None = None, traj_id: str = "pair",
                     cf_length: int | None = None) -> CounterfactualPair:
    """Matched pair: prefix copied bit-exactly, condition forced to differ at D."""
    if original is None:
        original = generate_trajectory(config, rng, traj_id=traj_id)
    D = divergence
    if not 1 <= D < original.length:
        raise ClefError(f"divergence {D} out of range for length {original.length}")
    L_cf = cf_length if cf_length is not None else int(
        rng.integers(max(D + 1, config.min_length), config.max_length + 1)
    )
    if L_cf <= D:
        raise ClefError("counterfactual length must exceed the divergence step")
    values = np.empty((L_cf, config.n_variables))
    values[:D] = original.values[:D]
    conditions = [list(c) for c in original.conditions[:D]]
    original_token = original.conditions[D][0]
    choices = [t for t in config.token_names + [NULL_CONDITION] if t != original_token]
    cf_token = choices[int(rng.integers(len(choices)))]
    for t in range(D, L_cf):
        token = cf_token if t == D else _sample_token(config, rng)
        values[t] = _evolve(config, values[t - 1], token, rng)
        conditions.append([token])
    counterfactual = Trajectory(
        id=f"{original.id}:cf",
        timestamps=grid_timestamps(L_cf),
        values=values,
        conditions=conditions,
        cf_of=original.id,
        divergence=D,
    )
    return CounterfactualPair(original=original, counterfactual=counterfactual, divergence=D)


def generate_dataset(config: GeneratorConfig, n: int, id_prefix: str = "traj",
                     cf_pairs: int = 0, divergence: int | None = None,
                     cf_length: int | None = None) -> list[Trajectory]:
    """Seed-deterministic dataset; one RNG stream per trajectory id.

    When cf_pairs > 0, the first cf_pairs trajectories get a matched
    counterfactual partner diverging at `divergence` (with an optional
    fixed counterfactual length).
    """
    if n < 1:
        raise ClefError("dataset size must be >= 1")
    if cf_pairs > n:
        raise ClefError("cf_pairs cannot exceed the number of originals")
    if cf_pairs > 0 and divergence is None:
        raise ClefError("divergence step required when generating counterfactual pairs")
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(n)
    out: list[Trajectory] = []
    for i in range(n):
        rng = np.random.default_rng(streams[i])
        length = None
        if i < cf_pairs:
            # make room for the divergence step in both members of the pair
            length = int(rng.integers(max(divergence + 2, config.min_length), config.max_length + 1))
        traj = generate_trajectory(config, rng, traj_id=f"{id_prefix}{i:05d}", length=length)
        out.append(traj)
        if i < cf_pairs:
            pair = generate_cf_pair(config, divergence, rng, original=traj,
                                    cf_length=cf_length)
            out.append(pair.counterfactual)
    return out


def split_dataset(trajectories: list[Trajectory], fractions: tuple[float, float, float],
                  seed: int, zero_shot: bool = False) -> dict[str, list[Trajectory]]:
    """Disjoint seed-deterministic train/val/test split.

    In zero-shot mode every counterfactual trajectory goes to the test set
    and the originals are divided between train and val.
    """
    if not trajectories:
        raise ClefError("split_dataset: empty input")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ClefError("fractions must be three non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ClefError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    if zero_shot:
        originals = [t for t in trajectories if t.cf_of is None]
        counterfactuals = [t for t in trajectories if t.cf_of is not None]
        if not counterfactuals:
            raise ClefError("zero-shot split requires counterfactual trajectories")
        order = rng.permutation(len(originals))
        train_val_mass = fractions[0] + fractions[1]
        if train_val_mass <= 0:
            raise ClefError("zero-shot split needs positive train+val mass")
        n_train = int(round(len(originals) * fractions[0] / train_val_mass))
        train = [originals[i] for i in order[:n_train]]
        val = [originals[i] for i in order[n_train:]]
        return {"train": train, "val": val, "test": counterfactuals}
    order = rng.permutation(len(trajectories))
    n = len(trajectories)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_val = min(n_val, n - n_train)
    train = [trajectories[i] for i in order[:n_train]]
    val = [trajectories[i] for i in order[n_train:n_train + n_val]]
    test = [trajectories[i] for i in order[n_train + n_val:]]
    return {"train": train, "val": val, "test": test}
