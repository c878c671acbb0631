"""PK-PD tumor-volume simulator with a confounded treatment policy and
noise-matched counterfactual futures.

Daily Euler steps of

    dV/dt = (rho * log(K / V) - beta_c * C_t - (alpha_r * d_t + beta_r * d_t^2) + e_t) * V

where C_t is the chemotherapy drug concentration (exponential decay plus a
fixed dose on application days), d_t is the radiotherapy dose on days where
radio is applied, and e_t is Gaussian noise. Treatments are assigned each
day with probability sigmoid((gamma / D_max) * (Dbar_t - offset)) where
Dbar_t is the mean tumor diameter over a trailing window; gamma = 0 gives
an unconfounded coin flip.

All constants live in `PkpdParams` and are free desk-scale parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..conditions import NULL_CONDITION
from ..errors import ClefError, SimulationDiverged
from ..timeenc import grid_timestamps
from ..trajectory import Trajectory

MAX_STEPS = 60

CHEMO = "chemo"
RADIO = "radio"
BOTH = "chemo+radio"


def volume_from_diameter(d: float) -> float:
    return float(np.pi / 6.0 * d ** 3)


def diameter_from_volume(v: np.ndarray | float):
    return (6.0 * np.asarray(v) / np.pi) ** (1.0 / 3.0)


def treatment_token(chemo: int, radio: int) -> str:
    if chemo and radio:
        return BOTH
    if chemo:
        return CHEMO
    if radio:
        return RADIO
    return NULL_CONDITION


@dataclass
class PkpdParams:
    growth_rate: float = 0.01                 # rho, per day
    carrying_diameter: float = 30.0           # cm; K = volume(30)
    death_diameter: float = 13.0              # cm; V_max = volume(13)
    recovery_volume: float = 1e-3             # cm^3; V_min
    chemo_kill: float = 0.02                  # beta_c per concentration unit
    chemo_dose: float = 5.0                   # concentration added on application
    chemo_half_life: float = 1.0              # days
    radio_alpha: float = 0.03                 # alpha_r per Gy
    radio_beta: float = 0.003                 # beta_r per Gy^2
    radio_dose: float = 2.0                   # Gy on application days
    noise_std: float = 0.01                   # sigma_e on the growth rate

    @property
    def carrying_capacity(self) -> float:
        return volume_from_diameter(self.carrying_diameter)

    @property
    def death_volume(self) -> float:
        return volume_from_diameter(self.death_diameter)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "growth_rate", "carrying_diameter", "death_diameter", "recovery_volume",
            "chemo_kill", "chemo_dose", "chemo_half_life", "radio_alpha",
            "radio_beta", "radio_dose", "noise_std")}


@dataclass
class TumorSimConfig:
    gamma: float = 0.0
    n_train: int = 10000
    n_val: int = 1000
    n_test: int = 1000
    horizon: int = MAX_STEPS
    seed: int = 0
    window: int = 15                      # trailing days for the mean diameter
    diameter_offset: float | None = None  # policy centering; default D_max / 2
    params: PkpdParams = field(default_factory=PkpdParams)

    def __post_init__(self):
        if self.gamma < 0:
            raise ClefError("gamma must be >= 0")
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ClefError("cohort counts must be positive")
        if not 2 <= self.horizon <= MAX_STEPS:
            raise ClefError(f"horizon must be in [2, {MAX_STEPS}]")
        if self.diameter_offset is None:
            self.diameter_offset = self.params.death_diameter / 2.0

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "horizon": self.horizon,
            "seed": self.seed,
            "window": self.window,
            "diameter_offset": self.diameter_offset,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TumorSimConfig":
        d = dict(d)
        if "params" in d and isinstance(d["params"], dict):
            d["params"] = PkpdParams(**d["params"])
        return cls(**d)


@dataclass
class TumorTrajectory:
    """Observed volumes, binary treatment series, and the realized noise.

    `noise[t]` and the treatments at day t drive the transition to day t+1;
    `concentration[t]` is the chemo drug level effective on day t. Keeping
    the realized noise allows counterfactual futures to be noise-matched.
    """

    patient_id: str
    volumes: np.ndarray
    chemo: np.ndarray
    radio: np.ndarray
    noise: np.ndarray
    concentration: np.ndarray
    patient_static: dict

    @property
    def length(self) -> int:
        return self.volumes.size


@dataclass
class CounterfactualFuture:
    """A planned-treatment future sharing the factual prefix and noise."""

    patient_id: str
    origin: int
    chemo: np.ndarray     # [tau] actions on days origin .. origin+tau-1
    radio: np.ndarray
    volumes: np.ndarray   # [tau] ground truth at days origin+1 .. origin+tau
    prefix_volumes: np.ndarray  # factual volumes up to and including origin


def _growth_rate(v: float, planned: tuple[int, int], conc_prev: float, noise: float,
                 p: PkpdParams) -> tuple[float, float]:
    """Rate of dV/dt / V for one day plus the updated drug concentration."""
    chemo, radio = planned
    conc = conc_prev * 0.5 ** (1.0 / p.chemo_half_life) + p.chemo_dose * chemo
    dose = p.radio_dose * radio
    rate = (
        p.growth_rate * np.log(p.carrying_capacity / v)
        - p.chemo_kill * conc
        - (p.radio_alpha * dose + p.radio_beta * dose * dose)
        + noise
    )
    return rate, conc


def _euler_step(v: float, rate: float) -> float:
    nxt = v + rate * v
    if not np.isfinite(nxt):
        raise SimulationDiverged("tumor volume became non-finite")
    return nxt


def _policy_probability(diameters: list[float], gamma: float, window: int,
                        offset: float, d_max: float) -> float:
    recent = diameters[-window:]
    d_bar = float(np.mean(recent))
    logit = (gamma / d_max) * (d_bar - offset)
    return 1.0 / (1.0 + np.exp(-logit))


def simulate_patient(config: TumorSimConfig, rng: np.random.Generator,
                     patient_id: str) -> TumorTrajectory:
    p = config.params
    stage = int(rng.integers(1, 5))
    lo, hi = {1: (1.0, 2.0), 2: (2.0, 3.0), 3: (3.0, 4.0), 4: (4.0, 6.0)}[stage]
    d0 = float(rng.uniform(lo, hi))
    v = volume_from_diameter(d0)
    volumes = [v]
    chemo, radio, noise_seq, conc_seq = [], [], [], []
    conc = 0.0
    diameters = [float(diameter_from_volume(v))]
    for _ in range(config.horizon - 1):
        prob = _policy_probability(diameters, config.gamma, config.window,
                                   config.diameter_offset, p.death_diameter)
        a_c = int(rng.random() < prob)
        a_r = int(rng.random() < prob)
        e = float(rng.normal(0.0, p.noise_std)) if p.noise_std > 0 else 0.0
        rate, conc = _growth_rate(v, (a_c, a_r), conc, e, p)
        nxt = _euler_step(v, rate)
        chemo.append(a_c)
        radio.append(a_r)
        noise_seq.append(e)
        conc_seq.append(conc)
        if nxt > p.death_volume or nxt < p.recovery_volume:
            break
        v = nxt
        volumes.append(v)
        diameters.append(float(diameter_from_volume(v)))
    L = len(volumes)
    return TumorTrajectory(
        patient_id=patient_id,
        volumes=np.asarray(volumes),
        chemo=np.asarray(chemo[: L - 1] + [0], dtype=np.int64),
        radio=np.asarray(radio[: L - 1] + [0], dtype=np.int64),
        noise=np.asarray(noise_seq[: L - 1] + [0.0]),
        concentration=np.asarray(conc_seq[: L - 1] + [0.0]),
        patient_static={"stage": stage, "initial_diameter": d0},
    )


def simulate_cohort(config: TumorSimConfig) -> dict[str, list[TumorTrajectory]]:
    """Train/val/test cohorts; one RNG stream per patient id."""
    total = config.n_train + config.n_val + config.n_test
    streams = np.random.SeedSequence(config.seed).spawn(total)
    cohorts: dict[str, list[TumorTrajectory]] = {"train": [], "val": [], "test": []}
    bounds = [("train", config.n_train), ("val", config.n_val), ("test", config.n_test)]
    idx = 0
    for split, count in bounds:
        for _ in range(count):
            rng = np.random.default_rng(streams[idx])
            patient = simulate_patient(config, rng, patient_id=f"p{idx:06d}")
            # at least two observed steps so every trajectory has one transition
            while patient.length < 2:
                patient = simulate_patient(config, rng, patient_id=f"p{idx:06d}")
            cohorts[split].append(patient)
            idx += 1
    return cohorts


def tumor_to_trajectory(patient: TumorTrajectory) -> Trajectory:
    """Shared-format view: variables = [volume], conditions from treatments.

    The condition recorded at step t is the treatment applied on day t-1,
    i.e. the one whose effect lands at step t.
    """
    L = patient.length
    conditions: list[list[str]] = [[NULL_CONDITION]]
    for t in range(1, L):
        conditions.append([treatment_token(patient.chemo[t - 1], patient.radio[t - 1])])
    return Trajectory(
        id=patient.patient_id,
        timestamps=grid_timestamps(L),
        values=patient.volumes.reshape(-1, 1).copy(),
        conditions=conditions,
    )


def _rerun_window(patient: TumorTrajectory, origin: int, chemo_plan: np.ndarray,
                  radio_plan: np.ndarray, config: TumorSimConfig) -> np.ndarray:
    """Ground-truth volumes for a planned window, reusing the factual noise."""
    p = config.params
    tau = chemo_plan.size
    v = float(patient.volumes[origin])
    conc = float(patient.concentration[origin - 1]) if origin >= 1 else 0.0
    out = np.empty(tau)
    for k in range(tau):
        e = float(patient.noise[origin + k])
        rate, conc = _growth_rate(v, (int(chemo_plan[k]), int(radio_plan[k])), conc, e, p)
        v = _euler_step(v, rate)
        out[k] = v
    return out


def _valid_origins(patient: TumorTrajectory, tau_max: int) -> list[int]:
    """Origins with at least two observed steps and a full window ahead."""
    last = patient.length - 1 - tau_max
    return list(range(1, last + 1))


def make_single_sliding(patient: TumorTrajectory, tau_max: int, config: TumorSimConfig,
                        treatment: str = RADIO,
                        origins: list[int] | None = None) -> list[CounterfactualFuture]:
    """One future per (origin, offset): a single treatment at origin+offset.

    The factual noise draws over the window are reused, so with all
    treatment effects zeroed every future is identical.
    """
    if tau_max < 1:
        raise ClefError("tau_max must be >= 1")
    if treatment not in (CHEMO, RADIO):
        raise ClefError(f"treatment must be {CHEMO!r} or {RADIO!r}")
    if origins is None:
        origins = _valid_origins(patient, tau_max)
    futures = []
    for t in origins:
        if t + tau_max > patient.length - 1:
            raise ClefError("window exceeds the trajectory length")
        for offset in range(tau_max):
            chemo_plan = np.zeros(tau_max, dtype=np.int64)
            radio_plan = np.zeros(tau_max, dtype=np.int64)
            (chemo_plan if treatment == CHEMO else radio_plan)[offset] = 1
            volumes = _rerun_window(patient, t, chemo_plan, radio_plan, config)
            futures.append(CounterfactualFuture(
                patient_id=patient.patient_id,
                origin=t,
                chemo=chemo_plan,
                radio=radio_plan,
                volumes=volumes,
                prefix_volumes=patient.volumes[: t + 1].copy(),
            ))
    return futures


def make_random_trajectories(patient: TumorTrajectory, tau_max: int,
                             rng: np.random.Generator, config: TumorSimConfig,
                             n: int = 10,
                             origins: list[int] | None = None) -> list[CounterfactualFuture]:
    """n futures per origin with i.i.d. Bernoulli(0.5) treatment assignments."""
    if n < 1:
        raise ClefError("n must be >= 1")
    if origins is None:
        origins = _valid_origins(patient, tau_max)
    futures = []
    for t in origins:
        if t + tau_max > patient.length - 1:
            raise ClefError("window exceeds the trajectory length")
        for _ in range(n):
            chemo_plan = (rng.random(tau_max) < 0.5).astype(np.int64)
            radio_plan = (rng.random(tau_max) < 0.5).astype(np.int64)
            volumes = _rerun_window(patient, t, chemo_plan, radio_plan, config)
            futures.append(CounterfactualFuture(
                patient_id=patient.patient_id,
                origin=t,
                chemo=chemo_plan,
                radio=radio_plan,
                volumes=volumes,
                prefix_volumes=patient.volumes[: t + 1].copy(),
            ))
    return futures
