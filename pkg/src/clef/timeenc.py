"""Time positional embeddings: sinusoidal year term plus learned
month/day/hour lookup tables, and the benchmark timestamp grid."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, gather_rows, subtract
from .errors import ClefError

REFERENCE_YEAR = 2000
GRID_ORIGIN = (2000, 1, 1, 0)
ISO_FORMAT = "%Y-%m-%dT%H:%M"


@dataclass(frozen=True, order=True)
class Timestamp:
    """Calendar timestamp at hour resolution."""

    year: int
    month: int
    day: int
    hour: int

    def __post_init__(self):
        try:
            _dt.datetime(self.year, self.month, self.day)
        except ValueError as exc:
            raise ClefError(f"invalid calendar date: {self}") from exc
        if not 0 <= self.hour <= 23:
            raise ClefError(f"hour out of range: {self.hour}")

    def to_datetime(self) -> _dt.datetime:
        return _dt.datetime(self.year, self.month, self.day, self.hour)

    @classmethod
    def from_datetime(cls, dt: _dt.datetime) -> "Timestamp":
        return cls(dt.year, dt.month, dt.day, dt.hour)

    def add_hours(self, hours: int) -> "Timestamp":
        return Timestamp.from_datetime(self.to_datetime() + _dt.timedelta(hours=hours))

    def iso(self) -> str:
        return f"{self.year:04d}-{self.month:02d}-{self.day:02d}T{self.hour:02d}:00"


def parse_timestamp(text: str) -> Timestamp:
    try:
        dt = _dt.datetime.strptime(text, ISO_FORMAT)
    except ValueError as exc:
        raise ClefError(f"timestamp {text!r} is not ISO-8601 truncated to hours") from exc
    if dt.minute != 0:
        raise ClefError(f"timestamp {text!r} has sub-hour resolution")
    return Timestamp.from_datetime(dt)


def step_to_timestamp(t_index: int) -> Timestamp:
    """Benchmark grid: step 0 at 2000-01-01T00:00, step i adds 10*i hours."""
    if t_index < 0:
        raise ClefError("step index must be >= 0")
    total_hours = 10 * t_index * (t_index + 1) // 2
    return Timestamp(*GRID_ORIGIN).add_hours(total_hours)


def grid_timestamps(length: int) -> list[Timestamp]:
    return [step_to_timestamp(i) for i in range(length)]


def next_grid_timestamp(timestamps: list[Timestamp]) -> Timestamp:
    """Continue the benchmark grid after a history.

    If the last timestamp sits on the grid at index L-1 the next point is
    step L; otherwise the same increment rule (10 hours times the next
    position count) is applied to the last timestamp.
    """
    if not timestamps:
        return step_to_timestamp(0)
    n = len(timestamps)
    if timestamps[-1] == step_to_timestamp(n - 1):
        return step_to_timestamp(n)
    return timestamps[-1].add_hours(10 * n)


def sinusoidal(position: float, dim: int) -> np.ndarray:
    """Alternating sin/cos positional encoding with base 10000."""
    return sinusoidal_batch(np.asarray([position]), dim)[0]


def sinusoidal_batch(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encodings for an array of positions, shape [B, dim]."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    enc = np.zeros((positions.shape[0], dim), dtype=np.float64)
    half = (dim + 1) // 2
    idx = np.arange(half, dtype=np.float64)
    freqs = 1.0 / np.power(10000.0, 2.0 * idx / dim)
    enc[:, 0::2] = np.sin(positions * freqs)
    enc[:, 1::2] = np.cos(positions * freqs[: dim // 2])
    return enc


def time_index(t: Timestamp, reference_year: int = REFERENCE_YEAR) -> np.ndarray:
    """Lookup indices (month-1, day-1, hour, year-offset) for one timestamp."""
    return np.array([t.month - 1, t.day - 1, t.hour, t.year - reference_year], dtype=np.int64)


def time_index_matrix(timestamps: list[Timestamp],
                      reference_year: int = REFERENCE_YEAR) -> np.ndarray:
    return np.stack([time_index(t, reference_year) for t in timestamps])


@dataclass
class TimeTables:
    """Learned month/day/hour embeddings plus the sinusoidal year term."""

    dim: int
    month: Tensor
    day: Tensor
    hour: Tensor
    reference_year: int = REFERENCE_YEAR

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, init_scale: float = 0.02) -> "TimeTables":
        def table(rows):
            return Tensor(init_scale * rng.standard_normal((rows, dim)), requires_grad=True)

        return cls(dim=dim, month=table(12), day=table(31), hour=table(24))

    @classmethod
    def zeros(cls, dim: int) -> "TimeTables":
        return cls(
            dim=dim,
            month=Tensor(np.zeros((12, dim)), requires_grad=True),
            day=Tensor(np.zeros((31, dim)), requires_grad=True),
            hour=Tensor(np.zeros((24, dim)), requires_grad=True),
        )

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("time.month", self.month), ("time.day", self.day), ("time.hour", self.hour)]

    def year_term(self, year_offsets: np.ndarray) -> np.ndarray:
        """Sinusoidal rows for integer year offsets (cached per offset)."""
        cache = getattr(self, "_sin_cache", None)
        if cache is None:
            cache = {}
            self._sin_cache = cache
        unique = np.unique(year_offsets)
        for pos in unique:
            key = int(pos)
            if key not in cache:
                cache[key] = sinusoidal(float(key), self.dim)
        if unique.size == 1:
            return np.tile(cache[int(unique[0])], (year_offsets.size, 1))
        out = np.empty((year_offsets.size, self.dim))
        for pos in unique:
            out[year_offsets == pos] = cache[int(pos)]
        return out

    def embed_indices(self, idx: np.ndarray) -> Tensor:
        """Embeddings from an index matrix [B, 4]; rows (month, day, hour, year)."""
        emb = add(gather_rows(self.month, idx[:, 0]), gather_rows(self.day, idx[:, 1]))
        emb = add(emb, gather_rows(self.hour, idx[:, 2]))
        return add(emb, Tensor(self.year_term(idx[:, 3])))

    def embed_batch(self, timestamps: list[Timestamp]) -> Tensor:
        """Embeddings for a batch of timestamps, shape [B, dim]; on tape."""
        if not timestamps:
            raise ClefError("embed_batch: empty timestamp list")
        return self.embed_indices(time_index_matrix(timestamps, self.reference_year))


def encode_time(t: Timestamp, tables: TimeTables) -> Tensor:
    """Single-timestamp embedding, shape [dim]."""
    emb = add(
        gather_rows(tables.month, np.int64(t.month - 1)),
        gather_rows(tables.day, np.int64(t.day - 1)),
    )
    emb = add(emb, gather_rows(tables.hour, np.int64(t.hour)))
    return add(emb, Tensor(sinusoidal(t.year - tables.reference_year, tables.dim)))


def time_delta(t_i: Timestamp, t_j: Timestamp, tables: TimeTables) -> Tensor:
    """Delta embedding h_{t_j} - h_{t_i}, shape [dim]."""
    return subtract(encode_time(t_j, tables), encode_time(t_i, tables))


def delta_batch(t_i: list[Timestamp], t_j: list[Timestamp], tables: TimeTables) -> Tensor:
    """Batched delta embeddings, shape [B, dim]."""
    if len(t_i) != len(t_j):
        raise ClefError("delta_batch: mismatched timestamp lists")
    return subtract(tables.embed_batch(t_j), tables.embed_batch(t_i))
