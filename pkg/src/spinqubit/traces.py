"""Synthetic single-shot charge-sensor traces.

A readout shot is a three-state continuous-time Markov chain (spin-up on the
dot, spin-down on the dot, empty dot) sampled exactly with the Gillespie
algorithm, mapped onto two sensor conductance levels, passed through a
single-pole low-pass filter and sampled with additive white Gaussian noise.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .physics import US_PER_S, PhysicalParams, RateSet, derive_rates


class ChargeSpinState(enum.IntEnum):
    UP_OCCUPIED = 0
    DOWN_OCCUPIED = 1
    EMPTY = 2


class Spin(str, enum.Enum):
    UP = "up"
    DOWN = "down"


UP = ChargeSpinState.UP_OCCUPIED
DOWN = ChargeSpinState.DOWN_OCCUPIED
EMPTY = ChargeSpinState.EMPTY

ALLOWED_EDGES = frozenset({(UP, EMPTY), (UP, DOWN), (DOWN, EMPTY), (EMPTY, UP), (EMPTY, DOWN)})


def _edge_rates(rates: RateSet) -> dict[ChargeSpinState, list[tuple[ChargeSpinState, float]]]:
    # per-µs rates out of each state
    s = 1.0 / US_PER_S
    return {
        UP: [(EMPTY, rates.up_out * s), (DOWN, rates.relax * s)],
        DOWN: [(EMPTY, rates.down_out * s)],
        EMPTY: [(UP, rates.up_in * s), (DOWN, rates.down_in * s)],
    }


@dataclass(frozen=True)
class StatePath:
    """Piecewise-constant hidden state on ``[0, duration]`` (times in µs)."""

    initial_state: ChargeSpinState
    transitions: tuple[tuple[float, ChargeSpinState], ...]
    duration: float

    def __post_init__(self) -> None:
        prev_t, prev_s = -math.inf, self.initial_state
        for t, s in self.transitions:
            if not t > prev_t:
                raise ValueError("transition times must be strictly increasing")
            if not 0.0 <= t <= self.duration:
                raise ValueError(f"transition at {t} outside [0, {self.duration}]")
            if (prev_s, s) not in ALLOWED_EDGES:
                raise ValueError(f"forbidden transition {prev_s.name} -> {s.name}")
            prev_t, prev_s = t, s

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.transitions], dtype=float)

    @property
    def states(self) -> list[ChargeSpinState]:
        return [self.initial_state] + [s for _, s in self.transitions]

    def state_at(self, t: float) -> ChargeSpinState:
        state = self.initial_state
        for tt, s in self.transitions:
            if tt > t:
                break
            state = s
        return state

    def segments(self) -> list[tuple[float, float, ChargeSpinState]]:
        """``(start, end, state)`` triples covering ``[0, duration]``."""
        out = []
        start, state = 0.0, self.initial_state
        for t, s in self.transitions:
            out.append((start, t, state))
            start, state = t, s
        out.append((start, self.duration, state))
        return out

    def first_entry(self, target: ChargeSpinState) -> float | None:
        for t, s in self.transitions:
            if s == target:
                return t
        return None

    def time_in(self, target: ChargeSpinState) -> float:
        return sum(e - s for s, e, st in self.segments() if st == target)


def sample_path(
    rates: RateSet,
    initial: ChargeSpinState,
    duration: float,
    rng: np.random.Generator,
) -> StatePath:
    """Exact Gillespie sample of the readout chain over ``duration`` µs."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    edges = _edge_rates(rates)
    t, state = 0.0, ChargeSpinState(initial)
    transitions: list[tuple[float, ChargeSpinState]] = []
    while True:
        out = edges[state]
        total = sum(r for _, r in out)
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > duration:
            break
        u = rng.random() * total
        for target, r in out:
            if u < r:
                break
            u -= r
        state = target
        transitions.append((t, state))
    return StatePath(initial, tuple(transitions), duration)


@dataclass
class ShotTrace:
    """One sampled sensor time series and the hidden path behind it."""

    samples: np.ndarray
    hidden_path: StatePath
    prepared_state: Spin | None
    seed: tuple[int, ...] | None
    sample_time: float  # µs
    settle_samples: int = 0

    @property
    def times(self) -> np.ndarray:
        """End time (µs) of each sampling interval."""
        return self.sample_time * np.arange(1, self.samples.size + 1)

    @property
    def duration(self) -> float:
        return self.hidden_path.duration


def n_samples_for(duration: float, sample_time: float) -> int:
    return int(math.ceil(duration / sample_time - 1e-9))


def _level(state: ChargeSpinState, params: PhysicalParams) -> float:
    return params.sensor_level_empty if state == EMPTY else params.sensor_level_occupied


def ideal_signal(path: StatePath, params: PhysicalParams) -> np.ndarray:
    """Unfiltered, noiseless level at each sample instant."""
    dt = params.sample_time
    times = dt * np.arange(1, n_samples_for(path.duration, dt) + 1)
    levels = np.array([_level(s, params) for s in path.states])
    idx = np.searchsorted(path.times, times, side="right")
    return levels[idx]


def filtered_signal(path: StatePath, params: PhysicalParams) -> np.ndarray:
    """Exact single-pole low-pass response sampled at each sample instant.

    The input is piecewise constant, so the filter output inside a segment
    of level ``L`` relaxes as ``L + (y0 - L) exp(-(t - t0)/tau)``. The filter
    starts settled at the initial level.
    """
    dt = params.sample_time
    n = n_samples_for(path.duration, dt)
    times = dt * np.arange(1, n + 1)
    tau = US_PER_S / (2.0 * math.pi * params.sensor_bandwidth)
    out = np.empty(n)
    y = _level(path.initial_state, params)
    lo = 0
    for start, end, state in path.segments():
        level = _level(state, params)
        hi = np.searchsorted(times, end, side="right") if end < path.duration else n
        if hi > lo:
            out[lo:hi] = level + (y - level) * np.exp(-(times[lo:hi] - start) / tau)
        y = level + (y - level) * math.exp(-(end - start) / tau)
        lo = hi
    return out


def render_trace(
    path: StatePath,
    params: PhysicalParams,
    rng: np.random.Generator | None,
    *,
    noise: bool = True,
    filtered: bool = True,
    prepared: Spin | None = None,
    seed: tuple[int, ...] | None = None,
) -> ShotTrace:
    """Turn a hidden path into a sampled sensor trace.

    Noise is white Gaussian with σ = |level_empty - level_occupied| / SNR,
    added after the filter at the output sampling rate.
    """
    samples = filtered_signal(path, params) if filtered else ideal_signal(path, params)
    if noise:
        samples = samples + rng.normal(0.0, params.noise_sigma, samples.size)
    return ShotTrace(
        samples=samples,
        hidden_path=path,
        prepared_state=prepared,
        seed=seed,
        sample_time=params.sample_time,
        settle_samples=n_samples_for(params.settle_time, params.sample_time),
    )


def sample_shot_path(
    params: PhysicalParams,
    prepared: Spin,
    duration: float,
    rng: np.random.Generator,
    rates: RateSet | None = None,
) -> StatePath:
    """Hidden path for one prepared shot.

    During the first ``settle_time`` µs the dot is still moving to the readout
    point: only T₁ relaxation acts. Tunneling starts once it has settled.
    """
    rates = derive_rates(params) if rates is None else rates
    start = UP if Spin(prepared) is Spin.UP else DOWN
    settle = min(params.settle_time, duration)
    transitions: list[tuple[float, ChargeSpinState]] = []
    state = start
    if state == UP and rates.relax > 0:
        t_relax = rng.exponential(US_PER_S / rates.relax)
        if t_relax < settle:
            transitions.append((t_relax, DOWN))
            state = DOWN
    if duration > settle:
        tail = sample_path(rates, state, duration - settle, rng)
        transitions.extend((settle + t, s) for t, s in tail.transitions)
    return StatePath(start, tuple(transitions), duration)


def prepare_and_read_shot(
    params: PhysicalParams,
    prepared: Spin,
    read_window: float,
    rng: np.random.Generator,
    *,
    rates: RateSet | None = None,
    noise: bool = True,
    filtered: bool = True,
    seed: tuple[int, ...] | None = None,
) -> ShotTrace:
    """Simulate one readout of a prepared spin over ``settle_time + read_window``."""
    duration = params.settle_time + read_window
    path = sample_shot_path(params, prepared, duration, rng, rates)
    return render_trace(
        path, params, rng, noise=noise, filtered=filtered, prepared=Spin(prepared), seed=seed
    )


def preparation_pattern(pattern: str | Sequence[Spin | str], n_shots: int) -> list[Spin]:
    """Expand ``"interleaved"``, ``"up"``, ``"down"`` or an explicit list."""
    if isinstance(pattern, str):
        if pattern == "interleaved":
            return [Spin.UP if k % 2 == 0 else Spin.DOWN for k in range(n_shots)]
        if pattern in ("up", "down"):
            return [Spin(pattern)] * n_shots
        raise ValueError(f"unknown preparation pattern {pattern!r}")
    seq = [Spin(p) for p in pattern]
    if len(seq) != n_shots:
        raise ValueError("explicit pattern length must equal n_shots")
    return seq


def shot_rng(base_seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, k]))


@dataclass(frozen=True)
class _BatchJob:
    params: PhysicalParams
    rates: RateSet | None
    read_window: float
    base_seed: int
    noise: bool
    filtered: bool


def _run_chunk(job: _BatchJob, items: list[tuple[int, Spin]]) -> list[ShotTrace]:
    out = []
    for k, spin in items:
        rng = shot_rng(job.base_seed, k)
        out.append(
            prepare_and_read_shot(
                job.params,
                spin,
                job.read_window,
                rng,
                rates=job.rates,
                noise=job.noise,
                filtered=job.filtered,
                seed=(job.base_seed, k),
            )
        )
    return out


def generate_batch(
    params: PhysicalParams,
    n_shots: int,
    pattern: str | Sequence[Spin | str] = "interleaved",
    base_seed: int = 0,
    *,
    read_window: float = 670.0,
    rates: RateSet | None = None,
    noise: bool = True,
    filtered: bool = True,
    workers: int = 1,
    first_index: int = 0,
) -> list[ShotTrace]:
    """Simulate ``n_shots`` readouts with per-shot seeds ``(base_seed, k)``.

    Shot ``k`` depends only on ``(params, base_seed, k)``, so the result is the
    same for any ``workers`` count.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    spins = preparation_pattern(pattern, n_shots)
    items = list(zip(range(first_index, first_index + n_shots), spins))
    job = _BatchJob(params, rates, read_window, base_seed, noise, filtered)
    if workers <= 1:
        return _run_chunk(job, items)
    size = math.ceil(len(items) / workers)
    chunks = [items[i : i + size] for i in range(0, len(items), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [job] * len(chunks), chunks)
        return [t for part in parts for t in part]


def stack_samples(traces: Iterable[ShotTrace]) -> np.ndarray:
    """Samples of equal-length traces as a ``(n_shots, n_samples)`` array."""
    return np.vstack([t.samples for t in traces])


TRACE_DUMP_SCHEMA = "spinqubit.traces/1"


def write_trace_dump(
    path: str | Path,
    traces: Sequence[ShotTrace],
    params: PhysicalParams,
    *,
    base_seed: int,
    read_window: float,
) -> tuple[Path, Path]:
    """Write samples as little-endian float32 plus a JSON sidecar.

    The binary file holds ``n_shots * n_samples`` values in shot-major order.
    """
    path = Path(path)
    data = stack_samples(traces).astype("<f4")
    path.write_bytes(data.tobytes(order="C"))
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {
        "schema": TRACE_DUMP_SCHEMA,
        "dtype": "float32",
        "byte_order": "little",
        "n_shots": int(data.shape[0]),
        "n_samples": int(data.shape[1]),
        "sample_time_us": params.sample_time,
        "settle_samples": traces[0].settle_samples,
        "read_window_us": read_window,
        "base_seed": base_seed,
        "seeds": [list(t.seed) if t.seed is not None else None for t in traces],
        "prepared": [t.prepared_state.value if t.prepared_state else None for t in traces],
        "params": asdict(params),
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


def read_trace_dump(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(meta["n_shots"], meta["n_samples"]), meta
