"""Single-qubit Clifford randomized benchmarking (RB) and interleaved RB.

Cliffords are compiled into the native set {±X, ±Y, X², Y²} (π/2 and π
rotations); the identity Clifford compiles to no gate at all. Sequences
start from spin-up, and the recovery Clifford makes the ideal net action the
identity, so an ideal run returns ``P↑ = 1``.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize

from .physics import PhysicalParams
from .qubit import (
    UP_STATE,
    QubitParams,
    gate_duration,
    gate_matrix,
    gate_rotation,
    p_up,
    stationary_detuning,
)

NATIVE_GATES = ("X", "-X", "Y", "-Y", "X2", "Y2")
IRB_GATES = ("X", "X2", "-X", "Y", "Y2", "-Y")
NOOP = ""


def _key(m: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.rint(m).ravel())


@dataclass(frozen=True)
class CliffordElement:
    index: int
    matrix: np.ndarray = field(repr=False, compare=False)
    gates: tuple[str, ...]


class CliffordGroup:
    """The 24 single-qubit Cliffords as SO(3) matrices with native-gate compilations."""

    def __init__(self) -> None:
        # breadth-first search gives a shortest compilation for every element
        start = np.eye(3)
        seen = {_key(start): (start, ())}
        queue = deque([_key(start)])
        while queue:
            key = queue.popleft()
            mat, gates = seen[key]
            for g in NATIVE_GATES:
                nxt = gate_matrix(g) @ mat
                k = _key(nxt)
                if k not in seen:
                    seen[k] = (np.rint(nxt), gates + (g,))
                    queue.append(k)
        items = sorted(seen.values(), key=lambda mg: (len(mg[1]), mg[1]))
        self.elements = [CliffordElement(i, m, g) for i, (m, g) in enumerate(items)]
        self._index = {_key(e.matrix): e.index for e in self.elements}
        n = len(self.elements)
        self.table = np.empty((n, n), dtype=int)
        for a in self.elements:
            for b in self.elements:
                self.table[a.index, b.index] = self.index_of(a.matrix @ b.matrix)
        self.inverse = np.array([self.index_of(e.matrix.T) for e in self.elements])
        self.gate_index = {g: self.index_of(gate_matrix(g)) for g in NATIVE_GATES}
        self.gate_index["I"] = 0

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> CliffordElement:
        return self.elements[i]

    def index_of(self, matrix: np.ndarray) -> int:
        try:
            return self._index[_key(matrix)]
        except KeyError:
            raise ValueError("matrix is not a Clifford rotation") from None

    def compose(self, first: int, then: int) -> int:
        """Index of applying ``first`` and then ``then``."""
        return int(self.table[then, first])

    @property
    def mean_gates(self) -> float:
        """Average number of native gates per Clifford."""
        return float(np.mean([len(e.gates) for e in self.elements]))

    def check_closure(self) -> bool:
        return bool(np.all((self.table >= 0) & (self.table < len(self))))


@lru_cache(maxsize=1)
def build_clifford_group() -> CliffordGroup:
    return CliffordGroup()


@dataclass(frozen=True)
class RBSequence:
    cliffords: tuple[int, ...]
    recovery: int
    interleaved: str | None

    def steps(self, group: CliffordGroup) -> list[tuple[str, bool, bool]]:
        """Flattened ``(gate, ends_clifford, interleaved)`` steps.

        The identity Clifford becomes a single no-op step so that per-Clifford
        noise still has a place to act.
        """
        out: list[tuple[str, bool, bool]] = []

        def add(gates: tuple[str, ...]) -> None:
            gates = gates or (NOOP,)
            out.extend((g, i == len(gates) - 1, False) for i, g in enumerate(gates))

        for c in self.cliffords:
            add(group[c].gates)
            if self.interleaved is not None:
                out.append((self.interleaved, False, True))
        add(group[self.recovery].gates)
        return out

    def gates(self, group: CliffordGroup) -> list[str]:
        return [g for g, _, _ in self.steps(group) if g]


def generate_rb_sequence(
    m: int, rng: np.random.Generator, interleaved: str | None = None, group: CliffordGroup | None = None
) -> RBSequence:
    """``m`` uniformly random Cliffords (each followed by ``interleaved``) plus recovery."""
    if m < 1:
        raise ValueError("sequence length must be >= 1")
    group = build_clifford_group() if group is None else group
    if interleaved is not None and interleaved not in group.gate_index:
        raise ValueError(f"unknown interleaved gate {interleaved!r}")
    cliffords = tuple(int(c) for c in rng.integers(0, len(group), size=m))
    net = 0
    for c in cliffords:
        net = group.compose(net, c)
        if interleaved is not None:
            net = group.compose(net, group.gate_index[interleaved])
    return RBSequence(cliffords, int(group.inverse[net]), interleaved)


# ---------------------------------------------------------------------------
# execution

_GATES = (NOOP, "I") + NATIVE_GATES
_CODE = {g: i for i, g in enumerate(_GATES)}


def _gate_tables(rabi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-code drive phase cosine/sine, drive on/off and duration (µs)."""
    cos_tab, sin_tab, drive_tab, dur_tab = (np.zeros(len(_GATES)) for _ in range(4))
    for i, g in enumerate(_GATES[1:], start=1):
        axis, _ = gate_rotation(g)
        driven = g != "I"
        cos_tab[i], sin_tab[i] = (axis[0], axis[1]) if driven else (0.0, 0.0)
        drive_tab[i] = float(driven)
        dur_tab[i] = gate_duration(g, rabi)
    return cos_tab, sin_tab, drive_tab, dur_tab


@dataclass(frozen=True)
class RBConfig:
    sequence_lengths: tuple[int, ...]
    sequences_per_length: int = 200
    shots_per_sequence: int = 100
    interleaved_gate: str | None = None
    readout_channel: str = "ideal"  # or "trace"
    depolarizing: float | None = None  # per-Clifford Bloch shrink, replaces qubit noise
    depolarizing_interleaved: float | None = None
    ideal_interleaved: bool = False  # interleaved gate applied instantly and noise-free
    bootstrap_resamples: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        lengths = tuple(int(m) for m in self.sequence_lengths)
        object.__setattr__(self, "sequence_lengths", lengths)
        if not lengths or any(b <= a for a, b in zip(lengths, lengths[1:])) or lengths[0] < 1:
            raise ValueError("sequence_lengths must be positive and strictly increasing")
        if self.sequences_per_length < 2:
            raise ValueError("need at least 2 sequences per length")
        if self.shots_per_sequence < 1:
            raise ValueError("need at least 1 shot per sequence")
        if self.readout_channel not in ("ideal", "trace"):
            raise ValueError("readout_channel must be 'ideal' or 'trace'")
        for p in (self.depolarizing, self.depolarizing_interleaved):
            if p is not None and not 0 <= p <= 1:
                raise ValueError("depolarizing parameters must lie in [0, 1]")
        if self.bootstrap_resamples < 100:
            raise ValueError("need at least 100 bootstrap resamples")

    def replace(self, **changes) -> "RBConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class _LengthJob:
    config: RBConfig
    qubit: QubitParams
    readout: PhysicalParams | None
    detection: object | None
    length_index: int


def _run_length(job: _LengthJob) -> np.ndarray:
    """Per-sequence mean return probability for one sequence length."""
    cfg, qubit = job.config, job.qubit
    m = cfg.sequence_lengths[job.length_index]
    k, shots = cfg.sequences_per_length, cfg.shots_per_sequence
    group = build_clifford_group()
    streams = np.random.SeedSequence([cfg.seed, job.length_index]).spawn(k + 2)
    seqs = [
        generate_rb_sequence(m, np.random.default_rng(streams[j]), cfg.interleaved_gate, group)
        for j in range(k)
    ]
    noise_rng = np.random.default_rng(streams[k])
    readout_ss = streams[k + 1]

    steps = [s.steps(group) for s in seqs]
    n_steps = max(len(s) for s in steps)
    codes = np.zeros((k, n_steps), dtype=np.intp)  # 0 is padding / no-op
    ends = np.zeros((k, n_steps), dtype=bool)
    inter = np.zeros((k, n_steps), dtype=bool)
    for j, st in enumerate(steps):
        for i, (g, end, il) in enumerate(st):
            codes[j, i], ends[j, i], inter[j, i] = _CODE[g], end, il

    rabi = qubit.rabi_frequency
    cos_tab, sin_tab, drive_tab, dur_tab = _gate_tables(rabi)
    # an injected depolarizing channel replaces the physical noise model
    noisy = cfg.depolarizing is None and not qubit.noiseless
    width = shots if noisy else 1  # noise-free shots of one sequence are identical
    det = stationary_detuning(qubit, (k, width), noise_rng) if noisy else np.zeros((k, width))
    ou = noisy and qubit.noise_model == "ou"
    # Bloch components kept as separate arrays: the inline Rodrigues update
    # below is several times faster than stacking into (..., 3) arrays
    vx, vy, vz = (np.full((k, width), c) for c in UP_STATE)
    two_pi = 2.0 * np.pi
    for i in range(n_steps):
        c = codes[:, i]
        if not c.any():
            continue
        dur = dur_tab[c]
        d = det
        if cfg.ideal_interleaved and inter[:, i].any():
            perfect = inter[:, i]
            d = np.where(perfect[:, None], 0.0, det)
            dur = np.where(perfect, 0.0, dur)
        drive = (rabi * drive_tab[c])[:, None]
        norm = np.sqrt(drive * drive + d * d)
        safe = np.where(norm > 0, norm, 1.0)
        nx = drive * cos_tab[c][:, None] / safe
        ny = drive * sin_tab[c][:, None] / safe
        nz = np.where(norm > 0, d / safe, 0.0)
        angle = two_pi * norm * dur_tab[c][:, None]
        cs, sn = np.cos(angle), np.sin(angle)
        dot = (nx * vx + ny * vy + nz * vz) * (1.0 - cs)
        vx, vy, vz = (
            vx * cs + (ny * vz - nz * vy) * sn + nx * dot,
            vy * cs + (nz * vx - nx * vz) * sn + ny * dot,
            vz * cs + (nx * vy - ny * vx) * sn + nz * dot,
        )
        if ou:
            a = np.exp(-dur / qubit.correlation_time)[:, None]
            det = det * a + qubit.sigma_f * np.sqrt(1.0 - a * a) * noise_rng.standard_normal(det.shape)
        for shrink, rows in ((cfg.depolarizing, ends[:, i]), (cfg.depolarizing_interleaved, inter[:, i])):
            if shrink is not None and rows.any():
                vx[rows] *= shrink
                vy[rows] *= shrink
                vz[rows] *= shrink

    v = np.broadcast_to(np.stack([vx, vy, vz], axis=-1), (k, shots, 3))
    prob = np.clip(p_up(v), 0.0, 1.0)
    if cfg.readout_channel == "ideal":
        outcome = np.random.default_rng(readout_ss).random((k, shots)) < prob
        return outcome.mean(axis=1)
    return _trace_readout(prob, job, readout_ss)


def _trace_readout(prob: np.ndarray, job: _LengthJob, ss: np.random.SeedSequence) -> np.ndarray:
    from .readout import DetectionConfig, detect_spin
    from .traces import Spin, prepare_and_read_shot

    params = job.readout or PhysicalParams()
    det_cfg = job.detection or DetectionConfig.for_params(params)
    k, shots = prob.shape
    rng = np.random.default_rng(ss)
    spins = rng.random((k, shots)) < prob
    out = np.empty(k)
    for j in range(k):
        hits = 0
        for s in range(shots):
            spin = Spin.UP if spins[j, s] else Spin.DOWN
            trace = prepare_and_read_shot(params, spin, det_cfg.read_window, rng)
            hits += detect_spin(trace, det_cfg) is Spin.UP
        out[j] = hits / shots
    return out


@dataclass
class RBDecayFit:
    amplitude: float
    decay: float
    offset: float
    fit_ok: bool = True
    message: str = ""
    bootstrap_decay: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def clifford_fidelity(self) -> float:
        return 1.0 - (1.0 - self.decay) / 2.0

    @property
    def decay_std(self) -> float:
        """Bootstrap spread of ``p`` over the resamples whose fit converged."""
        b = self.bootstrap_decay[np.isfinite(self.bootstrap_decay)]
        return float(np.std(b, ddof=1)) if b.size > 1 else math.nan

    @property
    def clifford_fidelity_std(self) -> float:
        return self.decay_std / 2.0


@dataclass
class RBResult:
    lengths: np.ndarray
    per_sequence: np.ndarray  # (n_lengths, k)
    fit: RBDecayFit
    config: RBConfig
    mean_gates_per_clifford: float

    @property
    def mean(self) -> np.ndarray:
        return self.per_sequence.mean(axis=1)

    @property
    def scatter_std(self) -> np.ndarray:
        return self.per_sequence.std(axis=1, ddof=1)

    @property
    def n_sequences(self) -> int:
        return self.per_sequence.shape[1]

    @property
    def gate_fidelity_estimate(self) -> float:
        """Clifford infidelity spread evenly over the native gates of a Clifford."""
        return 1.0 - (1.0 - self.fit.clifford_fidelity) / self.mean_gates_per_clifford

    def rows(self) -> list[tuple[int, float, float, int]]:
        return [
            (int(m), float(p), float(s), self.n_sequences)
            for m, p, s in zip(self.lengths, self.mean, self.scatter_std)
        ]


def fit_rb_decay(
    lengths: np.ndarray, mean: np.ndarray, std: np.ndarray, k: int, shots: int | None = None
) -> RBDecayFit:
    """Weighted least squares of ``P(m) = A pᵐ + B`` (all three parameters free).

    Weights are the standard errors ``std/√k``. A length where every sequence
    returned the same value would get infinite weight, so the error is
    floored at one count, ``1/(shots √k)``.
    """
    m = np.asarray(lengths, float)
    y = np.asarray(mean, float)
    if np.ptp(y) < 1e-12:
        return RBDecayFit(0.0, 1.0, float(y.mean()))
    floor = 1.0 / (shots * math.sqrt(k)) if shots else 1e-6
    sigma = np.maximum(np.asarray(std, float) / math.sqrt(k), floor)
    b0 = float(y[-1])
    a0 = float(y[0] - b0) or 1e-3
    # log-linear guess from the first two points
    ratio = (y[1] - b0) / (y[0] - b0) if len(y) > 1 and y[0] != b0 else 0.5
    p0 = float(np.clip(ratio, 1e-3, 1.0) ** (1.0 / max(m[1] - m[0], 1.0))) if len(y) > 1 else 0.99
    p0 = min(max(p0, 1e-3), 1.0 - 1e-9)
    try:
        popt, _ = optimize.curve_fit(
            lambda x, a, p, b: a * p**x + b,
            m, y, p0=[a0, p0, b0], sigma=sigma,
            bounds=([-1.0, 0.0, 0.0], [1.0, 1.0, 1.0]), maxfev=2000,
        )
    except (RuntimeError, ValueError) as exc:
        return RBDecayFit(math.nan, math.nan, math.nan, False, str(exc))
    a, p, b = (float(v) for v in popt)
    return RBDecayFit(a, p, b)


def bootstrap_ci(
    lengths: np.ndarray,
    per_sequence: np.ndarray,
    resamples: int,
    rng: np.random.Generator,
    shots: int | None = None,
) -> np.ndarray:
    """Decay parameters refitted on sequences resampled with replacement per length.

    Resamples whose fit fails are returned as NaN.
    """
    if resamples < 100:
        raise ValueError("need at least 100 resamples")
    n_len, k = per_sequence.shape
    out = np.empty(resamples)
    for r in range(resamples):
        idx = rng.integers(0, k, size=(n_len, k))
        sample = np.take_along_axis(per_sequence, idx, axis=1)
        fit = fit_rb_decay(lengths, sample.mean(axis=1), sample.std(axis=1, ddof=1), k, shots)
        out[r] = fit.decay
    return out


def run_rb(
    config: RBConfig,
    qubit: QubitParams,
    readout: PhysicalParams | None = None,
    detection=None,
    *,
    workers: int = 1,
) -> RBResult:
    """Execute all sequences, fit the decay and bootstrap its uncertainty.

    Each sequence length is an independent work unit seeded from
    ``(config.seed, length_index)``, so results do not depend on ``workers``.
    """
    jobs = [_LengthJob(config, qubit, readout, detection, i) for i in range(len(config.sequence_lengths))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_length, jobs))
    else:
        rows = [_run_length(j) for j in jobs]
    per_seq = np.vstack(rows)
    lengths = np.array(config.sequence_lengths)
    k = config.sequences_per_length
    shots = config.shots_per_sequence
    fit = fit_rb_decay(lengths, per_seq.mean(axis=1), per_seq.std(axis=1, ddof=1), k, shots)
    if fit.fit_ok:
        boot_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB007]))
        fit.bootstrap_decay = bootstrap_ci(lengths, per_seq, config.bootstrap_resamples, boot_rng, shots)
    return RBResult(lengths, per_seq, fit, config, build_clifford_group().mean_gates)


@dataclass
class IRBResult:
    gate: str
    reference: RBResult
    interleaved: RBResult

    @property
    def p_ref(self) -> float:
        return self.reference.fit.decay

    @property
    def p_int(self) -> float:
        return self.interleaved.fit.decay

    @property
    def gate_decay(self) -> float:
        return self.p_int / self.p_ref

    @property
    def gate_fidelity(self) -> float:
        return irb_gate_fidelity(self.p_ref, self.p_int)

    @property
    def gate_fidelity_samples(self) -> np.ndarray:
        a = self.reference.fit.bootstrap_decay
        b = self.interleaved.fit.bootstrap_decay
        n = min(a.size, b.size)
        return 1.0 - (1.0 - b[:n] / a[:n]) / 2.0

    @property
    def gate_fidelity_std(self) -> float:
        s = self.gate_fidelity_samples
        s = s[np.isfinite(s)]
        return float(np.std(s, ddof=1)) if s.size > 1 else math.nan


def irb_gate_fidelity(p_ref: float, p_int: float) -> float:
    return 1.0 - (1.0 - p_int / p_ref) / 2.0


def run_irb(
    gate: str,
    config: RBConfig,
    qubit: QubitParams,
    readout: PhysicalParams | None = None,
    detection=None,
    *,
    reference: RBResult | None = None,
    workers: int = 1,
) -> IRBResult:
    """Reference and interleaved runs sharing lengths, sequence count and shots."""
    ref_cfg = config.replace(interleaved_gate=None)
    if reference is None:
        reference = run_rb(ref_cfg, qubit, readout, detection, workers=workers)
    elif reference.config.sequence_lengths != config.sequence_lengths:
        raise ValueError("reference run uses different sequence lengths")
    inter = run_rb(config.replace(interleaved_gate=gate), qubit, readout, detection, workers=workers)
    result = IRBResult(gate, reference, inter)
    spread = math.hypot(reference.fit.decay_std, inter.fit.decay_std)
    if np.isfinite(spread) and result.p_int > result.p_ref + spread:
        warnings.warn(
            f"interleaved decay {result.p_int:.6f} exceeds reference {result.p_ref:.6f} "
            "beyond the bootstrap spread (finite-sampling artifact)",
            RuntimeWarning,
            stacklevel=2,
        )
    return result


def default_lengths(max_length: int = 4096) -> tuple[int, ...]:
    out, m = [], 1
    while m <= max_length:
        out.append(m)
        m *= 2
    return tuple(out)


def decay_curve(lengths: Sequence[int], fit: RBDecayFit) -> np.ndarray:
    return fit.amplitude * fit.decay ** np.asarray(lengths, float) + fit.offset
