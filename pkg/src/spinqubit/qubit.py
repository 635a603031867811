"""Driven spin-1/2 in the rotating frame with longitudinal frequency noise.

States are Bloch vectors with the spin-down (initialized) state on the
north pole, so ``P↑ = (1 - z) / 2``. Frequencies are in MHz, times in µs,
so a rotation at frequency ``f`` for ``t`` turns by ``2π f t`` radians.
All propagators are exact rotations; noise enters only as a detuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

NOISE_MODELS = ("none", "quasistatic", "ou")

DOWN_STATE = np.array([0.0, 0.0, 1.0])
UP_STATE = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class QubitParams:
    rabi_frequency: float = 2.0  # MHz
    resonance_frequency: float = 19.105  # GHz, metadata
    t2_star: float = 3.2  # µs
    t2_hahn: float = 139.0  # µs
    noise_model: str = "ou"
    sigma_f: float = 0.0698  # MHz, rms detuning
    correlation_time: float = 4.27e4  # µs

    def __post_init__(self) -> None:
        if not self.rabi_frequency > 0:
            raise ValueError("rabi_frequency must be positive")
        if not 0 < self.t2_star <= self.t2_hahn:
            raise ValueError("need 0 < t2_star <= t2_hahn")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"noise_model must be one of {NOISE_MODELS}")
        if self.sigma_f < 0 or not self.correlation_time > 0:
            raise ValueError("need sigma_f >= 0 and correlation_time > 0")

    def replace(self, **changes) -> "QubitParams":
        from dataclasses import replace

        return replace(self, **changes)

    @property
    def noiseless(self) -> bool:
        return self.noise_model == "none" or self.sigma_f == 0


@dataclass(frozen=True)
class QubitState:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if math.hypot(self.x, self.y, self.z) > 1 + 1e-9:
            raise ValueError("Bloch vector longer than 1")

    @classmethod
    def down(cls) -> "QubitState":
        return cls(0.0, 0.0, 1.0)

    @classmethod
    def from_vector(cls, v) -> "QubitState":
        return cls(*(float(c) for c in v))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def p_up(self) -> float:
        return 0.5 * (1.0 - self.z)


def p_up(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.asarray(v)[..., 2])


def rotate(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of Bloch vectors, broadcasting over leading axes.

    ``axis`` need not be normalized; a zero axis leaves ``v`` unchanged.
    """
    v = np.asarray(v, dtype=float)
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    n = np.divide(axis, norm, out=np.zeros_like(axis), where=norm > 0)
    angle = np.asarray(angle, dtype=float)[..., None]
    c, s = np.cos(angle), np.sin(angle)
    dot = np.sum(n * v, axis=-1, keepdims=True)
    return v * c + np.cross(n, v) * s + n * dot * (1.0 - c)


def rotation_matrices(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Batched SO(3) matrices ``c I + s [n]x + (1 - c) n nᵀ``."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    n = np.divide(axis, norm, out=np.zeros_like(axis), where=norm > 0)
    angle = np.asarray(angle, dtype=float)[..., None, None]
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros(n.shape[:-1])
    cross = np.stack(
        [
            np.stack([zero, -n[..., 2], n[..., 1]], axis=-1),
            np.stack([n[..., 2], zero, -n[..., 0]], axis=-1),
            np.stack([-n[..., 1], n[..., 0], zero], axis=-1),
        ],
        axis=-2,
    )
    outer = n[..., :, None] * n[..., None, :]
    return c * np.eye(3) + s * cross + (1.0 - c) * outer


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    return rotation_matrices(np.asarray(axis, float), np.asarray(angle, float))


def evolve_driven(
    state: QubitState | np.ndarray,
    detuning: float | np.ndarray,
    rabi: float,
    duration: float,
    phase: float = 0.0,
) -> QubitState | np.ndarray:
    """Constant drive: rotate about ``(Ω cos φ, Ω sin φ, Δ)`` by ``2π Ω_eff t``."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    vec = state.vector if isinstance(state, QubitState) else np.asarray(state, float)
    detuning = np.asarray(detuning, dtype=float)
    axis = np.stack(
        np.broadcast_arrays(rabi * math.cos(phase), rabi * math.sin(phase), detuning), axis=-1
    )
    angle = 2.0 * math.pi * np.sqrt(rabi**2 + detuning**2) * duration
    out = rotate(vec, axis, angle)
    return QubitState.from_vector(out) if isinstance(state, QubitState) else out


def rabi_p_up(detuning, rabi: float, duration):
    """Closed-form ``P↑`` after driving from spin-down."""
    detuning = np.asarray(detuning, dtype=float)
    w2 = rabi**2 + detuning**2
    return rabi**2 / w2 * np.sin(math.pi * np.sqrt(w2) * np.asarray(duration, float)) ** 2


def chevron(
    params: QubitParams,
    detunings: Sequence[float],
    durations: Sequence[float],
    shots: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """``P↑`` grid, shape ``(len(detunings), len(durations))``.

    With ``shots > 0`` and a noisy ``params`` the result is averaged over
    ``shots`` stationary detuning draws, each held fixed during the pulse.
    """
    d = np.asarray(detunings, float)[:, None]
    t = np.asarray(durations, float)[None, :]
    d, t = np.broadcast_arrays(d, t)
    if shots <= 0 or params.noiseless:
        offsets = np.zeros(1)
    else:
        rng = np.random.default_rng() if rng is None else rng
        offsets = stationary_detuning(params, shots, rng)
    total = np.zeros(d.shape)
    for off in offsets:
        dd = d + off
        axis = np.stack(np.broadcast_arrays(params.rabi_frequency, 0.0, dd), axis=-1)
        angle = 2.0 * math.pi * np.sqrt(params.rabi_frequency**2 + dd**2) * t
        total += p_up(rotate(np.broadcast_to(DOWN_STATE, d.shape + (3,)), axis, angle))
    return total / offsets.size


# ---------------------------------------------------------------------------
# gates

GATE_LABELS = ("I", "X", "-X", "Y", "-Y", "X2", "Y2")

# drive phase and rotation in quarter turns
_GATE_SPEC = {
    "I": (None, 1),
    "X": (0.0, 1),
    "-X": (math.pi, 1),
    "Y": (0.5 * math.pi, 1),
    "-Y": (1.5 * math.pi, 1),
    "X2": (0.0, 2),
    "Y2": (0.5 * math.pi, 2),
}


def gate_duration(gate: str, rabi: float) -> float:
    """π/2 gates (and idle) last 1/(4Ω); π gates last 1/(2Ω)."""
    return _GATE_SPEC[gate][1] / (4.0 * rabi)


def gate_rotation(gate: str) -> tuple[np.ndarray, float]:
    """Ideal axis and angle of a gate label."""
    phase, quarters = _GATE_SPEC[gate]
    if phase is None:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return np.array([math.cos(phase), math.sin(phase), 0.0]), quarters * 0.5 * math.pi


def gate_matrix(gate: str) -> np.ndarray:
    axis, angle = gate_rotation(gate)
    return rotation_matrix(axis, angle)


def gate_axis_angle(gate: str, rabi: float, detuning: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Actual rotation of a finite gate under a constant detuning (MHz)."""
    detuning = np.asarray(detuning, dtype=float)
    phase, quarters = _GATE_SPEC[gate]
    t = gate_duration(gate, rabi)
    if phase is None:
        axis = np.stack(np.broadcast_arrays(0.0, 0.0, np.ones_like(detuning)), axis=-1)
        return axis, 2.0 * math.pi * detuning * t
    axis = np.stack(
        np.broadcast_arrays(rabi * math.cos(phase), rabi * math.sin(phase), detuning), axis=-1
    )
    return axis, 2.0 * math.pi * np.sqrt(rabi**2 + detuning**2) * t


def apply_gate(
    state: QubitState | np.ndarray,
    gate: str,
    params: QubitParams,
    detuning: float | np.ndarray = 0.0,
) -> QubitState | np.ndarray:
    """Apply a hard rectangular gate with the frequency-noise sample as detuning."""
    if gate not in _GATE_SPEC:
        raise ValueError(f"unknown gate {gate!r}")
    vec = state.vector if isinstance(state, QubitState) else np.asarray(state, float)
    axis, angle = gate_axis_angle(gate, params.rabi_frequency, detuning)
    out = rotate(vec, axis, angle)
    return QubitState.from_vector(out) if isinstance(state, QubitState) else out


def average_gate_fidelity(rotation_error: np.ndarray) -> np.ndarray:
    """Average gate fidelity of a unitary whose SO(3) error is ``rotation_error``.

    ``F = (2 + |Tr U|²) / 6`` with ``|Tr U|² = 1 + Tr R``.
    """
    tr = np.trace(rotation_error, axis1=-2, axis2=-1)
    return (3.0 + tr) / 6.0


def gate_fidelity_monte_carlo(
    gate: str, params: QubitParams, n_samples: int, rng: np.random.Generator
) -> float:
    """Noise-averaged fidelity of one gate, detuning drawn from the stationary noise."""
    ideal = gate_matrix(gate)
    det = stationary_detuning(params, n_samples, rng)
    axis, angle = gate_axis_angle(gate, params.rabi_frequency, det)
    err = ideal.T[None] @ rotation_matrices(axis, angle)
    return float(average_gate_fidelity(err).mean())


# ---------------------------------------------------------------------------
# frequency noise


def stationary_detuning(params: QubitParams, size, rng: np.random.Generator) -> np.ndarray:
    if params.noiseless:
        return np.zeros(size)
    return rng.normal(0.0, params.sigma_f, size)


def advance_detuning(x: np.ndarray, dt: float, params: QubitParams, rng: np.random.Generator) -> np.ndarray:
    """Step the detuning forward by ``dt`` µs (exact OU update)."""
    if params.noise_model != "ou" or params.sigma_f == 0 or dt == 0:
        return x
    a = math.exp(-dt / params.correlation_time)
    return x * a + params.sigma_f * math.sqrt(-math.expm1(-2.0 * dt / params.correlation_time)) * rng.standard_normal(np.shape(x))


def ou_segment(
    x0: np.ndarray, duration: float, sigma: float, tau: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Exact joint sample of an OU process end value and its time integral.

    For stationary variance ``sigma²`` and correlation time ``tau``, given
    ``x0`` the pair ``(x_T, ∫ x dt)`` is Gaussian with

    * mean ``(x0 e^{-T/τ}, x0 τ (1 - e^{-T/τ}))``
    * ``Var x_T = σ² (1 - e^{-2T/τ})``
    * ``Var I = σ² τ² (2T/τ - 3 + 4 e^{-T/τ} - e^{-2T/τ})``
    * ``Cov = σ² τ (1 - e^{-T/τ})²``
    """
    x0 = np.asarray(x0, dtype=float)
    if duration == 0 or sigma == 0:
        return x0.copy(), x0 * duration
    r = duration / tau
    e1 = math.exp(-r)
    m1 = -math.expm1(-r)
    var_x = sigma**2 * -math.expm1(-2.0 * r)
    if r < 1e-2:
        # series avoids cancellation when tau >> duration
        var_i = sigma**2 * tau**2 * r**3 * (2.0 / 3.0 - r / 2.0 + 7.0 * r * r / 30.0)
    else:
        var_i = sigma**2 * tau**2 * (2.0 * r - 3.0 + 4.0 * e1 - e1 * e1)
    cov = sigma**2 * tau * m1 * m1
    z1 = rng.standard_normal(x0.shape)
    z2 = rng.standard_normal(x0.shape)
    sx = math.sqrt(var_x)
    c = cov / sx if sx > 0 else 0.0
    resid = math.sqrt(max(var_i - c * c, 0.0))
    x1 = x0 * e1 + sx * z1
    integral = x0 * tau * m1 + c * z1 + resid * z2
    return x1, integral


def free_phase(
    x0: np.ndarray, duration: float, params: QubitParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Detuning after ``duration`` and accumulated phase (rad) along the way."""
    x0 = np.asarray(x0, dtype=float)
    if params.noise_model == "ou" and params.sigma_f > 0:
        x1, integral = ou_segment(x0, duration, params.sigma_f, params.correlation_time, rng)
        return x1, 2.0 * math.pi * integral
    return x0, 2.0 * math.pi * x0 * duration


# ---------------------------------------------------------------------------
# coherence experiments


@dataclass
class DecayResult:
    delays: np.ndarray
    p_up: np.ndarray
    time_constant: float  # µs, nan if the fit failed
    amplitude: float
    exponent: float
    fit_ok: bool
    message: str = ""

    def envelope(self, t=None) -> np.ndarray:
        t = self.delays if t is None else np.asarray(t, float)
        if not self.fit_ok:
            return np.full(np.shape(t), np.nan)
        return 0.5 + 0.5 * self.amplitude * np.exp(-((t / self.time_constant) ** self.exponent))

    def rows(self) -> list[tuple[float, float, float]]:
        env = self.envelope()
        return [(float(d), float(p), float(e)) for d, p, e in zip(self.delays, self.p_up, env)]


def _fit_decay(delays, p, exponent: float | None) -> tuple[float, float, float, bool, str]:
    y = 2.0 * (np.asarray(p) - 0.5)
    t = np.asarray(delays, float)
    # first guess: where the contrast falls through 1/e
    below = np.flatnonzero(y < y[0] / math.e) if y[0] > 0 else np.array([], int)
    t0 = t[below[0]] if below.size else t[-1]
    try:
        if exponent is None:
            popt, _ = optimize.curve_fit(
                lambda t, a, tc, n: a * np.exp(-((t / tc) ** n)),
                t, y, p0=[max(y[0], 0.1), t0, 2.0],
                bounds=([0.0, 1e-9, 0.5], [1.5, np.inf, 6.0]), maxfev=20000,
            )
            a, tc, n = popt
        else:
            popt, _ = optimize.curve_fit(
                lambda t, a, tc: a * np.exp(-((t / tc) ** exponent)),
                t, y, p0=[max(y[0], 0.1), t0],
                bounds=([0.0, 1e-9], [1.5, np.inf]), maxfev=20000,
            )
            (a, tc), n = popt, exponent
    except (RuntimeError, ValueError) as exc:
        return math.nan, math.nan, math.nan, False, str(exc)
    if not np.isfinite(tc) or tc > 1e3 * t[-1]:
        return float(tc), float(a), float(n), False, "no resolvable decay"
    return float(tc), float(a), float(n), True, ""


def ramsey_signal(
    params: QubitParams, delays: Sequence[float], shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Noise-averaged ``P↑`` for X – wait – X with instantaneous pulses."""
    x_axis = np.array([1.0, 0.0, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    out = []
    for d in delays:
        v = np.broadcast_to(DOWN_STATE, (shots, 3))
        v = rotate(v, x_axis, np.full(shots, 0.5 * math.pi))
        x0 = stationary_detuning(params, shots, rng)
        _, phi = free_phase(x0, float(d), params, rng)
        v = rotate(v, z_axis, phi)
        v = rotate(v, x_axis, np.full(shots, 0.5 * math.pi))
        out.append(p_up(v).mean())
    return np.array(out)


def hahn_signal(
    params: QubitParams, delays: Sequence[float], shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Noise-averaged ``P↑`` for X – τ/2 – X² – τ/2 – (−X), instantaneous pulses."""
    x_axis = np.array([1.0, 0.0, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    out = []
    for d in delays:
        v = np.broadcast_to(DOWN_STATE, (shots, 3))
        v = rotate(v, x_axis, np.full(shots, 0.5 * math.pi))
        x = stationary_detuning(params, shots, rng)
        x, phi1 = free_phase(x, 0.5 * float(d), params, rng)
        v = rotate(v, z_axis, phi1)
        v = rotate(v, x_axis, np.full(shots, math.pi))
        x, phi2 = free_phase(x, 0.5 * float(d), params, rng)
        v = rotate(v, z_axis, phi2)
        v = rotate(v, x_axis, np.full(shots, -0.5 * math.pi))
        out.append(p_up(v).mean())
    return np.array(out)


def run_ramsey(
    params: QubitParams, delays: Sequence[float], shots: int, rng: np.random.Generator
) -> DecayResult:
    """Ramsey decay with a Gaussian envelope fit ``exp(-(t/T₂*)²)``."""
    delays = np.asarray(delays, float)
    if np.any(delays <= 0):
        raise ValueError("delays must be positive")
    p = ramsey_signal(params, delays, shots, rng)
    tc, a, n, ok, msg = _fit_decay(delays, p, 2.0)
    return DecayResult(delays, p, tc, a, n, ok, msg)


def run_hahn(
    params: QubitParams, delays: Sequence[float], shots: int, rng: np.random.Generator
) -> DecayResult:
    """Hahn-echo decay fitted with a stretched exponential ``exp(-(t/T)^n)``."""
    if params.noise_model == "quasistatic":
        raise ValueError("Hahn echo needs time-correlated (OU) noise; quasi-static noise refocuses fully")
    delays = np.asarray(delays, float)
    if np.any(delays <= 0):
        raise ValueError("delays must be positive")
    p = hahn_signal(params, delays, shots, rng)
    tc, a, n, ok, msg = _fit_decay(delays, p, None)
    return DecayResult(delays, p, tc, a, n, ok, msg)


def ramsey_delays(t2_star: float, n: int = 24) -> np.ndarray:
    return np.linspace(0.05, 2.5, n) * t2_star


def hahn_delays(t2_hahn: float, n: int = 24) -> np.ndarray:
    return np.linspace(0.05, 2.0, n) * t2_hahn


@dataclass(frozen=True)
class NoiseCalibration:
    sigma_f: float
    correlation_time: float
    t2_star: float
    t2_hahn: float


def analytic_noise_guess(t2_star: float, t2_hahn: float) -> tuple[float, float]:
    """Starting point: Gaussian Ramsey σ, then τ_c from the OU echo phase variance."""
    sigma = math.sqrt(2.0) / (2.0 * math.pi * t2_star)
    w2 = (2.0 * math.pi * sigma) ** 2

    def echo_var(tau):
        # phase variance of the difference of the two half-window integrals
        r = 0.5 * t2_hahn / tau
        if r < 1e-3:
            return w2 * tau**2 * r**3 * (4.0 / 3.0 - r)
        return w2 * tau**2 * (4.0 * (r - 1.0 + math.exp(-r)) - 2.0 * (-math.expm1(-r)) ** 2)

    # decay exp(-var/2) hits 1/e at var = 2
    try:
        tau = optimize.brentq(lambda lt: echo_var(math.exp(lt)) - 2.0, math.log(1e-3), math.log(1e9))
        return sigma, math.exp(tau)
    except ValueError:
        return sigma, t2_hahn**3 * w2 / 12.0


def _bisect_log(f, lo: float, hi: float, target: float, iters: int) -> float:
    """Bisection in log space on a monotone increasing ``f``."""
    flo, fhi = f(lo), f(hi)
    for _ in range(20):
        if flo <= target:
            break
        lo /= 2.0
        flo = f(lo)
    for _ in range(20):
        if fhi >= target:
            break
        hi *= 2.0
        fhi = f(hi)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def calibrate_noise(
    t2_star: float,
    t2_hahn: float,
    *,
    shots: int = 4000,
    seed: int = 0,
    rounds: int = 2,
    iters: int = 14,
    base: QubitParams | None = None,
) -> NoiseCalibration:
    """Find OU ``(σ_f, τ_c)`` whose simulated decays give the target T₂* and T₂^H.

    Each coordinate is bisected against simulated, fitted decays with common
    random numbers, alternating ``rounds`` times.
    """
    base = QubitParams() if base is None else base
    sigma, tau = analytic_noise_guess(t2_star, t2_hahn)
    rd = ramsey_delays(t2_star)
    hd = hahn_delays(t2_hahn)

    def fitted_t2star(inv_sigma: float, tau: float) -> float:
        p = base.replace(noise_model="ou", sigma_f=1.0 / inv_sigma, correlation_time=tau, t2_star=t2_star, t2_hahn=t2_hahn)
        r = run_ramsey(p, rd, shots, np.random.default_rng(seed))
        return r.time_constant if r.fit_ok else math.inf

    def fitted_t2hahn(sigma: float, tau: float) -> float:
        p = base.replace(noise_model="ou", sigma_f=sigma, correlation_time=tau, t2_star=t2_star, t2_hahn=t2_hahn)
        r = run_hahn(p, hd, shots, np.random.default_rng(seed + 1))
        return r.time_constant if r.fit_ok else math.inf

    for _ in range(rounds):
        inv = _bisect_log(lambda s: fitted_t2star(s, tau), 0.7 / sigma, 1.4 / sigma, t2_star, iters)
        sigma = 1.0 / inv
        tau = _bisect_log(lambda t: fitted_t2hahn(sigma, t), tau / 3.0, tau * 3.0, t2_hahn, iters)
    return NoiseCalibration(sigma, tau, fitted_t2star(1.0 / sigma, tau), fitted_t2hahn(sigma, tau))
