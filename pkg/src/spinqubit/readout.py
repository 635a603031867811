"""Readout analysis: charge SNR, spin detection, fidelities and sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, special

from .physics import PhysicalParams, derive_rates, fermi_occupation, thermal_energy
from .traces import EMPTY as _EMPTY
from .traces import ShotTrace, Spin, generate_batch


class DegenerateFitError(RuntimeError):
    """The mixture fit did not separate two components."""


class InsufficientDataError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# charge SNR


@dataclass(frozen=True)
class DoubleGaussianFit:
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    weight1: float
    iterations: int = 0

    @property
    def sigma_mean(self) -> float:
        return 0.5 * (self.sigma1 + self.sigma2)

    @property
    def snr(self) -> float:
        return (self.mu2 - self.mu1) / self.sigma_mean


def fit_double_gaussian(
    samples: np.ndarray, *, tol: float = 1e-9, max_iter: int = 5000
) -> DoubleGaussianFit:
    """Maximum-likelihood two-component Gaussian mixture via EM.

    Initialization is fixed: means at the 15th and 85th percentiles, both
    widths equal to the overall standard deviation, equal weights. Iterates
    until the relative change of the log-likelihood drops below ``tol``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1000:
        raise InsufficientDataError("need at least 1000 samples for a mixture fit")
    mu = np.percentile(x, [15.0, 85.0])
    sd = np.full(2, x.std())
    if sd[0] == 0:
        raise DegenerateFitError("samples have zero variance")
    w = np.array([0.5, 0.5])
    ll_prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logp = (
            np.log(w)[:, None]
            - np.log(sd)[:, None]
            - 0.5 * ((x[None, :] - mu[:, None]) / sd[:, None]) ** 2
        )
        norm = special.logsumexp(logp, axis=0)
        ll = norm.sum()
        resp = np.exp(logp - norm)
        nk = resp.sum(axis=1)
        if np.any(nk <= 0):
            raise DegenerateFitError("a mixture component lost all weight")
        w = nk / x.size
        mu = resp @ x / nk
        sd = np.sqrt(np.maximum((resp * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk, 1e-300))
        if abs(ll - ll_prev) < tol * abs(ll):
            break
        ll_prev = ll
    order = np.argsort(mu)
    mu, sd, w = mu[order], sd[order], w[order]
    if mu[1] - mu[0] < 0.5 * (sd[0] + sd[1]):
        raise DegenerateFitError(
            f"components not separated: means {mu[0]:.4g}, {mu[1]:.4g}, pooled sigma {sd.mean():.4g}"
        )
    return DoubleGaussianFit(float(mu[0]), float(mu[1]), float(sd[0]), float(sd[1]), float(w[0]), it)


# ---------------------------------------------------------------------------
# spin detection and fidelities


@dataclass(frozen=True)
class DetectionConfig:
    """Threshold rule: spin-up iff a sample in ``(blank_time, read_window]``
    lies on the empty-dot side of ``threshold``.

    ``polarity`` is +1 when the empty dot reads above the threshold.
    """

    threshold: float
    read_window: float = 670.0
    blank_time: float = 10.0
    polarity: int = 1

    def __post_init__(self) -> None:
        if not self.read_window > self.blank_time >= 0:
            raise ValueError("need read_window > blank_time >= 0")
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")

    @classmethod
    def for_params(
        cls,
        params: PhysicalParams,
        read_window: float = 670.0,
        threshold: float | None = None,
        blank_time: float | None = None,
    ) -> "DetectionConfig":
        if threshold is None:
            threshold = 0.5 * (params.sensor_level_empty + params.sensor_level_occupied)
        return cls(
            threshold=threshold,
            read_window=read_window,
            blank_time=params.settle_time if blank_time is None else blank_time,
            polarity=1 if params.sensor_level_empty > params.sensor_level_occupied else -1,
        )


def _window_slice(sample_time: float, n: int, blank_time: float, read_window: float) -> slice:
    # samples k cover (k*dt, (k+1)*dt]; keep blank < (k+1)*dt <= read_window
    start = int(math.floor(blank_time / sample_time + 1e-9))
    stop = int(math.floor(read_window / sample_time + 1e-9))
    return slice(start, stop)


def detect_spin(trace: ShotTrace, cfg: DetectionConfig) -> Spin:
    n = trace.samples.size
    if cfg.read_window > n * trace.sample_time + 1e-9:
        raise IndexError(
            f"read window {cfg.read_window} µs exceeds trace length {n * trace.sample_time} µs"
        )
    window = trace.samples[_window_slice(trace.sample_time, n, cfg.blank_time, cfg.read_window)]
    if window.size == 0:
        return Spin.DOWN
    hit = np.any(window > cfg.threshold) if cfg.polarity > 0 else np.any(window < cfg.threshold)
    return Spin.UP if hit else Spin.DOWN


@dataclass(frozen=True)
class FidelityEstimate:
    f_up: float
    f_down: float
    n_up: int
    n_down: int

    @property
    def visibility(self) -> float:
        return self.f_up + self.f_down - 1.0

    @property
    def f_measurement(self) -> float:
        return 0.5 * (self.f_up + self.f_down)

    @property
    def ci_up(self) -> float:
        return math.sqrt(self.f_up * (1.0 - self.f_up) / self.n_up)

    @property
    def ci_down(self) -> float:
        return math.sqrt(self.f_down * (1.0 - self.f_down) / self.n_down)

    @property
    def ci_visibility(self) -> float:
        return math.hypot(self.ci_up, self.ci_down)


def fidelities_from_counts(up_correct: int, n_up: int, down_correct: int, n_down: int) -> FidelityEstimate:
    if n_up == 0 or n_down == 0:
        raise ValueError("need at least one shot of each preparation")
    return FidelityEstimate(up_correct / n_up, down_correct / n_down, n_up, n_down)


def score_fidelities(shots: Iterable[tuple[Spin | str, Spin | str]]) -> FidelityEstimate:
    """F↑ and F↓ from ``(prepared, detected)`` pairs."""
    counts = {Spin.UP: [0, 0], Spin.DOWN: [0, 0]}
    for prepared, detected in shots:
        c = counts[Spin(prepared)]
        c[1] += 1
        c[0] += Spin(prepared) is Spin(detected)
    return fidelities_from_counts(*counts[Spin.UP], *counts[Spin.DOWN])


def score_traces(traces: Sequence[ShotTrace], cfg: DetectionConfig) -> FidelityEstimate:
    return score_fidelities((t.prepared_state, detect_spin(t, cfg)) for t in traces)


# ---------------------------------------------------------------------------
# dwell times


@dataclass(frozen=True)
class DwellFit:
    rate: float  # Hz
    ci: float  # Hz, one standard deviation
    n_events: int
    censored: int

    @property
    def mean_time(self) -> float:
        """Mean dwell in µs."""
        return 1e6 / self.rate


def censored_exponential_rate(durations: np.ndarray, observed: np.ndarray) -> DwellFit:
    """MLE of an exponential rate from right-censored dwell times in µs.

    ``rate = events / total exposure``; the one-sigma error comes from the
    Fisher information, ``rate / sqrt(events)``.
    """
    durations = np.asarray(durations, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    events = int(observed.sum())
    if events == 0:
        raise InsufficientDataError("no uncensored events")
    exposure = durations.sum()
    rate = events / exposure * 1e6
    return DwellFit(rate, rate / math.sqrt(events), int(durations.size), int(durations.size - events))


def truncated_exponential_rate(times: np.ndarray, window: float, n_missing: int = 0) -> DwellFit:
    """MLE of an exponential rate from event times (µs) that are only
    recorded when they fall inside ``[0, window]``.

    Traces without an event carry no weight: at finite bandwidth some of
    them hide an unresolved event, so counting them as censored biases the
    rate low. ``n_missing`` is only reported back as ``censored``.
    """
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise InsufficientDataError("no events")
    mean = float(t.mean())
    if mean >= 0.5 * window:
        raise FitError("event times are not concentrated inside the window")

    def score(lam):
        # d/dλ of the mean log-likelihood per event
        x = lam * window
        return 1.0 / lam - mean - window * math.exp(-x) / -math.expm1(-x)

    lam = optimize.brentq(score, 1e-12 / window, 1e3 / mean)
    e = math.exp(-lam * window)
    info = t.size * (1.0 / lam**2 - window**2 * e / math.expm1(-lam * window) ** 2)
    return DwellFit(lam * 1e6, 1e6 / math.sqrt(info), int(t.size + n_missing), int(n_missing))


def _excursions(x: np.ndarray, enter: float, leave: float) -> list[tuple[int, int | None]]:
    """Index pairs ``(entry, exit)`` of excursions above ``enter`` that end
    below ``leave``; ``exit`` is None when the trace ends first."""
    above = x > enter
    below = x < leave
    out: list[tuple[int, int | None]] = []
    i = 0
    while True:
        hits = np.flatnonzero(above[i:])
        if hits.size == 0:
            return out
        start = i + int(hits[0])
        ends = np.flatnonzero(below[start:])
        if ends.size == 0:
            out.append((start, None))
            return out
        i = start + int(ends[0])
        out.append((start, i))


def extract_dwell_rates(
    traces: Sequence[ShotTrace],
    cfg: DetectionConfig,
    levels: tuple[float, float],
    hysteresis: float = 0.25,
) -> tuple[DwellFit, DwellFit]:
    """Tunnel-out and reload rates from empty-dot excursions.

    ``levels`` are the (occupied, empty) sensor levels, e.g. from
    :func:`fit_double_gaussian`. An excursion starts above
    ``mid + hysteresis * sep`` and ends below ``mid - hysteresis * sep``.
    Tunnel-out times run from the end of blanking to the first excursion
    and use only spin-up prepared traces; they are fit as an exponential
    truncated at the window end. Reload times are excursion lengths,
    right-censored when the window closes first.
    """
    occupied, empty = levels
    sep = empty - occupied
    mid = 0.5 * (occupied + empty)
    out_t, in_t, in_obs = [], [], []
    n_quiet = 0
    window = None
    for trace in traces:
        dt = trace.sample_time
        sl = _window_slice(dt, trace.samples.size, cfg.blank_time, cfg.read_window)
        x = (trace.samples[sl] - mid) * np.sign(sep)
        window = x.size * dt
        excursions = _excursions(x, hysteresis * abs(sep), -hysteresis * abs(sep))
        if trace.prepared_state in (None, Spin.UP):
            if excursions:
                # crossing is somewhere inside the sampling interval
                out_t.append((excursions[0][0] + 0.5) * dt)
            else:
                n_quiet += 1
        for start, end in excursions:
            if end is None:
                in_t.append((x.size - start) * dt)
                in_obs.append(False)
            else:
                in_t.append((end - start) * dt)
                in_obs.append(True)
    if sum(in_obs) == 0 or not out_t:
        raise InsufficientDataError("no complete tunneling events detected")
    return (
        truncated_exponential_rate(np.array(out_t), window, n_quiet),
        censored_exponential_rate(np.array(in_t), np.array(in_obs)),
    )


# ---------------------------------------------------------------------------
# threshold / window sweep


@dataclass
class GridSweep:
    thresholds: np.ndarray
    windows: np.ndarray
    f_up: np.ndarray  # (n_thresholds, n_windows)
    f_down: np.ndarray
    n_up: int
    n_down: int

    @property
    def visibility(self) -> np.ndarray:
        return self.f_up + self.f_down - 1.0

    @property
    def argmax(self) -> tuple[int, int]:
        v = self.visibility
        i, j = np.unravel_index(int(np.argmax(v)), v.shape)
        return int(i), int(j)

    @property
    def best(self) -> tuple[float, float]:
        i, j = self.argmax
        return float(self.thresholds[i]), float(self.windows[j])

    def estimate(self, i: int, j: int) -> FidelityEstimate:
        return FidelityEstimate(float(self.f_up[i, j]), float(self.f_down[i, j]), self.n_up, self.n_down)

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        v = self.visibility
        return [
            (float(g), float(t), float(self.f_up[i, j]), float(self.f_down[i, j]), float(v[i, j]))
            for i, g in enumerate(self.thresholds)
            for j, t in enumerate(self.windows)
        ]


def window_extremes(
    traces: Sequence[ShotTrace], windows: Sequence[float], blank_time: float, polarity: int = 1
) -> np.ndarray:
    """Per-trace extreme sample after blanking, evaluated at each window end.

    One pass per trace: a running max (or min for negative polarity) is read
    off at every window boundary. Returns ``(n_traces, n_windows)``.
    """
    windows = np.asarray(windows, dtype=float)
    out = np.empty((len(traces), windows.size))
    for r, trace in enumerate(traces):
        dt = trace.sample_time
        n = trace.samples.size
        if windows.max() > n * dt + 1e-9:
            raise IndexError("window grid exceeds trace length")
        start = int(math.floor(blank_time / dt + 1e-9))
        x = trace.samples[start:] if polarity > 0 else -trace.samples[start:]
        run = np.maximum.accumulate(x)
        stops = np.floor(windows / dt + 1e-9).astype(int) - start
        vals = np.where(stops > 0, run[np.clip(stops - 1, 0, None)], -np.inf)
        out[r] = vals if polarity > 0 else -vals
    return out


def sweep_threshold_window(
    traces: Sequence[ShotTrace],
    thresholds: Sequence[float],
    windows: Sequence[float],
    blank_time: float = 10.0,
    polarity: int = 1,
) -> GridSweep:
    """Score every ``(threshold, window)`` cell from one pass over the traces."""
    thresholds = np.asarray(thresholds, dtype=float)
    windows = np.asarray(windows, dtype=float)
    if thresholds.size == 0 or windows.size == 0:
        raise ValueError("grids must be non-empty")
    ext = window_extremes(traces, windows, blank_time, polarity)
    up = np.array([t.prepared_state is Spin.UP for t in traces])
    n_up, n_down = int(up.sum()), int((~up).sum())
    if n_up == 0 or n_down == 0:
        raise ValueError("need at least one shot of each preparation")
    if polarity > 0:
        hit = ext[None, :, :] > thresholds[:, None, None]
    else:
        hit = ext[None, :, :] < thresholds[:, None, None]
    f_up = hit[:, up, :].sum(axis=1) / n_up
    f_down = (~hit[:, ~up, :]).sum(axis=1) / n_down
    return GridSweep(thresholds, windows, f_up, f_down, n_up, n_down)


def default_threshold_grid(params: PhysicalParams, n: int = 25) -> np.ndarray:
    """Thresholds spanning 20%–80% of the way from occupied to empty level."""
    lo, hi = params.sensor_level_occupied, params.sensor_level_empty
    return lo + (hi - lo) * np.linspace(0.2, 0.8, n)


# ---------------------------------------------------------------------------
# Fermi offset sweep


@dataclass
class DeltaPoint:
    delta: float
    threshold: float
    read_window: float
    estimate: FidelityEstimate


@dataclass
class DeltaSweep:
    points: list[DeltaPoint]

    @property
    def deltas(self) -> np.ndarray:
        return np.array([p.delta for p in self.points])

    @property
    def visibility(self) -> np.ndarray:
        return np.array([p.estimate.visibility for p in self.points])

    @property
    def best(self) -> DeltaPoint:
        return self.points[int(np.argmax(self.visibility))]

    def rows(self) -> list[tuple[float, ...]]:
        return [
            (
                p.delta,
                p.estimate.f_up,
                p.estimate.f_down,
                p.estimate.visibility,
                p.estimate.ci_up,
                p.estimate.ci_down,
            )
            for p in self.points
        ]


def sweep_delta(
    params: PhysicalParams,
    deltas: Sequence[float],
    shots_per_point: int,
    *,
    base_seed: int = 0,
    thresholds: Sequence[float] | None = None,
    windows: Sequence[float] = (670.0,),
    workers: int = 1,
    noise: bool = True,
) -> DeltaSweep:
    """Visibility versus Fermi offset, optimizing threshold and window at each Δ.

    Every Δ point reuses the per-shot seeds ``(base_seed, k)`` (common random
    numbers), so differences between points are not swamped by shot noise.
    """
    thresholds = default_threshold_grid(params) if thresholds is None else np.asarray(thresholds)
    windows = np.asarray(windows, dtype=float)
    points = []
    for delta in deltas:
        if not 0 < delta < params.zeeman_energy:
            raise ValueError(f"Δ = {delta} outside (0, E_Z)")
        p = params.replace(fermi_offset_delta=float(delta))
        batch = generate_batch(
            p,
            shots_per_point,
            "interleaved",
            base_seed=base_seed,
            read_window=float(windows.max()),
            rates=derive_rates(p),
            workers=workers,
            noise=noise,
        )
        grid = sweep_threshold_window(batch, thresholds, windows, p.settle_time, _polarity(p))
        a, b = grid.argmax
        points.append(DeltaPoint(float(delta), float(thresholds[a]), float(windows[b]), grid.estimate(a, b)))
    return DeltaSweep(points)


def _polarity(params: PhysicalParams) -> int:
    return 1 if params.sensor_level_empty > params.sensor_level_occupied else -1


# ---------------------------------------------------------------------------
# electron temperature


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float  # mK
    ci: float  # mK
    center: float  # µeV
    center_ci: float


def fit_electron_temperature(energies: np.ndarray, occupancy: np.ndarray) -> TemperatureFit:
    """Fit dot occupancy to a thermally broadened Fermi step.

    ``occupancy(ε) = 1 / (1 + exp((ε - ε₀) / k_B T))`` with ε in µeV.
    """
    e = np.asarray(energies, dtype=float)
    n = np.asarray(occupancy, dtype=float)
    if e.size < 3 or not (n.max() > 0.5 > n.min()):
        raise FitError("occupancy curve does not cross 0.5")
    order = np.argsort(e)
    e, n = e[order], n[order]
    # initial guesses: crossing point and 12–88% width ≈ 4 kT
    e0 = float(np.interp(0.5, n[::-1], e[::-1])) if n[0] > n[-1] else float(np.interp(0.5, n, e))
    hi = np.interp(0.88, n[::-1], e[::-1])
    lo = np.interp(0.12, n[::-1], e[::-1])
    kt0 = max(abs(lo - hi) / 4.0, 1e-3)

    def model(x, center, kt):
        return 0.5 * (1.0 - np.tanh(0.5 * (x - center) / kt))

    try:
        popt, pcov = optimize.curve_fit(model, e, n, p0=[e0, kt0], maxfev=10000)
    except RuntimeError as exc:
        raise FitError(str(exc)) from exc
    center, kt = popt
    perr = np.sqrt(np.diag(pcov)) if np.all(np.isfinite(pcov)) else np.full(2, np.nan)
    scale = thermal_energy(1.0)
    return TemperatureFit(abs(kt) / scale, perr[1] / scale, float(center), float(perr[0]))


def occupancy_curve(
    energies: np.ndarray, temperature: float, center: float = 0.0
) -> np.ndarray:
    """Noiseless occupancy used to generate synthetic line-width data."""
    return np.array([fermi_occupation(x - center, temperature) for x in np.asarray(energies, float)])


# ---------------------------------------------------------------------------
# missed-bump oracle


@dataclass(frozen=True)
class MissedBumpEstimate:
    probability: float
    ci: float
    n_bumps: int
    n_missed: int


def missed_bump_monte_carlo(
    t_up_out: float,
    t_down_in: float,
    n_shots: int,
    *,
    params: PhysicalParams | None = None,
    read_window: float = 670.0,
    base_seed: int = 0,
    threshold: float | None = None,
    workers: int = 1,
) -> MissedBumpEstimate:
    """Fraction of spin bumps a noiseless, band-limited sensor misses.

    Spin-up shots run with the given tunnel times, no relaxation and no
    thermal tunneling. Only shots whose hidden path shows a tunnel-out inside
    the detection window count; a bump is missed if no sample inside the
    window crosses ``threshold`` (default: midpoint between levels).
    """
    from .physics import RateSet

    params = PhysicalParams() if params is None else params
    rates = RateSet(up_out=1e6 / t_up_out, down_in=1e6 / t_down_in, down_out=0.0, up_in=0.0, relax=0.0)
    cfg = DetectionConfig.for_params(params, read_window, threshold)
    batch = generate_batch(
        params, n_shots, "up", base_seed, read_window=read_window, rates=rates, noise=False, workers=workers
    )
    bumps = missed = 0
    for trace in batch:
        t_out = trace.hidden_path.first_entry(_EMPTY)
        if t_out is None or not cfg.blank_time < t_out <= cfg.read_window:
            continue
        bumps += 1
        missed += detect_spin(trace, cfg) is Spin.DOWN
    p = missed / bumps
    return MissedBumpEstimate(p, math.sqrt(max(p * (1 - p), 1.0 / bumps) / bumps), bumps, missed)
