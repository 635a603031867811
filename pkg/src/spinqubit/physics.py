"""Device physics for Elzerman spin readout.

Unit conventions used throughout the package:

* energies in µeV, temperatures in mK
* tunnel and relaxation rates in Hz
* durations in µs, except ``PhysicalParams.t1_relaxation`` which is in seconds
* sensor conductances in e²/h

All conversions between these live in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import constants

# µeV per mK and µeV per GHz (CODATA via scipy)
K_B_UEV_PER_MK = constants.k / constants.e * 1e6 * 1e-3
H_UEV_PER_GHZ = constants.h / constants.e * 1e6 * 1e9

US_PER_S = 1e6


class DomainError(ValueError):
    """Raised when physical inputs violate their invariants."""


def thermal_energy(temperature: float) -> float:
    """k_B·T in µeV for a temperature in mK."""
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature!r} mK")
    return K_B_UEV_PER_MK * temperature


def fermi_occupation(energy: float, temperature: float) -> float:
    """Occupation of a reservoir state ``energy`` µeV above the Fermi level."""
    x = energy / thermal_energy(temperature)
    # split on sign so exp never overflows
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


def zeeman_convert(frequency: float) -> float:
    """Convert a spin resonance frequency in GHz to an energy in µeV."""
    if frequency < 0:
        raise DomainError(f"frequency must be non-negative, got {frequency!r} GHz")
    return H_UEV_PER_GHZ * frequency


@dataclass(frozen=True)
class PhysicalParams:
    """Device and sensor inputs for a readout simulation."""

    zeeman_energy: float = 79.0  # µeV
    electron_temperature: float = 45.0  # mK
    fermi_offset_delta: float = 39.5  # µeV, spin-down depth below Fermi level
    base_tunnel_rate: float = 20e3  # Hz
    t1_relaxation: float = 31.5e-3  # s
    external_field: float = 410.0  # mT, metadata only
    sensor_snr: float = 12.5
    sensor_bandwidth: float = 1e6  # Hz
    sensor_level_occupied: float = 0.15  # e²/h
    sensor_level_empty: float = 0.29  # e²/h
    sampling_rate: float = 1e6  # samples/s
    settle_time: float = 10.0  # µs

    def __post_init__(self) -> None:
        positive = (
            "zeeman_energy",
            "electron_temperature",
            "fermi_offset_delta",
            "base_tunnel_rate",
            "t1_relaxation",
            "external_field",
            "sensor_snr",
            "sensor_bandwidth",
            "sampling_rate",
            "settle_time",
        )
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0):
                raise DomainError(f"{name} must be strictly positive, got {value!r}")
        if not self.fermi_offset_delta < self.zeeman_energy:
            raise DomainError(
                "fermi_offset_delta must lie strictly between 0 and zeeman_energy "
                f"(got {self.fermi_offset_delta} vs {self.zeeman_energy})"
            )
        if self.sensor_level_empty == self.sensor_level_occupied:
            raise DomainError("sensor_level_empty must differ from sensor_level_occupied")

    @property
    def sample_time(self) -> float:
        """Sampling interval in µs."""
        return US_PER_S / self.sampling_rate

    @property
    def level_separation(self) -> float:
        return abs(self.sensor_level_empty - self.sensor_level_occupied)

    @property
    def noise_sigma(self) -> float:
        """Per-sample Gaussian noise implied by the sensor SNR."""
        return self.level_separation / self.sensor_snr

    def replace(self, **changes) -> "PhysicalParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class RateSet:
    """Tunnel and relaxation rates (Hz) of the three-state readout machine."""

    up_out: float
    down_in: float
    down_out: float
    up_in: float
    relax: float

    def __post_init__(self) -> None:
        for name in ("up_out", "down_in", "down_out", "up_in", "relax"):
            if getattr(self, name) < 0:
                raise DomainError(f"rate {name} must be non-negative")

    @property
    def t_up_out(self) -> float:
        """Mean spin-up tunnel-out time in µs."""
        return US_PER_S / self.up_out if self.up_out > 0 else math.inf

    @property
    def t_down_in(self) -> float:
        """Mean spin-down reload time in µs."""
        return US_PER_S / self.down_in if self.down_in > 0 else math.inf

    def without_thermal(self) -> "RateSet":
        return RateSet(self.up_out, self.down_in, 0.0, 0.0, self.relax)


def derive_rates(params: PhysicalParams) -> RateSet:
    """Fermi golden-rule rates for a single orbital with spin-independent Γ₀.

    Spin-down sits ``fermi_offset_delta`` below the Fermi level and spin-up
    ``zeeman_energy - fermi_offset_delta`` above it.
    """
    g0 = params.base_tunnel_rate
    t = params.electron_temperature
    up_level = params.zeeman_energy - params.fermi_offset_delta
    down_level = -params.fermi_offset_delta
    f_up = fermi_occupation(up_level, t)
    f_down = fermi_occupation(down_level, t)
    return RateSet(
        up_out=g0 * (1.0 - f_up),
        down_in=g0 * f_down,
        down_out=g0 * (1.0 - f_down),
        up_in=g0 * f_up,
        relax=1.0 / params.t1_relaxation,
    )


@dataclass(frozen=True)
class KeithCondition:
    name: str
    ratio: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.ratio >= self.threshold

    @property
    def margin(self) -> float:
        return self.ratio / self.threshold


def keith_conditions(params: PhysicalParams, rates: RateSet) -> list[KeithCondition]:
    """The three minimum requirements for 99% Elzerman visibility.

    Returns Zeeman-to-thermal, T₁-to-tunnel-out and sampling-to-reload ratios
    next to their thresholds (13, 100, 12).
    """
    return [
        KeithCondition(
            "zeeman/thermal",
            params.zeeman_energy / thermal_energy(params.electron_temperature),
            13.0,
        ),
        KeithCondition("t1*up_out", params.t1_relaxation * rates.up_out, 100.0),
        KeithCondition(
            "sampling/down_in",
            params.sampling_rate / rates.down_in if rates.down_in > 0 else math.inf,
            12.0,
        ),
    ]


def relaxation_error(t_up_out: float, settle_time: float, t1: float) -> float:
    """Probability of T₁ decay before spin-to-charge conversion.

    ``t_up_out`` and ``settle_time`` in µs, ``t1`` in ms.
    """
    if math.isinf(t1):
        return 0.0
    return -math.expm1(-(t_up_out + settle_time) / (t1 * 1e3))


def missed_bump_probability(t_up_out: float, t_down_in: float, sample_time: float) -> float:
    """Closed-form probability that a spin bump falls between samples.

    With ``a = t_s/t_up_out`` and ``b = t_s/t_down_in``::

        P_miss = 1 - (1 - e^{(a-b)/2}) a / ((1 - e^{a/2}) (a - b))

    On the diagonal ``a == b`` the removable singularity is replaced by its
    limit ``1 - (a/2) / (e^{a/2} - 1)``.
    """
    if sample_time <= 0:
        return 0.0
    a = sample_time / t_up_out
    b = sample_time / t_down_in
    d = a - b
    # (e^{d/2} - 1)/d, with a series near d = 0 to stay continuous
    if abs(d) < 1e-6:
        g = 0.5 + d / 8.0 + d * d / 48.0
    else:
        g = math.expm1(d / 2.0) / d
    detect = g * a / math.expm1(a / 2.0)
    return min(1.0, max(0.0, 1.0 - detect))


def thermal_escape_probability(
    t_down_in: float,
    zeeman: float,
    temperature: float,
    read_window: float,
    offset: float | None = None,
) -> float:
    """Probability that a spin-down electron tunnels out during the window.

    The spin-down escape time follows detailed balance,
    ``t_down_out = t_down_in * exp(offset / k_B T)``, with ``offset`` (µeV)
    defaulting to ``zeeman / 2``.
    """
    if offset is None:
        offset = zeeman / 2.0
    t_down_out = t_down_in * math.exp(offset / thermal_energy(temperature))
    return -math.expm1(-read_window / t_down_out)


@dataclass(frozen=True)
class ErrorBudget:
    relaxation_loss: float
    missed_bump: float
    thermal_escape: float
    predicted_f_up: float = field(init=False)
    predicted_f_down: float = field(init=False)
    predicted_visibility: float = field(init=False)

    def __post_init__(self) -> None:
        f_up = 1.0 - self.relaxation_loss - self.missed_bump
        f_down = 1.0 - self.thermal_escape
        object.__setattr__(self, "predicted_f_up", f_up)
        object.__setattr__(self, "predicted_f_down", f_down)
        object.__setattr__(self, "predicted_visibility", f_up + f_down - 1.0)


def predict_budget(
    params: PhysicalParams,
    rates: RateSet,
    read_window: float,
    sample_time: float | None = None,
) -> ErrorBudget:
    """Assemble relaxation, missed-bump and thermal-escape errors.

    The thermal term uses the actual Fermi offset of ``params``; at
    Δ = E_Z/2 it coincides with the E_Z/2 detailed-balance estimate.
    """
    if sample_time is None:
        sample_time = params.sample_time
    return ErrorBudget(
        relaxation_loss=relaxation_error(
            rates.t_up_out, params.settle_time, params.t1_relaxation * 1e3
        ),
        missed_bump=missed_bump_probability(rates.t_up_out, rates.t_down_in, sample_time),
        thermal_escape=thermal_escape_probability(
            rates.t_down_in,
            params.zeeman_energy,
            params.electron_temperature,
            read_window,
            offset=params.fermi_offset_delta,
        ),
    )
