"""Analog device non-ideality models.

Everything the analog pipeline needs to know about imperfect hardware lives
here: memristor conductance quantization with signed p/q decomposition,
DAC/ADC converters, SNR-referenced additive Gaussian noise, the optical
amplifier transfer curve used as the activation gate, the noisy two-input
optical comparator, microring (MRM) optics, and the optical link loss /
laser power budget.

All randomness flows through named, seeded streams (`derive_rng`) so results
are reproducible regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

INFINITE = math.inf


class ConfigError(ValueError):
    """Raised for invalid device or network configuration."""


def _tag_entropy(tag: str) -> int:
    # Stable across processes/platforms (unlike hash()).
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


def derive_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Derive an independent, reproducible random stream.

    The stream identity is (seed, tag, index); concurrent tasks that own
    distinct indices never share a stream, so results do not depend on
    thread scheduling.
    """
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _tag_entropy(tag), index & 0xFFFFFFFFFFFFFFFF])
    )


class Counters(dict):
    """Saturation/clipping event counters (clipping never raises)."""

    def bump(self, key: str, n: int = 1) -> None:
        self[key] = self.get(key, 0) + int(n)


@dataclass
class DeviceParams:
    """All analog non-idealities, each individually defeatable.

    SNRs accept ``math.inf`` as the "noise off" sentinel.  Converter bit
    widths accept ``None`` to bypass the converter entirely;
    ``memristor_states`` accepts ``math.inf`` for continuous conductances.
    """

    memristor_states: float = 1000
    dac_bits: int | None = 16
    adc_bits: int | None = 16
    dac_full_scale: float = 1.0
    adc_full_scale: float = 2.0
    soa_snr_db: float = 50.0
    comparator_snr_db: float = 40.0
    interface_snr_db: float = 25.0
    weight_clip: float = 1.0
    # Headroom (dB) the laser budget provides above amplifier sensitivity;
    # compression starts once excess path loss eats through it.
    soa_headroom_db: float = 3.0
    # Amplitude scale of the amplifier's soft-saturation knee at zero headroom.
    soa_saturation_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.memristor_states == INFINITE or self.memristor_states >= 2):
            raise ConfigError(f"memristor_states must be >= 2 or inf, got {self.memristor_states}")
        for name in ("dac_bits", "adc_bits"):
            bits = getattr(self, name)
            if bits is not None and not (2 <= bits <= 32):
                raise ConfigError(f"{name} must be in [2, 32] or None, got {bits}")
        for name in ("soa_snr_db", "comparator_snr_db", "interface_snr_db"):
            snr = getattr(self, name)
            if not (snr > 0):
                raise ConfigError(f"{name} must be > 0 (inf disables noise), got {snr}")
        if not self.weight_clip > 0:
            raise ConfigError(f"weight_clip must be > 0, got {self.weight_clip}")

    @classmethod
    def ideal(cls, seed: int = 0) -> "DeviceParams":
        """Every non-ideality disabled: the analog path becomes exact."""
        return cls(
            memristor_states=INFINITE,
            dac_bits=None,
            adc_bits=None,
            soa_snr_db=INFINITE,
            comparator_snr_db=INFINITE,
            interface_snr_db=INFINITE,
            seed=seed,
        )

    def with_overrides(self, **kwargs) -> "DeviceParams":
        return replace(self, **kwargs)


@dataclass
class QuantizedWeightArray:
    """Memristor conductances plus p/q sign switches for one weight array.

    ``levels`` holds integer level indices when ``states`` is finite, or the
    exact conductance magnitudes when ``states`` is infinite.  Dequantized
    weight is ``sign * level * w_max / (states - 1)`` (or ``sign * level``
    in the continuous case).  ``signs`` is +1 for the p (positive) switch,
    -1 for q (negative).
    """

    levels: np.ndarray
    signs: np.ndarray
    w_max: float
    states: float

    @property
    def step(self) -> float:
        if self.states == INFINITE:
            return 0.0
        return self.w_max / (self.states - 1)

    def conductances(self) -> np.ndarray:
        if self.states == INFINITE:
            return self.levels
        return self.levels * self.step

    def dequantize(self) -> np.ndarray:
        return self.signs * self.conductances()

    def copy(self) -> "QuantizedWeightArray":
        return QuantizedWeightArray(self.levels.copy(), self.signs.copy(), self.w_max, self.states)


def quantize_weight(w, params: DeviceParams, counters: Counters | None = None) -> QuantizedWeightArray:
    """Quantize weights onto the memristor conductance grid.

    Sign selects the p (w >= 0) or q switch; the magnitude snaps to the
    nearest of ``memristor_states`` equally spaced conductances in
    [0, weight_clip], round-half-to-even.  Magnitudes beyond the clip
    saturate and are counted, never raised.
    """
    w = np.asarray(w, dtype=np.float64)
    signs = np.where(w >= 0, 1, -1).astype(np.int8)
    mag = np.abs(w)
    over = mag > params.weight_clip
    if counters is not None and np.any(over):
        counters.bump("weight_saturation", int(np.count_nonzero(over)))
    mag = np.minimum(mag, params.weight_clip)
    if params.memristor_states == INFINITE:
        return QuantizedWeightArray(mag, signs, params.weight_clip, INFINITE)
    step = params.weight_clip / (params.memristor_states - 1)
    levels = np.rint(mag / step)  # rint = round half to even
    return QuantizedWeightArray(levels, signs, params.weight_clip, params.memristor_states)


def converter_quantize(x, bits: int | None, full_scale: float, counters: Counters | None = None, label: str = "dac"):
    """Uniform converter on [-full_scale, +full_scale] with 2**bits levels.

    Level spacing is 2*fs/(2**bits - 1); with the even level count zero sits
    between two levels, so 0 quantizes to magnitude fs/(2**bits - 1).
    Out-of-range values clip (counted).  ``bits=None`` bypasses.
    """
    if bits is None:
        return np.asarray(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n_levels = 2**bits
    step = 2.0 * full_scale / (n_levels - 1)
    idx = np.rint((x + full_scale) / step)
    clipped = (idx < 0) | (idx > n_levels - 1)
    if counters is not None and np.any(clipped):
        counters.bump(f"{label}_clip", int(np.count_nonzero(clipped)))
    idx = np.clip(idx, 0, n_levels - 1)
    return idx * step - full_scale


def dac_quantize(x, bits: int | None, full_scale: float, counters: Counters | None = None):
    return converter_quantize(x, bits, full_scale, counters, "dac")


def adc_quantize(x, bits: int | None, full_scale: float, counters: Counters | None = None):
    return converter_quantize(x, bits, full_scale, counters, "adc")


def awgn(signal, snr_db: float, rng: np.random.Generator):
    """Add zero-mean Gaussian noise at the requested SNR.

    Noise variance is mean signal power / 10**(snr/10); an all-zero signal
    therefore stays exactly zero (SNR is signal-relative), and infinite SNR
    returns the input unchanged.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if snr_db == INFINITE:
        return signal
    power = float(np.mean(signal**2))
    if power == 0.0:
        return signal
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    return signal + rng.normal(0.0, sigma, size=signal.shape)


def soa_compression_gain(amplitude, excess_loss_db: float, params: DeviceParams):
    """Soft-saturating gain of the unit-gain optical amplifier.

    The link budget sizes the laser so the carrier reaches the amplifier at
    sensitivity + headroom; while excess path loss stays within the headroom
    the gain is exactly 1.  Beyond it the transfer soft-saturates at an
    amplitude knee that shrinks with the lost optical power (smooth,
    monotone, compressive for large inputs).
    """
    headroom = params.soa_headroom_db - excess_loss_db
    if headroom >= 0:
        return np.ones_like(np.asarray(amplitude, dtype=np.float64))
    knee = params.soa_saturation_scale * 10.0 ** (headroom / 20.0)
    a = np.asarray(amplitude, dtype=np.float64)
    out = np.where(a == 0.0, 1.0, knee * np.tanh(a / knee) / np.where(a == 0.0, 1.0, a))
    return out


def soa_transfer(
    amplitude,
    gate,
    params: DeviceParams,
    excess_loss_db: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Optical-amplifier activation: zero when gate <= 0, else unit gain.

    Operating below the budgeted optical power (excess_loss_db > headroom)
    engages soft compression; the surviving signal then picks up amplifier
    noise at ``soa_snr_db``.
    """
    amplitude = np.asarray(amplitude, dtype=np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    gain = soa_compression_gain(amplitude, excess_loss_db, params)
    out = np.where(gate > 0, amplitude * gain, 0.0)
    if rng is not None and params.soa_snr_db != INFINITE:
        out = awgn(out, params.soa_snr_db, rng)
        out = np.where(gate > 0, out, 0.0)  # the gate blocks the carrier, noise included
    return out


def optical_compare(a: float, b: float, params: DeviceParams, rng: np.random.Generator | None = None) -> float:
    """Two-input optical comparator: max of the noise-perturbed inputs."""
    value, _ = optical_compare_with_winner(a, b, params, rng)
    return value


def optical_compare_with_winner(a, b, params: DeviceParams, rng: np.random.Generator | None = None):
    """Vectorized comparator returning (winner value, winner index 0|1).

    Each input picks up independent noise at ``comparator_snr_db`` relative
    to the pair's mean power; ties resolve to the first input.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if rng is not None and params.comparator_snr_db != INFINITE:
        power = (a**2 + b**2) / 2.0
        sigma = np.sqrt(power / 10.0 ** (params.comparator_snr_db / 10.0))
        na = rng.normal(0.0, 1.0, size=a.shape) * sigma
        nb = rng.normal(0.0, 1.0, size=b.shape) * sigma
        a = a + na
        b = b + nb
    second_wins = b > a
    return np.where(second_wins, b, a), second_wins.astype(np.int64)


@dataclass
class MrmModel:
    """Microring modulator optics derived from its diameter.

    The ring relations used: free spectral range = wavelength**2 /
    (group_index * pi * diameter); with a fixed resonance linewidth the
    finesse (fsr / linewidth) falls as 1/diameter while the quality factor
    rises proportionally to diameter.  Insertion loss is the two-term
    surrogate k_q / Q + k_f / finesse, calibrated so the 10 um ring is the
    loss optimum.
    """

    diameter_um: float = 10.0
    center_wavelength_nm: float = 1550.0
    # Calibrated so fsr(10 um) = 20 nm: n_g = wl**2 / (fsr * pi * D).
    group_index: float = 1550.0**2 / (20.0 * math.pi * 10.0e3)
    linewidth_nm: float = 0.2
    # Loss surrogate coefficients; with the reference Q and finesse below they
    # put the insertion-loss minimum of k_q/Q + k_f/finesse at 10 um.
    loss_q_coeff: float = 1937.5
    loss_finesse_coeff: float = 25.0
    through_loss_db: float = 0.02
    fsr_nm: float = field(default=0.0)
    finesse: float = field(default=0.0)
    q_factor: float = field(default=0.0)
    insertion_loss_db: float = field(default=0.0)

    REFERENCE_DIAMETER_UM = 10.0


def mrm_derive(diameter_um: float, base: MrmModel | None = None) -> MrmModel:
    """Fill in fsr, finesse, Q and insertion loss for a ring diameter."""
    if diameter_um <= 0:
        raise ConfigError(f"MRM diameter must be positive, got {diameter_um}")
    base = base or MrmModel()
    wl = base.center_wavelength_nm
    # diameter in nm for unit consistency (wl in nm)
    fsr = wl**2 / (base.group_index * math.pi * diameter_um * 1e3)
    finesse = fsr / base.linewidth_nm
    q = (wl / base.linewidth_nm) * (diameter_um / MrmModel.REFERENCE_DIAMETER_UM)
    insertion = base.loss_q_coeff / q + base.loss_finesse_coeff / finesse
    return replace(
        base,
        diameter_um=diameter_um,
        fsr_nm=fsr,
        finesse=finesse,
        q_factor=q,
        insertion_loss_db=insertion,
    )


@dataclass
class LossBudget:
    """Optical path losses on the worst-case link (coupler to amplifier)."""

    waveguide_prop_loss_db_per_cm: float = 2.5
    splitter_coupler_loss_db: float = 0.5
    soa_sensitivity_dbm: float = -20.0
    wall_plug_efficiency: float = 0.03
    path_length_cm: float = 1.0
    mrm_passes: int = 16
    # Design-point propagation loss the laser was sized for; propagation loss
    # beyond it shows up as excess loss at the amplifier.
    design_prop_loss_db_per_cm: float = 2.5

    def __post_init__(self) -> None:
        if not (0.0 < self.wall_plug_efficiency <= 1.0):
            raise ConfigError(f"wall_plug_efficiency must be in (0, 1], got {self.wall_plug_efficiency}")
        for name in ("waveguide_prop_loss_db_per_cm", "splitter_coupler_loss_db", "path_length_cm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def total_path_loss_db(self, mrm: MrmModel) -> float:
        return (
            self.splitter_coupler_loss_db
            + self.mrm_passes * mrm.through_loss_db
            + self.waveguide_prop_loss_db_per_cm * self.path_length_cm
            + mrm.insertion_loss_db
        )

    def excess_loss_db(self, mrm: MrmModel) -> float:
        """Path loss beyond what the laser budget was designed for."""
        design = replace(self, waveguide_prop_loss_db_per_cm=self.design_prop_loss_db_per_cm)
        return self.total_path_loss_db(mrm) - design.total_path_loss_db(mrm)


def laser_power_budget(budget: LossBudget, mrm: MrmModel) -> tuple[float, float]:
    """Laser power needed so the worst-case link still hits amplifier sensitivity.

    Returns (optical power dBm at the laser, electrical power mW at the wall
    plug).
    """
    total_loss = budget.total_path_loss_db(mrm)
    optical_dbm = budget.soa_sensitivity_dbm + total_loss
    electrical_mw = 10.0 ** (optical_dbm / 10.0) / budget.wall_plug_efficiency
    return optical_dbm, electrical_mw


@dataclass
class WavelengthPlan:
    """DWDM channel plan per waveguide."""

    count: int = 16
    spacing_nm: float = 1.25
    start_nm: float = 1550.0

    def validate_against(self, mrm: MrmModel) -> None:
        if self.count * self.spacing_nm > mrm.fsr_nm:
            raise ConfigError(
                f"wavelength plan spans {self.count * self.spacing_nm} nm, "
                f"exceeding the ring free spectral range {mrm.fsr_nm} nm"
            )
