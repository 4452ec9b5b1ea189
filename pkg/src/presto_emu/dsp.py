"""Fixed-point DSP primitives: NCOs, digital IQ mixing, quantizers, and the
continuous-wave comb generator / lock-in demodulator.

Signals are plain ``numpy`` complex arrays sampled at 1 GS/s (``I + 1j*Q``).
Phase accumulators are exact integers; only the final phasor is evaluated in
floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BASEBAND_RATE = 1e9  # samples per second of every ComplexTrace
NCO_FREQ_BITS = 48
NCO_PHASE_BITS = 18
CARRIER_BITS = 40
MAX_COMB_TONES = 192

_NCO_MOD = 1 << NCO_FREQ_BITS
_CARRIER_MOD = 1 << CARRIER_BITS


class ClippingError(ValueError):
    """A synthesized waveform would exceed full scale."""


@dataclass(frozen=True)
class NcoConfig:
    """Converter-rate NCO: 48-bit frequency word, 18-bit phase word."""

    frequency_word: int = 0
    phase_word: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frequency_word", int(self.frequency_word) % _NCO_MOD)
        object.__setattr__(self, "phase_word", int(self.phase_word) % (1 << NCO_PHASE_BITS))

    @classmethod
    def from_frequency(cls, frequency: float, sample_rate: float = 10e9, phase: float = 0.0):
        word = round(frequency * _NCO_MOD / sample_rate)
        pword = round(phase / (2 * np.pi) * (1 << NCO_PHASE_BITS))
        return cls(word, pword)

    def frequency(self, sample_rate: float = 10e9) -> float:
        return self.frequency_word * sample_rate / _NCO_MOD

    @property
    def phase(self) -> float:
        return 2 * np.pi * self.phase_word / (1 << NCO_PHASE_BITS)


@dataclass(frozen=True)
class CarrierConfig:
    """Per-group carrier generator entry: 40-bit frequency and I/Q phase words.

    The frequency step is ``BASEBAND_RATE / 2**40`` (about 0.91 mHz).
    """

    frequency_word: int = 0
    phase_i_word: int = 0
    phase_q_word: int = 0

    def __post_init__(self):
        for name in ("frequency_word", "phase_i_word", "phase_q_word"):
            object.__setattr__(self, name, int(getattr(self, name)) % _CARRIER_MOD)

    @classmethod
    def from_frequency(cls, frequency: float, phase: float = 0.0, phase_q: float | None = None):
        fword = round(frequency * _CARRIER_MOD / BASEBAND_RATE)
        pi_word = round(phase / (2 * np.pi) * _CARRIER_MOD)
        pq_word = pi_word if phase_q is None else round(phase_q / (2 * np.pi) * _CARRIER_MOD)
        return cls(fword, pi_word, pq_word)

    @property
    def frequency(self) -> float:
        f = self.frequency_word
        if f >= _CARRIER_MOD // 2:
            f -= _CARRIER_MOD
        return f * BASEBAND_RATE / _CARRIER_MOD


@dataclass(frozen=True)
class QuantSpec:
    """Signed fixed-point grid with step ``2**(1 - bits)`` over [-1, 1).

    ``mode="floor"`` truncates toward negative infinity (DAC output stage);
    ``mode="round"`` snaps to the nearest step.
    """

    bits: int = 16
    signed: bool = True
    mode: str = "round"

    def __post_init__(self):
        if self.bits not in (14, 16, 17, 32):
            raise ValueError(f"unsupported quantizer width {self.bits}")
        if self.mode not in ("round", "floor"):
            raise ValueError(f"unknown quantizer mode {self.mode!r}")

    @property
    def step(self) -> float:
        return 2.0 ** (1 - self.bits)

    @property
    def code_range(self) -> tuple[int, int]:
        half = 1 << (self.bits - 1)
        return (-half if self.signed else 0), half - 1


DAC_OUTPUT = QuantSpec(14, mode="floor")
TEMPLATE_16 = QuantSpec(16)
ADC_INPUT = QuantSpec(14)
SCALE_17 = QuantSpec(17)


def as_trace(samples) -> np.ndarray:
    """Coerce an array of complex values or an (n, 2) array of I/Q pairs."""
    arr = np.asarray(samples)
    if arr.ndim == 2 and arr.shape[1] == 2 and not np.iscomplexobj(arr):
        arr = arr[:, 0] + 1j * arr[:, 1]
    arr = np.asarray(arr, dtype=np.complex128).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("trace contains non-finite samples")
    return arr


def quantize_codes(x, q: QuantSpec):
    """Map real values to integer codes on the grid of ``q``.

    Returns ``(codes, saturated)``.
    """
    scaled = np.asarray(x, dtype=np.float64) / q.step
    codes = np.floor(scaled) if q.mode == "floor" else np.floor(scaled + 0.5)
    lo, hi = q.code_range
    saturated = bool(np.any(codes < lo) or np.any(codes > hi))
    return np.clip(codes, lo, hi).astype(np.int64), saturated


def quantize_trace(trace, q: QuantSpec = TEMPLATE_16):
    """Snap both quadratures of ``trace`` to the grid of ``q``.

    Returns ``(quantized_trace, saturated)``. Out-of-range samples saturate to
    the nearest representable extreme.
    """
    t = as_trace(trace)
    ci, si = quantize_codes(t.real, q)
    cq, sq = quantize_codes(t.imag, q)
    return (ci + 1j * cq) * q.step, si or sq


def trace_codes(trace, q: QuantSpec = TEMPLATE_16):
    """Integer (I, Q) code arrays for a trace, plus the saturation flag."""
    t = as_trace(trace)
    ci, si = quantize_codes(t.real, q)
    cq, sq = quantize_codes(t.imag, q)
    return ci, cq, si or sq


def nco_phase_words(frequency_word: int, phase_word: int, n: int, start_tick: int = 0) -> np.ndarray:
    """Exact 48-bit phase accumulator contents for ticks ``start_tick + k``.

    The phase word (18 bits) is folded in as the top bits of the 48-bit phase.
    Multiplication wraps modulo 2**64, which is consistent modulo 2**48.
    """
    if n < 0:
        raise ValueError("sample count must be non-negative")
    fw = np.uint64(int(frequency_word) % _NCO_MOD)
    offset = (int(phase_word) % (1 << NCO_PHASE_BITS)) << (NCO_FREQ_BITS - NCO_PHASE_BITS)
    start = (int(start_tick) * int(fw) + offset) % _NCO_MOD
    k = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        acc = (np.uint64(start) + k * fw) & np.uint64(_NCO_MOD - 1)
    return acc


def nco_phase_sequence(cfg: NcoConfig, n: int, start_tick: int = 0) -> np.ndarray:
    """Unit phasors ``exp(i*(2*pi*f_word*(start+k)/2**48 + phase))``."""
    acc = nco_phase_words(cfg.frequency_word, cfg.phase_word, n, start_tick)
    return np.exp(2j * np.pi * (acc.astype(np.float64) / _NCO_MOD))


def carrier_phase_words(frequency_word: int, start_phase: int, n: int) -> np.ndarray:
    """40-bit carrier accumulator: ``start_phase + k * frequency_word`` mod 2**40."""
    fw = np.uint64(int(frequency_word) % _CARRIER_MOD)
    k = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return (np.uint64(int(start_phase) % _CARRIER_MOD) + k * fw) & np.uint64(_CARRIER_MOD - 1)


def carrier_samples(cfg: CarrierConfig, acc: np.ndarray) -> np.ndarray:
    """Carrier output for accumulator contents ``acc``; I and Q carry
    independent phase offsets."""
    base = acc.astype(np.float64)
    ph_i = 2 * np.pi * ((base + cfg.phase_i_word) % _CARRIER_MOD) / _CARRIER_MOD
    ph_q = 2 * np.pi * ((base + cfg.phase_q_word) % _CARRIER_MOD) / _CARRIER_MOD
    return np.cos(ph_i) + 1j * np.sin(ph_q)


def iq_mix(signal, lo, direction: str = "up") -> np.ndarray:
    """Digital IQ mixer: ``signal*lo`` (up) or ``signal*conj(lo)`` (down)."""
    s = as_trace(signal)
    l = as_trace(lo)
    if s.shape != l.shape:
        raise ValueError(f"length mismatch: signal {s.size}, lo {l.size}")
    if direction == "up":
        return s * l
    if direction == "down":
        return s * np.conj(l)
    raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")


def comb_generate(tones, n: int) -> np.ndarray:
    """Sum of NCO tones ``(frequency_word, amplitude, phase_word)`` at 1 GS/s."""
    tones = list(tones)
    if len(tones) > MAX_COMB_TONES:
        raise ValueError(f"{len(tones)} tones requested, at most {MAX_COMB_TONES} available")
    total_amp = sum(abs(float(a)) for _, a, _ in tones)
    if total_amp > 1.0 + 1e-12:
        raise ClippingError(f"amplitude sum {total_amp:.6g} exceeds full scale")
    out = np.zeros(n, dtype=np.complex128)
    for fword, amp, pword in tones:
        out += float(amp) * nco_phase_sequence(NcoConfig(fword, pword), n)
    return out


def lockin_demodulate(signal, demod_frequency_word: int, window: int, start: int = 0) -> complex:
    """Mean of ``signal * conj(phasor)`` over ``window`` samples.

    The demodulator phasor is referenced to sample 0 of ``signal``.
    """
    s = as_trace(signal)
    if window <= 0:
        raise ValueError("empty demodulation window")
    if start < 0 or start + window > s.size:
        raise ValueError(f"window [{start}, {start + window}) exceeds signal length {s.size}")
    ref = nco_phase_sequence(NcoConfig(demod_frequency_word, 0), window, start_tick=start)
    return complex(np.mean(s[start:start + window] * np.conj(ref)))


def frequency_word(frequency: float, sample_rate: float = BASEBAND_RATE) -> int:
    """Nearest 48-bit word for ``frequency`` at ``sample_rate`` (negative wraps)."""
    return round(frequency * _NCO_MOD / sample_rate) % _NCO_MOD
