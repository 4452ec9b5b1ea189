"""Per-port output synthesis: templates, carrier generators, scalers, and the
final quantization / NCO stage.

Each output port has 16 templates split into two groups of 8. A group owns a
carrier generator and a signed 17-bit scaler, both driven from 512-entry
look-up tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import (
    BASEBAND_RATE,
    DAC_OUTPUT,
    SCALE_17,
    TEMPLATE_16,
    CarrierConfig,
    NcoConfig,
    as_trace,
    carrier_phase_words,
    carrier_samples,
    quantize_codes,
    quantize_trace,
)

MAX_TEMPLATE_SAMPLES = 1022
TEMPLATES_PER_GROUP = 8
GROUPS_PER_PORT = 2
LUT_SIZE = 512


@dataclass(frozen=True, eq=False)
class Template:
    """Stored waveform, quantized to 16 bits on upload."""

    samples: np.ndarray
    mode: str = "raw"  # "raw" bypasses the carrier, "envelope" multiplies it

    def __post_init__(self):
        if self.mode not in ("raw", "envelope"):
            raise ValueError(f"template mode must be 'raw' or 'envelope', got {self.mode!r}")
        s = as_trace(self.samples)
        if s.size > MAX_TEMPLATE_SAMPLES:
            raise ValueError(f"template holds {s.size} samples, limit is {MAX_TEMPLATE_SAMPLES}")
        q, _ = quantize_trace(s, TEMPLATE_16)
        q.setflags(write=False)
        object.__setattr__(self, "samples", q)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        return (isinstance(other, Template) and self.mode == other.mode
                and np.array_equal(self.samples, other.samples))

    __hash__ = None

    @property
    def codes(self) -> tuple[np.ndarray, np.ndarray]:
        step = TEMPLATE_16.step
        return (np.rint(self.samples.real / step).astype(np.int64),
                np.rint(self.samples.imag / step).astype(np.int64))


def quantize_scale(value: float) -> float:
    codes, _ = quantize_codes(np.array([value]), SCALE_17)
    return float(codes[0]) * SCALE_17.step


@dataclass
class GroupConfig:
    templates: list = field(default_factory=list)
    carrier_lut: list = field(default_factory=list)
    scale_lut: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.templates) > TEMPLATES_PER_GROUP:
            raise ValueError(f"a group holds at most {TEMPLATES_PER_GROUP} templates")
        if len(self.carrier_lut) > LUT_SIZE or len(self.scale_lut) > LUT_SIZE:
            raise ValueError(f"look-up tables hold at most {LUT_SIZE} entries")
        self.scale_lut = [quantize_scale(v) for v in self.scale_lut]

    def carrier(self, index: int) -> CarrierConfig:
        if not self.carrier_lut:
            return CarrierConfig()
        return self.carrier_lut[index % len(self.carrier_lut)]

    def scale(self, index: int) -> float:
        if not self.scale_lut:
            return 1.0
        return self.scale_lut[index % len(self.scale_lut)]


@dataclass
class PortConfig:
    """One output port: two template groups and the up-conversion NCO.

    ``dac_rate`` is the nominal converter rate the NCO words refer to; the NCO
    frequency is the symbolic RF centre of the port's baseband stream.
    """

    groups: list = field(default_factory=lambda: [GroupConfig(), GroupConfig()])
    nco: NcoConfig = field(default_factory=NcoConfig)
    dac_rate: float = 10e9

    def __post_init__(self):
        if len(self.groups) != GROUPS_PER_PORT:
            raise ValueError("a port has exactly two template groups")

    @property
    def rf_center(self) -> float:
        return self.nco.frequency(self.dac_rate)

    def template(self, template_id: int) -> Template:
        group, slot = divmod(int(template_id), TEMPLATES_PER_GROUP)
        if not 0 <= group < GROUPS_PER_PORT:
            raise IndexError(f"template id {template_id} out of range 0..15")
        temps = self.groups[group].templates
        if slot >= len(temps) or temps[slot] is None:
            raise IndexError(f"template id {template_id} is not loaded")
        return temps[slot]

    def set_template(self, template_id: int, template: Template):
        group, slot = divmod(int(template_id), TEMPLATES_PER_GROUP)
        temps = self.groups[group].templates
        while len(temps) <= slot:
            temps.append(None)
        temps[slot] = template


def _piecewise_index(events, group: int, ticks: np.ndarray) -> np.ndarray:
    """LUT index in force at each tick, from time-ordered ``(tick, group, index)``."""
    changes = sorted(((t, i) for t, g, i in events if g == group), key=lambda c: c[0])
    idx = np.zeros(ticks.size, dtype=np.int64)
    if not changes:
        return idx
    starts = np.array([t for t, _ in changes])
    values = np.array([i for _, i in changes])
    # side="right" picks the last update at or before each tick
    pos = np.searchsorted(starts, ticks, side="right") - 1
    ok = pos >= 0
    idx[ok] = values[pos[ok]]
    return idx


def carrier_trace(group: GroupConfig, group_id: int, carrier_events, s0: int, s1: int) -> np.ndarray:
    """Carrier samples for sample range ``[s0, s1)``.

    The accumulator starts at zero at sample 0 and keeps running through
    frequency changes (phase-continuous updates).
    """
    segs = [(0, 0)]
    for t, g, i in sorted(carrier_events, key=lambda e: e[0]):
        if g != group_id:
            continue
        if segs[-1][0] == 2 * t:
            segs[-1] = (2 * t, i)
        else:
            segs.append((2 * t, i))
    out = np.empty(max(s1 - s0, 0), dtype=np.complex128)
    acc = 0
    for k, (start, lut) in enumerate(segs):
        end = segs[k + 1][0] if k + 1 < len(segs) else max(s1, start)
        cfg = group.carrier(lut)
        lo, hi = max(start, s0), min(end, s1)
        if hi > lo:
            words = carrier_phase_words(cfg.frequency_word, acc + (lo - start) * cfg.frequency_word, hi - lo)
            out[lo - s0:hi - s0] = carrier_samples(cfg, words)
        acc = (acc + (end - start) * cfg.frequency_word) % (1 << 40)
        if end >= s1:
            break
    return out


def render_port(port: PortConfig, active_outputs, span, carrier_events=(), scale_events=(),
                quantize: bool = True):
    """Synthesize a port's baseband output over ``span = (tick0, tick1)``.

    ``active_outputs`` holds ``(tick, group, template_id)`` with ``template_id``
    counted within the group. ``carrier_events`` / ``scale_events`` are
    ``(tick, group, lut_index)`` updates; before the first update a group uses
    LUT entry 0. Scale is sampled at every output sample's tick.

    Returns ``(trace, saturated)``; with ``quantize=False`` the pre-DAC sum is
    returned unquantized (and ``saturated`` is False).
    """
    t0, t1 = span
    s0, s1 = 2 * int(t0), 2 * int(t1)
    n = s1 - s0
    total = np.zeros(n, dtype=np.complex128)
    sample_ticks = (np.arange(s0, s1) // 2)
    for g in range(GROUPS_PER_PORT):
        mine = [(t, tid) for t, grp, tid in active_outputs if grp == g]
        if not mine:
            continue
        group = port.groups[g]
        acc = np.zeros(n, dtype=np.complex128)
        carrier = None
        for tick, tid in mine:
            temp = port.template(g * TEMPLATES_PER_GROUP + tid)
            a = 2 * int(tick)
            b = a + len(temp)
            lo, hi = max(a, s0), min(b, s1)
            if hi <= lo:
                continue
            piece = temp.samples[lo - a:hi - a]
            if temp.mode == "envelope":
                if carrier is None:
                    carrier = carrier_trace(group, g, carrier_events, s0, s1)
                piece = piece * carrier[lo - s0:hi - s0]
            acc[lo - s0:hi - s0] += piece
        idx = _piecewise_index(scale_events, g, sample_ticks)
        lut = np.array([group.scale(int(i)) for i in range(max(len(group.scale_lut), 1))])
        scale = lut[idx % lut.size]
        total += acc * scale
    if port.nco.phase_word:
        total *= np.exp(1j * port.nco.phase)
    if not quantize:
        return total, False
    return quantize_trace(total, DAC_OUTPUT)


def drag_pulse(duration: float = 20e-9, amplitude: float = 0.5, anharmonicity: float = -2 * np.pi * 231e6,
               drag_coefficient: float = 0.0, mode: str = "envelope",
               sample_rate: float = BASEBAND_RATE) -> Template:
    """sin^2 envelope with a DRAG quadrature ``Q = drag * dI/dt / anharmonicity``."""
    n = duration * sample_rate
    if abs(n - round(n)) > 1e-6:
        raise ValueError("duration must be a whole number of samples")
    if drag_coefficient != 0 and anharmonicity == 0:
        raise ValueError("DRAG correction needs a non-zero anharmonicity")
    n = int(round(n))
    t = np.arange(n) / sample_rate
    x = np.pi * t / duration
    i = amplitude * np.sin(x) ** 2
    q = np.zeros(n)
    if drag_coefficient:
        didt = amplitude * (np.pi / duration) * np.sin(2 * x)
        q = drag_coefficient * didt / anharmonicity
    return Template(i + 1j * q, mode)


def square_pulse(n: int, amplitude: complex = 1.0, mode: str = "envelope") -> Template:
    return Template(np.full(n, amplitude, dtype=np.complex128), mode)


def clear_pulse(segments, segment_duration: float = 350e-9, mode: str = "raw",
                sample_rate: float = BASEBAND_RATE):
    """Four constant-amplitude segments, split into templates of at most
    1022 samples.

    Returns a list of ``(offset_ticks, Template)``; chunks have even length so
    every boundary falls on the 2 ns grid.
    """
    amps = np.asarray(segments, dtype=np.complex128)
    if amps.size != 4:
        raise ValueError("a CLEAR pulse has exactly four segments")
    if np.any(np.abs(amps.real) >= 1) or np.any(np.abs(amps.imag) >= 1):
        raise ValueError("segment amplitude outside full scale")
    seg = int(round(segment_duration * sample_rate))
    wave = np.repeat(amps, seg)
    n_chunks = -(-wave.size // MAX_TEMPLATE_SAMPLES)
    chunk = -(-wave.size // n_chunks)
    chunk += chunk % 2
    out = []
    for start in range(0, wave.size, chunk):
        out.append((start // 2, Template(wave[start:start + chunk], mode)))
    return out


def fractional_delay(samples, delay: float, pad: int = 64) -> np.ndarray:
    """Delay a waveform by ``delay`` samples (may be fractional) via a DFT
    phase ramp; the result keeps the input length."""
    s = as_trace(samples)
    n = s.size + pad
    spec = np.fft.fft(np.concatenate([s, np.zeros(pad)]))
    f = np.fft.fftfreq(n)
    shifted = np.fft.ifft(spec * np.exp(-2j * np.pi * f * delay))
    return shifted[:s.size]
