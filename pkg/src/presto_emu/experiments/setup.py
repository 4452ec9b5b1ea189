"""Shared wiring for the experiment programs: which port drives which device
line, the standard pulse templates, readout blocks and state
discriminators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..acquisition import MatchUnit, select_match_window
from ..device import TWO_PI, DeviceParams, QubitParams, notch_transmission, resonator_response
from ..dsp import CarrierConfig, NcoConfig
from ..engine import InputPort, Instrument, RunResult, run
from ..feedback import midpoint_threshold
from ..sequencer import MatchWindow, OutputTemplate, StoreWindow
from ..siggen import MAX_TEMPLATE_SAMPLES, GroupConfig, PortConfig, Template, drag_pulse

DRIVE_PORT = {"q0": 0, "q1": 1, "coupler": 2}
FEED_PORT = 3
IN_PORT = 0
PI, SX, PI_EF = 0, 1, 8  # template ids on a drive port; ids >= 8 use the e-f carrier group
PULSE_TICKS = 10  # 20 ns control pulses

NCO_RATE = 10e9


def nco(f_hz: float) -> NcoConfig:
    return NcoConfig.from_frequency(f_hz, NCO_RATE)


def nco_freq(f_hz: float) -> float:
    """Frequency actually produced by the NCO word nearest ``f_hz``."""
    return nco(f_hz).frequency(NCO_RATE)


def chunk(wave, mode="raw"):
    """Split a waveform into even-length templates of at most 1022 samples;
    returns ``[(offset_ticks, Template)]``."""
    wave = np.asarray(wave, dtype=np.complex128)
    if wave.size % 2:
        wave = np.concatenate([wave, [0]])
    n = -(-wave.size // MAX_TEMPLATE_SAMPLES)
    size = -(-wave.size // n)
    size += size % 2
    return [(s // 2, Template(wave[s:s + size], mode)) for s in range(0, wave.size, size)]


@dataclass
class ReadoutDesign:
    """Feedline readout waveform (raw baseband around ``f_center``)."""

    f_center: float
    waveform: np.ndarray
    tones: dict = field(default_factory=dict)  # qubit -> absolute tone frequency (Hz)
    segments: dict = field(default_factory=dict)  # qubit -> CLEAR amplitudes

    @property
    def ticks(self) -> int:
        return -(-self.waveform.size // 2)

    def templates(self):
        return chunk(self.waveform)


@dataclass
class Discriminator:
    """Binary matched-filter discriminator for one qubit on pair ``pair``:
    unit ``2*pair`` holds ``tau_e`` and ``2*pair+1`` holds ``-tau_g``."""

    qubit: int
    tau_g: np.ndarray
    tau_e: np.ndarray
    window_start: int  # ticks after readout start
    pair: int = 0
    threshold: int = 0

    def __post_init__(self):
        self.tau_g = np.asarray(self.tau_g, dtype=np.complex128)
        self.tau_e = np.asarray(self.tau_e, dtype=np.complex128)
        te, tg = self.templates()
        ci, cq = te.codes
        gi, gq = tg.codes
        # -tau_g is stored, so its norm equals that of tau_g
        self.threshold = midpoint_threshold(int(gi @ gi + gq @ gq), int(ci @ ci + cq @ cq))

    @property
    def window_ticks(self) -> int:
        return self.tau_g.size // 2

    def templates(self):
        return Template(self.tau_e), Template(-self.tau_g)

    def units(self) -> dict:
        te, tg = self.templates()
        return {2 * self.pair: MatchUnit(2 * self.pair, te, IN_PORT),
                2 * self.pair + 1: MatchUnit(2 * self.pair + 1, tg, IN_PORT)}

    def window(self, readout_at: int) -> MatchWindow:
        return MatchWindow(readout_at + self.window_start, self.pair, self.window_ticks)

    def classify(self, result: RunResult, k: int) -> np.ndarray:
        """1 where match record ``k`` reads excited."""
        return (result.matches[k].sums >= self.threshold).astype(np.int8)


def drive_templates(q: QubitParams, pi_amp: float | None = None, drag: float = 0.0, ef: bool = False) -> dict:
    amp = 0.5186 if pi_amp is None else pi_amp
    out = {PI: drag_pulse(20e-9, amp, q.alpha, drag), SX: drag_pulse(20e-9, amp / 2, q.alpha, drag)}
    if ef:
        # e-f matrix element is sqrt(2) larger
        out[PI_EF] = drag_pulse(20e-9, amp / np.sqrt(2), q.alpha, drag)
    return out


def build_instrument(dev: DeviceParams, readout: ReadoutDesign | None, discriminators=(), drive=None,
                     carrier_luts=None, scale_luts=None, coupler_center: float | None = None,
                     coupler_templates=None) -> Instrument:
    """Instrument with drive ports at each qubit's transition frequency, a
    feedline port and one input port centred on the readout."""
    ports, wiring = {}, {}
    carrier_luts = carrier_luts or {}
    scale_luts = scale_luts or {}
    for j, q in enumerate(dev.qubits):
        line = f"q{j}"
        p = DRIVE_PORT[line]
        groups = [GroupConfig(carrier_lut=list(carrier_luts.get((line, 0), [])),
                              scale_lut=list(scale_luts.get((line, 0), []))),
                  GroupConfig(carrier_lut=list(carrier_luts.get((line, 1), [CarrierConfig.from_frequency(q.alpha / TWO_PI)])),
                              scale_lut=list(scale_luts.get((line, 1), [])))]
        port = PortConfig(groups=groups, nco=nco(q.omega_01 / TWO_PI))
        for tid, t in (drive or {}).get(line, {}).items():
            port.set_template(tid, t)
        ports[p], wiring[p] = port, line
    if dev.coupler is not None:
        f = coupler_center if coupler_center is not None else dev.coupler.resonance(dev.qubits)
        groups = [GroupConfig(carrier_lut=list(carrier_luts.get(("coupler", 0), [])),
                              scale_lut=list(scale_luts.get(("coupler", 0), []))), GroupConfig()]
        port = PortConfig(groups=groups, nco=nco(f))
        for tid, t in (coupler_templates or {}).items():
            port.set_template(tid, t)
        ports[DRIVE_PORT["coupler"]], wiring[DRIVE_PORT["coupler"]] = port, "coupler"
    inputs = {IN_PORT: InputPort()}
    if readout is not None:
        port = PortConfig(nco=nco(readout.f_center))
        for k, (_, t) in enumerate(readout.templates()):
            port.set_template(k, t)
        ports[FEED_PORT], wiring[FEED_PORT] = port, "feedline"
        inputs = {IN_PORT: InputPort(nco(readout.f_center))}
    units = {}
    for d in discriminators:
        units.update(d.units())
    return Instrument(ports, inputs, units, wiring)


def readout_events(at: int, readout: ReadoutDesign, discriminators=(), store=None) -> list:
    """Readout pulse starting at tick ``at`` with match windows and an
    optional ``store = (address, address_stride, address_cycle, ticks)``."""
    evs = [OutputTemplate(at + off, FEED_PORT, k) for k, (off, _) in enumerate(readout.templates())]
    evs += [d.window(at) for d in discriminators]
    if store is not None:
        addr, stride, cycle, ticks = store
        evs.append(StoreWindow(at, IN_PORT, ticks or readout.ticks, addr, stride, cycle))
    return evs


def pulse(at: int, line: str, template_id: int) -> OutputTemplate:
    return OutputTemplate(at, DRIVE_PORT[line], template_id)


def prep_events(levels, at: int = 0) -> tuple[list, int]:
    """Pulses taking each qubit from g to ``levels[j]``; returns events and
    the tick after the last pulse."""
    evs = []
    t = at
    for j, lev in enumerate(levels):
        if lev >= 1:
            evs.append(pulse(at, f"q{j}", PI))
        if lev >= 2:
            evs.append(pulse(at + PULSE_TICKS, f"q{j}", PI_EF))
    steps = max([0] + [min(int(lev), 2) for lev in levels])
    return evs, t + steps * PULSE_TICKS


# ------------------------------------------------------- model references

def steady_separation(q: QubitParams, f_hz, levels=(0, 1)) -> np.ndarray:
    """Minimum pairwise steady-state separation of the notch response."""
    f = np.atleast_1d(np.asarray(f_hz, dtype=float))
    resp = np.array([[notch_transmission(q, k, TWO_PI * fi) for fi in f] for k in levels])
    sep = np.full(f.size, np.inf)
    for a in range(len(levels)):
        for b in range(a + 1, len(levels)):
            sep = np.minimum(sep, np.abs(resp[a] - resp[b]))
    return sep


def best_readout_frequency(q: QubitParams, levels=(0, 1), span: float = 3.0, n: int = 2001) -> float:
    """Frequency maximizing the (minimum pairwise) steady-state separation."""
    lo = min(q.dressed(k) for k in levels) / TWO_PI
    hi = max(q.dressed(k) for k in levels) / TWO_PI
    width = q.kappa / TWO_PI
    f = np.linspace(lo - span * width, hi + span * width, n)
    return float(f[np.argmax(steady_separation(q, f, levels))])


def reference_traces(dev: DeviceParams, readout: ReadoutDesign, states, extra: int = 0) -> dict:
    """Noiseless feedline output for fixed joint levels (no decay)."""
    wave = np.concatenate([readout.waveform, np.zeros(extra, np.complex128)])
    out = {}
    for st in states:
        total = np.zeros(wave.size, np.complex128)
        for j, q in enumerate(dev.qubits):
            s = resonator_response(wave, st[j], DeviceParams([q], feedline_gain=1.0), readout.f_center)
            total += s - wave  # resonator part only; the drive is added once
        out[tuple(st)] = dev.feedline_gain * (total + wave)
    return out


def model_discriminator(dev: DeviceParams, readout: ReadoutDesign, qubit: int, pair: int = 0,
                        max_ticks: int = 511) -> Discriminator:
    """Discriminator from noiseless model traces (other qubits in g)."""
    n = len(dev.qubits)
    g = tuple([0] * n)
    e = tuple(1 if j == qubit else 0 for j in range(n))
    refs = reference_traces(dev, readout, [g, e])
    w = select_match_window(refs[g], refs[e], min(max_ticks, readout.ticks))
    return Discriminator(qubit, refs[g][w.samples], refs[e][w.samples], w.start, pair)


def run_points(schedules, instrument, dev, seed: int, jobs: int = 1, batch_size: int = 1024):
    """Run a list of schedules with independent seeds derived from ``seed``."""
    return [run(s, instrument, dev, seed=(seed * 1_000_003 + k) % (1 << 63), jobs=jobs, batch_size=batch_size)
            for k, s in enumerate(schedules)]
