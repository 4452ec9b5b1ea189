"""Single-qubit characterization: Rabi amplitude sweep, T1, Ramsey echo,
chevrons, pulsed resonator spectroscopy and the separation scan, plus the
multiplexed-readout crosstalk check."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from ..device import DT, TWO_PI, DeviceParams, sample_qubit
from ..dsp import CarrierConfig
from ..engine import run
from ..sequencer import EventSchedule, OutputTemplate, SetCarrier, SetScale, StoreWindow
from ..siggen import drag_pulse, square_pulse
from .readout import design_readout
from .setup import (
    DRIVE_PORT,
    FEED_PORT,
    IN_PORT,
    PI,
    PULSE_TICKS,
    SX,
    ReadoutDesign,
    build_instrument,
    drive_templates,
    model_discriminator,
    nco_freq,
    pulse,
    readout_events,
    run_points,
)

RABI_PULSES = 10
UNIT = 2  # template id of the full-scale Rabi pulse
BLOCK = 3  # template id of the square chevron block
BLOCK_TICKS = 4


def characterization_device(noise_sigma: float = 0.0713) -> DeviceParams:
    return DeviceParams([sample_qubit(2)], noise_sigma=noise_sigma)


@dataclass
class Fit:
    params: dict
    ok: bool = True
    message: str = ""


def _fit(f, x, y, p0, names, **kw) -> Fit:
    try:
        p, _ = curve_fit(f, x, y, p0=p0, maxfev=20000, **kw)
        return Fit(dict(zip(names, (float(v) for v in p))))
    except (RuntimeError, ValueError) as exc:
        return Fit(dict(zip(names, (float(v) for v in p0))), False, str(exc))


def _decay(t, a, T, b):
    return a * np.exp(-t / T) + b


def fit_decay(t, y, T_guess: float) -> Fit:
    t, y = np.asarray(t, float), np.asarray(y, float)
    return _fit(_decay, t, y, [y[0] - y[-1], T_guess, y[-1]], ("A", "T", "B"),
                bounds=([-2, 1e-9, -1], [2, 1.0, 2]))


def _osc(t, a, w, b):
    return a * np.sin(0.5 * w * t) ** 2 + b


def fit_oscillation(t, y, w_guess: float) -> Fit:
    """``A sin^2(w t / 2) + B``; ``w`` is the angular oscillation frequency."""
    t, y = np.asarray(t, float), np.asarray(y, float)
    # refine the guess on a grid first, the least-squares surface is rippled
    grid = w_guess * np.linspace(0.7, 1.3, 241)
    cost = []
    for w in grid:
        m = np.stack([np.sin(0.5 * w * t) ** 2, np.ones_like(t)], axis=1)
        coef, *_ = np.linalg.lstsq(m, y, rcond=None)
        cost.append(np.sum((m @ coef - y) ** 2))
    w0 = float(grid[int(np.argmin(cost))])
    return _fit(_osc, t, y, [float(y.max() - y.min()), w0, float(y.min())], ("A", "w", "B"))


def _setup(dev, readout, disc, extra=None, **kw):
    readout = readout or design_readout(dev, [0])
    disc = disc or model_discriminator(dev, readout, 0)
    drive = {"q0": {**drive_templates(dev.qubits[0]), **(extra or {})}}
    return readout, disc, build_instrument(dev, readout, [disc], drive=drive, **kw)


# ------------------------------------------------------------------ Rabi

@dataclass
class RabiResult:
    amplitudes: np.ndarray
    p_excited: np.ndarray
    fit: Fit

    @property
    def pi_amplitude(self) -> float:
        """Amplitude of a single pi pulse: the train of ten rotates by
        ``10 pi a / a_pi``, so ``w = 10 pi / a_pi``."""
        return RABI_PULSES * np.pi / self.fit.params["w"]


def rabi_amplitude(dev: DeviceParams, amplitudes=None, shots: int = 500, seed: int = 0, readout=None,
                   disc=None, jobs: int = 1) -> RabiResult:
    """Ten 20 ns sin^2 pulses whose amplitude steps through the scale
    look-up table, one entry per repetition."""
    amps = np.linspace(0, 0.6, 121) if amplitudes is None else np.asarray(amplitudes, float)
    unit = drag_pulse(20e-9, 1.0, dev.qubits[0].alpha)
    readout, disc, inst = _setup(dev, readout, disc, {UNIT: unit}, scale_luts={("q0", 0): list(amps)})
    port = DRIVE_PORT["q0"]
    evs = [SetScale(0, port, 0, 0, 1)]
    evs += [OutputTemplate(k * PULSE_TICKS, port, UNIT) for k in range(RABI_PULSES)]
    evs += readout_events(RABI_PULSES * PULSE_TICKS + 1, readout, [disc])
    res = run(EventSchedule(evs, shots * amps.size), inst, dev, seed=seed, jobs=jobs)
    e = disc.classify(res, 0).reshape(shots, amps.size)
    p = e.mean(axis=0)
    applied = np.array(inst.ports[port].groups[0].scale_lut)  # after quantization
    return RabiResult(applied, p, fit_oscillation(applied, p, RABI_PULSES * np.pi / 0.5186))


# ------------------------------------------------------------ T1 / echo

@dataclass
class DecayResult:
    delays: np.ndarray
    p_excited: np.ndarray
    fit: Fit

    @property
    def time_constant(self) -> float:
        return self.fit.params["T"]


def _delay_ticks(delays) -> np.ndarray:
    return np.round(np.asarray(delays, float) / 2e-9).astype(np.int64)


def t1_experiment(dev: DeviceParams, delays=None, shots: int = 1000, seed: int = 0, readout=None,
                  disc=None, jobs: int = 1) -> DecayResult:
    delays = np.linspace(0, 120e-6, 25) if delays is None else np.asarray(delays, float)
    readout, disc, inst = _setup(dev, readout, disc)
    scheds = []
    for d in _delay_ticks(delays):
        evs = [pulse(0, "q0", PI)] + readout_events(PULSE_TICKS + int(d), readout, [disc])
        scheds.append(EventSchedule(evs, shots))
    p = np.array([disc.classify(r, 0).mean() for r in run_points(scheds, inst, dev, seed, jobs)])
    return DecayResult(delays, p, fit_decay(delays, p, dev.qubits[0].T1))


def echo_experiment(dev: DeviceParams, delays=None, shots: int = 1000, seed: int = 0, readout=None,
                    disc=None, jobs: int = 1) -> DecayResult:
    """pi/2, wait tau/2, pi, wait tau/2, pi/2; the excited population decays
    from 1 to 1/2 with ``T2_echo``."""
    delays = np.linspace(0, 120e-6, 25) if delays is None else np.asarray(delays, float)
    readout, disc, inst = _setup(dev, readout, disc)
    scheds = []
    for d in _delay_ticks(delays):
        h = int(d) // 2
        t = PULSE_TICKS + h
        evs = [pulse(0, "q0", SX), pulse(t, "q0", PI), pulse(t + PULSE_TICKS + h, "q0", SX)]
        evs += readout_events(t + 2 * PULSE_TICKS + h + 1, readout, [disc])
        scheds.append(EventSchedule(evs, shots))
    p = np.array([disc.classify(r, 0).mean() for r in run_points(scheds, inst, dev, seed, jobs)])
    return DecayResult(delays, p, fit_decay(delays, p, dev.qubits[0].T2_echo))


# -------------------------------------------------------------- chevrons

@dataclass
class ChevronResult:
    detunings: np.ndarray  # Hz
    times: np.ndarray  # s
    p_excited: np.ndarray  # (detunings, times)
    fits: list = field(default_factory=list)
    rabi: float = 0.0  # resonant Rabi frequency (rad/s); 0 for a Ramsey chevron

    def frequencies(self) -> np.ndarray:
        """Fitted angular oscillation frequency per detuning."""
        return np.array([f.params["w"] for f in self.fits])

    def predicted(self) -> np.ndarray:
        return np.sqrt(self.rabi ** 2 + (TWO_PI * self.detunings) ** 2)


def rabi_chevron(dev: DeviceParams, detunings=None, durations=None, amplitude: float = 0.05,
                 shots: int = 400, seed: int = 0, readout=None, disc=None, jobs: int = 1) -> ChevronResult:
    """Square drive of ``amplitude`` for a swept duration at carrier offsets
    ``detunings`` (one look-up table entry per repetition)."""
    det = np.array([0.0, 2e6, 4e6, 6e6]) if detunings is None else np.asarray(detunings, float)
    dur = np.arange(0, 50) * BLOCK_TICKS * 2e-9 if durations is None else np.asarray(durations, float)
    carriers = [CarrierConfig.from_frequency(d) for d in det]
    block = square_pulse(2 * BLOCK_TICKS, amplitude)
    readout, disc, inst = _setup(dev, readout, disc, {BLOCK: block}, carrier_luts={("q0", 0): carriers})
    port = DRIVE_PORT["q0"]
    scheds = []
    for T in dur:
        n = int(round(T / (2 * BLOCK_TICKS * 1e-9)))
        evs = [SetCarrier(0, port, 0, 0, 1)] + [OutputTemplate(k * BLOCK_TICKS, port, BLOCK) for k in range(n)]
        evs += readout_events(n * BLOCK_TICKS + 1, readout, [disc])
        scheds.append(EventSchedule(evs, shots * det.size))
    p = np.zeros((det.size, dur.size))
    for k, r in enumerate(run_points(scheds, inst, dev, seed, jobs)):
        p[:, k] = disc.classify(r, 0).reshape(shots, det.size).mean(axis=0)
    omega = dev.qubits[0].rabi_per_fullscale * amplitude
    fits = [fit_oscillation(dur, p[i], float(np.hypot(omega, TWO_PI * d))) for i, d in enumerate(det)]
    return ChevronResult(det, dur, p, fits, omega)


def ramsey_chevron(dev: DeviceParams, detunings=None, delays=None, shots: int = 400, seed: int = 0,
                   readout=None, disc=None, jobs: int = 1) -> ChevronResult:
    """Two pi/2 pulses a swept delay apart with the drive detuned; the fringe
    frequency equals the detuning."""
    det = np.array([0.5e6, 1e6, 2e6]) if detunings is None else np.asarray(detunings, float)
    delays = np.arange(0, 41) * 50e-9 if delays is None else np.asarray(delays, float)
    carriers = [CarrierConfig.from_frequency(d) for d in det]
    readout, disc, inst = _setup(dev, readout, disc, carrier_luts={("q0", 0): carriers})
    port = DRIVE_PORT["q0"]
    scheds = []
    for d in _delay_ticks(delays):
        t = PULSE_TICKS + int(d)
        evs = [SetCarrier(0, port, 0, 0, 1), pulse(0, "q0", SX), pulse(t, "q0", SX)]
        evs += readout_events(t + PULSE_TICKS + 1, readout, [disc])
        scheds.append(EventSchedule(evs, shots * det.size))
    p = np.zeros((det.size, delays.size))
    for k, r in enumerate(run_points(scheds, inst, dev, seed, jobs)):
        p[:, k] = disc.classify(r, 0).reshape(shots, det.size).mean(axis=0)
    # the phase of a pi/2 pulse advances with the carrier, so the fringe
    # runs at the detuning measured from the first pulse's start
    fits = [fit_oscillation(delays + PULSE_TICKS * 2e-9, p[i], TWO_PI * d) for i, d in enumerate(det)]
    return ChevronResult(det, delays, p, fits, 0.0)


# ---------------------------------------------------------- spectroscopy

@dataclass
class SpectroscopyResult:
    frequencies: np.ndarray  # Hz
    response_g: np.ndarray  # complex steady-state transmission
    response_e: np.ndarray

    @property
    def separation(self) -> np.ndarray:
        return np.abs(self.response_e - self.response_g)

    @property
    def readout_frequency(self) -> float:
        return float(self.frequencies[int(np.argmax(self.separation))])


def resonator_spectroscopy(dev: DeviceParams, frequencies=None, amplitude: float = 0.02, probe: float = 3e-6,
                           shots: int = 64, seed: int = 0, jobs: int = 1) -> SpectroscopyResult:
    """Pulsed spectroscopy with the qubit in g or e: a long square probe, the
    stored trace averaged in SDRAM over repetitions and over the last third
    of the probe, divided by the probe amplitude."""
    q = dev.qubits[0]
    width = q.kappa / TWO_PI
    lo, hi = q.dressed(1) / TWO_PI, q.dressed(0) / TWO_PI
    lo, hi = min(lo, hi), max(lo, hi)
    freqs = np.linspace(lo - 2 * width, hi + 2 * width, 61) if frequencies is None else np.asarray(frequencies, float)
    center = nco_freq(0.5 * (lo + hi))
    n = int(round(probe / DT))
    n -= n % 2
    t = np.arange(n) * DT
    tail = slice(2 * n // 3, n)
    out = {0: [], 1: []}
    for k, f in enumerate(freqs):
        wave = amplitude * np.exp(1j * TWO_PI * (f - center) * t)
        ro = ReadoutDesign(center, wave, {0: f})
        inst = build_instrument(dev, ro, [], drive={"q0": drive_templates(q)})
        for lev in (0, 1):
            evs = [pulse(0, "q0", PI)] if lev else []
            at = PULSE_TICKS + 1
            evs += readout_events(at, ro, store=(0, 0, 1, ro.ticks))
            res = run(EventSchedule(evs, shots), inst, dev, seed=seed * 7919 + 2 * k + lev, jobs=jobs)
            avg = res.sdram.average(0, 2 * ro.ticks)[:n]
            # undo the input port's mixing to the probe frequency
            demod = avg * np.exp(-1j * TWO_PI * (f - center) * t)
            out[lev].append(demod[tail].mean() / amplitude)
    return SpectroscopyResult(freqs, np.array(out[0]), np.array(out[1]))


# ------------------------------------------------------------- crosstalk

@dataclass
class CrosstalkResult:
    correlation: float  # between qubit-1 match sums and qubit-2's prepared state
    shots: int
    p_excited: dict  # qubit -> mean excited fraction


def multiplexed_crosstalk(dev: DeviceParams | None = None, shots: int = 10_000, seed: int = 0,
                          jobs: int = 1) -> CrosstalkResult:
    """Both resonators read through one feedline and one input; qubit 2 is
    excited on every other repetition (scale look-up table), qubit 1 stays
    in g."""
    dev = dev or DeviceParams([sample_qubit(1), sample_qubit(2)], noise_sigma=0.0713)
    readout = design_readout(dev, [0, 1])
    discs = [model_discriminator(dev, readout, j, pair=j) for j in (0, 1)]
    inst = build_instrument(dev, readout, discs, drive={"q1": drive_templates(dev.qubits[1])},
                            scale_luts={("q1", 0): [0.0, 1.0]})
    port = DRIVE_PORT["q1"]
    evs = [SetScale(0, port, 0, 0, 1), pulse(0, "q1", PI)] + readout_events(PULSE_TICKS + 1, readout, discs)
    res = run(EventSchedule(evs, shots), inst, dev, seed=seed, jobs=jobs)
    prepared = (np.arange(shots) % 2).astype(float)
    sums = res.matches[0].sums.astype(float)
    corr = float(np.corrcoef(sums, prepared)[0, 1])
    return CrosstalkResult(corr, shots, {j: float(d.classify(res, j).mean()) for j, d in enumerate(discs)})


# ----------------------------------------------------------------- suite

@dataclass
class CharacterizationResult:
    rabi: RabiResult
    t1: DecayResult
    echo: DecayResult
    chevron: ChevronResult
    ramsey: ChevronResult
    spectroscopy: SpectroscopyResult
    elapsed: float = 0.0

    def summary(self) -> dict:
        return {"pi_amplitude": self.rabi.pi_amplitude, "T1": self.t1.time_constant,
                "T2_echo": self.echo.time_constant, "readout_frequency": self.spectroscopy.readout_frequency,
                "chevron_frequencies": [float(w) for w in self.chevron.frequencies()],
                "chevron_predicted": [float(w) for w in self.chevron.predicted()],
                "elapsed": self.elapsed}


def run_characterization_suite(dev: DeviceParams | None = None, shots: int = 1000, seed: int = 0,
                               jobs: int = 1) -> CharacterizationResult:
    t0 = time.perf_counter()
    dev = dev or characterization_device()
    readout = design_readout(dev, [0])
    disc = model_discriminator(dev, readout, 0)
    kw = dict(readout=readout, disc=disc, jobs=jobs)
    rabi = rabi_amplitude(dev, shots=max(shots // 2, 1), seed=seed, **kw)
    t1 = t1_experiment(dev, shots=shots, seed=seed + 1, **kw)
    echo = echo_experiment(dev, shots=shots, seed=seed + 2, **kw)
    chev = rabi_chevron(dev, shots=max(shots // 2, 1), seed=seed + 3, **kw)
    ram = ramsey_chevron(dev, shots=max(shots // 2, 1), seed=seed + 4, **kw)
    spec = resonator_spectroscopy(dev, seed=seed + 5, jobs=jobs)
    return CharacterizationResult(rabi, t1, echo, chev, ram, spec, time.perf_counter() - t0)
