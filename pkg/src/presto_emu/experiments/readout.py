"""Readout design and calibration, single-shot statistics and active reset."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfcinv

from ..acquisition import select_match_window
from ..calibration import (
    BimodalFit,
    effective_temperature,
    fit_bimodal,
    histogram,
    optimize_clear,
    overlap_error,
    refine_templates,
)
from ..device import DT, TWO_PI, DeviceParams, noise_for_overlap, sample_qubit
from ..dsp import TEMPLATE_16
from ..engine import run
from ..feedback import LatencyModel, qubit_reset_config
from ..sequencer import ConditionalOutput, EventSchedule, SetScale
from .setup import (
    DRIVE_PORT,
    PI,
    PULSE_TICKS,
    Discriminator,
    ReadoutDesign,
    best_readout_frequency,
    build_instrument,
    drive_templates,
    model_discriminator,
    nco_freq,
    prep_events,
    pulse,
    readout_events,
)


def design_readout(dev: DeviceParams, qubits=None, hold: float = 0.02, levels=(0, 1),
                   segment_duration: float = 350e-9, frequencies=None) -> ReadoutDesign:
    """CLEAR readout for each qubit in ``qubits``, summed on the feedline at
    offsets from a common centre."""
    qubits = list(range(len(dev.qubits))) if qubits is None else list(qubits)
    tones = {}
    for j in qubits:
        q = dev.qubits[j]
        tones[j] = frequencies[j] if frequencies else best_readout_frequency(q, levels)
    center = nco_freq(float(np.mean(list(tones.values()))))
    n = int(round(segment_duration / DT))
    t = np.arange(4 * n) * DT
    wave = np.zeros(4 * n, dtype=np.complex128)
    segs = {}
    for j in qubits:
        d = optimize_clear(dev.qubits[j], tones[j], hold, segment_duration, levels)
        segs[j] = d.segments
        wave += np.repeat(d.segments, n) * np.exp(1j * TWO_PI * (tones[j] - center) * t)
    return ReadoutDesign(center, wave, tones, segs)


def _traces(result, k_store: int, ticks: int) -> np.ndarray:
    """Per-shot complex traces (full-scale units) of store ``k_store``."""
    ev, addrs = result.stores[k_store]
    n = 2 * ticks
    base = int(addrs.min())
    cells = result.sdram.read(base, int(addrs.max()) - base + 4 * ticks)
    rows = np.stack([cells[a - base:a - base + 2 * n] for a in addrs])
    return (rows[:, 0::2] + 1j * rows[:, 1::2]) * TEMPLATE_16.step


@dataclass
class ReadoutCalibration:
    discriminators: dict  # qubit -> Discriminator (refined)
    preliminary: dict  # qubit -> Discriminator from averaged traces
    rejected: dict = field(default_factory=dict)  # qubit -> heralding rejection fraction
    averages: dict = field(default_factory=dict)  # qubit -> (tau_g, tau_e) full readout traces


def calibrate_readout(dev: DeviceParams, readout: ReadoutDesign, seed: int = 0, shots: int = 16384,
                      refine_shots: int = 16384, max_ticks: int = 511, gap: int = 10,
                      chunk_shots: int = 4096, jobs: int = 1) -> ReadoutCalibration:
    """Two-step template calibration for each read-out qubit.

    1. Averaged traces after preparing g or e give preliminary templates.
    2. Two readouts per shot, a short delay apart, after preparing g or e
       (alternating repetitions): the first is matched with the preliminary
       discriminator, the second is stored per shot. Second-readout traces
       are averaged by first-readout class, keeping shots whose class agrees
       with the preparation. The match window is then chosen again.
    """
    qubits = sorted(readout.tones)
    drive = {f"q{j}": drive_templates(dev.qubits[j]) for j in range(len(dev.qubits))}
    R = readout.ticks
    prelim, refined, rejected, averages = {}, {}, {}, {}
    for pair, j in enumerate(qubits):
        inst = build_instrument(dev, readout, drive=drive)
        avg = {}
        for lev in (0, 1):
            levels = [lev if i == j else 0 for i in range(len(dev.qubits))]
            evs, t = prep_events(levels)
            evs += readout_events(t + 1, readout, store=(0, 0, 1, R))
            res = run(EventSchedule(evs, shots), inst, dev, seed=seed * 7919 + 2 * pair + lev, jobs=jobs)
            avg[lev] = res.sdram.average(0, 2 * R)
        w = select_match_window(avg[0], avg[1], min(max_ticks, R))
        d0 = Discriminator(j, avg[0][w.samples], avg[1][w.samples], w.start, pair)
        prelim[j] = d0
        # g / e prepared on alternating repetitions through a scale sweep
        inst = build_instrument(dev, readout, [d0], drive=drive,
                                scale_luts={(f"q{j}", 0): [0.0, 1.0]})
        t1 = PULSE_TICKS + 1
        evs = [SetScale(0, DRIVE_PORT[f"q{j}"], 0, 0, 1), pulse(0, f"q{j}", PI)]
        evs += readout_events(t1, readout, [d0])
        evs += readout_events(t1 + R + gap, readout, store=(0, 4 * R, refine_shots, R))
        sums = {0: 0, 1: 0}
        counts = {0: 0, 1: 0}
        kept = total = 0
        # per-shot storage is bounded, so the refinement runs in chunks
        for c, start in enumerate(range(0, refine_shots, chunk_shots)):
            n = min(chunk_shots, refine_shots - start)
            n += n % 2
            sched = EventSchedule([*evs[:-1], replace(evs[-1], address_cycle=n)], n)
            res = run(sched, inst, dev, seed=seed * 7919 + 1000 * (pair + 1) + c, jobs=jobs)
            first = res.matches[0].sums - d0.threshold
            prepared = np.arange(n) % 2
            tg, te, rej = refine_templates(first, _traces(res, 0, R), prepared)
            cls = (first >= 0).astype(int)
            for k, tau in ((0, tg), (1, te)):
                m = int(np.sum((cls == prepared) & (cls == k)))
                sums[k] = sums[k] + tau * m
                counts[k] += m
            kept += n * (1 - rej)
            total += n
        tg, te = sums[0] / counts[0], sums[1] / counts[1]
        rej = 1 - kept / total
        w = select_match_window(tg, te, min(max_ticks, R))
        refined[j] = Discriminator(j, tg[w.samples], te[w.samples], w.start, pair)
        rejected[j] = rej
        averages[j] = (tg, te)
    return ReadoutCalibration(refined, prelim, rejected, averages)


# ---------------------------------------------------------- single shot

@dataclass
class SingleShot:
    differences: np.ndarray  # pair sum minus threshold, per shot
    fit: BimodalFit
    epsilon: float
    fidelity_bound: float


def single_shot(dev: DeviceParams, readout: ReadoutDesign, disc: Discriminator, shots: int,
                seed: int = 0, levels=None, mix: bool = True, jobs: int = 1) -> SingleShot:
    """Match differences for shots prepared alternately in g and e (``mix``)
    or left in thermal equilibrium, with a bimodal fit."""
    j = disc.qubit
    drive = {f"q{i}": drive_templates(q) for i, q in enumerate(dev.qubits)}
    scale = {(f"q{j}", 0): [0.0, 1.0]} if mix else {}
    inst = build_instrument(dev, readout, [disc], drive=drive, scale_luts=scale)
    evs = []
    if mix:
        evs += [SetScale(0, DRIVE_PORT[f"q{j}"], 0, 0, 1), pulse(0, f"q{j}", PI)]
    evs += readout_events(PULSE_TICKS + 1, readout, [disc])
    res = run(EventSchedule(evs, shots), inst, dev, seed=seed, jobs=jobs)
    d = (res.matches[0].sums - disc.threshold).astype(float)
    fit = fit_bimodal(d)
    eps, fb = overlap_error(fit)
    return SingleShot(d, fit, eps, fb)


def calibrate_noise(dev: DeviceParams, readout: ReadoutDesign, target: float = 9.7e-4, qubit: int = 0,
                    max_ticks: int = 511) -> float:
    """Per-quadrature noise level for overlap error ``target`` with the
    model discriminator (noiseless references, no decay)."""
    disc = model_discriminator(dev, readout, qubit, max_ticks=max_ticks)
    return noise_for_overlap(disc.tau_g, disc.tau_e, target)


@dataclass
class NoiseTuning:
    sigma: float
    epsilon: float
    fidelity_bound: float
    calibration: ReadoutCalibration
    history: list  # (sigma, epsilon) per iteration


def tune_noise(dev: DeviceParams, readout: ReadoutDesign, target: float = 9.7e-4, qubit: int = 0,
               shots: int = 100_000, seed: int = 0, rtol: float = 0.01, max_iter: int = 8,
               jobs: int = 1, **cal_kwargs) -> NoiseTuning:
    """Noise level at which the calibrated discriminator's fitted overlap
    error equals ``target``.

    Starts from the model estimate, calibrates the templates once at that
    level, then iterates a secant on ``log eps`` versus ``log sigma`` with a
    fixed seed (the noise realization scales with sigma, so the map is
    smooth) until the relative error is below ``rtol``.
    """
    sigma = calibrate_noise(dev, readout, target, qubit)
    cal = calibrate_readout(with_noise(dev, sigma), readout, seed=seed, jobs=jobs, **cal_kwargs)
    disc = cal.discriminators[qubit]
    history = []
    ss = None
    for _ in range(max_iter):
        ss = single_shot(with_noise(dev, sigma), readout, disc, shots, seed=seed + 1, jobs=jobs)
        history.append((sigma, ss.epsilon))
        if abs(ss.epsilon / target - 1) < rtol:
            break
        if len(history) == 1:
            # eps ~ exp(-x^2) with x ~ 1/sigma: d log eps / d log sigma ~ 2 x^2
            x = float(erfcinv(2 * ss.epsilon))
            slope = 2 * x * x
        else:
            (s0, e0), (s1, e1) = history[-2], history[-1]
            slope = (np.log(e1) - np.log(e0)) / (np.log(s1) - np.log(s0))
        sigma = float(sigma * np.exp((np.log(target) - np.log(ss.epsilon)) / slope))
    return NoiseTuning(history[-1][0], ss.epsilon, ss.fidelity_bound, cal, history)


# ----------------------------------------------------------- active reset

@dataclass
class ResetResult:
    target: str
    first: np.ndarray  # match differences, first readout
    second: np.ndarray  # match differences, second readout
    fit_first: BimodalFit
    fit_second: BimodalFit
    fired: np.ndarray
    histograms: dict  # name -> (counts, edges)

    @property
    def pre_excited(self) -> float:
        return self.fit_first.weight_e

    @property
    def post_excited(self) -> float:
        return self.fit_second.weight_e

    def summary(self) -> dict:
        return {"target": self.target, "pre_excited": self.pre_excited, "post_excited": self.post_excited,
                "fired_fraction": float(self.fired.mean()),
                "threshold_pre_excited": float((self.first >= 0).mean()),
                "threshold_post_excited": float((self.second >= 0).mean())}


def reset_schedule(readout: ReadoutDesign, disc: Discriminator, target: str, shots: int,
                   latency: LatencyModel, delay: int = 0) -> EventSchedule:
    """Readout, conditional pi at the earliest legal tick, second readout.

    Reset to g flips shots that read e; reset to e flips shots that read g.
    The second readout starts ``delay`` ticks after the first one ends (or
    after the pulse, whichever is later)."""
    line = f"q{disc.qubit}"
    w = disc.window(0)
    fire = w.at + w.duration + latency.ticks
    evs = readout_events(0, readout, [disc])
    evs.append(ConditionalOutput(fire, DRIVE_PORT[line], PI, 0))
    t2 = max(readout.ticks, fire + PULSE_TICKS) + delay
    evs += readout_events(t2, readout, [disc])
    fb = qubit_reset_config(disc.threshold, latency, disc.pair, target_e=(target == "e"))
    return EventSchedule(evs, shots, feedback=fb)


def run_reset_experiment(dev: DeviceParams, readout: ReadoutDesign, disc: Discriminator, target: str = "g",
                         shots: int = 100_000, latency: LatencyModel | None = None, seed: int = 0,
                         delay: int = 700, jobs: int = 1, batch_size: int = 4096) -> ResetResult:
    if target not in ("g", "e"):
        raise ValueError("target must be 'g' or 'e'")
    latency = latency or LatencyModel()
    drive = {f"q{i}": drive_templates(q) for i, q in enumerate(dev.qubits)}
    inst = build_instrument(dev, readout, [disc], drive=drive)
    sched = reset_schedule(readout, disc, target, shots, latency, delay)
    res = run(sched, inst, dev, seed=seed, jobs=jobs, batch_size=batch_size)
    d1 = (res.matches[0].sums - disc.threshold).astype(float)
    d2 = (res.matches[1].sums - disc.threshold).astype(float)
    f1, f2 = fit_bimodal(d1), fit_bimodal(d2)
    hists = {"thermal": histogram(d1), f"reset_{target}": histogram(d2)}
    return ResetResult(target, d1, d2, f1, f2, res.fires[0].fired, hists)


def with_noise(dev: DeviceParams, sigma: float) -> DeviceParams:
    return replace(dev, noise_sigma=float(sigma))


def reset_device(noise_sigma: float = 0.0, p_therm: float = 0.058) -> DeviceParams:
    """Qubit 2 with the thermal population seen before reset."""
    return DeviceParams([sample_qubit(2, p_therm=p_therm)], noise_sigma=noise_sigma)


@dataclass
class ResetStudy:
    sigma: float
    epsilon: float  # fitted overlap error of the calibrated discriminator
    calibration: ReadoutCalibration
    to_g: ResetResult
    to_e: ResetResult
    temperatures: dict  # name -> kelvin

    def summary(self) -> dict:
        return {"noise_sigma": self.sigma, "overlap_error": self.epsilon,
                "fidelity_bound": 1 - self.epsilon, "thermal_excited": self.to_g.pre_excited,
                "post_reset_excited": self.to_g.post_excited, "reset_to_e_excited": self.to_e.post_excited,
                "temperatures": self.temperatures, "rejected": self.calibration.rejected}


def run_reset_study(dev: DeviceParams | None = None, shots: int = 100_000, seed: int = 0,
                    latency: LatencyModel | None = None, delay: int = 700, tune: bool = True,
                    target_overlap: float = 9.7e-4, tune_shots: int = 100_000, jobs: int = 1) -> ResetStudy:
    """Readout design, noise level, template calibration, then reset to g and
    to e. With ``tune`` the noise is set so that the calibrated overlap error
    equals ``target_overlap``; otherwise ``dev.noise_sigma`` is used as is."""
    dev = dev or reset_device()
    readout = design_readout(dev, [0])
    if tune:
        nt = tune_noise(dev, readout, target_overlap, shots=tune_shots, seed=seed, jobs=jobs)
        sigma, eps, cal = nt.sigma, nt.epsilon, nt.calibration
    else:
        sigma = dev.noise_sigma
        cal = calibrate_readout(dev, readout, seed=seed, jobs=jobs)
        eps = single_shot(dev, readout, cal.discriminators[0], tune_shots, seed=seed + 1, jobs=jobs).epsilon
    noisy = with_noise(dev, sigma)
    disc = cal.discriminators[0]
    to_g = run_reset_experiment(noisy, readout, disc, "g", shots, latency, seed + 2, delay, jobs)
    to_e = run_reset_experiment(noisy, readout, disc, "e", shots, latency, seed + 3, delay, jobs)
    to_g.histograms["reset_e"] = to_e.histograms["reset_e"]
    w = dev.qubits[0].omega_01
    temps = {"thermal": effective_temperature(to_g.pre_excited, w),
             "after_reset": effective_temperature(max(to_g.post_excited, 1e-12), w)}
    return ResetStudy(sigma, eps, cal, to_g, to_e, temps)


def averaged_traces(dev: DeviceParams, readout: ReadoutDesign, qubit: int = 0, shots: int = 1024,
                    seed: int = 0, jobs: int = 1):
    """Readout traces averaged in SDRAM: g on even repetitions at address 0,
    e on odd ones right after. Returns the run result and the two traces."""
    line = f"q{qubit}"
    drive = {f"q{i}": drive_templates(q) for i, q in enumerate(dev.qubits)}
    inst = build_instrument(dev, readout, drive=drive, scale_luts={(line, 0): [0.0, 1.0]})
    R = readout.ticks
    evs = [SetScale(0, DRIVE_PORT[line], 0, 0, 1), pulse(0, line, PI)]
    evs += readout_events(PULSE_TICKS + 1, readout, store=(0, 4 * R, 2, R))
    res = run(EventSchedule(evs, 2 * shots), inst, dev, seed=seed, jobs=jobs)
    return res, res.sdram.average(0, 2 * R), res.sdram.average(4 * R, 2 * R)
