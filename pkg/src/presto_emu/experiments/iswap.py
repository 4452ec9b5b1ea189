"""Parametric iSWAP tune-up: |01> is prepared, a square coupler tone is
applied for a swept duration and detuning, and both qubits are read out
through one frequency-multiplexed feedline readout."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from ..device import CouplerParams, DeviceParams, exchange_prediction, sample_qubit
from ..dsp import CarrierConfig
from ..engine import run
from ..sequencer import EventSchedule, OutputTemplate, SetCarrier, SetDcBias
from ..siggen import square_pulse
from .readout import design_readout
from .setup import DRIVE_PORT, PI, PULSE_TICKS, build_instrument, drive_templates, model_discriminator, pulse, readout_events

COUPLER_BLOCK = 10  # ticks per square-pulse block (20 ns)
FLUX_DAC_CODES = 32767  # DC bias code per flux quantum


def iswap_device(noise_sigma: float = 0.0713) -> DeviceParams:
    """Qubit 1 and qubit 2 of the sample with the tunable coupler between them."""
    return DeviceParams([sample_qubit(1), sample_qubit(2)], noise_sigma=noise_sigma, coupler=CouplerParams())


@dataclass
class CutFit:
    detuning: float
    amplitude: float
    omega: float
    offset: float
    residual: float  # rms of the fit residuals

    @property
    def swap_time(self) -> float:
        """Time of the first transfer maximum."""
        return float(np.pi / (2 * self.omega))


@dataclass
class IswapScan:
    detunings: list  # Hz, relative to the exchange resonance
    durations: list  # seconds
    p_target: np.ndarray  # (detunings, durations) P_e of the qubit receiving the excitation
    p_source: np.ndarray  # P_e of the initially excited qubit
    fits: list = field(default_factory=list)
    g_eff: float = 0.0
    elapsed: float = 0.0

    def resonant(self) -> CutFit:
        k = int(np.argmin(np.abs(np.asarray(self.detunings))))
        return self.fits[k]

    def contrasts(self) -> np.ndarray:
        """Fitted transfer amplitude per detuning, relative to the resonant cut."""
        ref = self.resonant().amplitude
        return np.array([f.amplitude / ref for f in self.fits])

    def predicted_contrasts(self) -> np.ndarray:
        d = np.pi * np.asarray(self.detunings)
        return self.g_eff ** 2 / (self.g_eff ** 2 + d ** 2)


def _sin2(t, a, w, c):
    return a * np.sin(w * t) ** 2 + c


def fit_cut(t, p, detuning: float, g_guess: float) -> CutFit:
    """Fit ``a sin^2(w t) + c`` (a cosine of frequency 2w) to one cut."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    w0 = float(np.sqrt(g_guess ** 2 + (np.pi * detuning) ** 2))
    a0 = float(max(p.max() - p.min(), 1e-3))
    try:
        popt, _ = curve_fit(_sin2, t, p, p0=[a0, w0, float(p.min())], maxfev=20000)
    except RuntimeError:
        popt = np.array([a0, w0, float(p.min())])
    a, w, c = (float(v) for v in popt)
    if a < 0:
        a, c = -a, c + a
    res = float(np.sqrt(np.mean((_sin2(t, a, w, c) - p) ** 2)))
    return CutFit(detuning, a, abs(w), c, res)


def iswap_schedule(duration_ticks: int, readout, discs, shots_per_point: int, n_detunings: int,
                   dc_code: int) -> EventSchedule:
    cport = DRIVE_PORT["coupler"]
    evs = [SetDcBias(0, 0, dc_code), SetCarrier(0, cport, 0, 0, 1)]
    evs.append(pulse(0, "q1", PI))
    t = PULSE_TICKS
    for k in range(duration_ticks // COUPLER_BLOCK):
        evs.append(OutputTemplate(t + k * COUPLER_BLOCK, cport, 0))
    t += duration_ticks + 1
    evs += readout_events(t, readout, discs)
    return EventSchedule(evs, shots_per_point * n_detunings)


def run_iswap_scan(detunings=(0.0, -1.5e6, -0.75e6, 0.5e6, 1.0e6, 2.0e6), durations=None, device=None,
                   shots: int = 512, seed: int = 0, readout=None, discriminators=None, jobs: int = 1) -> IswapScan:
    """Populations of both qubits versus coupler-drive duration and detuning.

    The detuning is swept through the coupler carrier look-up table, one
    entry per repetition in turn; the duration by separate schedules in
    multiples of 20 ns.
    """
    t0 = time.perf_counter()
    dev = device or iswap_device()
    cp = dev.coupler
    durations = np.arange(0, 620e-9, 20e-9) if durations is None else np.asarray(durations, dtype=float)
    readout = readout or design_readout(dev, [0, 1])
    discs = discriminators or [model_discriminator(dev, readout, j, pair=j) for j in (0, 1)]
    amp = cp.drive_amplitude / cp.flux_per_fullscale
    carriers = [CarrierConfig.from_frequency(d) for d in detunings]
    inst = build_instrument(dev, readout, discs, drive={"q1": drive_templates(dev.qubits[1])},
                            carrier_luts={("coupler", 0): carriers},
                            coupler_templates={0: square_pulse(2 * COUPLER_BLOCK, amp)})
    nd = len(detunings)
    p_src = np.zeros((nd, durations.size))
    p_tgt = np.zeros((nd, durations.size))
    dc_code = int(round(cp.dc_flux * FLUX_DAC_CODES))
    src, tgt = cp.pair[1], cp.pair[0]
    for k, T in enumerate(durations):
        ticks = int(round(T / 2e-9))
        if ticks % COUPLER_BLOCK:
            raise ValueError("durations must be multiples of 20 ns")
        sched = iswap_schedule(ticks, readout, discs, shots, nd, dc_code)
        res = run(sched, inst, dev, seed=seed * 1009 + k, jobs=jobs)
        which = np.arange(sched.repeat_count) % nd
        for j, d in enumerate(discs):
            e = d.classify(res, j)
            col = [e[which == i].mean() for i in range(nd)]
            if d.qubit == src:
                p_src[:, k] = col
            elif d.qubit == tgt:
                p_tgt[:, k] = col
    g = cp.g_eff()
    fits = [fit_cut(durations, p_tgt[i], detunings[i], g) for i in range(nd)]
    return IswapScan(list(detunings), list(durations), p_tgt, p_src, fits, g, time.perf_counter() - t0)


def ideal_cut(durations, detuning: float, g_eff: float) -> np.ndarray:
    return exchange_prediction(np.asarray(durations), detuning, g_eff)
