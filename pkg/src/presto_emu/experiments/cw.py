"""Continuous-wave mode demo: a probe tone and a swept pump tone generated as
a frequency comb, up-converted, looped back, down-converted and measured by
lock-in demodulators sharing one phase reference. Signal processing only;
no device physics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from ..dsp import BASEBAND_RATE, NcoConfig, comb_generate, frequency_word, iq_mix, lockin_demodulate, nco_phase_sequence


@dataclass
class CwDemoResult:
    pump_frequencies: np.ndarray  # Hz, relative to the NCO
    probe: np.ndarray  # complex lock-in component at the probe, per pump step
    pump: np.ndarray  # complex lock-in component at the pump
    expected_probe: complex
    expected_pump: np.ndarray
    window: int

    def max_error(self) -> float:
        return float(max(np.max(np.abs(self.probe - self.expected_probe)),
                         np.max(np.abs(self.pump - self.expected_pump))))


def grid_frequency(f: float, window: int) -> float:
    """Nearest frequency with a whole number of periods in ``window`` samples."""
    df = BASEBAND_RATE / window
    return round(f / df) * df


def run_cw_demo(probe_frequency: float = 25e6, pump_frequencies=None, probe_amplitude: float = 0.3,
                pump_amplitude: float = 0.2, window: int = 10_000, nco_frequency: float = 4.0e9,
                noise_sigma: float = 0.0, seed: int = 0) -> CwDemoResult:
    """Two-tone sweep through the comb generator and demodulators.

    Tones are placed on the demodulation grid so that each lock-in window
    holds whole periods and the two tones are orthogonal. The loopback path
    up-converts with the NCO and down-converts with the same NCO.
    """
    fp = grid_frequency(probe_frequency, window)
    pumps = np.linspace(-200e6, 200e6, 41) if pump_frequencies is None else np.asarray(pump_frequencies, float)
    pumps = np.array([grid_frequency(f, window) for f in pumps])
    # the mixer LO is sampled at the baseband rate, so the NCO folds into
    # the first Nyquist zone; up- then down-conversion cancels it exactly
    lo = nco_phase_sequence(NcoConfig.from_frequency(nco_frequency % BASEBAND_RATE, BASEBAND_RATE), window)
    phase_p = 0
    probe, pump = [], []
    exp_pump = []
    for k, f in enumerate(pumps):
        if f == fp:
            raise ValueError("pump and probe coincide on the demodulation grid")
        phase_k = (k * (1 << 15)) % (1 << 18)  # pump phase steps by pi/4 per point
        comb = comb_generate([(frequency_word(fp), probe_amplitude, phase_p),
                              (frequency_word(f), pump_amplitude, phase_k)], window)
        line = iq_mix(comb, lo, "up")
        if noise_sigma:
            line = line + noise_sigma * rng.rep_normal_samples(seed, "cw", np.array([k]), 0, window)[0]
        back = iq_mix(line, lo, "down")
        probe.append(lockin_demodulate(back, frequency_word(fp), window))
        pump.append(lockin_demodulate(back, frequency_word(f), window))
        exp_pump.append(pump_amplitude * np.exp(2j * np.pi * phase_k / (1 << 18)))
    return CwDemoResult(pumps, np.array(probe), np.array(pump), complex(probe_amplitude), np.array(exp_pump), window)
