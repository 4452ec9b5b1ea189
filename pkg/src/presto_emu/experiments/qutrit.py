"""Qutrit active reset: a three-state matched-filter discriminator built from
three template pairs, the Boolean mask that gates the two reset pulses, and
the closed-loop reset simulation."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from ..acquisition import MatchUnit, template_norm
from ..device import DT, TWO_PI, DeviceParams, sample_qubit
from ..engine import RunResult, run
from ..feedback import LatencyModel, qutrit_reset_config, qutrit_thresholds
from ..sequencer import ConditionalOutput, EventSchedule, MatchWindow, SetScale
from ..siggen import Template, drag_pulse
from .setup import (
    DRIVE_PORT,
    IN_PORT,
    PI,
    PI_EF,
    PULSE_TICKS,
    SX,
    ReadoutDesign,
    best_readout_frequency,
    build_instrument,
    nco_freq,
    prep_events,
    pulse,
    readout_events,
    reference_traces,
)

LEVELS = "gef"
# (plus, minus) template of each comparison: R_eg, R_fe, R_gf
PAIR_STATES = (("e", "g"), ("f", "e"), ("g", "f"))


def qutrit_device(noise_sigma: float = 0.0713, **overrides) -> DeviceParams:
    """Qubit 2 modelled with three levels and no thermal population."""
    kw = {"levels": 3, "p_therm": 0.0, **overrides}
    return DeviceParams([sample_qubit(2, **kw)], noise_sigma=noise_sigma)


def reset_pulses(reg: int, rfe: int, rgf: int) -> tuple[bool, bool]:
    """Reference logic: ``(pi_eg, pi_fg)`` for one set of comparison bits."""
    return bool(reg and not rfe), bool(rfe and not rgf)


def decide(reg, rfe, rgf) -> np.ndarray:
    """Level index (0 g, 1 e, 2 f) implied by the comparison bits."""
    reg, rfe, rgf = (np.asarray(b, dtype=bool) for b in (reg, rfe, rgf))
    out = np.zeros(np.broadcast(reg, rfe, rgf).shape, dtype=np.int8)
    out[reg & ~rfe] = 1
    out[rfe & ~rgf] = 2
    return out


def truth_table(config) -> list[dict]:
    """Mask bits produced by ``config.operator`` for all 8 comparison-bit
    combinations, next to the reference logic."""
    pairs = [config.operator.inputs[0][0], config.operator.inputs[0][1], config.operator.inputs[1][1]]
    rows = []
    for reg, rfe, rgf in itertools.product((0, 1), repeat=3):
        bits = np.zeros((1, 64), dtype=bool)
        bits[0, pairs] = (reg, rfe, rgf)
        mask = int(config.operator.evaluate(bits)[0])
        ref = reset_pulses(reg, rfe, rgf)
        rows.append({"R_eg": reg, "R_fe": rfe, "R_gf": rgf, "mask": mask,
                     "pi_eg": bool(mask & 1), "pi_fg": bool(mask & 2), "expected": ref})
    return rows


def _prepared(dev: DeviceParams, templates: dict, level: int) -> np.ndarray:
    inst = build_instrument(dev, None, [], drive={"q0": templates})
    evs, end = prep_events([level])
    return run(EventSchedule(evs, 256, period=end + 1), inst, dev, final_state=True).final_populations[0]


@dataclass
class QutritPulses:
    pi_drag: float
    ef_scale: float  # amplitude relative to pi_amp / sqrt(2)
    ef_drag: float
    fidelity_e: float
    fidelity_f: float
    pi_amp: float = 0.5186

    def templates(self, alpha: float) -> dict:
        a = self.pi_amp
        return {PI: drag_pulse(20e-9, a, alpha, self.pi_drag), SX: drag_pulse(20e-9, a / 2, alpha, self.pi_drag),
                PI_EF: drag_pulse(20e-9, self.ef_scale * a / np.sqrt(2), alpha, self.ef_drag)}


def calibrate_qutrit_pulses(dev: DeviceParams) -> QutritPulses:
    """Tune the DRAG coefficient of the g-e pulse, then the amplitude and DRAG
    of the e-f pulse, on the noiseless model with relaxation switched off.

    The e-f tone sits ``alpha`` away from the drive frame, where the 1 ns
    sample-and-hold output is attenuated, so its amplitude needs calibrating.
    """
    q = dev.qubits[0]
    ideal = DeviceParams([replace(q, T1=1.0, T2_echo=2.0, p_therm=0.0)], noise_sigma=0.0)
    base = QutritPulses(0.0, 1.0, 0.0, 0.0, 0.0)

    def miss_e(x):
        p = replace(base, pi_drag=float(x[0]))
        return 1 - _prepared(ideal, p.templates(q.alpha), 1)[1]

    r = minimize(miss_e, [0.0], method="Nelder-Mead", options={"xatol": 1e-3, "fatol": 1e-7, "initial_simplex": [[0.0], [0.5]]})
    base = replace(base, pi_drag=float(r.x[0]), fidelity_e=1 - float(r.fun))

    def miss_f(x):
        p = replace(base, ef_scale=float(x[0]), ef_drag=float(x[1]))
        return 1 - _prepared(ideal, p.templates(q.alpha), 2)[2]

    r = minimize(miss_f, [1.0, 0.0], method="Nelder-Mead",
                 options={"xatol": 1e-3, "fatol": 1e-7, "initial_simplex": [[1.0, 0.0], [1.1, 0.0], [1.0, -0.3]]})
    return replace(base, ef_scale=float(r.x[0]), ef_drag=float(r.x[1]), fidelity_f=1 - float(r.fun))


@dataclass
class QutritDiscriminator:
    """Three comparisons on pairs ``pairs``: pair ``k`` holds
    ``(tau_plus, -tau_minus)`` for ``PAIR_STATES[k]``."""

    taus: dict  # 'g', 'e', 'f' -> complex template samples
    window_start: int  # ticks after readout start
    pairs: tuple = (0, 1, 2)
    thresholds: list = field(default_factory=list)

    def __post_init__(self):
        self.taus = {k: np.asarray(v, dtype=np.complex128) for k, v in self.taus.items()}
        norms = {k: template_norm(Template(v)) for k, v in self.taus.items()}
        self.thresholds = qutrit_thresholds(norms)

    @property
    def window_ticks(self) -> int:
        return self.taus["g"].size // 2

    def units(self) -> dict:
        out = {}
        for p, (a, b) in zip(self.pairs, PAIR_STATES):
            out[2 * p] = MatchUnit(2 * p, Template(self.taus[a]), IN_PORT)
            out[2 * p + 1] = MatchUnit(2 * p + 1, Template(-self.taus[b]), IN_PORT)
        return out

    def windows(self, readout_at: int) -> list:
        return [MatchWindow(readout_at + self.window_start, p, self.window_ticks) for p in self.pairs]

    def bits(self, result: RunResult, k0: int = 0) -> np.ndarray:
        """``(R, 3)`` comparison bits from match records ``k0 .. k0+2``."""
        return np.stack([result.matches[k0 + i].sums >= self.thresholds[i] for i in range(3)], axis=1)

    def classify(self, result: RunResult, k0: int = 0) -> np.ndarray:
        b = self.bits(result, k0)
        return decide(b[:, 0], b[:, 1], b[:, 2])

    def overlap_error(self, sigma: float, samples: int = 400_000, seed: int = 0) -> np.ndarray:
        """Noise-only misassignment probability of each level.

        The three comparison statistics of a noiseless trace plus white
        complex noise (``sigma`` per quadrature) are jointly Gaussian; the
        decision is sampled from that distribution. Returns ``(3,)``.
        """
        diffs = [self.taus[a] - self.taus[b] for a, b in PAIR_STATES]
        half = [0.5 * (np.vdot(self.taus[a], self.taus[a]).real - np.vdot(self.taus[b], self.taus[b]).real)
                for a, b in PAIR_STATES]
        cov = sigma ** 2 * np.array([[np.vdot(da, db).real for db in diffs] for da in diffs])
        g = np.random.default_rng(seed)
        out = np.zeros(3)
        for i, lev in enumerate(LEVELS):
            mean = np.array([np.vdot(d, self.taus[lev]).real - h for d, h in zip(diffs, half)])
            z = g.multivariate_normal(mean, cov, size=samples, method="eigh")  # rank 2: the differences sum to zero
            out[i] = np.mean(decide(z[:, 0] >= 0, z[:, 1] >= 0, z[:, 2] >= 0) != i)
        return out


def qutrit_window(refs: dict, window_ticks: int) -> int:
    """Start tick of the window of ``window_ticks`` maximizing the smallest
    pairwise template separation."""
    n = 2 * window_ticks
    energy = None
    for a, b in itertools.combinations(LEVELS, 2):
        d = np.abs(refs[a] - refs[b]) ** 2
        c = np.concatenate([[0.0], np.cumsum(d)])
        e = c[n:] - c[:-n]
        energy = e if energy is None else np.minimum(energy, e)
    starts = np.arange(0, energy.size, 2)  # windows start on a tick
    best = int(starts[np.argmax(energy[starts])])
    return best // 2


def model_qutrit_discriminator(dev: DeviceParams, readout: ReadoutDesign, window_ticks: int = 100,
                               pairs=(0, 1, 2), start: int | None = 0) -> QutritDiscriminator:
    """Templates from noiseless model traces. ``start=None`` picks the best
    window anywhere in the readout; the default matches from the first
    sample, which keeps the resonator's memory of earlier levels short."""
    refs = reference_traces(dev, readout, [(0,), (1,), (2,)])
    r = {lev: refs[(k,)] for k, lev in enumerate(LEVELS)}
    if start is None:
        start = qutrit_window(r, window_ticks)
    s = slice(2 * start, 2 * (start + window_ticks))
    return QutritDiscriminator({k: v[s] for k, v in r.items()}, start, tuple(pairs))


def qutrit_readout(dev: DeviceParams, amplitude: float = 0.8, duration: float = 600e-9) -> ReadoutDesign:
    """Square feedline pulse at the frequency separating g, e and f best;
    a strong drive lets a short window at the start of the readout
    discriminate before the qubit has time to decay."""
    q = dev.qubits[0]
    tone = best_readout_frequency(q, (0, 1, 2))
    center = nco_freq(tone)
    t = np.arange(int(round(duration / DT))) * DT
    wave = amplitude * np.exp(1j * TWO_PI * (tone - center) * t)
    return ReadoutDesign(center, wave, {0: tone}, {0: np.array([amplitude])})


@dataclass
class QutritResetResult:
    prepared: np.ndarray  # (R,) prepared level
    detected: np.ndarray  # (R,) level read by the feedback comparisons
    fired_eg: np.ndarray  # (R,) bool
    fired_fg: np.ndarray  # (R,) bool
    final: np.ndarray  # (R, 3) level populations at the end of the shot
    epsilon: np.ndarray  # (3,) noise-only misassignment of g, e, f
    latency: float
    T1: float
    elapsed: float = 0.0

    @property
    def ground(self) -> float:
        return float(self.final[:, 0].mean())

    @property
    def bound(self) -> float:
        """``1 - 2 lambda / T1 - 3 eps`` with ``eps`` the mean misassignment."""
        return 1 - 2 * self.latency / self.T1 - 3 * float(self.epsilon.mean())

    def assignment(self) -> np.ndarray:
        """``m[i, j]`` = P(detected j | prepared i)."""
        m = np.zeros((3, 3))
        for i in range(3):
            sel = self.prepared == i
            if sel.any():
                m[i] = np.bincount(self.detected[sel], minlength=3)[:3] / sel.sum()
        return m

    def summary(self) -> dict:
        return {"ground_population": self.ground, "bound": self.bound,
                "epsilon": [float(e) for e in self.epsilon], "latency": self.latency,
                "fired_eg": float(self.fired_eg.mean()), "fired_fg": float(self.fired_fg.mean()),
                "final_populations": [float(v) for v in self.final.mean(axis=0)]}


def qutrit_reset_schedule(readout: ReadoutDesign, disc: QutritDiscriminator, shots: int,
                          latency: LatencyModel, settle: int = 0) -> EventSchedule:
    """Prepare g, e, f in turn (scale look-up tables stepped per repetition),
    read out, and release the gated pulses right after the match result.

    ``pi_fg`` is played as ``pi_fe`` followed by ``pi_eg``.
    """
    port = DRIVE_PORT["q0"]
    evs = [SetScale(0, port, 0, 0, 1), SetScale(0, port, 1, 0, 1),
           pulse(0, "q0", PI), pulse(PULSE_TICKS, "q0", PI_EF)]
    t0 = 2 * PULSE_TICKS + 1
    # fixed unit scales for the feedback pulses
    evs += [SetScale(t0, port, 0, 1, 0), SetScale(t0, port, 1, 2, 0)]
    evs += readout_events(t0, readout)
    evs += disc.windows(t0)
    fire = t0 + disc.window_start + disc.window_ticks + latency.ticks
    evs += [ConditionalOutput(fire, port, PI, 0), ConditionalOutput(fire, port, PI_EF, 1),
            ConditionalOutput(fire + PULSE_TICKS, port, PI, 1)]
    period = max(t0 + readout.ticks, fire + 2 * PULSE_TICKS) + settle
    fb = qutrit_reset_config(disc.thresholds, latency, disc.pairs)
    return EventSchedule(evs, shots, period=period, feedback=fb)


def run_qutrit_reset(dev: DeviceParams | None = None, shots: int = 30_000, seed: int = 0, latency=None,
                     readout: ReadoutDesign | None = None, disc: QutritDiscriminator | None = None,
                     window_ticks: int = 100, pulses: QutritPulses | None = None, jobs: int = 1,
                     batch_size: int = 3072) -> QutritResetResult:
    """Closed-loop qutrit reset from a uniform g/e/f mixture; the final
    populations are the device's at the end of the shot."""
    t_start = time.perf_counter()
    dev = dev or qutrit_device()
    latency = latency or LatencyModel()
    readout = readout or qutrit_readout(dev)
    disc = disc or model_qutrit_discriminator(dev, readout, window_ticks)
    pulses = pulses or calibrate_qutrit_pulses(dev)
    inst = build_instrument(dev, readout, [], drive={"q0": pulses.templates(dev.qubits[0].alpha)},
                            scale_luts={("q0", 0): [0.0, 1.0, 1.0], ("q0", 1): [0.0, 0.0, 1.0]})
    inst.match_units.update(disc.units())
    sched = qutrit_reset_schedule(readout, disc, shots, latency)
    res = run(sched, inst, dev, seed=seed, jobs=jobs, batch_size=batch_size, final_state=True)
    prepared = (np.arange(shots) % 3).astype(np.int8)
    fires = {(f.template_id, f.mask_bit): f.fired for f in res.fires}
    eps = disc.overlap_error(dev.noise_sigma)
    return QutritResetResult(prepared, disc.classify(res, 0), fires[(PI, 0)], fires[(PI_EF, 1)],
                             res.final_populations, eps, latency.round_trip, dev.qubits[0].T1,
                             time.perf_counter() - t_start)
