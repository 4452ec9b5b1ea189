"""Execution of event schedules against an instrument configuration and a
device model.

Repetitions run in vectorized batches. Repetitions that see the same
look-up-table entries share a batch; all randomness is
keyed by (seed, repetition, position), so results do not depend on batch
size, batch order or the number of worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .acquisition import SdramImage
from .device import DeviceBatch, DeviceError, DeviceParams, LoopbackBatch, Model
from .dsp import ADC_INPUT, NcoConfig, quantize_codes
from .feedback import comparison_bits
from .sequencer import (
    ConditionalOutput,
    EventSchedule,
    MatchWindow,
    OutputTemplate,
    SetCarrier,
    SetDcBias,
    SetMarker,
    SetScale,
    StoreWindow,
    expand_loops,
    validate,
)
from .siggen import TEMPLATES_PER_GROUP, render_port

LINES = ("q0", "q1", "coupler", "feedline")


class ScheduleError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid schedule:\n  " + "\n  ".join(self.violations))


class RunError(RuntimeError):
    pass


@dataclass
class InputPort:
    nco: NcoConfig = field(default_factory=NcoConfig)
    adc_rate: float = 10e9

    @property
    def rf_center(self) -> float:
        return self.nco.frequency(self.adc_rate)


@dataclass
class Instrument:
    """Loaded configuration: output ports, input ports, match units, and the
    wiring of output ports to device lines (``q0``, ``q1``, ``coupler``,
    ``feedline``). Input ports listen to the feedline."""

    ports: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=lambda: {0: InputPort()})
    match_units: dict = field(default_factory=dict)
    wiring: dict = field(default_factory=dict)

    def centers(self) -> dict:
        return {line: self.ports[p].rf_center for p, line in self.wiring.items()}

    def check(self, events) -> list[str]:
        v = []
        lines = list(self.wiring.values())
        for line in set(lines):
            if lines.count(line) > 1:
                v.append(f"device line {line} driven by more than one port")
        for line in lines:
            if line not in LINES:
                v.append(f"unknown device line {line!r}")
        for e in events:
            if isinstance(e, (OutputTemplate, ConditionalOutput, SetCarrier, SetScale)):
                if e.port not in self.ports:
                    v.append(f"{type(e).__name__} at tick {e.at}: output port {e.port} not configured")
                    continue
                if isinstance(e, (OutputTemplate, ConditionalOutput)):
                    try:
                        self.ports[e.port].template(e.template_id)
                    except IndexError as exc:
                        v.append(f"{type(e).__name__} at tick {e.at} on port {e.port}: {exc}")
            if isinstance(e, StoreWindow) and e.port not in self.inputs:
                v.append(f"StoreWindow at tick {e.at}: input port {e.port} not configured")
            if isinstance(e, MatchWindow):
                units = [self.match_units.get(2 * e.pair_id + k) for k in (0, 1)]
                if not any(units):
                    v.append(f"MatchWindow at tick {e.at}: pair {e.pair_id} has no match units")
                for u in units:
                    if u is None:
                        continue
                    if len(u.template) != 2 * e.duration:
                        v.append(f"MatchWindow at tick {e.at}: unit {u.id} template has {len(u.template)} "
                                 f"samples, window has {2 * e.duration}")
                    if u.input_port not in self.inputs:
                        v.append(f"match unit {u.id} listens to unconfigured input {u.input_port}")
        return v


@dataclass
class MatchRecord:
    at: int
    pair_id: int
    duration: int
    values: np.ndarray  # (R, 2) int64, units 2i and 2i+1

    @property
    def sums(self) -> np.ndarray:
        return self.values.sum(axis=1)


@dataclass
class FireRecord:
    at: int
    port: int
    template_id: int
    mask_bit: int
    fired: np.ndarray  # (R,) bool


@dataclass
class ShotRecord:
    rep: int
    match_values: list
    comparison_bits: list
    fired: list
    store_addresses: list


@dataclass
class RunResult:
    repeat_count: int
    matches: list
    fires: list
    stores: list  # (StoreWindow, addresses (R,))
    sdram: SdramImage
    bits: list  # per match record: (R,) bool comparison bit (None without feedback)
    captures: dict = field(default_factory=dict)  # rep -> {port: trace}
    dc_log: list = field(default_factory=list)
    marker_log: list = field(default_factory=list)
    dac_saturated: bool = False
    adc_saturated: bool = False
    final_populations: np.ndarray | None = None  # (R, D) device populations at the end of the period

    def shot(self, r: int) -> ShotRecord:
        return ShotRecord(r, [m.values[r].tolist() for m in self.matches],
                          [None if b is None else bool(b[r]) for b in self.bits],
                          [bool(f.fired[r]) for f in self.fires],
                          [int(a[r]) for _, a in self.stores])

    def match_sums(self, k: int = 0) -> np.ndarray:
        return self.matches[k].sums

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for m in self.matches:
            h.update(m.values.tobytes())
        for f in self.fires:
            h.update(f.fired.tobytes())
        for addr in sorted(self.sdram.regions):
            h.update(self.sdram.to_bytes(addr, self.sdram.regions[addr]))
        return h.hexdigest()


# ------------------------------------------------------------------ plan

@dataclass
class _Plan:
    events: list
    instrument: Instrument
    device: DeviceParams | None
    feedback: object
    latency: int
    repeat_count: int
    period: int
    windows: list  # input sample windows (n0, n1)
    signature_period: int
    final_state: bool = False


def _lut_len(instrument, ev) -> int:
    g = instrument.ports[ev.port].groups[ev.group]
    return len(g.carrier_lut if isinstance(ev, SetCarrier) else g.scale_lut) or 1


def _plan(schedule: EventSchedule, instrument: Instrument, device) -> _Plan:
    events = expand_loops(schedule.events)
    cycles = [1]
    for e in events:
        if isinstance(e, (SetCarrier, SetScale)) and e.stride:
            cycles.append(_lut_len(instrument, e))
    P = 1
    for c in cycles:
        P = P * c // math.gcd(P, c)
    windows = [(2 * e.at, 2 * (e.at + e.duration)) for e in events if isinstance(e, (StoreWindow, MatchWindow))]
    lat = schedule.feedback.latency.ticks if schedule.feedback is not None else 0
    return _Plan(events, instrument, device, schedule.feedback, lat, schedule.repeat_count,
                 schedule.effective_period, windows, P)


class _Batch:
    """One batch of repetitions walking the event list."""

    def __init__(self, plan: _Plan, reps: np.ndarray, seed: int, model_cache: dict):
        self.plan, self.reps, self.seed = plan, reps, seed
        self.N = reps.size
        ins = plan.instrument
        if plan.device is not None:
            key = id(plan.device)
            model = model_cache.get(key)
            if model is None:
                model = model_cache[key] = Model(plan.device, ins.centers())
            self.dev = DeviceBatch(plan.device, reps, seed, ins.centers(), plan.windows, model)
        else:
            fc = ins.centers().get("feedline", 0.0)
            self.dev = LoopbackBatch(reps, plan.windows, fc)
        # rows sharing a look-up-table signature render identically
        sig = reps % plan.signature_period
        uniq, self.sig_of_row = np.unique(sig, return_inverse=True)
        self.sig_of_row = self.sig_of_row.reshape(-1)
        self.sig_first = np.array([int(np.flatnonzero(self.sig_of_row == k)[0]) for k in range(uniq.size)])
        self.shared = {p: [] for p in ins.ports}  # (tick, group, tid)
        self.gated = {p: [] for p in ins.ports}  # (tick, group, tid, rows)
        self.carrier = {p: [] for p in ins.ports}  # (tick, group, entry per row)
        self.scale = {p: [] for p in ins.ports}
        self.pos = 0  # device sample position
        self.acq = {}
        self.match_vals = {}  # window index -> (N, 2)
        self.match_order = []  # (end_tick, pair, window index)
        self.fired = {}
        self.store_addr = {}
        self.sdram = SdramImage()
        self.dac_sat = False
        self.adc_sat = False
        self.dc_log, self.marker_log = [], []

    # -- rendering
    def _lut_events(self, p: int, row: int):
        return ([(t, g, int(e[row])) for t, g, e in self.carrier[p]],
                [(t, g, int(e[row])) for t, g, e in self.scale[p]])

    def _drives(self, t0: int, t1: int) -> dict:
        ins = self.plan.instrument
        out = {}
        for p, line in ins.wiring.items():
            port = ins.ports[p]
            shared = [(t, g, i) for t, g, i in self.shared[p]
                      if 2 * t < 2 * t1 and 2 * t + len(port.template(g * TEMPLATES_PER_GROUP + i)) > 2 * t0]
            gated = [(t, g, i, rows) for t, g, i, rows in self.gated[p]
                     if 2 * t < 2 * t1 and 2 * t + len(port.template(g * TEMPLATES_PER_GROUP + i)) > 2 * t0]
            if not shared and not gated:
                continue
            keyed = bool(self.carrier[p] or self.scale[p]) and self.sig_first.size > 1
            cols = [self.sig_of_row[:, None]] if keyed else []
            cols += [rows[:, None] for *_, rows in gated]
            if cols:
                pattern = np.concatenate([c.astype(np.int64) for c in cols], axis=1)
                uniq, inv = np.unique(pattern, axis=0, return_inverse=True)
                inv = inv.reshape(-1)
            else:
                uniq, inv = np.zeros((1, 0), np.int64), np.zeros(self.N, np.int64)
            pats = []
            for k, key in enumerate(uniq):
                rows = np.flatnonzero(inv == k)
                on = key[1:] if keyed else key
                active = shared + [(t, g, i) for (t, g, i, _), a in zip(gated, on) if a]
                cev, sev = self._lut_events(p, int(rows[0]))
                trace, sat = render_port(port, active, (t0, t1), cev, sev)
                self.dac_sat |= sat
                pats.append((None if uniq.shape[0] == 1 else rows, trace))
            out[line] = pats
        return out

    def advance_to(self, tick: int):
        if 2 * tick <= self.pos:
            return
        t0 = self.pos // 2
        try:
            self.dev.advance(self.pos, 2 * tick, self._drives(t0, tick))
        except DeviceError as exc:
            raise RunError(f"device failure between ticks {t0} and {tick}, repetitions "
                           f"{int(self.reps[0])}..{int(self.reps[-1])}: {exc}") from exc
        self.pos = 2 * tick

    def codes(self, port: int, n0: int, n1: int) -> np.ndarray:
        key = (port, n0, n1)
        c = self.acq.get(key)
        if c is None:
            sig = self.dev.acquire(n0, n1, self.plan.instrument.inputs[port].rf_center)
            ci, si = quantize_codes(sig.real, ADC_INPUT)
            cq, sq = quantize_codes(sig.imag, ADC_INPUT)
            self.adc_sat |= si or sq
            c = np.empty((self.N, 2 * (n1 - n0)), dtype=np.int64)
            c[:, 0::2], c[:, 1::2] = 4 * ci, 4 * cq  # 14-bit codes on the 16-bit grid
            self.acq[key] = c
        return c

    # -- windows
    def do_match(self, k: int, ev: MatchWindow):
        self.advance_to(ev.at + ev.duration)
        vals = np.zeros((self.N, 2), dtype=np.int64)
        for j in (0, 1):
            unit = self.plan.instrument.match_units.get(2 * ev.pair_id + j)
            if unit is None:
                continue
            c = self.codes(unit.input_port, 2 * ev.at, 2 * (ev.at + ev.duration))
            vals[:, j] = c @ unit.weights
        self.match_vals[k] = vals

    def do_store(self, k: int, ev: StoreWindow):
        self.advance_to(ev.at + ev.duration)
        c = self.codes(ev.port, 2 * ev.at, 2 * (ev.at + ev.duration))
        addrs = ev.address + ev.address_stride * (self.reps % max(ev.address_cycle, 1))
        self.store_addr[k] = addrs
        for a in np.unique(addrs):
            sel = addrs == a
            self.sdram.add(int(a), c[sel].sum(axis=0), count=int(sel.sum()))

    def mask(self, tick: int, ev: ConditionalOutput) -> np.ndarray:
        fb = self.plan.feedback
        latest = {}
        for k, e in self.match_order:
            if e.at + e.duration + self.plan.latency <= tick:
                latest[e.pair_id] = (k, e)
        for k, e in latest.values():
            if k not in self.match_vals:
                self.do_match(k, e)
        sums = {p: self.match_vals[k].sum(axis=1) for p, (k, _) in latest.items()}
        bits = comparison_bits(sums, fb.thresholds, self.N)
        m = fb.operator.evaluate(bits)
        return ((m >> ev.mask_bit) & 1).astype(bool)

    def run(self):
        plan = self.plan
        pending = []
        for k, ev in enumerate(plan.events):
            if isinstance(ev, SetCarrier):
                entry = (ev.lut_index + ev.stride * self.reps) % _lut_len(plan.instrument, ev)
                self.carrier[ev.port].append((ev.at, ev.group, entry))
            elif isinstance(ev, SetScale):
                entry = (ev.lut_index + ev.stride * self.reps) % _lut_len(plan.instrument, ev)
                self.scale[ev.port].append((ev.at, ev.group, entry))
            elif isinstance(ev, SetDcBias):
                self.dc_log.append((ev.at, ev.channel, ev.code))
            elif isinstance(ev, SetMarker):
                self.marker_log.append((ev.at, ev.bit, ev.level))
            elif isinstance(ev, OutputTemplate):
                g, i = divmod(ev.template_id, TEMPLATES_PER_GROUP)
                self.shared[ev.port].append((ev.at, g, i))
            elif isinstance(ev, MatchWindow):
                self.match_order.append((k, ev))
                pending.append((k, ev))
            elif isinstance(ev, StoreWindow):
                pending.append((k, ev))
            elif isinstance(ev, ConditionalOutput):
                on = self.mask(ev.at, ev)
                self.fired[k] = on
                g, i = divmod(ev.template_id, TEMPLATES_PER_GROUP)
                self.gated[ev.port].append((ev.at, g, i, on))
        for k, ev in sorted(pending, key=lambda x: x[1].at + x[1].duration):
            if isinstance(ev, MatchWindow):
                if k not in self.match_vals:
                    self.do_match(k, ev)
            else:
                self.do_store(k, ev)
        self.final = None
        if plan.final_state and isinstance(self.dev, DeviceBatch):
            self.advance_to(plan.period)
            self.final = self.dev.excited()
        return self

    def capture(self, rows) -> dict:
        """Emitted port traces over the whole period for the given rows."""
        ins = self.plan.instrument
        out = {}
        for row in rows:
            traces = {}
            for p, port in ins.ports.items():
                active = list(self.shared[p]) + [(t, g, i) for t, g, i, on in self.gated[p] if on[row]]
                cev, sev = self._lut_events(p, row)
                traces[p], _ = render_port(port, active, (0, self.plan.period), cev, sev)
            out[int(self.reps[row])] = traces
        return out


def _batches(plan: _Plan, batch_size: int):
    """Contiguous, block-aligned repetition ranges; rows of different
    look-up-table signatures share a batch and render separately."""
    R = plan.repeat_count
    return [np.arange(i, min(i + batch_size, R), dtype=np.int64) for i in range(0, R, batch_size)]


def _execute(plan: _Plan, batches, seed: int, capture):
    cache = {}
    parts = []
    for reps in batches:
        b = _Batch(plan, reps, seed, cache).run()
        rows = [int(np.searchsorted(reps, r)) for r in capture if r in set(reps.tolist())]
        parts.append((reps, b.match_vals, b.fired, b.store_addr, b.sdram, b.dac_sat, b.adc_sat,
                      b.capture(rows) if rows else {}, b.dc_log, b.marker_log, b.final))
    return parts


def run(schedule: EventSchedule, instrument: Instrument, device: DeviceParams | None = None, seed: int = 0,
        *, batch_size: int = 1024, jobs: int = 1, capture=(), final_state: bool = False) -> RunResult:
    """Execute ``schedule``; ``device=None`` loops the feedline drive back to
    the inputs. ``capture`` lists repetitions whose emitted port traces are
    kept; ``final_state`` records each shot's level populations at the end of
    the period."""
    violations = validate(schedule, instrument)
    if violations:
        raise ScheduleError(violations)
    if batch_size % rng.REP_BLOCK:
        raise ValueError(f"batch size must be a multiple of {rng.REP_BLOCK}")
    plan = _plan(schedule, instrument, device)
    plan.final_state = final_state and device is not None
    batches = _batches(plan, batch_size)
    capture = sorted(set(int(c) for c in capture))
    if jobs > 1 and len(batches) > 1:
        chunks = [batches[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute, plan, ch, seed, capture) for ch in chunks if ch]
            parts = [p for f in futures for p in f.result()]
    else:
        parts = _execute(plan, batches, seed, capture)
    return _assemble(plan, parts)


def _assemble(plan: _Plan, parts) -> RunResult:
    R = plan.repeat_count
    evs = plan.events
    match_idx = [k for k, e in enumerate(evs) if isinstance(e, MatchWindow)]
    fire_idx = [k for k, e in enumerate(evs) if isinstance(e, ConditionalOutput)]
    store_idx = [k for k, e in enumerate(evs) if isinstance(e, StoreWindow)]
    mvals = {k: np.zeros((R, 2), np.int64) for k in match_idx}
    fired = {k: np.zeros(R, bool) for k in fire_idx}
    addrs = {k: np.zeros(R, np.int64) for k in store_idx}
    sdram = SdramImage()
    captures = {}
    dac = adc = False
    dc_log = marker_log = []
    final = None
    for reps, mv, fi, sa, img, ds, as_, cap, dcl, mkl, fin in sorted(parts, key=lambda p: int(p[0][0])):
        for k, v in mv.items():
            mvals[k][reps] = v
        for k, v in fi.items():
            fired[k][reps] = v
        for k, a in sa.items():
            addrs[k][reps] = a
        sdram.merge(img)
        captures.update(cap)
        dac |= ds
        adc |= as_
        dc_log, marker_log = dcl, mkl
        if fin is not None:
            if final is None:
                final = np.zeros((R, fin.shape[1]))
            final[reps] = fin
    fb = plan.feedback
    matches, bits = [], []
    for k in match_idx:
        e = evs[k]
        matches.append(MatchRecord(e.at, e.pair_id, e.duration, mvals[k]))
        bits.append(None if fb is None else mvals[k].sum(axis=1) >= fb.thresholds.thresholds[e.pair_id])
    fires = [FireRecord(evs[k].at, evs[k].port, evs[k].template_id, evs[k].mask_bit, fired[k]) for k in fire_idx]
    stores = [(evs[k], addrs[k]) for k in store_idx]
    return RunResult(R, matches, fires, stores, sdram, bits, captures, dc_log, marker_log, dac, adc, final)
