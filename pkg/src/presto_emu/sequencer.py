"""Event programs on the 2 ns tick grid: event types, the schedule container,
validation, loop expansion and the JSON document format.

Sweeps: a Set event with ``lut_index = i`` and ``stride = s`` selects entry
``(i + s*r) mod L`` in repetition ``r`` (L = LUT length). Store windows can
likewise step their SDRAM address with ``address_stride`` (cycling after
``address_cycle`` repetitions) to keep swept points apart.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .feedback import MASK_BITS, N_PAIRS, FeedbackConfig

TICK_NS = 2
MAX_TICK = 1 << 48
MAX_TOTAL = 1 << 64
LUT_SIZE = 512
MAX_MATCH_TICKS = 511
N_PORTS = 16
N_DC = 16
N_MARKERS = 4
BUFFER_PAIRS = 1 << 19
SDRAM_CELLS = 1 << 29


@dataclass(frozen=True)
class OutputTemplate:
    at: int
    port: int
    template_id: int


@dataclass(frozen=True)
class SetCarrier:
    at: int
    port: int
    group: int
    lut_index: int
    stride: int = 1


@dataclass(frozen=True)
class SetScale:
    at: int
    port: int
    group: int
    lut_index: int
    stride: int = 1


@dataclass(frozen=True)
class StoreWindow:
    at: int
    port: int
    duration: int  # ticks
    address: int  # SDRAM cell address
    address_stride: int = 0
    address_cycle: int = 1

    def address_for(self, rep: int) -> int:
        return self.address + self.address_stride * (rep % max(self.address_cycle, 1))


@dataclass(frozen=True)
class MatchWindow:
    at: int
    pair_id: int
    duration: int  # ticks


@dataclass(frozen=True)
class ConditionalOutput:
    at: int
    port: int
    template_id: int
    mask_bit: int


@dataclass(frozen=True)
class SetDcBias:
    at: int
    channel: int
    code: int


@dataclass(frozen=True)
class SetMarker:
    at: int
    bit: int
    level: int


@dataclass(frozen=True)
class LoopMarker:
    at: int
    edge: str  # "begin" | "end"
    count: int = 1


EVENT_TYPES = {c.__name__: c for c in (OutputTemplate, SetCarrier, SetScale, StoreWindow, MatchWindow,
                                       ConditionalOutput, SetDcBias, SetMarker, LoopMarker)}
# Parameter updates land before outputs and windows at the same tick.
PRIORITY = {"LoopMarker": 0, "SetCarrier": 1, "SetScale": 1, "SetDcBias": 1, "SetMarker": 1,
            "OutputTemplate": 2, "StoreWindow": 2, "MatchWindow": 2, "ConditionalOutput": 2}


def sort_key(ev):
    return (ev.at, PRIORITY[type(ev).__name__])


@dataclass
class EventSchedule:
    events: list = field(default_factory=list)
    repeat_count: int = 1
    period: int = 0  # ticks per repetition; 0 means "last event end"
    feedback: FeedbackConfig | None = None

    def __post_init__(self):
        # stable: insertion order survives among equal (tick, priority)
        self.events = sorted(self.events, key=sort_key)

    def add(self, *events):
        self.events = sorted(self.events + list(events), key=sort_key)
        return self

    @property
    def span(self) -> int:
        """Ticks covered by the (loop-expanded) events of one repetition."""
        end = 0
        for ev in expand_loops(self.events):
            end = max(end, ev.at + getattr(ev, "duration", 0) + 1)
        return end

    @property
    def effective_period(self) -> int:
        return self.period or self.span

    def to_dict(self) -> dict:
        return {
            "repeat_count": self.repeat_count,
            "period": self.period,
            "feedback": None if self.feedback is None else self.feedback.to_dict(),
            "events": [{"kind": type(e).__name__, **asdict(e)} for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventSchedule":
        events = []
        for raw in d.get("events", []):
            raw = dict(raw)
            kind = raw.pop("kind")
            if kind not in EVENT_TYPES:
                raise ValueError(f"unknown event kind {kind!r}")
            events.append(EVENT_TYPES[kind](**raw))
        fb = d.get("feedback")
        return cls(events, int(d.get("repeat_count", 1)), int(d.get("period", 0)),
                   None if fb is None else FeedbackConfig.from_dict(fb))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EventSchedule":
        return cls.from_dict(json.loads(text))


def expand_loops(events) -> list:
    """Replace LoopMarker begin/end pairs by ``count`` copies of the enclosed
    events, spaced by the begin-to-end span. Events keep absolute times; the
    caller is responsible for not placing events inside the repeated range."""
    events = sorted(events, key=sort_key)
    out, stack = [], []
    for ev in events:
        if isinstance(ev, LoopMarker):
            if ev.edge == "begin":
                stack.append((ev, len(out)))
            elif ev.edge == "end":
                if not stack:
                    raise ValueError(f"loop end at tick {ev.at} without begin")
                begin, pos = stack.pop()
                body = out[pos:]
                span = ev.at - begin.at
                for k in range(1, begin.count):
                    out.extend(replace(e, at=e.at + k * span) for e in body)
            continue
        out.append(ev)
    if stack:
        raise ValueError(f"loop begin at tick {stack[-1][0].at} without end")
    return sorted(out, key=sort_key)


def latency_violations(events, feedback: FeedbackConfig | None) -> list[str]:
    """Conditional outputs firing before the feedback path can deliver the
    decision from every relevant earlier match window."""
    out = []
    lat = (feedback.latency.ticks if feedback is not None else 0)
    windows = [e for e in events if isinstance(e, MatchWindow)]
    for ev in events:
        if not isinstance(ev, ConditionalOutput):
            continue
        pairs = None
        if feedback is not None:
            pairs = set(feedback.operator.relevant_pairs(ev.mask_bit)) if ev.mask_bit < MASK_BITS else set()
        for w in windows:
            if pairs is not None and w.pair_id not in pairs:
                continue
            if w.at >= ev.at:
                continue
            earliest = w.at + w.duration + lat
            if ev.at < earliest:
                out.append(f"conditional output at tick {ev.at} precedes its match result from "
                           f"pair {w.pair_id} (window ends {w.at + w.duration}, latency {lat} ticks); "
                           f"earliest legal tick {earliest}")
    return out


def validate(schedule: EventSchedule, instrument=None) -> list[str]:
    """All invariant violations as messages; an empty list means valid."""
    v: list[str] = []
    evs = schedule.events
    if [sort_key(e) for e in evs] != sorted(sort_key(e) for e in evs):
        v.append("events not sorted by tick and kind priority")
    for e in evs:
        name = type(e).__name__
        if not isinstance(e.at, int) or e.at < 0 or e.at >= MAX_TICK:
            v.append(f"{name} tick {e.at} outside 0..2**48-1")
        if isinstance(e, (SetCarrier, SetScale)):
            if not 0 <= e.lut_index < LUT_SIZE:
                v.append(f"{name} at tick {e.at}: lut index out of range ({e.lut_index})")
            if not 0 <= e.group < 2:
                v.append(f"{name} at tick {e.at}: group {e.group} out of range")
        if isinstance(e, (OutputTemplate, ConditionalOutput)) and not 0 <= e.template_id < 16:
            v.append(f"{name} at tick {e.at}: template id {e.template_id} out of range 0..15")
        if hasattr(e, "port") and not 0 <= e.port < N_PORTS:
            v.append(f"{name} at tick {e.at}: port {e.port} out of range")
        if isinstance(e, MatchWindow):
            if not 0 <= e.pair_id < N_PAIRS:
                v.append(f"MatchWindow at tick {e.at}: pair id {e.pair_id} out of range 0..63")
            if not 0 < e.duration <= MAX_MATCH_TICKS:
                v.append(f"MatchWindow at tick {e.at}: duration {e.duration} ticks exceeds 1022 ns")
        if isinstance(e, StoreWindow):
            if e.duration <= 0:
                v.append(f"StoreWindow at tick {e.at}: empty window")
            hi = e.address + e.address_stride * (max(e.address_cycle, 1) - 1)
            if min(e.address, hi) < 0 or max(e.address, hi) + 4 * e.duration > SDRAM_CELLS:
                v.append(f"StoreWindow at tick {e.at}: SDRAM address range outside 0..2**29")
        if isinstance(e, ConditionalOutput) and not 0 <= e.mask_bit < MASK_BITS:
            v.append(f"ConditionalOutput at tick {e.at}: mask bit {e.mask_bit} out of range")
        if isinstance(e, SetDcBias):
            if not 0 <= e.channel < N_DC:
                v.append(f"SetDcBias at tick {e.at}: channel {e.channel} out of range")
            if not -32768 <= e.code < 32768:
                v.append(f"SetDcBias at tick {e.at}: code {e.code} outside 16 bits")
        if isinstance(e, SetMarker) and (not 0 <= e.bit < N_MARKERS or e.level not in (0, 1)):
            v.append(f"SetMarker at tick {e.at}: bit/level out of range")
        if isinstance(e, LoopMarker) and (e.edge not in ("begin", "end") or e.count < 1):
            v.append(f"LoopMarker at tick {e.at}: bad edge or count")
    if schedule.repeat_count < 0 or schedule.repeat_count >= MAX_TOTAL:
        v.append("repeat count outside 64 bits")
    try:
        flat = expand_loops(evs)
    except ValueError as exc:
        v.append(str(exc))
        flat = [e for e in evs if not isinstance(e, LoopMarker)]
    period = schedule.period or max((e.at + getattr(e, "duration", 0) + 1 for e in flat), default=0)
    if schedule.repeat_count * period >= MAX_TOTAL:
        v.append("repeat_count x period reaches 2**64 ticks")
    if schedule.period and any(e.at + getattr(e, "duration", 0) > schedule.period for e in flat):
        v.append("events extend beyond the repetition period")
    used = sum(2 * e.duration for e in flat if isinstance(e, StoreWindow))
    if used > BUFFER_PAIRS:
        v.append(f"store windows need {used} IQ pairs per repetition; buffer holds {BUFFER_PAIRS}")
    if any(isinstance(e, ConditionalOutput) for e in flat) and schedule.feedback is None:
        v.append("conditional outputs need a feedback configuration")
    v += latency_violations(flat, schedule.feedback)
    if instrument is not None:
        v += instrument.check(flat)
    return v
