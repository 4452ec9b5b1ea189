"""Low-latency feedback: threshold comparators over match-unit pairs, a
programmable Boolean operator producing an 8-bit mask, and the latency model
that decides when a conditional output may fire.

Comparison bit ``i`` is ``1`` when the sum of match units ``2i`` and ``2i+1``
is at least ``thresholds[i]``. Each mask bit is an arbitrary Boolean function
of up to 8 comparison bits, stored as a 256-entry truth table indexed by the
packed input bits (input ``k`` -> bit ``k`` of the index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_PAIRS = 64
MASK_BITS = 8
MAX_INPUTS = 8
LATENCY_RANGE = (184e-9, 254e-9)
TICK = 2e-9


@dataclass
class ThresholdBank:
    thresholds: list = field(default_factory=lambda: [0] * N_PAIRS)

    def __post_init__(self):
        t = [int(v) for v in self.thresholds]
        if len(t) > N_PAIRS:
            raise ValueError(f"at most {N_PAIRS} thresholds")
        self.thresholds = t + [0] * (N_PAIRS - len(t))

    def compare(self, pair: int, value):
        return np.asarray(value) >= self.thresholds[pair]


@dataclass
class BooleanOperator:
    """``inputs[b]`` lists the comparison-bit (pair) ids feeding mask bit ``b``;
    ``tables[b]`` is its truth table as a 256-bit integer (bit ``j`` is the
    output for packed input index ``j``)."""

    inputs: list = field(default_factory=lambda: [[] for _ in range(MASK_BITS)])
    tables: list = field(default_factory=lambda: [0] * MASK_BITS)

    def __post_init__(self):
        self.inputs = [list(map(int, i)) for i in self.inputs]
        self.tables = [int(t, 16) if isinstance(t, str) else int(t) for t in self.tables]
        self.inputs += [[] for _ in range(MASK_BITS - len(self.inputs))]
        self.tables += [0] * (MASK_BITS - len(self.tables))
        if len(self.inputs) > MASK_BITS or len(self.tables) > MASK_BITS:
            raise ValueError(f"the mask has {MASK_BITS} bits")
        for ins, tab in zip(self.inputs, self.tables):
            if len(ins) > MAX_INPUTS:
                raise ValueError(f"a mask bit takes at most {MAX_INPUTS} inputs")
            if any(not 0 <= p < N_PAIRS for p in ins):
                raise ValueError("comparison bit id out of range")
            if not 0 <= tab < (1 << (1 << len(ins))):
                raise ValueError("truth table has entries beyond its input count")

    @classmethod
    def from_functions(cls, spec: dict):
        """Build from ``{mask_bit: (input_pairs, f)}`` where ``f`` maps a tuple of
        input bits to a truth value."""
        op = cls()
        for bit, (ins, f) in spec.items():
            table = 0
            for j in range(1 << len(ins)):
                args = tuple((j >> k) & 1 for k in range(len(ins)))
                if f(*args):
                    table |= 1 << j
            op.inputs[bit] = list(ins)
            op.tables[bit] = table
        return op

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        """Mask from comparison bits of shape ``(..., 64)``; returns uint8 ``(...)``."""
        bits = np.asarray(bits, dtype=bool)
        mask = np.zeros(bits.shape[:-1], dtype=np.uint8)
        for b, (ins, tab) in enumerate(zip(self.inputs, self.tables)):
            idx = np.zeros(bits.shape[:-1], dtype=np.int64)
            for k, p in enumerate(ins):
                idx |= bits[..., p].astype(np.int64) << k
            table = np.array([(tab >> j) & 1 for j in range(1 << len(ins))], dtype=np.uint8)
            mask |= table[idx] << b
        return mask

    def relevant_pairs(self, mask_bit: int) -> list[int]:
        return list(self.inputs[mask_bit])

    def to_dict(self):
        return {"inputs": self.inputs, "tables": [format(t, "x") for t in self.tables]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["inputs"], d["tables"])


@dataclass
class LatencyModel:
    """Acquisition-to-output latency. Only the round trip is observable; the
    split into input and output halves is recorded for reference."""

    round_trip: float = 250e-9
    output_fraction: float = 0.5
    allow_out_of_range: bool = False

    def __post_init__(self):
        lo, hi = LATENCY_RANGE
        if not self.allow_out_of_range and not lo - 1e-15 <= self.round_trip <= hi + 1e-15:
            raise ValueError(f"round-trip latency {self.round_trip * 1e9:.1f} ns outside 184..254 ns")
        if self.round_trip < 0:
            raise ValueError("negative latency")

    @property
    def ticks(self) -> int:
        """Latency in 2 ns ticks, rounded up."""
        return math.ceil(self.round_trip / TICK - 1e-9)

    def to_dict(self):
        return {"round_trip": self.round_trip, "output_fraction": self.output_fraction,
                "allow_out_of_range": self.allow_out_of_range}


@dataclass
class FeedbackConfig:
    thresholds: ThresholdBank = field(default_factory=ThresholdBank)
    operator: BooleanOperator = field(default_factory=BooleanOperator)
    latency: LatencyModel = field(default_factory=LatencyModel)

    def to_dict(self):
        return {"thresholds": list(self.thresholds.thresholds), "operator": self.operator.to_dict(),
                "latency": self.latency.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(ThresholdBank(d["thresholds"]), BooleanOperator.from_dict(d["operator"]),
                   LatencyModel(**d["latency"]))


def comparison_bits(sums: dict, thresholds: ThresholdBank, n: int) -> np.ndarray:
    """``(n, 64)`` comparison bits from ``{pair: pair_sum_array}``; pairs without
    a completed window read 0."""
    bits = np.zeros((n, N_PAIRS), dtype=bool)
    for p, v in sums.items():
        bits[:, p] = thresholds.compare(p, v)
    return bits


def evaluate_mask(match_values: dict, config: FeedbackConfig, n: int) -> np.ndarray:
    """Mask for ``n`` shots from per-unit match values ``{unit_id: array}``."""
    sums = {}
    for u, v in match_values.items():
        p = u // 2
        sums[p] = sums.get(p, 0) + np.asarray(v, dtype=np.int64)
    return config.operator.evaluate(comparison_bits(sums, config.thresholds, n))


def conditional_output(mask: np.ndarray, bit: int) -> np.ndarray:
    """Shots for which a conditional output gated on ``bit`` fires."""
    return ((np.asarray(mask) >> bit) & 1).astype(bool)


def midpoint_threshold(norm_g: int, norm_e: int) -> int:
    """Integer threshold for a pair ``(tau_e, -tau_g)``: the noiseless sums are
    ``+/-(norm_e - norm_g)/2`` away from ``(norm_e - norm_g)/2``; rounded up so
    ``sum >= theta`` reproduces the real-valued comparison."""
    return -((norm_g - norm_e) // 2)


def qubit_reset_config(theta: int, latency: LatencyModel | None = None, pair: int = 0,
                       target_e: bool = False) -> FeedbackConfig:
    """Mask bit 0 = (pair reads excited); with ``target_e`` bit 0 = (pair reads ground)."""
    th = ThresholdBank()
    th.thresholds[pair] = theta
    op = BooleanOperator.from_functions({0: ([pair], (lambda e: not e) if target_e else (lambda e: e))})
    return FeedbackConfig(th, op, latency or LatencyModel())


def qutrit_reset_config(thetas, latency: LatencyModel | None = None, pairs=(0, 1, 2)) -> FeedbackConfig:
    """Pairs ``(R_eg, R_fe, R_gf)`` compare ``<tau_i - tau_j, s>`` against
    ``theta_ij``. Bit 0 (e detected) = R_eg and not R_fe; bit 1 (f detected) =
    R_fe and not R_gf."""
    peg, pfe, pgf = pairs
    th = ThresholdBank()
    for p, t in zip(pairs, thetas):
        th.thresholds[p] = int(t)
    op = BooleanOperator.from_functions({
        0: ([peg, pfe], lambda reg, rfe: reg and not rfe),
        1: ([pfe, pgf], lambda rfe, rgf: rfe and not rgf),
    })
    return FeedbackConfig(th, op, latency or LatencyModel())


def qutrit_thresholds(norms: dict) -> list[int]:
    """Integer ``theta_ij = (|tau_i|^2 - |tau_j|^2) / 2`` rounded up, for the
    pairs (e,g), (f,e), (g,f); ``norms`` maps 'g','e','f' to ``<tau, tau>``."""
    return [midpoint_threshold(norms[j], norms[i]) for i, j in (("e", "g"), ("f", "e"), ("g", "f"))]
