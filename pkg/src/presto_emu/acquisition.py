"""Input-path analysis: the store engine (buffer -> SDRAM accumulation) and the
template-matching units.

Fixed-point conventions: signal and template samples are 16-bit codes
(full scale [-1, 1) -> [-32768, 32767]); a match accumulates
``Re{sum(conj(tau) * s)}`` in integer code units. With at most 1022 samples
per window the sum stays below 2**41, inside the 48-bit accumulator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import TEMPLATE_16, as_trace, trace_codes
from .siggen import MAX_TEMPLATE_SAMPLES, Template

BUFFER_CAPACITY = 1 << 19  # IQ pairs per sequence
SDRAM_CAPACITY = 1 << 29  # 32-bit cells
SDRAM_MAX = (1 << 31) - 1
N_MATCH_UNITS = 128
ACC_BITS = 48
PAGE = 1 << 14


class CapacityError(ValueError):
    pass


class SdramImage:
    """Sparse image of the 2**29-cell SDRAM.

    An IQ pair occupies two consecutive cells (I then Q). Pages are allocated
    on first write; unwritten cells read as zero.
    """

    def __init__(self):
        self.pages: dict[int, np.ndarray] = {}
        self.regions: dict[int, int] = {}  # start address -> cells, as written
        self.counts: dict[int, int] = {}  # start address -> number of stores
        self.saturated = False

    def add(self, address: int, cells: np.ndarray, count: int = 1):
        """Accumulate integer ``cells`` at ``address`` with 32-bit saturation."""
        cells = np.asarray(cells, dtype=np.int64)
        self._accumulate(address, cells)
        n = cells.size
        self.regions[address] = max(self.regions.get(address, 0), n)
        self.counts[address] = self.counts.get(address, 0) + count

    def _accumulate(self, address: int, cells: np.ndarray):
        n = cells.size
        if address < 0 or address + n > SDRAM_CAPACITY:
            raise CapacityError(f"SDRAM range [{address}, {address + n}) outside 0..2**29")
        pos = 0
        while pos < n:
            a = address + pos
            page, off = divmod(a, PAGE)
            take = min(PAGE - off, n - pos)
            buf = self.pages.get(page)
            if buf is None:
                buf = self.pages[page] = np.zeros(PAGE, dtype=np.int32)
            new = buf[off:off + take].astype(np.int64) + cells[pos:pos + take]
            if np.any(np.abs(new) > SDRAM_MAX):
                self.saturated = True
                new = np.clip(new, -SDRAM_MAX, SDRAM_MAX)
            buf[off:off + take] = new
            pos += take

    def read(self, address: int, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=np.int64)
        pos = 0
        while pos < n:
            page, off = divmod(address + pos, PAGE)
            take = min(PAGE - off, n - pos)
            buf = self.pages.get(page)
            if buf is not None:
                out[pos:pos + take] = buf[off:off + take]
            pos += take
        return out

    def read_trace(self, address: int, n_samples: int) -> np.ndarray:
        """Accumulated IQ pairs at ``address`` as a complex code array."""
        cells = self.read(address, 2 * n_samples)
        return cells[0::2] + 1j * cells[1::2]

    def average(self, address: int, n_samples: int) -> np.ndarray:
        """Mean stored trace at ``address`` in full-scale units."""
        count = self.counts.get(address, 0)
        if count == 0:
            raise KeyError(f"nothing stored at address {address}")
        return self.read_trace(address, n_samples) * TEMPLATE_16.step / count

    def merge(self, other: "SdramImage"):
        """Add another image into this one (exact integer addition)."""
        for page, buf in other.pages.items():
            self._accumulate(page * PAGE, buf.astype(np.int64))
        for addr, n in other.regions.items():
            self.regions[addr] = max(self.regions.get(addr, 0), n)
            self.counts[addr] = self.counts.get(addr, 0) + other.counts.get(addr, 0)
        self.saturated |= other.saturated

    def to_bytes(self, address: int, n_cells: int) -> bytes:
        return self.read(address, n_cells).astype("<i4").tobytes()

    def __eq__(self, other):
        if not isinstance(other, SdramImage):
            return NotImplemented
        keys = set(self.pages) | set(other.pages)
        zero = np.zeros(PAGE, dtype=np.int32)
        return (self.regions == other.regions and self.counts == other.counts
                and all(np.array_equal(self.pages.get(k, zero), other.pages.get(k, zero)) for k in keys))


@dataclass
class StoreBuffer:
    """Budget accounting for the shared high-bandwidth buffer."""

    capacity: int = BUFFER_CAPACITY
    used: int = 0

    def reserve(self, n_pairs: int, label: str = ""):
        if self.used + n_pairs > self.capacity:
            raise CapacityError(
                f"store window {label} needs {n_pairs} pairs; buffer has "
                f"{self.capacity - self.used} of {self.capacity} left")
        self.used += n_pairs


def signal_codes(trace) -> np.ndarray:
    """16-bit codes of a trace, interleaved I/Q (cell layout)."""
    ci, cq, _ = trace_codes(trace, TEMPLATE_16)
    out = np.empty(2 * ci.size, dtype=np.int64)
    out[0::2], out[1::2] = ci, cq
    return out


def store(trace, address: int, sdram: SdramImage, label: str = "") -> SdramImage:
    """Add a trace (quantized to the 16-bit grid) into SDRAM at ``address``."""
    cells = signal_codes(trace)
    if address + cells.size > SDRAM_CAPACITY:
        raise CapacityError(f"store window {label} at address {address} overruns SDRAM")
    sdram.add(address, cells)
    return sdram


@dataclass(eq=False)
class MatchUnit:
    id: int
    template: Template
    input_port: int = 0

    def __post_init__(self):
        if not 0 <= self.id < N_MATCH_UNITS:
            raise ValueError(f"match unit id {self.id} outside 0..{N_MATCH_UNITS - 1}")
        if len(self.template) > MAX_TEMPLATE_SAMPLES:
            raise ValueError("match template longer than 1022 samples")

    @property
    def weights(self) -> np.ndarray:
        """Interleaved (I, Q) template codes; ``Re{conj(t)*s} = tI*sI + tQ*sQ``."""
        ti, tq = self.template.codes
        w = np.empty(2 * ti.size, dtype=np.int64)
        w[0::2], w[1::2] = ti, tq
        return w


def match(unit: MatchUnit, signal) -> int:
    """Overlap sum ``Re{sum(conj(tau) * s)}`` in accumulator (code^2) units.

    ``signal`` is either a complex trace in full-scale units (quantized to
    16 bits on entry) or an int array of interleaved codes.
    """
    sig = np.asarray(signal)
    codes = sig.astype(np.int64) if sig.dtype.kind in "iu" else signal_codes(signal)
    w = unit.weights
    if codes.size != w.size:
        raise ValueError(f"signal has {codes.size // 2} samples, template has {w.size // 2}")
    return int(codes @ w)


def match_batch(weights: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Vectorized match of interleaved-code rows against interleaved weights."""
    return codes @ weights


def template_norm(template: Template) -> int:
    """``<tau, tau>`` in accumulator units."""
    ti, tq = template.codes
    return int(ti @ ti + tq @ tq)


@dataclass(frozen=True)
class WindowChoice:
    start: int  # ticks from trace start
    length: int  # ticks
    separation: float
    zero_separation: bool = False

    @property
    def samples(self) -> slice:
        return slice(2 * self.start, 2 * (self.start + self.length))


def select_match_window(tau_g, tau_e, max_len: int = 511) -> WindowChoice:
    """Tick-aligned window of ``max_len`` ticks maximizing ``sum |tau_e - tau_g|``."""
    g, e = as_trace(tau_g), as_trace(tau_e)
    if g.size != e.size:
        raise ValueError("reference traces differ in length")
    n_ticks = g.size // 2
    if n_ticks < max_len:
        raise ValueError(f"traces span {n_ticks} ticks, need at least {max_len}")
    d = np.abs(e - g)
    per_tick = d[0:2 * n_ticks:2] + d[1:2 * n_ticks:2]
    csum = np.concatenate([[0.0], np.cumsum(per_tick)])
    sums = csum[max_len:] - csum[:-max_len]
    best = int(np.argmax(sums))
    zero = bool(sums[best] == 0.0)
    return WindowChoice(0 if zero else best, max_len, float(sums[best]), zero)


def export_sdram(sdram: SdramImage, out_dir, meta: dict | None = None) -> list[Path]:
    """Write each written region as ``sdram/<addr>.bin`` (int32 little-endian)
    plus ``sdram/manifest.json``."""
    out = Path(out_dir) / "sdram"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    regions = []
    for addr in sorted(sdram.regions):
        n = sdram.regions[addr]
        path = out / f"{addr}.bin"
        path.write_bytes(sdram.to_bytes(addr, n))
        files.append(path)
        regions.append({"address": addr, "cells": n, "iq_pairs": n // 2,
                        "stores": sdram.counts.get(addr, 0), "file": path.name})
    manifest = {"cell_format": "int32-le", "layout": "interleaved I,Q",
                "full_scale_code": 32768, "saturated": sdram.saturated, "regions": regions}
    if meta:
        manifest.update(meta)
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    files.append(mpath)
    return files


def export_averages_csv(sdram: SdramImage, path, n_samples: dict | None = None):
    """CSV of averaged traces: one row per sample, columns per region."""
    cols = []
    for addr in sorted(sdram.regions):
        n = (n_samples or {}).get(addr, sdram.regions[addr] // 2)
        cols.append((addr, sdram.average(addr, n)))
    length = max((c[1].size for c in cols), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"{a}_{q}" for a, _ in cols for q in ("i", "q")])
        for k in range(length):
            row = [k]
            for _, tr in cols:
                row += [f"{tr[k].real:.9g}", f"{tr[k].imag:.9g}"] if k < tr.size else ["", ""]
            w.writerow(row)
