import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presto_emu.acquisition import (
    MatchUnit,
    SdramImage,
    export_averages_csv,
    export_sdram,
    match,
    match_batch,
    select_match_window,
    signal_codes,
    store,
    template_norm,
)
from presto_emu.dsp import TEMPLATE_16
from presto_emu.siggen import Template

STEP = TEMPLATE_16.step


def oracle_match(tau: Template, signal) -> int:
    """Integer dot product on 16-bit codes, written out with Python ints."""
    ti, tq = tau.codes
    s = signal_codes(signal)
    return sum(int(a) * int(b) for a, b in zip(np.ravel(np.column_stack([ti, tq])), s))


def test_self_match_is_norm(rng):
    t = Template(0.7 * (rng.uniform(-1, 1, 300) + 1j * rng.uniform(-1, 1, 300)))
    m = match(MatchUnit(0, t), t.samples)
    assert m == template_norm(t) > 0


def test_cos_sin_orthogonal():
    n = np.arange(200)  # 4 whole periods of 50 samples
    cos_t = Template(0.5 * np.cos(2 * np.pi * n / 50))
    sin_s = 0.5 * np.sin(2 * np.pi * n / 50)
    # symmetric window: the codes of the sine are odd about the period centre
    assert abs(match(MatchUnit(0, cos_t), sin_s)) <= 200 * 2 ** 15 * 1e-4


def test_iq_recovered_by_cos_and_minus_sin_templates():
    n = np.arange(400)
    w = 2 * np.pi * n / 40
    amp, phase = 0.4, 0.7
    sig = amp * np.cos(w + phase)
    ci = match(MatchUnit(0, Template(0.5 * np.cos(w))), sig)
    cq = match(MatchUnit(1, Template(-0.5 * np.sin(w))), sig)
    scale = 0.5 * n.size / 2 / STEP ** 2
    assert ci / scale == pytest.approx(amp * np.cos(phase), abs=1e-3)
    assert cq / scale == pytest.approx(amp * np.sin(phase), abs=1e-3)


def test_match_random_pairs_against_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(1, 512)) * 2 if rng.random() < 0.5 else int(rng.integers(1, 1023))
        t = Template(rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n))
        s = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
        assert match(MatchUnit(0, t), s) == oracle_match(t, s)


@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2 ** 32 - 1))
def test_match_linear_in_integer_coefficients(a, b, seed):
    g = np.random.default_rng(seed)
    unit = MatchUnit(0, Template(g.uniform(-1, 1, 64) + 1j * g.uniform(-1, 1, 64)))
    s1 = g.integers(-4000, 4000, 128)
    s2 = g.integers(-4000, 4000, 128)
    assert match(unit, a * s1 + b * s2) == a * match(unit, s1) + b * match(unit, s2)


def test_match_length_mismatch():
    with pytest.raises(ValueError):
        match(MatchUnit(0, Template(np.ones(10) * 0.1)), np.zeros(12))


def test_accumulator_bound():
    n = 1022
    worst = Template(np.full(n, -1 + -1j))
    value = match(MatchUnit(0, worst), np.full(n, -1 - 1j))
    assert value == 2 * n * 2 ** 30 and value < 2 ** 47


def test_store_zero_and_additivity(rng):
    img = SdramImage()
    store(np.zeros(50), 0, img)
    assert np.all(img.read(0, 100) == 0)
    tr = 0.3 * (rng.uniform(-1, 1, 50) + 1j * rng.uniform(-1, 1, 50))
    once = store(tr, 1000, SdramImage()).read(1000, 100)
    twice = store(tr, 1000, store(tr, 1000, SdramImage())).read(1000, 100)
    np.testing.assert_array_equal(twice, 2 * once)


def test_sdram_saturates_at_32_bits():
    img = SdramImage()
    img.add(0, np.array([2 ** 31 - 10]))
    img.add(0, np.array([100]))
    assert img.saturated and img.read(0, 1)[0] == 2 ** 31 - 1


def test_sdram_merge_is_exact(rng):
    a, b, both = SdramImage(), SdramImage(), SdramImage()
    for img, cells in ((a, rng.integers(-99, 99, 40000)), (b, rng.integers(-99, 99, 40000))):
        img.add(16000, cells)
        both.add(16000, cells)
    a.merge(b)
    assert a == both


def test_window_covers_burst():
    g = np.zeros(3000, complex)
    e = np.zeros(3000, complex)
    e[1200:1700] = 0.5
    w = select_match_window(g, e, 300)
    assert 2 * w.start <= 1200 and 2 * (w.start + w.length) >= 1700


def test_window_monotone_separation_takes_the_end():
    t = np.arange(2000)
    w = select_match_window(np.zeros(2000), t / 2000.0, 511)
    assert w.start + w.length == 1000


def test_window_matches_exhaustive_scan():
    from presto_emu.experiments.readout import design_readout, reset_device
    from presto_emu.experiments.setup import reference_traces
    dev = reset_device()
    ro = design_readout(dev, [0])
    refs = reference_traces(dev, ro, [(0,), (1,)])
    g, e = refs[(0,)], refs[(1,)]
    w = select_match_window(g, e, 511)
    d = np.abs(e - g)
    scores = [d[2 * s:2 * (s + 511)].sum() for s in range(g.size // 2 - 511 + 1)]
    assert w.start == int(np.argmax(scores))


def test_matched_filter_beats_boxcar():
    n = 400
    t = np.arange(n)
    tau_g = 0.1 * (1 - np.exp(-t / 80)) * np.exp(0.3j)
    tau_e = 0.1 * (1 - np.exp(-t / 80)) * np.exp(-1.2j)
    gen = np.random.default_rng(3)
    shots = 10_000
    noise = 0.2 * (gen.normal(size=(shots, n)) + 1j * gen.normal(size=(shots, n)))
    prep = np.arange(shots) % 2
    sig = np.where(prep[:, None] == 1, tau_e, tau_g) + noise
    diff = tau_e - tau_g
    box = np.full(n, diff.mean())

    def snr(weights):
        stat = np.real(sig @ np.conj(weights))
        a, b = stat[prep == 1], stat[prep == 0]
        return abs(a.mean() - b.mean()) / np.sqrt(0.5 * (a.var() + b.var()))

    assert snr(diff) >= snr(box)


def test_match_batch_equals_match(rng):
    unit = MatchUnit(0, Template(rng.uniform(-1, 1, 100) * 0.5))
    rows = np.stack([signal_codes(rng.uniform(-1, 1, 100) * 0.5) for _ in range(20)])
    np.testing.assert_array_equal(match_batch(unit.weights, rows), [match(unit, r) for r in rows])


def test_export(tmp_path, rng):
    img = SdramImage()
    tr = 0.25 * np.ones(8)
    store(tr, 0, img)
    store(tr, 0, img)
    store(-tr, 64, img)
    files = export_sdram(img, tmp_path, {"note": "x"})
    assert sorted(p.name for p in files) == ["0.bin", "64.bin", "manifest.json"]
    raw = np.frombuffer((tmp_path / "sdram" / "0.bin").read_bytes(), "<i4")
    assert raw[0] == 2 * round(0.25 / STEP) and raw[1] == 0
    meta = json.loads((tmp_path / "sdram" / "manifest.json").read_text())
    assert meta["regions"][0]["stores"] == 2 and meta["note"] == "x"
    export_averages_csv(img, tmp_path / "avg.csv")
    lines = (tmp_path / "avg.csv").read_text().splitlines()
    assert lines[0] == "sample,0_i,0_q,64_i,64_q" and lines[1].startswith("0,0.25,0,-0.25")
