import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presto_emu.acquisition import MatchUnit, match
from presto_emu.dsp import DAC_OUTPUT, CarrierConfig, NcoConfig, quantize_trace
from presto_emu.engine import InputPort, Instrument, ScheduleError, run
from presto_emu.feedback import LatencyModel, qubit_reset_config
from presto_emu.sequencer import (
    ConditionalOutput,
    EventSchedule,
    LoopMarker,
    MatchWindow,
    OutputTemplate,
    SetCarrier,
    SetScale,
    StoreWindow,
    expand_loops,
    validate,
)
from presto_emu.siggen import GroupConfig, PortConfig, Template, square_pulse

FEED = 3


def loopback(templates, carriers=(), scales=(), units=None, nco=NcoConfig()):
    port = PortConfig([GroupConfig(list(templates), list(carriers), list(scales)), GroupConfig()], nco=nco)
    return Instrument({FEED: port}, {0: InputPort(nco)}, units or {}, {FEED: "feedline"})


def test_empty_schedule_is_valid():
    assert validate(EventSchedule()) == []


def test_lut_index_boundary():
    msgs = validate(EventSchedule([SetCarrier(0, 0, 0, 512)]))
    assert any("lut index out of range" in m for m in msgs)
    assert validate(EventSchedule([SetCarrier(0, 0, 0, 511)])) == []


def test_match_window_limit():
    msgs = validate(EventSchedule([MatchWindow(0, 0, 512)]))
    assert msgs == ["MatchWindow at tick 0: duration 512 ticks exceeds 1022 ns"]
    assert validate(EventSchedule([MatchWindow(0, 0, 511)])) == []


def test_buffer_accounting():
    big = [StoreWindow(k * 100_000, 0, 100_000, 0) for k in range(3)]
    assert any("buffer holds" in m for m in validate(EventSchedule(big)))


def test_conditional_needs_feedback_and_latency():
    evs = [MatchWindow(0, 0, 100), ConditionalOutput(150, 0, 0, 0)]
    assert any("feedback configuration" in m for m in validate(EventSchedule(evs)))
    fb = qubit_reset_config(0, LatencyModel(250e-9))
    msgs = validate(EventSchedule(evs, feedback=fb))
    assert any("earliest legal tick 225" in m for m in msgs)
    ok = [MatchWindow(0, 0, 100), ConditionalOutput(225, 0, 0, 0)]
    assert validate(EventSchedule(ok, feedback=fb)) == []


def test_parameter_updates_sort_first():
    s = EventSchedule([OutputTemplate(5, 0, 0), SetScale(5, 0, 0, 1), SetCarrier(5, 0, 0, 1)])
    assert [type(e).__name__ for e in s.events] == ["SetScale", "SetCarrier", "OutputTemplate"]


def test_loops_expand():
    evs = [LoopMarker(0, "begin", 3), OutputTemplate(2, 0, 0), LoopMarker(10, "end")]
    assert [e.at for e in expand_loops(evs)] == [2, 12, 22]
    assert validate(EventSchedule([LoopMarker(0, "begin", 2)]))


def test_json_round_trip():
    fb = qubit_reset_config(123, LatencyModel(200e-9))
    s = EventSchedule([SetScale(0, 1, 0, 2, 3), MatchWindow(4, 0, 10), ConditionalOutput(200, 1, 0, 0)], 7, 300, fb)
    back = EventSchedule.from_json(s.to_json())
    assert back.to_json() == s.to_json()
    assert back.events == s.events


def test_output_passthrough(rng):
    wave = 0.5 * rng.uniform(-1, 1, 64)
    inst = loopback([Template(wave)])
    res = run(EventSchedule([OutputTemplate(10, FEED, 0)], 1, period=60), inst, None, capture=[0])
    out = res.captures[0][FEED]
    np.testing.assert_array_equal(out[:20], 0)
    np.testing.assert_array_equal(out[20:84], quantize_trace(Template(wave).samples, DAC_OUTPUT)[0])
    assert np.all(out[84:] == 0)


def test_carrier_lut_steps_per_repetition():
    freqs = [50e6, 125e6]
    n = 400
    inst = loopback([square_pulse(n, 0.5)], [CarrierConfig.from_frequency(f) for f in freqs])
    sched = EventSchedule([SetCarrier(0, FEED, 0, 0), OutputTemplate(0, FEED, 0)], 4, period=n // 2)
    res = run(sched, inst, None, capture=[0, 1, 2, 3])
    for r in range(4):
        spec = np.abs(np.fft.fft(res.captures[r][FEED][:n]))
        assert np.argmax(spec) == round(freqs[r % 2] * n / 1e9)


@given(st.integers(1, 9), st.integers(1, 40), st.integers(1, 3))
def test_sweep_interleaving(lut_len, reps, stride):
    scales = [0.05 * (k + 1) for k in range(lut_len)]
    inst = loopback([square_pulse(20, 1.0, "raw")], scales=scales)
    sched = EventSchedule([SetScale(0, FEED, 0, 0, stride), OutputTemplate(0, FEED, 0)], reps, period=10)
    res = run(sched, inst, None, capture=range(reps))
    for r in range(reps):
        want = GroupConfig(scale_lut=scales).scale((stride * r) % lut_len)
        assert res.captures[r][FEED][5].real == pytest.approx(want, abs=2 ** -12)


def test_match_through_loopback_equals_oracle(rng):
    n = 100
    tau = Template(0.3 * np.exp(1j * rng.uniform(0, 6, n)))
    sig = Template(0.4 * np.exp(1j * rng.uniform(0, 6, n)), "raw")
    units = {0: MatchUnit(0, tau), 1: MatchUnit(1, Template(-tau.samples))}
    inst = loopback([sig], units=units)
    res = run(EventSchedule([OutputTemplate(0, FEED, 0), MatchWindow(0, 0, n // 2)], 3), inst, None)
    trace = quantize_trace(sig.samples, DAC_OUTPUT)[0]
    want = match(units[0], trace)
    assert res.matches[0].values[:, 0].tolist() == [want] * 3
    assert res.matches[0].values[:, 1].tolist() == [-want] * 3


def test_store_accumulates_per_address():
    inst = loopback([square_pulse(40, 0.25, "raw")], scales=[1.0, 0.5])
    evs = [SetScale(0, FEED, 0, 0), OutputTemplate(0, FEED, 0), StoreWindow(0, 0, 20, 0, 160, 2)]
    res = run(EventSchedule(evs, 200), inst, None)
    a = res.sdram.average(0, 40)
    b = res.sdram.average(160, 40)
    assert res.sdram.counts[0] == 100 and res.sdram.counts[160] == 100
    assert a[0].real == pytest.approx(0.25, abs=DAC_OUTPUT.step)
    assert b[0].real == pytest.approx(0.125, abs=DAC_OUTPUT.step)


def test_conditional_output_follows_mask(rng):
    n = 40
    tau = Template(0.3 * np.ones(n))
    units = {0: MatchUnit(0, tau)}
    inst = loopback([square_pulse(n, 0.3, "raw"), square_pulse(20, 0.2, "raw")], scales=[0.0, 1.0], units=units)
    lat = LatencyModel(250e-9)
    fb = qubit_reset_config(1, lat)  # fire when the match is positive
    fire = n // 2 + lat.ticks
    evs = [SetScale(0, FEED, 0, 0), OutputTemplate(0, FEED, 0), MatchWindow(0, 0, n // 2),
           ConditionalOutput(fire, FEED, 1, 0)]
    res = run(EventSchedule(evs, 4, period=fire + 20, feedback=fb), inst, None, capture=[0, 1])
    assert res.fires[0].fired.tolist() == [False, True, False, True]
    on, off = res.captures[1][FEED], res.captures[0][FEED]
    assert np.all(off[2 * fire:] == 0)
    assert np.all(on[2 * fire:2 * fire + 20] != 0) and np.all(on[:2 * fire] == off[:2 * fire] * 0 + on[:2 * fire])


def test_invalid_schedule_refused():
    with pytest.raises(ScheduleError):
        run(EventSchedule([MatchWindow(0, 0, 600)]), loopback([]), None)


def test_run_is_deterministic_and_job_independent():
    from presto_emu.experiments.readout import reset_device
    from presto_emu.experiments.setup import PI, build_instrument, drive_templates, pulse
    dev = reset_device(0.05)
    inst = build_instrument(dev, None, [], drive={"q0": drive_templates(dev.qubits[0])})
    sched = EventSchedule([pulse(0, "q0", PI), StoreWindow(20, 0, 50, 0)], 1024)
    a = run(sched, inst, dev, seed=5)
    b = run(sched, inst, dev, seed=5, jobs=2, batch_size=256)
    c = run(sched, inst, dev, seed=6)
    assert a.digest() == b.digest()
    assert a.sdram == b.sdram
    assert a.digest() != c.digest()
