import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presto_emu.dsp import DAC_OUTPUT, TEMPLATE_16, CarrierConfig, quantize_trace
from presto_emu.siggen import (
    MAX_TEMPLATE_SAMPLES,
    GroupConfig,
    PortConfig,
    Template,
    clear_pulse,
    drag_pulse,
    render_port,
    square_pulse,
)


def port_with(templates, carriers=(), scales=()):
    g = GroupConfig(list(templates), list(carriers), list(scales))
    return PortConfig([g, GroupConfig()])


def test_raw_template_passthrough(rng):
    wave = 0.4 * (rng.uniform(-1, 1, 100) + 1j * rng.uniform(-1, 1, 100))
    t = Template(wave)
    out, sat = render_port(port_with([t]), [(5, 0, 0)], (0, 60))
    assert not sat
    np.testing.assert_array_equal(out[:10], 0)
    np.testing.assert_array_equal(out[10:110], quantize_trace(t.samples, DAC_OUTPUT)[0])


def test_envelope_with_carrier_is_tone():
    f = 31.25e6
    port = port_with([square_pulse(200, 0.5)], [CarrierConfig.from_frequency(f)])
    out, _ = render_port(port, [(0, 0, 0)], (0, 100), quantize=False)
    n = np.arange(200)
    np.testing.assert_allclose(out, 0.5 * np.exp(2j * np.pi * f * n / 1e9), atol=1e-9)


def test_overlapping_templates_sum():
    port = port_with([square_pulse(100, 0.3, "raw"), square_pulse(100, 0.3, "raw")])
    out, _ = render_port(port, [(0, 0, 0), (20, 0, 1)], (0, 100), quantize=False)
    np.testing.assert_allclose(out[40:100].real, 2 * TEMPLATE_16.step * np.rint(0.3 / TEMPLATE_16.step))
    np.testing.assert_allclose(out[:40].real, TEMPLATE_16.step * np.rint(0.3 / TEMPLATE_16.step))


@given(st.integers(0, 50), st.integers(0, 50), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4))
def test_render_is_linear_before_quantization(t1, t2, a1, a2):
    n = np.arange(64)
    w1 = Template(a1 * np.exp(0.1j * n))
    w2 = Template(a2 * np.cos(0.2 * n))
    both, _ = render_port(port_with([w1, w2]), [(t1, 0, 0), (t2, 0, 1)], (0, 100), quantize=False)
    one, _ = render_port(port_with([w1, w2]), [(t1, 0, 0)], (0, 100), quantize=False)
    two, _ = render_port(port_with([w1, w2]), [(t2, 0, 1)], (0, 100), quantize=False)
    assert np.max(np.abs(both - (one + two))) <= 4 * np.finfo(float).eps


def test_carrier_phase_continuity():
    f = 17.3e6
    c = CarrierConfig.from_frequency(f)
    port = port_with([square_pulse(40, 0.5)], [c])
    out, _ = render_port(port, [(0, 0, 0), (100, 0, 0)], (0, 120), quantize=False)
    n = np.arange(240)
    ref = 0.5 * np.exp(2j * np.pi * c.frequency * n / 1e9)
    np.testing.assert_allclose(out[200:240], ref[200:240], atol=1e-9)
    np.testing.assert_array_equal(out[40:200], 0)


@given(st.floats(-200e6, 200e6), st.floats(0, 2 * np.pi))
def test_envelope_equals_precomputed_raw(f, phase):
    n = np.arange(80)
    env = 0.3 * np.sin(np.pi * n / 80) ** 2
    c = CarrierConfig.from_frequency(f, phase)
    port = port_with([Template(env, "envelope")], [c])
    a, _ = render_port(port, [(0, 0, 0)], (0, 40), quantize=False)
    carrier = np.exp(2j * np.pi * (c.frequency * n / 1e9 + c.phase_i_word / 2 ** 40))
    raw = Template(Template(env).samples * carrier, "raw")
    b, _ = render_port(port_with([raw]), [(0, 0, 0)], (0, 40), quantize=False)
    assert np.max(np.abs(a - b)) <= TEMPLATE_16.step


def test_scale_lut_and_events():
    port = port_with([square_pulse(20, 0.5, "raw")], scales=[1.0, -0.5])
    out, _ = render_port(port, [(0, 0, 0), (20, 0, 0)], (0, 30), scale_events=[(20, 0, 1)], quantize=False)
    assert out[0].real == pytest.approx(0.5, abs=1e-4)
    assert out[40].real == pytest.approx(-0.25, abs=1e-4)


def test_drag_shape():
    p = drag_pulse(20e-9, 0.5)
    assert np.all(p.samples.imag == 0)
    assert p.samples.real[10] == pytest.approx(0.5, abs=TEMPLATE_16.step)
    assert np.argmax(p.samples.real) == 10
    with pytest.raises(ValueError):
        drag_pulse(20.5e-9)


def test_template_limits():
    with pytest.raises(ValueError):
        Template(np.zeros(MAX_TEMPLATE_SAMPLES + 1))
    with pytest.raises(ValueError):
        Template(np.zeros(4), mode="bogus")
    with pytest.raises(ValueError):
        GroupConfig([square_pulse(2)] * 9)


def test_clear_pulse_segments():
    flat = clear_pulse([0.2, 0.2, 0.2, 0.2])
    wave = np.concatenate([t.samples for _, t in flat])
    assert wave.size == 1400 and np.allclose(wave, wave[0])
    assert all(len(t) <= MAX_TEMPLATE_SAMPLES and len(t) % 2 == 0 for _, t in flat)
    ring = np.concatenate([t.samples for _, t in clear_pulse([0.3, 0.1, 0, 0])])
    assert np.all(ring[700:] == 0) and np.all(ring[:350] != 0)
