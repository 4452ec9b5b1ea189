import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presto_emu.device import (
    DT,
    TWO_PI,
    CouplerParams,
    DeviceParams,
    Model,
    coupler_exchange,
    exchange_prediction,
    idle_excited_population,
    measure_and_collapse,
    notch_transmission,
    populations,
    qubit_evolve,
    resonator_field,
    resonator_oracle,
    steady_state_field,
    sample_qubit,
    thermal_state,
)
from presto_emu.siggen import drag_pulse


def ideal(levels=2, **kw):
    return DeviceParams([sample_qubit(2, T1=math.inf, T2_echo=math.inf, levels=levels, **kw)])


def ground(d):
    rho = np.zeros((d, d), complex)
    rho[0, 0] = 1
    return rho


def test_resonant_pi_pulse_without_decay():
    dev = ideal()
    q = dev.qubits[0]
    pulse = drag_pulse(20e-9, 0.5186).samples
    rho = qubit_evolve(ground(2), pulse, dev, center_hz=q.omega_01 / TWO_PI)
    assert populations(rho)[1] == pytest.approx(1.0, abs=1e-8)


@given(st.floats(0.0, 0.5), st.floats(0, 0.2), st.floats(0, 100e-6))
def test_idle_closed_form(p0, pth, t):
    dev = DeviceParams([sample_qubit(2, p_therm=pth)])
    rho = np.diag([1 - p0, p0]).astype(complex)
    out = qubit_evolve(rho, None, dev, interval=t)
    assert populations(out)[1] == pytest.approx(idle_excited_population(p0, pth, t, 34e-6), abs=1e-10)


@pytest.mark.parametrize("detuning", [0.0, 2e6, 5e6, -4e6])
def test_detuned_drive_rabi_formula(detuning):
    dev = ideal()
    q = dev.qubits[0]
    amp = 0.05
    t = np.arange(400) * DT
    control = amp * np.exp(1j * TWO_PI * detuning * t)
    omega = q.rabi_per_fullscale * amp
    delta = TWO_PI * detuning
    w = math.hypot(omega, delta)
    for n in (100, 250, 400):
        rho = qubit_evolve(ground(2), control[:n], dev, center_hz=q.omega_01 / TWO_PI)
        want = (omega / w) ** 2 * math.sin(w * n * DT / 2) ** 2
        assert populations(rho)[1] == pytest.approx(want, abs=2e-3)


@given(st.lists(st.complex_numbers(max_magnitude=0.5), min_size=1, max_size=60), st.integers(0, 2 ** 31))
def test_trace_preserved(drive, seed):
    dev = DeviceParams([sample_qubit(2, levels=3, p_therm=0.05)])
    rho = thermal_state(dev)
    out = qubit_evolve(rho, np.repeat(drive, 5), dev, center_hz=dev.qubits[0].omega_01 / TWO_PI)
    assert abs(np.trace(out).real - 1) < 1e-12
    assert np.all(populations(out) > -1e-12)


def test_measurement_of_ground_is_certain(rng):
    for u in rng.random(100):
        assert measure_and_collapse(ground(2), u)[0] == 0


def test_thermal_measurement_statistics(rng):
    dev = DeviceParams([sample_qubit(2, p_therm=0.058)])
    rho = thermal_state(dev)
    n = 100_000
    hits = sum(measure_and_collapse(rho, u)[0] for u in rng.random(n))
    sigma = math.sqrt(0.058 * 0.942 / n)
    assert abs(hits / n - 0.058) < 3 * sigma


def test_resonator_matches_matrix_exponential():
    q = sample_qubit(2)
    wd = q.omega_r
    segs = np.array([0.08, -0.03 + 0.02j, 0.05j, 0.0])
    n = 350
    drive = np.repeat(segs, n)
    a, end = resonator_field(drive, q, 1, wd)
    ref = resonator_oracle(segs, [n * DT] * 4, q, 1, wd)
    got = np.concatenate([a[::n], [end]])
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-9


def test_steady_state_and_zero_drive():
    q = sample_qubit(2)
    wd = q.omega_r + TWO_PI * 100e3
    a, end = resonator_field(np.full(40_000, 0.02), q, 0, wd)
    assert end == pytest.approx(steady_state_field(q, 0, wd, 0.02), rel=1e-6)
    z, zend = resonator_field(np.zeros(100), q, 0, wd)
    assert np.all(z == 0) and zend == 0


def test_notch_dips_at_dressed_frequencies():
    q = sample_qubit(2)
    for lev in (0, 1):
        assert abs(notch_transmission(q, lev, q.dressed(lev))) < 1e-12
    # g sits at omega_r + chi, e at omega_r - chi
    assert q.dressed(0) - q.omega_r == pytest.approx(q.chi)
    assert q.dressed(1) - q.omega_r == pytest.approx(-q.chi)


def test_separation_peaks_between_resonances():
    from presto_emu.experiments.setup import best_readout_frequency, steady_separation
    q = sample_qubit(2)
    f = best_readout_frequency(q)
    lo, hi = sorted((q.dressed(0) / TWO_PI, q.dressed(1) / TWO_PI))
    assert lo < f < hi
    # 2|chi| > kappa here: two symmetric maxima, the midpoint within 5% of them
    mid = (lo + hi) / 2
    sep = steady_separation(q, [f, 2 * mid - f, mid])
    assert sep[0] == pytest.approx(sep[1], rel=1e-9)
    assert sep[2] > 0.95 * sep[0]


def exchange_device():
    qs = [sample_qubit(1, T1=math.inf, T2_echo=math.inf), sample_qubit(2, T1=math.inf, T2_echo=math.inf)]
    return DeviceParams(qs, coupler=CouplerParams())


def test_exchange_zero_duration_is_identity():
    dev = exchange_device()
    rho = np.zeros((4, 4), complex)
    rho[1, 1] = 1
    np.testing.assert_array_equal(coupler_exchange(rho, dev, dev.coupler.resonance(dev.qubits), 0.0), rho)


@pytest.mark.parametrize("detuning", [0.0, 1e6])
def test_exchange_follows_two_level_formula(detuning):
    dev = exchange_device()
    cp = dev.coupler
    rho = np.zeros((4, 4), complex)
    rho[1, 1] = 1  # q1 excited (second tensor factor)
    f = cp.resonance(dev.qubits) + detuning
    for t in (100e-9, 300e-9, 450e-9):
        p = populations(coupler_exchange(rho, dev, f, t))
        assert p[2] == pytest.approx(exchange_prediction(t, detuning, cp.g_eff()), abs=0.01)
    full = populations(coupler_exchange(rho, dev, cp.resonance(dev.qubits), 300e-9))
    if detuning == 0:
        assert full[2] > 0.99


def test_model_rejects_bad_parameters():
    with pytest.raises(ValueError):
        sample_qubit(2, T2_echo=100e-6)
    with pytest.raises(ValueError):
        sample_qubit(3)
    with pytest.raises(ValueError):
        sample_qubit(2, p_therm=0.6)
