import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.special import erf

from presto_emu.calibration import (
    InfeasibleError,
    clear_end_fields,
    clear_fields,
    effective_temperature,
    error_from_x,
    fit_bimodal,
    histogram,
    optimize_clear,
    overlap_error,
    refine_templates,
    thermal_population,
)
from presto_emu.device import DT, TWO_PI, noise_for_overlap, sample_qubit

Q2 = sample_qubit(2)
F_MID = (Q2.dressed(0) + Q2.dressed(1)) / 2 / TWO_PI
OMEGA_01 = TWO_PI * 4.09e9


def expm_segments(q, segments, f_drive, n, level):
    """Field at each segment boundary from the matrix exponential of the
    driven linear ODE over one whole segment."""
    lam = -(1j * (TWO_PI * f_drive - q.dressed(level)) + q.kappa / 2)
    a = 0j
    out = [a]
    for eps in segments:
        m = np.array([[lam, 1j * math.sqrt(q.kappa) * eps], [0, 0]]) * (n * DT)
        a = (expm(m) @ np.array([a, 1.0]))[0]
        out.append(a)
    return np.array(out)


# ------------------------------------------------------------------ CLEAR

def test_clear_rings_down_both_states():
    d = optimize_clear(Q2, F_MID, hold=0.02)
    assert d.segments.shape == (4,)
    for k in (0, 1):
        assert d.residual[k] < 1e-3
    ends = clear_end_fields(Q2, d.segments, F_MID, d.segment_samples)
    fields, _ = clear_fields(Q2, d.segments, TWO_PI * F_MID, d.segment_samples)
    for k in (0, 1):
        assert abs(ends[k]) / np.max(np.abs(fields[k])) < 1e-3


def test_clear_ring_up_reaches_steady_separation():
    d = optimize_clear(Q2, F_MID, hold=0.02)
    assert d.ring_up["separation"] == pytest.approx(1.0, abs=1e-9)


def test_clear_trace_matches_matrix_exponential():
    d = optimize_clear(Q2, F_MID, hold=0.02)
    n = d.segment_samples
    fields, _ = clear_fields(Q2, d.segments, TWO_PI * F_MID, n)
    ends = clear_end_fields(Q2, d.segments, F_MID, n)
    for k in (0, 1):
        ref = expm_segments(Q2, d.segments, F_MID, n, k)
        sim = np.append(fields[k][::n], ends[k])
        err = np.max(np.abs(sim - ref)) / np.max(np.abs(ref))
        assert err < 1e-9


def test_clear_single_level_brings_field_to_steady_state():
    d = optimize_clear(Q2, F_MID, hold=0.02, levels=(0,))
    assert d.ring_up[0] == pytest.approx(1.0, abs=1e-9)
    assert d.residual[0] < 1e-3


def test_clear_without_dispersive_shift_is_degenerate_but_solvable():
    q = sample_qubit(2, chi=0.0)
    f = q.dressed(0) / TWO_PI
    d = optimize_clear(q, f, hold=0.02)
    assert np.all(np.isfinite(d.segments))
    assert d.residual[0] < 1e-3 and d.residual[1] < 1e-3


def test_clear_infeasible_amplitude():
    with pytest.raises(InfeasibleError, match="full scale"):
        optimize_clear(Q2, F_MID, hold=0.9)


# --------------------------------------------------------------- fitting

def mixture(rng, n, w, mu_g, s_g, mu_e, s_e):
    k = rng.random(n) < w
    return np.where(k, rng.normal(mu_e, s_e, n), rng.normal(mu_g, s_g, n))


def test_fit_bimodal_recovers_parameters(rng):
    x = mixture(rng, 100_000, 0.3, -2.0, 0.5, 1.5, 0.7)
    fit = fit_bimodal(x)
    assert not fit.degenerate
    assert fit.mu_g == pytest.approx(-2.0, abs=0.02)
    assert fit.mu_e == pytest.approx(1.5, abs=0.02)
    assert fit.sigma_g == pytest.approx(0.5, rel=0.02)
    assert fit.sigma_e == pytest.approx(0.7, rel=0.02)
    assert fit.weight_e == pytest.approx(0.3, abs=0.01)


def test_fit_bimodal_is_scale_free(rng):
    x = mixture(rng, 20_000, 0.5, -1.0, 0.3, 1.0, 0.3)
    a = fit_bimodal(x)
    b = fit_bimodal(1e6 * x)
    assert b.mu_g == pytest.approx(1e6 * a.mu_g, rel=1e-6)
    assert b.sigma_e == pytest.approx(1e6 * a.sigma_e, rel=1e-6)


def test_fit_bimodal_single_gaussian_is_flagged(rng):
    assert fit_bimodal(rng.normal(0, 1, 20_000)).degenerate


def test_fit_bimodal_constant_data():
    assert fit_bimodal(np.full(2000, 3.0)).degenerate


def test_fit_bimodal_needs_samples():
    with pytest.raises(ValueError):
        fit_bimodal(np.zeros(10))


def test_overlap_error_equal_means_is_half():
    from presto_emu.calibration import BimodalFit
    eps, bound = overlap_error(BimodalFit(0.0, 1.0, 0.0, 1.0, 0.5))
    assert eps == pytest.approx(0.5)
    assert bound == pytest.approx(0.5)


def test_overlap_error_closed_form():
    from presto_emu.calibration import BimodalFit
    s = 0.3
    fit = BimodalFit(-2 * math.sqrt(2) * s, s, 2 * math.sqrt(2) * s, s, 0.5)  # x = 2 for both
    eps, _ = overlap_error(fit)
    assert eps == pytest.approx(0.5 * (1 - erf(2.0)), rel=1e-12)


@given(st.floats(0, 5))
def test_error_from_x_bounds(x):
    e = float(error_from_x(x))
    assert 0 <= e <= 0.5
    assert e == pytest.approx(0.5 * math.erfc(x), rel=1e-12)


def test_noise_for_overlap_inverts_formula(rng):
    tau_g = rng.normal(size=64) + 1j * rng.normal(size=64)
    tau_e = tau_g + 0.3 * (rng.normal(size=64) + 1j * rng.normal(size=64))
    sigma = noise_for_overlap(tau_g, tau_e, 9.7e-4)
    x = np.linalg.norm(tau_e - tau_g) / (2 * math.sqrt(2) * sigma)
    assert float(error_from_x(x)) == pytest.approx(9.7e-4, rel=1e-9)


def test_histogram_bins():
    counts, edges = histogram(np.arange(1000.0), bins=316)
    assert counts.size == 316 and edges.size == 317
    assert counts.sum() == 1000


# ----------------------------------------------------------- templates

def test_refined_templates_separate_more(rng):
    n, length = 4000, 32
    tg, te = np.zeros(length, complex), np.ones(length, complex)
    truth = rng.random(n) < 0.5
    noise = 0.5 * rng.normal(size=(n, length))
    traces = np.where(truth[:, None], te, tg) + noise
    # first readout with 10% assignment errors
    flip = rng.random(n) < 0.1
    first = np.where(truth ^ flip, 1.0, -1.0)
    naive_g = traces[first < 0].mean(axis=0)
    naive_e = traces[first >= 0].mean(axis=0)
    g, e, rejected = refine_templates(first, traces, prepared=truth.astype(int))
    assert rejected == pytest.approx(0.1, abs=0.02)
    assert np.linalg.norm(e - g) > np.linalg.norm(naive_e - naive_g)


def test_refine_needs_both_classes():
    with pytest.raises(ValueError, match="no shots"):
        refine_templates(np.ones(10), np.zeros((10, 4)))


# ----------------------------------------------------------- temperature

def test_effective_temperatures():
    assert effective_temperature(0.058, OMEGA_01) * 1e3 == pytest.approx(71, abs=1)
    assert effective_temperature(0.007, OMEGA_01) * 1e3 == pytest.approx(40, abs=1)


def test_effective_temperature_domain():
    for p in (0.0, 0.5, 0.7):
        with pytest.raises(ValueError):
            effective_temperature(p, OMEGA_01)


@given(st.floats(1e-4, 0.49))
def test_temperature_roundtrip(p):
    t = effective_temperature(p, OMEGA_01)
    assert thermal_population(t, OMEGA_01) == pytest.approx(p, rel=1e-9)


def test_temperature_monotone_and_divergent():
    ps = np.linspace(0.01, 0.499, 50)
    ts = [effective_temperature(p, OMEGA_01) for p in ps]
    assert np.all(np.diff(ts) > 0)
    assert ts[-1] > 50 * ts[0]
