"""Readout calibration and single-shot analysis: CLEAR segment design,
post-selected reference templates, bimodal Gaussian fits, overlap error and
effective temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .device import DT, HBAR, KB, TWO_PI, QubitParams, _res_coeffs, noise_for_overlap  # noqa: F401
from .siggen import Template


class FitError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InfeasibleError(ValueError):
    pass


# ------------------------------------------------------------------ CLEAR

@dataclass
class ClearDesign:
    segments: np.ndarray  # 4 complex amplitudes
    segment_samples: int
    residual: dict  # level -> |a(T)| / max|a|
    ring_up: dict  # level -> |a(2T)| / |a_ss|; 'separation' -> ratio to steady state


def _segment_maps(q: QubitParams, level: int, omega_d: float, n: int):
    """``a -> phi*a + c*eps`` over ``n`` samples of constant drive."""
    _, phi1, beta1 = _res_coeffs(q, level, omega_d)
    phi = phi1 ** n
    c = beta1 * (phi - 1) / (phi1 - 1)
    return phi, c


def clear_fields(q: QubitParams, segments, omega_d: float, segment_samples: int, levels=(0, 1)):
    """Per-sample field for each level under a piecewise-constant drive
    (zero initial field)."""
    from .device import resonator_field
    drive = np.repeat(np.asarray(segments, dtype=np.complex128), segment_samples)
    return {k: resonator_field(drive, q, k, omega_d)[0] for k in levels}, drive


def optimize_clear(q: QubitParams, f_drive: float, hold: complex = 0.05, segment_duration: float = 350e-9,
                   levels=(0, 1)) -> ClearDesign:
    """Four-segment readout pulse at ``f_drive`` (Hz).

    Segment 1 is chosen so that, after the hold segment, the separation of
    the two pointer states equals its steady-state value (with a single
    level it brings the field to steady state); segment 2 holds; segments 3
    and 4 solve the linear system ``a_g(T) = a_e(T) = 0`` (minimum-norm
    solution when the states coincide).
    """
    n = int(round(segment_duration / DT))
    wd = TWO_PI * f_drive
    maps = {k: _segment_maps(q, k, wd, n) for k in levels}
    lam = {k: _res_coeffs(q, k, wd)[0] for k in levels}
    a_ss = {k: 1j * np.sqrt(q.kappa) * hold / -lam[k] for k in levels}
    k0, k1 = levels[0], levels[-1]
    num = (a_ss[k1] - a_ss[k0]) - (maps[k1][1] - maps[k0][1]) * hold
    den = maps[k1][0] * maps[k1][1] - maps[k0][0] * maps[k0][1]
    if abs(den) < 1e-12 * abs(maps[k0][1]):
        den, num = maps[k0][0] * maps[k0][1], a_ss[k0] - maps[k0][1] * hold
    e1 = complex(num / den)
    a2 = {k: maps[k][0] * (maps[k][1] * e1) + maps[k][1] * hold for k in levels}
    A = np.array([[maps[k][0] * maps[k][1], maps[k][1]] for k in levels])
    b = -np.array([maps[k][0] ** 2 * a2[k] for k in levels])
    sol, *_ = np.linalg.lstsq(A, b, rcond=1e-12)
    segs = np.array([e1, hold, sol[0], sol[1]], dtype=np.complex128)
    if np.any(np.abs(segs.real) >= 1) or np.any(np.abs(segs.imag) >= 1):
        raise InfeasibleError(f"CLEAR amplitudes exceed full scale: {np.round(segs, 4)}; "
                              f"reduce the hold amplitude (needs |amp| < 1)")
    fields, _ = clear_fields(q, segs, wd, n, levels)
    residual, ring_up = {}, {}
    for k in levels:
        a = fields[k]
        a_end = maps[k][0] ** 2 * a2[k] + maps[k][0] * maps[k][1] * sol[0] + maps[k][1] * sol[1]
        residual[k] = float(abs(a_end) / np.max(np.abs(a)))
        ring_up[k] = float(abs(a2[k]) / abs(a_ss[k]))
    if len(levels) > 1 and abs(a_ss[k1] - a_ss[k0]) > 0:
        ring_up["separation"] = float(abs(a2[k1] - a2[k0]) / abs(a_ss[k1] - a_ss[k0]))
    return ClearDesign(segs, n, residual, ring_up)


def clear_end_fields(q: QubitParams, segments, f_drive: float, segment_samples: int, levels=(0, 1)) -> dict:
    """Field after the last sample, by per-sample recursion."""
    from .device import resonator_field
    drive = np.repeat(np.asarray(segments, dtype=np.complex128), segment_samples)
    return {k: resonator_field(drive, q, k, TWO_PI * f_drive)[1] for k in levels}


# ------------------------------------------------------------- templates

@dataclass
class ReferencePair:
    tau_g: Template
    tau_e: Template
    provenance: str = "preliminary"

    def __post_init__(self):
        if len(self.tau_g) != len(self.tau_e):
            raise ValueError("reference templates differ in length")


def refine_templates(first_diff, second_traces, prepared=None):
    """Average second-readout traces by first-readout class.

    ``first_diff`` is the first readout's pair sum minus threshold (>= 0 reads
    excited); ``second_traces`` is ``(N, L)`` complex. With ``prepared`` (0/1
    per shot), shots whose first readout disagrees with the preparation are
    rejected. Returns ``(tau_g, tau_e, rejected_fraction)`` as complex arrays.
    """
    first_diff = np.asarray(first_diff)
    second_traces = np.asarray(second_traces)
    cls = (first_diff >= 0).astype(int)
    keep = np.ones(cls.size, bool) if prepared is None else (cls == np.asarray(prepared))
    out = []
    for k in (0, 1):
        sel = keep & (cls == k)
        if not sel.any():
            raise ValueError(f"no shots classified as {'ge'[k]}")
        out.append(second_traces[sel].mean(axis=0))
    return out[0], out[1], float(1 - keep.mean())


# --------------------------------------------------------------- fitting

@dataclass
class BimodalFit:
    mu_g: float
    sigma_g: float
    mu_e: float
    sigma_e: float
    weight_e: float
    iterations: int = 0
    log_likelihood: float = float("nan")
    degenerate: bool = False

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return ((1 - self.weight_e) * _gauss(x, self.mu_g, self.sigma_g)
                + self.weight_e * _gauss(x, self.mu_e, self.sigma_e))


def _gauss(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))


def _neg_loglik(theta, x):
    m0, ls0, m1, ls1, lw = theta
    w = 1 / (1 + np.exp(-lw))
    p = (1 - w) * _gauss(x, m0, np.exp(ls0)) + w * _gauss(x, m1, np.exp(ls1))
    return -float(np.mean(np.log(np.maximum(p, 1e-300))))


def fit_bimodal(data, tol: float = 1e-9, max_iter: int = 500) -> BimodalFit:
    """Two-component Gaussian maximum-likelihood fit by EM.

    Initialized by splitting at the midpoint of the 0.1 / 99.9 percentiles.
    Converges when the mean log-likelihood per sample changes by less than
    ``tol``. EM crawls when one component is small and skewed (a decay
    tail); if ``max_iter`` is reached the likelihood is maximized directly
    from the EM estimate, and ``FitError`` is raised only if that fails too.
    Components are ordered so that ``mu_g < mu_e``.
    """
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 1000:
        raise ValueError("bimodal fit needs at least 1000 samples")
    lo, hi = np.percentile(x, [0.1, 99.9])
    mid = 0.5 * (lo + hi)
    spread = max(float(np.std(x)), 1e-300)
    if hi - lo <= 0:
        return BimodalFit(float(x.mean()), spread, float(x.mean()), spread, 0.0, 0, float("nan"), True)
    # work in standardized units; the likelihood tolerance is then scale-free
    center = float(np.median(x))
    z = (x - center) / spread
    zmid = (mid - center) / spread
    left = z < zmid
    comps = []
    for sel in (left, ~left):
        part = z[sel] if sel.sum() > 1 else z
        comps.append([float(part.mean()), max(float(part.std()), 1e-3), max(sel.mean(), 1e-6)])
    (m0, s0, w0), (m1, s1, w1) = comps
    w = w1 / (w0 + w1)
    trace = []
    prev = -np.inf
    floor = 1e-6
    converged = False
    for it in range(1, max_iter + 1):
        p0 = (1 - w) * _gauss(z, m0, s0)
        p1 = w * _gauss(z, m1, s1)
        tot = p0 + p1
        tot = np.where(tot > 0, tot, 1e-300)
        ll = float(np.mean(np.log(tot)))
        trace.append(ll)
        if abs(ll - prev) < tol:
            converged = True
            break
        prev = ll
        r1 = p1 / tot
        n1 = r1.sum()
        n0 = z.size - n1
        w = n1 / z.size
        if n0 < 1 or n1 < 1:
            converged = True
            break
        m0 = float(np.sum((1 - r1) * z) / n0)
        m1 = float(np.sum(r1 * z) / n1)
        s0 = max(float(np.sqrt(np.sum((1 - r1) * (z - m0) ** 2) / n0)), floor)
        s1 = max(float(np.sqrt(np.sum(r1 * (z - m1) ** 2) / n1)), floor)
    if not converged:
        from scipy.optimize import minimize
        w_c = min(max(w, 1e-9), 1 - 1e-9)
        theta0 = np.array([m0, np.log(s0), m1, np.log(s1), np.log(w_c / (1 - w_c))])
        opt = minimize(_neg_loglik, theta0, args=(z,), method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": tol * 1e-2, "maxiter": 20000, "maxfev": 40000})
        if not opt.success or -opt.fun < trace[-1] - tol:
            raise FitError(f"EM did not converge in {max_iter} iterations", trace)
        m0, ls0, m1, ls1, lw = opt.x
        s0, s1, w = float(np.exp(ls0)), float(np.exp(ls1)), float(1 / (1 + np.exp(-lw)))
        trace.append(-float(opt.fun))
    if m1 < m0:
        m0, s0, m1, s1, w = m1, s1, m0, s0, 1 - w
    sep = abs(m1 - m0) / np.sqrt(s0 * s1)
    degenerate = bool(min(w, 1 - w) * x.size < 10 or sep < 2.0)
    ll = trace[-1] - np.log(spread)
    return BimodalFit(center + spread * m0, spread * s0, center + spread * m1, spread * s1, float(w),
                      it, float(ll), degenerate)


def overlap_error(fit: BimodalFit, threshold: float = 0.0):
    """``(epsilon_overlap, fidelity_bound)`` with ``x_i = |mu_i - threshold| /
    (sqrt(2) sigma_i)``, ``eps_i = [1 - erf(x_i)]/2``, ``eps = (eps_g + eps_e)/2``."""
    eps = []
    for mu, sigma in ((fit.mu_g, fit.sigma_g), (fit.mu_e, fit.sigma_e)):
        x = abs(mu - threshold) / (np.sqrt(2) * sigma)
        eps.append(0.5 * erfc(x))  # = [1 - erf(x)]/2 without cancellation
    e = 0.5 * (eps[0] + eps[1])
    return float(e), float(1 - e)


def error_from_x(x) -> np.ndarray:
    return 0.5 * erfc(np.asarray(x, dtype=float))


def histogram(data, bins: int = 316, span: float = 4.0):
    """Counts over ``bins`` equal bins spanning the pooled mean +/- ``span`` sigma."""
    x = np.asarray(data, dtype=float)
    mu, sd = float(x.mean()), float(x.std()) or 1.0
    counts, edges = np.histogram(x, bins=bins, range=(mu - span * sd, mu + span * sd))
    return counts, edges


# ----------------------------------------------------------- temperature

def effective_temperature(p_excited: float, omega_01: float) -> float:
    """Boltzmann temperature for excited population ``p`` (0 < p < 0.5)."""
    if not 0 < p_excited < 0.5:
        raise ValueError("excited population must lie in (0, 0.5)")
    return HBAR * omega_01 / (KB * math.log(1 / p_excited - 1))


def thermal_population(temperature: float, omega_01: float) -> float:
    if temperature <= 0:
        return 0.0
    return 1 / (1 + math.exp(HBAR * omega_01 / (KB * temperature)))
