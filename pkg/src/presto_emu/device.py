"""Simulated device: dispersive readout resonators on one notch-coupled
feedline, transmon qubits (2 or 3 levels) with relaxation, dephasing and
thermal population, and a parametrically driven coupler.

Conventions
-----------
* Angular frequencies in rad/s, times in seconds; one sample is 1 ns.
* Dressed resonator frequency: ``omega_r + chi`` for |g>, ``omega_r - chi``
  for |e>, ``omega_r + chi_f`` for |f> (default ``chi_f = -3*chi``, i.e. the
  ladder continues in steps of 2*chi).
* Baseband samples ``x = exp(+i*w*t)`` stand for a tone at ``centre + w``.
* Resonator field: ``da/dt = -(i*Delta + kappa/2) a + i*sqrt(kappa)*eps`` with
  ``Delta = omega_drive - omega_dressed`` (the field is kept in the same
  frame as the baseband samples); the notch port transmits
  ``s = eps + i*sqrt(kappa)/2 * a`` so the steady state is
  ``1 - (kappa/2)/(i*Delta + kappa/2)``.
* Qubits evolve in a frame rotating at the centre frequency of their drive
  line. A drive sample ``x`` contributes ``(Omega_fs/2)(x* a^dag + x a)``.
* Drives are zero-order held over each 1 ns sample and propagated with exact
  matrix exponentials of the Lindblad generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter
from scipy.special import erfcinv

from . import rng

DT = 1e-9
TWO_PI = 2 * np.pi
HBAR = 1.054571817e-34
KB = 1.380649e-23


class DeviceError(RuntimeError):
    """Numerical failure inside the device model."""


@dataclass
class QubitParams:
    """One qubit and its readout resonator."""

    omega_r: float = TWO_PI * 6.03e9
    kappa: float = TWO_PI * 455e3
    omega_01: float = TWO_PI * 4.09e9
    alpha: float = -TWO_PI * 231e6
    chi: float = -TWO_PI * 302e3
    g: float = TWO_PI * 74.3e6
    T1: float = 34e-6
    T2_echo: float = 34e-6
    p_therm: float = 0.0
    purcell_time: float = 240e-6  # 1 / Gamma_Purcell; carried as metadata
    levels: int = 2
    T1_fe: float | None = None  # f -> e relaxation; default T1 / 2
    chi_f: float | None = None  # f-state resonator shift; default -3 * chi
    rabi_per_fullscale: float = TWO_PI / (0.5186 * 20e-9)  # rad/s at |x| = 1

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not self.T1 > 0:
            raise ValueError("T1 must be positive")
        if self.T2_echo > 2 * self.T1 * (1 + 1e-12):
            raise ValueError("T2_echo cannot exceed 2*T1")
        if not 0 <= self.p_therm < 0.5:
            raise ValueError("thermal population must lie in [0, 0.5)")
        if self.levels not in (2, 3):
            raise ValueError("qubits are modelled with 2 or 3 levels")
        if self.p_therm > 0 and math.isinf(self.T1):
            raise ValueError("a thermal population needs a finite T1")

    @property
    def gamma1(self) -> float:
        return 0.0 if math.isinf(self.T1) else 1.0 / self.T1

    @property
    def gamma_phi(self) -> float:
        """Pure dephasing rate ``Gamma_2 - Gamma_1/2``."""
        g2 = 0.0 if math.isinf(self.T2_echo) else 1.0 / self.T2_echo
        return max(g2 - self.gamma1 / 2, 0.0)

    @property
    def gamma_fe(self) -> float:
        t = self.T1_fe if self.T1_fe is not None else self.T1 / 2
        return 0.0 if math.isinf(t) else 1.0 / t

    def shift(self, level: int) -> float:
        if level == 0:
            return self.chi
        if level == 1:
            return -self.chi
        return self.chi_f if self.chi_f is not None else -3 * self.chi

    def dressed(self, level: int) -> float:
        return self.omega_r + self.shift(level)


def sample_qubit(index: int, **overrides) -> QubitParams:
    """Measured parameters of qubit 1 or 2 (nominal values)."""
    if index == 1:
        base = QubitParams(omega_r=TWO_PI * 6.17e9, kappa=TWO_PI * 615e3, omega_01=TWO_PI * 3.56e9,
                           alpha=-TWO_PI * 240e6, chi=-TWO_PI * 155e3, g=TWO_PI * 69.3e6,
                           T1=46e-6, T2_echo=55e-6, purcell_time=370e-6)
    elif index == 2:
        base = QubitParams()
    else:
        raise ValueError("the sample has qubits 1 and 2")
    return replace(base, **overrides)


@dataclass
class CouplerParams:
    """Parametric exchange between qubits ``pair[0]`` and ``pair[1]``.

    The exchange resonance sits at ``|f01_a - f01_b| + shift_hz``. On
    resonance the |01>,|10> coupling is ``g_per_flux * amplitude`` (amplitude
    in flux quanta), so a full swap takes ``pi / (2 g)``.
    """

    pair: tuple = (0, 1)
    dc_flux: float = 0.26
    drive_amplitude: float = 0.21
    g_per_flux: float = (np.pi / 600e-9) / 0.21
    flux_per_fullscale: float = 0.5
    shift_hz: float = 4.5e6

    def resonance(self, qubits) -> float:
        a, b = (qubits[i] for i in self.pair)
        return abs(a.omega_01 - b.omega_01) / TWO_PI + self.shift_hz

    def g_eff(self, amplitude: float | None = None) -> float:
        return self.g_per_flux * (self.drive_amplitude if amplitude is None else amplitude)


@dataclass
class DeviceParams:
    qubits: list = field(default_factory=lambda: [sample_qubit(2)])
    noise_sigma: float = 0.0  # per quadrature, full-scale units at the ADC
    feedline_gain: float = 1.0
    coupler: CouplerParams | None = None

    @property
    def dims(self) -> list[int]:
        return [q.levels for q in self.qubits]

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))


# ---------------------------------------------------------------- operators

def _embed(op: np.ndarray, j: int, dims) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for k, d in enumerate(dims):
        out = np.kron(out, op if k == j else np.eye(d))
    return out


def _lower(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d)), 1).astype(np.complex128)


def _ket_bra(d: int, i: int, j: int) -> np.ndarray:
    m = np.zeros((d, d), dtype=np.complex128)
    m[i, j] = 1.0
    return m


def _ham_super(h: np.ndarray) -> np.ndarray:
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator(c: np.ndarray) -> np.ndarray:
    eye = np.eye(c.shape[0])
    cdc = c.conj().T @ c
    return np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)


DRIVE_BLOCK = 20  # samples; one 20 ns control pulse


class Model:
    """Lindblad generator pieces for a device in given drive frames."""

    def __init__(self, params: DeviceParams, centers: dict | None = None):
        self.params = params
        centers = centers or {}
        self.dims = params.dims
        D = self.dim = params.dim
        qs = params.qubits
        h0 = np.zeros((D, D), dtype=np.complex128)
        lind = np.zeros((D * D, D * D), dtype=np.complex128)
        self.lower = []
        for j, q in enumerate(qs):
            d = q.levels
            wc = TWO_PI * centers.get(f"q{j}", q.omega_01 / TWO_PI)
            n = np.diag(np.arange(d)).astype(np.complex128)
            h0 += _embed(np.diag([k * (q.omega_01 - wc) + q.alpha * k * (k - 1) / 2 for k in range(d)]), j, self.dims)
            a = _embed(_lower(d), j, self.dims)
            self.lower.append(a)
            g1 = q.gamma1
            if g1:
                lind += _dissipator(np.sqrt(g1 * (1 - q.p_therm)) * _embed(_ket_bra(d, 0, 1), j, self.dims))
                if q.p_therm:
                    lind += _dissipator(np.sqrt(g1 * q.p_therm) * _embed(_ket_bra(d, 1, 0), j, self.dims))
            if d > 2 and q.gamma_fe:
                lind += _dissipator(np.sqrt(q.gamma_fe) * _embed(_ket_bra(d, 1, 2), j, self.dims))
            if q.gamma_phi:
                lind += _dissipator(np.sqrt(2 * q.gamma_phi) * _embed(n, j, self.dims))
        self.L0 = _ham_super(h0) + lind
        # drive superoperators: coefficient of x and of conj(x). The port
        # emits Re(x exp(i wc t)), so in the frame at wc the qubit sees
        # x* a^dag + x a and a tone exp(i 2 pi f t) sits at wc + f.
        self.drive_ops = {}
        for j, q in enumerate(qs):
            a = self.lower[j]
            half = q.rabi_per_fullscale / 2
            self.drive_ops[f"q{j}"] = (_ham_super(half * a), _ham_super(half * a.conj().T))
        cp = params.coupler
        if cp is not None:
            ia, ib = cp.pair
            hop = self.lower[ia].conj().T @ self.lower[ib]  # moves an excitation b -> a
            gain = cp.g_per_flux * cp.flux_per_fullscale
            self.drive_ops["coupler"] = (_ham_super(gain * hop), _ham_super(gain * hop.conj().T))
            self.coupler_detuning = TWO_PI * (centers.get("coupler", 0.0) - cp.resonance(qs))
        self._idle_cache: dict = {}
        self._run_cache: dict = {}

    def idle(self, n_samples: int) -> np.ndarray:
        s = self._idle_cache.get(n_samples)
        if s is None:
            s = expm(self.L0 * (n_samples * DT))
            if len(self._idle_cache) > 4096:
                self._idle_cache.clear()
            self._idle_cache[n_samples] = s
        return s

    def driven(self, drives: dict, start: int) -> np.ndarray:
        """Propagator for a run of driven samples; ``drives`` maps line -> samples.

        Long runs are composed from blocks of ``DRIVE_BLOCK`` samples so that
        trains of identical pulses reuse cached propagators."""
        n = len(next(iter(drives.values())))
        if n > 2 * DRIVE_BLOCK and "coupler" not in drives:
            s = None
            for b0 in range(0, n, DRIVE_BLOCK):
                part = self.driven({k: np.ascontiguousarray(v[b0:b0 + DRIVE_BLOCK]) for k, v in drives.items()},
                                   start + b0)
                s = part if s is None else part @ s
            return s
        key_parts = []
        for line in sorted(drives):
            key_parts.append((line, drives[line].tobytes()))
        if "coupler" in drives:
            key_parts.append(("start", start))
        key = tuple(key_parts)
        s = self._run_cache.get(key)
        if s is not None:
            return s
        gens = np.broadcast_to(self.L0, (n,) + self.L0.shape).copy()
        for line, x in drives.items():
            if line not in self.drive_ops:
                raise DeviceError(f"device has no line {line!r}")
            up, down = self.drive_ops[line]
            x = np.asarray(x, dtype=np.complex128)
            if line == "coupler":
                x = x * np.exp(1j * self.coupler_detuning * DT * np.arange(start, start + n))
            gens += x[:, None, None] * up + np.conj(x)[:, None, None] * down
        props = expm(gens * DT)
        s = props[0]
        for p in props[1:]:
            s = p @ s
        if not np.all(np.isfinite(s)):
            raise DeviceError("non-finite propagator for driven segment")
        if len(self._run_cache) > 4096:
            self._run_cache.clear()
        self._run_cache[key] = s
        return s


def thermal_state(params: DeviceParams) -> np.ndarray:
    rho = np.array([[1.0 + 0j]])
    for q in params.qubits:
        p = np.zeros(q.levels)
        p[0], p[1] = 1 - q.p_therm, q.p_therm
        rho = np.kron(rho, np.diag(p))
    return rho


def populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1))


# ------------------------------------------------------- resonator helpers

def _res_coeffs(q: QubitParams, level: int, omega_drive: float):
    lam = -(1j * (omega_drive - q.dressed(level)) + q.kappa / 2)
    phi = np.exp(lam * DT)
    beta = 1j * np.sqrt(q.kappa) * (phi - 1) / lam
    return lam, phi, beta


def resonator_field(drive: np.ndarray, q: QubitParams, level: int, omega_drive: float, a0: complex = 0.0):
    """Exact zero-order-hold solution; returns field at each sample start and
    the field after the last sample."""
    _, phi, beta = _res_coeffs(q, level, omega_drive)
    drive = np.asarray(drive, dtype=np.complex128)
    n = drive.size
    if n == 0:
        return np.zeros(0, dtype=np.complex128), complex(a0)
    zs = lfilter([0, beta], [1, -phi], drive)
    powers = phi ** np.arange(n)
    a = zs + a0 * powers
    a_end = phi * a[-1] + beta * drive[-1]
    return a, complex(a_end)


def steady_state_field(q: QubitParams, level: int, omega_drive: float, eps: complex = 1.0) -> complex:
    delta = omega_drive - q.dressed(level)
    return 1j * np.sqrt(q.kappa) * eps / (1j * delta + q.kappa / 2)


def notch_transmission(q: QubitParams, level: int, omega_drive: float) -> complex:
    """Steady-state ``s/eps`` of the notch port."""
    delta = omega_drive - q.dressed(level)
    return 1 - (q.kappa / 2) / (1j * delta + q.kappa / 2)


def resonator_response(drive, level: int, params: DeviceParams, f_drive: float, qubit: int = 0,
                       seed: int | None = None, a0: complex = 0.0) -> np.ndarray:
    """Feedline output for a drive at symbolic centre ``f_drive`` (Hz) with the
    qubit held in ``level``; complex white noise of ``noise_sigma`` per
    quadrature is added when ``seed`` is given."""
    q = params.qubits[qubit]
    drive = np.asarray(drive, dtype=np.complex128)
    lam, _, _ = _res_coeffs(q, level, TWO_PI * f_drive)
    if not (lam.real < 0 and np.isfinite(lam)):
        raise DeviceError("unstable resonator parameters")
    a, _ = resonator_field(drive, q, level, TWO_PI * f_drive, a0)
    out = params.feedline_gain * (drive + 0.5j * np.sqrt(q.kappa) * a)
    if seed is not None and params.noise_sigma:
        g = rng.generator(seed, "resonator_response")
        out = out + params.noise_sigma * (g.standard_normal(out.size) + 1j * g.standard_normal(out.size))
    return out


def resonator_oracle(segments, durations, q: QubitParams, level: int, omega_drive: float, a0: complex = 0.0):
    """Field at each segment boundary for a piecewise-constant drive, from the
    matrix exponential of the augmented linear system."""
    lam = -(1j * (omega_drive - q.dressed(level)) + q.kappa / 2)
    a = complex(a0)
    out = [a]
    for eps, t in zip(segments, durations):
        m = np.array([[lam, 1j * np.sqrt(q.kappa) * eps], [0, 0]], dtype=np.complex128)
        a = (expm(m * t) @ np.array([a, 1.0]))[0]
        out.append(a)
    return np.array(out)


# ------------------------------------------------------- stand-alone ops

def qubit_evolve(rho: np.ndarray, control, params: DeviceParams, center_hz: float | None = None,
                 interval: float | None = None, qubit: int = 0) -> np.ndarray:
    """Evolve a density matrix under a baseband control trace (1 ns samples),
    then idle for the rest of ``interval`` (seconds)."""
    centers = {} if center_hz is None else {f"q{qubit}": center_hz}
    model = Model(params, centers)
    rho = np.asarray(rho, dtype=np.complex128)
    D = model.dim
    vec = rho.reshape(-1)
    control = np.asarray(control if control is not None else [], dtype=np.complex128)
    n = control.size
    if n:
        vec = model.driven({f"q{qubit}": control}, 0) @ vec
    if interval is not None:
        rest = interval - n * DT
        if rest < -1e-15:
            raise ValueError("interval shorter than the control trace")
        if rest > 0:
            vec = expm(model.L0 * rest) @ vec
    return vec.reshape(D, D)


def idle_excited_population(p0: float, p_therm: float, t: float, T1: float) -> float:
    return p_therm + (p0 - p_therm) * math.exp(-t / T1)


def measure_and_collapse(rho: np.ndarray, u: float):
    """Projective measurement in the level basis with uniform draw ``u``.

    Returns ``(outcome_index, collapsed_rho)``.
    """
    p = populations(rho)
    p = np.clip(p, 0, None)
    p = p / p.sum()
    k = int(np.searchsorted(np.cumsum(p), u, side="right"))
    k = min(k, p.size - 1)
    out = np.zeros_like(rho)
    out[k, k] = 1.0
    return k, out


def coupler_exchange(rho: np.ndarray, params: DeviceParams, drive_frequency: float, duration: float,
                     drive_amplitude: float | None = None) -> np.ndarray:
    """Apply a constant-amplitude coupler tone at ``drive_frequency`` (Hz) for
    ``duration`` seconds (whole nanoseconds) to a joint density matrix."""
    cp = params.coupler
    if cp is None:
        raise ValueError("device has no coupler")
    amp = cp.drive_amplitude if drive_amplitude is None else drive_amplitude
    n = int(round(duration / DT))
    if n == 0:
        return np.array(rho, dtype=np.complex128)
    model = Model(params, {"coupler": drive_frequency})
    x = np.full(n, amp / cp.flux_per_fullscale, dtype=np.complex128)
    D = model.dim
    return (model.driven({"coupler": x}, 0) @ np.asarray(rho).reshape(-1)).reshape(D, D)


def exchange_prediction(t, detuning_hz: float, g_eff: float):
    """Excitation transferred after ``t`` seconds: contrast ``g^2/(g^2+d^2)``
    with ``d = pi * detuning_hz`` (half the frame mismatch)."""
    d = np.pi * detuning_hz
    w = np.sqrt(g_eff ** 2 + d ** 2)
    return g_eff ** 2 / w ** 2 * np.sin(w * np.asarray(t)) ** 2


def noise_for_overlap(tau_g, tau_e, target: float) -> float:
    """Per-quadrature noise giving overlap error ``target`` for a matched
    filter built from noiseless references ``tau_g`` / ``tau_e``.

    Inverts ``eps = [1 - erf(x)]/2`` with ``x = |tau_e - tau_g| / (2 sqrt(2) sigma)``.
    """
    diff = np.asarray(tau_e) - np.asarray(tau_g)
    norm = float(np.sqrt(np.sum(np.abs(diff) ** 2)))
    x = float(erfcinv(2 * target))
    return norm / (2 * np.sqrt(2) * x)


def effective_rates(q: QubitParams) -> dict:
    return {"down": q.gamma1 * (1 - q.p_therm), "up": q.gamma1 * q.p_therm, "fe": q.gamma_fe}


# ------------------------------------------------------- batched session

class DeviceBatch:
    """Per-shot device state for a batch of repetitions.

    Outside readout, each shot carries a density matrix. The first non-zero
    feedline sample collapses every qubit into a level (sampled from the
    populations); while the qubits stay classical the levels jump
    stochastically (decay, thermal excitation, f -> e) and the resonators are
    integrated exactly with the level-dependent detuning. The classical phase
    ends when a control drive starts; the recorded levels then seed a
    diagonal density matrix.
    """

    def __init__(self, params: DeviceParams, reps, seed: int, centers: dict, windows=(), model: Model | None = None):
        self.params = params
        self.reps = np.asarray(reps, dtype=np.int64)
        self.seed = seed
        self.model = model if model is not None else Model(params, centers)
        self.feed_center = TWO_PI * centers.get("feedline", params.qubits[0].omega_r / TWO_PI)
        N, D, nq = self.reps.size, params.dim, len(params.qubits)
        self.N = N
        self.rho = np.broadcast_to(thermal_state(params).reshape(-1), (N, D * D)).copy()
        self.field = np.zeros((N, nq), dtype=np.complex128)
        self.levels = np.zeros((N, nq), dtype=np.int64)
        self.classical = np.zeros(N, dtype=bool)
        self.next_jump = np.full((N, nq), np.inf)
        self.jump_count = np.zeros((N, nq), dtype=np.int64)
        self.collapse_at = np.zeros(N, dtype=np.int64)
        self.windows = sorted({(int(a), int(b)) for a, b in windows})
        self.record = {w: np.zeros((N, w[1] - w[0]), dtype=np.complex128) for w in self.windows}
        self.outcomes = []  # (sample, levels copy) per collapse, for diagnostics
        self._coef = {}

    # -- helpers
    def _res(self, r: int, level: int):
        key = (r, level)
        c = self._coef.get(key)
        if c is None:
            c = self._coef[key] = _res_coeffs(self.params.qubits[r], level, self.feed_center)
        return c

    def _rates(self, j: int, level: np.ndarray) -> np.ndarray:
        q = self.params.qubits[j]
        table = np.array([q.gamma1 * q.p_therm, q.gamma1 * (1 - q.p_therm), q.gamma_fe])
        return table[np.minimum(level, 2)]

    def _draw_jumps(self, idx, j: int, t_from: np.ndarray):
        """Next jump time of qubit ``j``; the draw is keyed by the shot, the
        collapse sample and the jump count, so it does not depend on how the
        timeline is cut into advance calls."""
        rates = self._rates(j, self.levels[idx, j])
        counts = self.jump_count[idx, j]
        u = np.empty(idx.size)
        for c in np.unique(counts):
            sel = counts == c
            for tick in np.unique(self.collapse_at[idx[sel]]):
                s2 = sel & (self.collapse_at[idx] == tick)
                u[s2] = rng.rep_uniform(self.seed, f"jump:{j}:{int(c)}", self.reps[idx[s2]], int(tick))[:, 0]
        with np.errstate(divide="ignore"):
            wait = np.where(rates > 0, -np.log1p(-u) / np.where(rates > 0, rates, 1.0) / DT, np.inf)
        self.next_jump[idx, j] = t_from + wait

    def _write(self, idx, n0: int, s: np.ndarray):
        """Store feedline output ``s`` (len(idx), L) starting at sample n0."""
        n1 = n0 + s.shape[1]
        for (w0, w1), buf in self.record.items():
            lo, hi = max(w0, n0), min(w1, n1)
            if hi > lo:
                buf[idx, lo - w0:hi - w0] = s[:, lo - n0:hi - n0]

    def _wants(self, n0: int, n1: int) -> bool:
        return any(max(w0, n0) < min(w1, n1) for w0, w1 in self.windows)

    # -- public
    def advance(self, n0: int, n1: int, drives: dict):
        """Evolve from sample n0 to n1. ``drives`` maps line -> list of
        ``(rows or None, samples)`` patterns covering the batch."""
        if n1 <= n0:
            return
        groups = [(np.arange(self.N), {})]
        for line, patterns in drives.items():
            nxt = []
            for rows, tr in groups:
                for prow, trace in patterns:
                    sub = rows if prow is None else np.intersect1d(rows, prow)
                    if sub.size:
                        nxt.append((sub, {**tr, line: trace}))
            groups = nxt
        for rows, tr in groups:
            self._advance_group(rows, n0, n1, tr)

    def _advance_group(self, idx, n0, n1, tr):
        mode = self.classical[idx]
        if mode.any() and not mode.all():
            self._advance_group(idx[mode], n0, n1, tr)
            self._advance_group(idx[~mode], n0, n1, tr)
            return
        L = n1 - n0
        feed = tr.get("feedline")
        if feed is not None and not np.any(feed):
            feed = None
        ctrl = {k: v for k, v in tr.items() if k != "feedline" and v is not None and np.any(v)}
        feed_nz = np.zeros(L, bool) if feed is None else feed != 0
        ctrl_nz = np.zeros(L, bool)
        for v in ctrl.values():
            ctrl_nz |= v != 0
        # a readout (collapse) starts at a feedline sample with no control
        # drive; a control pulse ends the classical phase and the qubit is
        # measured again once the pulse is over
        start_ok = feed_nz & ~ctrl_nz
        pos = n0
        while pos < n1:
            if not self.classical[idx[0]]:
                nz = np.flatnonzero(start_ok[pos - n0:])
                p = n1 if nz.size == 0 else pos + int(nz[0])
                eps = None if feed is None else feed[pos - n0:p - n0]
                self._ensemble(idx, pos, p, {k: v[pos - n0:p - n0] for k, v in ctrl.items()}, eps)
                if p < n1:
                    self._collapse(idx, p)
                pos = p
            else:
                nz = np.flatnonzero(ctrl_nz[pos - n0:])
                c = n1 if nz.size == 0 else pos + int(nz[0])
                eps = np.zeros(c - pos, np.complex128) if feed is None else feed[pos - n0:c - n0]
                self._classical(idx, pos, c, eps)
                if c < n1:
                    self._release(idx)
                pos = c

    def _ensemble(self, idx, a, b, ctrl, eps=None):
        if b <= a:
            return
        m = self.model
        n = b - a
        active = {k: v for k, v in ctrl.items() if np.any(v)}
        if not active:
            S = m.idle(n)
        else:
            nz = np.zeros(n, bool)
            for v in active.values():
                nz |= v != 0
            edges = np.flatnonzero(np.diff(np.concatenate([[0], nz.view(np.int8), [0]])))
            S = np.eye(m.dim ** 2, dtype=np.complex128)
            cursor = 0
            for s0, s1 in zip(edges[0::2], edges[1::2]):
                if s0 > cursor:
                    S = m.idle(int(s0 - cursor)) @ S
                S = m.driven({k: np.ascontiguousarray(v[s0:s1]) for k, v in active.items()}, a + int(s0)) @ S
                cursor = int(s1)
            if cursor < n:
                S = m.idle(n - cursor) @ S
        self.rho[idx] = self.rho[idx] @ S.T
        if eps is not None and np.any(eps):
            # resonator keeps responding with the last measured levels
            self._classical_run(idx, a, b, eps)
        else:
            self._free_field(idx, a, b)

    def _free_field(self, idx, a, b):
        """Resonator ring-down with no drive, detuning set by the last levels."""
        f = self.field[idx]
        if not np.any(f):
            return
        want = self._wants(a, b)
        nq = f.shape[1]
        n = np.arange(b - a)
        s = np.zeros((idx.size, b - a), np.complex128) if want else None
        for r in range(nq):
            for lev in np.unique(self.levels[idx, r]):
                sel = self.levels[idx, r] == lev
                lam, phi, _ = self._res(r, int(lev))
                if want:
                    s[sel] += 0.5j * np.sqrt(self.params.qubits[r].kappa) * f[sel, r][:, None] * np.exp(lam * DT * n)
                f[sel, r] *= np.exp(lam * DT * (b - a))
        self.field[idx] = f
        if want:
            self._write(idx, a, self.params.feedline_gain * s)

    def _collapse(self, idx, p):
        D = self.params.dim
        rho = self.rho[idx].reshape(-1, D, D)
        pops = np.clip(populations(rho), 0, None)
        cum = np.cumsum(pops / pops.sum(axis=1, keepdims=True), axis=1)
        u = rng.rep_uniform(self.seed, "collapse", self.reps[idx], p)[:, 0]
        k = np.minimum((cum <= u[:, None]).sum(axis=1), D - 1)
        self.levels[idx] = np.stack(np.unravel_index(k, self.params.dims), axis=1)
        self.classical[idx] = True
        self.collapse_at[idx] = p
        self.jump_count[idx] = 0
        for j in range(len(self.params.qubits)):
            self._draw_jumps(idx, j, np.full(idx.size, float(p)))
        self.outcomes.append((p, idx.copy(), self.levels[idx].copy()))

    def _release(self, idx):
        D = self.params.dim
        k = np.ravel_multi_index(tuple(self.levels[idx].T), self.params.dims)
        rho = np.zeros((idx.size, D * D), np.complex128)
        rho[np.arange(idx.size), k * D + k] = 1.0
        self.rho[idx] = rho
        self.classical[idx] = False
        self.next_jump[idx] = np.inf

    def _classical(self, idx, a, b, eps):
        if b <= a:
            return
        nq = len(self.params.qubits)
        first = self.next_jump[idx].min(axis=1)
        quiet = idx[first >= b]
        noisy = idx[first < b]
        if quiet.size:
            self._classical_run(quiet, a, b, eps)
        for r in noisy:
            rr = np.array([r])
            t = a
            while True:
                j = int(np.argmin(self.next_jump[r]))
                tj = self.next_jump[r, j]
                if tj >= b:
                    break
                cut = min(max(int(np.ceil(tj)), t), b)
                self._classical_run(rr, t, cut, eps[t - a:cut - a])
                t = cut
                lev = self.levels[r, j]
                self.levels[r, j] = 1 if lev in (0, 2) else 0
                self.jump_count[r, j] += 1
                self._draw_jumps(rr, j, np.array([tj]))
            self._classical_run(rr, t, b, eps[t - a:b - a])

    def _classical_run(self, idx, a, b, eps):
        """Driven resonators with frozen levels over [a, b)."""
        if b <= a:
            return
        want = self._wants(a, b)
        n = b - a
        steps = np.arange(n)
        s = np.broadcast_to(eps, (idx.size, n)).copy() if want else None
        has_drive = np.any(eps)
        for r, q in enumerate(self.params.qubits):
            lv = self.levels[idx, r]
            for lev in np.unique(lv):
                sel = lv == lev
                lam, phi, beta = self._res(r, int(lev))
                a0 = self.field[idx[sel], r]
                if has_drive:
                    zs = lfilter([0, beta], [1, -phi], eps)
                    zs_end = phi * zs[-1] + beta * eps[-1]
                else:
                    zs, zs_end = None, 0.0
                decay_end = np.exp(lam * DT * n)
                if want:
                    traj = a0[:, None] * np.exp(lam * DT * steps)
                    if zs is not None:
                        traj = traj + zs
                    s[sel] += 0.5j * np.sqrt(q.kappa) * traj
                self.field[idx[sel], r] = zs_end + a0 * decay_end
        if want:
            self._write(idx, a, self.params.feedline_gain * s)

    def acquire(self, n0: int, n1: int, center_hz: float) -> np.ndarray:
        """Noisy feedline signal at an input port centred at ``center_hz``."""
        out = np.zeros((self.N, n1 - n0), np.complex128)
        for (w0, w1), buf in self.record.items():
            lo, hi = max(w0, n0), min(w1, n1)
            if hi > lo:
                out[:, lo - n0:hi - n0] = buf[:, lo - w0:hi - w0]
        shift = self.feed_center / TWO_PI - center_hz
        if shift:
            out *= np.exp(2j * np.pi * shift * DT * np.arange(n0, n1))
        if self.params.noise_sigma:
            out += self.params.noise_sigma * rng.rep_normal_samples(self.seed, "adc", self.reps, n0, n1)
        return out

    def excited(self) -> np.ndarray:
        """Per-shot populations (ensemble) or one-hot levels (classical),
        shape (N, D)."""
        D = self.params.dim
        pops = populations(self.rho.reshape(-1, D, D)).copy()
        if self.classical.any():
            c = np.flatnonzero(self.classical)
            k = np.ravel_multi_index(tuple(self.levels[c].T), self.params.dims)
            pops[c] = 0
            pops[c, k] = 1
        return pops


class LoopbackBatch:
    """Stand-in for a device: the input port sees the feedline drive."""

    def __init__(self, reps, windows=(), feed_center: float = 0.0, noise_sigma: float = 0.0, seed: int = 0):
        self.reps = np.asarray(reps, dtype=np.int64)
        self.N = self.reps.size
        self.windows = sorted({(int(a), int(b)) for a, b in windows})
        self.record = {w: np.zeros((self.N, w[1] - w[0]), np.complex128) for w in self.windows}
        self.feed_center = feed_center
        self.noise_sigma = noise_sigma
        self.seed = seed

    def advance(self, n0, n1, drives):
        for rows, trace in drives.get("feedline", []):
            idx = np.arange(self.N) if rows is None else rows
            for (w0, w1), buf in self.record.items():
                lo, hi = max(w0, n0), min(w1, n1)
                if hi > lo:
                    buf[np.ix_(idx, np.arange(lo - w0, hi - w0))] = trace[lo - n0:hi - n0]

    def acquire(self, n0, n1, center_hz):
        out = np.zeros((self.N, n1 - n0), np.complex128)
        for (w0, w1), buf in self.record.items():
            lo, hi = max(w0, n0), min(w1, n1)
            if hi > lo:
                out[:, lo - n0:hi - n0] = buf[:, lo - w0:hi - w0]
        shift = self.feed_center - center_hz
        if shift:
            out *= np.exp(2j * np.pi * shift * DT * np.arange(n0, n1))
        if self.noise_sigma:
            out += self.noise_sigma * rng.rep_normal_samples(self.seed, "adc", self.reps, n0, n1)
        return out
