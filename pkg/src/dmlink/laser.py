"""Single-mode semiconductor laser rate-equation model.

Photon density S, carrier density N and optical phase phi evolve under an
injected current I(t):

    dS/dt   = G(N, S) S - S / tau_p + Gamma beta N / tau_n
    dN/dt   = eta_i I / (q V) - N / tau_n - g(N, S) S
    dphi/dt = (alpha / 2) (Gamma g0 (N - N_tr) - 1 / tau_p)

with material gain g(N, S) = g0 (N - N_tr) / (1 + eps S), modal gain
G = Gamma g, and g0 = v_g * dg/dN.  Output power is proportional to S.

The module provides steady-state solving, a fixed-step RK4 integrator
(vectorized over a batch of drive waveforms), L-I sweeps, a simulated
small-signal modulation probe, the matching analytic response, damping
extraction and instantaneous chirp.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import constants as sc

__all__ = [
    "LaserParams",
    "LaserState",
    "SampledWaveform",
    "Trajectory",
    "LICurve",
    "SmallSignalCurve",
    "DampingFit",
    "DivergenceError",
    "derive_params",
    "default_params",
    "rate_derivatives",
    "steady_state",
    "integrate_rate_equations",
    "photon_to_power",
    "threshold_current",
    "slope_efficiency",
    "simulate_li_curve",
    "probe_small_signal",
    "analytic_small_signal",
    "fit_damping",
    "instantaneous_chirp",
    "small_signal_coefficients",
]

Q_E = sc.e
H_PLANCK = sc.h
C_LIGHT = sc.c

# Gain compression factors for semiconductor lasers sit around 1e-23 m^3.
# Anything above this bound is treated as a units/exponent slip in the
# source table and re-interpreted (see derive_params).
_EPS_PLAUSIBLE_MAX = 1e-20


class DivergenceError(RuntimeError):
    """Raised when the integrator state explodes beyond any physical scale."""


@dataclass
class SampledWaveform:
    """Uniformly sampled series with an explicit rate and unit tag."""

    samples: np.ndarray
    sample_rate: float
    unit: str = "1"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0.0:
            raise ValueError("sample rate must be positive")


@dataclass(frozen=True)
class LaserParams:
    """Static device parameters plus derived quantities.

    All quantities are SI.  Instances are immutable; build them through
    :func:`derive_params` or :func:`default_params` so that validation and
    unit fixes are applied.
    """

    confinement: float          # Gamma, optical confinement factor
    tau_p: float                # photon lifetime, s
    tau_n: float                # carrier lifetime, s
    n_tr: float                 # transparency carrier density, 1/m^3
    gain_cross_section: float   # differential gain dg/dN, m^2
    group_index: float          # group refractive index
    volume: float               # active region volume, m^3
    compression: float          # gain compression eps, m^3
    beta_sp: float              # spontaneous emission coupling
    eta_0: float                # differential quantum efficiency
    eta_i: float = 1.0          # current injection efficiency
    alpha: float = 3.0          # linewidth enhancement factor
    wavelength: float = 1500e-9

    @property
    def group_velocity(self) -> float:
        return C_LIGHT / self.group_index

    @property
    def gain_coeff(self) -> float:
        """g0 = v_g * dg/dN in m^3/s."""
        return self.group_velocity * self.gain_cross_section

    @property
    def photon_energy(self) -> float:
        return H_PLANCK * C_LIGHT / self.wavelength

    @property
    def power_per_photon_density(self) -> float:
        """Facet power per unit photon density, W m^3.

        P = S * V * eta_0 * h nu / (2 Gamma tau_p).
        """
        return (self.volume * self.eta_0 * self.photon_energy
                / (2.0 * self.confinement * self.tau_p))

    @property
    def adiabatic_chirp_coeff(self) -> float:
        """kappa = 2 Gamma eps / (eta_0 h nu V) in 1/(W s)."""
        return (2.0 * self.confinement * self.compression
                / (self.eta_0 * self.photon_energy * self.volume))


@dataclass
class LaserState:
    """Instantaneous (or steady) laser state.

    Fields may be scalars or equally shaped arrays for batched use.
    """

    s: float | np.ndarray       # photon density, 1/m^3
    n: float | np.ndarray       # carrier density, 1/m^3
    phi: float | np.ndarray = 0.0


@dataclass
class Trajectory:
    """Integrator output aligned with the drive sample grid."""

    s: np.ndarray
    n: np.ndarray
    phi: np.ndarray
    sample_rate: float
    clamp_fraction: float = 0.0

    @property
    def diverged(self) -> bool:
        """True when more than 0.01 percent of steps needed clamping."""
        return self.clamp_fraction > 1e-4


@dataclass
class LICurve:
    currents: np.ndarray        # A
    powers: np.ndarray          # W
    threshold: float            # A, x-intercept of the above-knee line
    slope: float                # W/A


@dataclass
class SmallSignalCurve:
    """Normalized intensity modulation response at one bias point."""

    i_bias: float
    freqs: np.ndarray
    magnitude: np.ndarray       # |H(f)|, DC-normalized
    peak_frequency: float
    f3db: float                 # first crossing of |H| = 0.5
    f_r: float                  # resonance frequency from the two-pole fit
    gamma: float                # damping rate from the two-pole fit, 1/s


@dataclass
class DampingFit:
    k_factor: float             # s
    gamma_0: float              # 1/s
    residual: float


def derive_params(table: Mapping[str, float]) -> LaserParams:
    """Build validated LaserParams from raw table values.

    Applies one documented unit fix: a gain compression factor larger than
    1e-20 m^3 is physically impossible and is re-read with the exponent
    sign flipped (mantissa preserved), e.g. 2.00e23 -> 2.00e-23.
    """
    values = dict(table)
    eps = float(values.get("compression", 0.0))
    if eps > _EPS_PLAUSIBLE_MAX:
        exponent = math.floor(math.log10(eps))
        mantissa = round(eps / 10.0 ** exponent, 12)
        fixed = mantissa * 10.0 ** (-exponent)
        if fixed > _EPS_PLAUSIBLE_MAX:
            raise ValueError(
                f"gain compression {eps:g} m^3 is implausible and cannot be "
                f"re-interpreted by an exponent sign flip")
        warnings.warn(
            f"gain compression {eps:g} m^3 re-interpreted as {fixed:g} m^3 "
            "(exponent sign flip)", stacklevel=2)
        values["compression"] = fixed

    p = LaserParams(**values)
    _validate(p)
    return p


def _validate(p: LaserParams) -> None:
    if not 0.0 < p.confinement <= 1.0:
        raise ValueError(f"confinement factor must be in (0, 1], got {p.confinement}")
    for name in ("tau_p", "tau_n", "volume", "gain_cross_section",
                 "group_index", "wavelength", "n_tr"):
        if getattr(p, name) <= 0.0:
            raise ValueError(f"{name} must be positive, got {getattr(p, name)}")
    if not 0.0 < p.beta_sp <= 1.0:
        raise ValueError(f"beta_sp must be in (0, 1], got {p.beta_sp}")
    if not 0.0 < p.eta_0 <= 1.0:
        raise ValueError(f"eta_0 must be in (0, 1], got {p.eta_0}")
    if not 0.0 < p.eta_i <= 1.0:
        raise ValueError(f"eta_i must be in (0, 1], got {p.eta_i}")
    if p.compression < 0.0 or p.compression > _EPS_PLAUSIBLE_MAX:
        raise ValueError(f"compression must be in [0, {_EPS_PLAUSIBLE_MAX}], "
                         f"got {p.compression}")


# reference 1500 nm DML device used throughout the package
DEFAULT_DEVICE_TABLE = {
    "confinement": 0.24,
    "tau_p": 2.60e-12,
    "tau_n": 3.17e-9,
    "n_tr": 2.00e24,
    "gain_cross_section": 3.34e-20,
    "group_index": 4.0,
    "volume": 3.60e-17,
    "compression": 2.00e-23,
    "beta_sp": 1.00e-3,
    "eta_0": 0.20,
}


def default_params(**overrides) -> LaserParams:
    """The reference device, optionally with individual values replaced."""
    return derive_params({**DEFAULT_DEVICE_TABLE, **overrides})


def rate_derivatives(p: LaserParams, state: LaserState,
                     current: float | np.ndarray):
    """Right-hand side (dS/dt, dN/dt, dphi/dt) of the rate equations."""
    s, n = state.s, state.n
    g0 = p.gain_coeff
    gain = g0 * (n - p.n_tr) / (1.0 + p.compression * s)
    ds = (p.confinement * gain - 1.0 / p.tau_p) * s \
        + p.confinement * p.beta_sp * n / p.tau_n
    dn = p.eta_i * current / (Q_E * p.volume) - n / p.tau_n - gain * s
    dphi = 0.5 * p.alpha * (p.confinement * g0 * (n - p.n_tr) - 1.0 / p.tau_p)
    return ds, dn, dphi


def threshold_current(p: LaserParams) -> float:
    """Analytic threshold neglecting gain compression and beta softening."""
    n_th = p.n_tr + 1.0 / (p.confinement * p.gain_coeff * p.tau_p)
    return Q_E * p.volume * n_th / (p.tau_n * p.eta_i)


def slope_efficiency(p: LaserParams) -> float:
    """Ideal above-threshold slope dP/dI = eta_0 h nu / (2 q)."""
    return p.eta_0 * p.photon_energy / (2.0 * Q_E)


def _closed_form_guess(p: LaserParams, current: float) -> tuple[float, float]:
    i_th = threshold_current(p)
    if current > 1.05 * i_th:
        s = p.confinement * p.tau_p * p.eta_i * (current - i_th) / (Q_E * p.volume)
        for _ in range(8):     # self-consistent compression correction
            n = p.n_tr + (1.0 + p.compression * s) / (
                p.confinement * p.gain_coeff * p.tau_p)
            s = p.confinement * p.tau_p * (
                p.eta_i * current / (Q_E * p.volume) - n / p.tau_n)
            s = max(s, 1e10)
        return s, n
    n = min(p.eta_i * current * p.tau_n / (Q_E * p.volume),
            p.n_tr + 1.0 / (p.confinement * p.gain_coeff * p.tau_p))
    loss = 1.0 / p.tau_p - p.confinement * p.gain_coeff * (n - p.n_tr)
    loss = max(loss, 1e-3 / p.tau_p)
    s = p.confinement * p.beta_sp * n / (p.tau_n * loss)
    return s, n


def _steady_residual(p: LaserParams, s, n, current):
    g0 = p.gain_coeff
    gain = g0 * (n - p.n_tr) / (1.0 + p.compression * s)
    f1 = (p.confinement * gain - 1.0 / p.tau_p) * s \
        + p.confinement * p.beta_sp * n / p.tau_n
    f2 = p.eta_i * current / (Q_E * p.volume) - n / p.tau_n - gain * s
    scale1 = max(abs(p.confinement * gain * s), s / p.tau_p,
                 p.confinement * p.beta_sp * n / p.tau_n, 1e-30)
    scale2 = max(p.eta_i * current / (Q_E * p.volume), n / p.tau_n,
                 abs(gain * s), 1e-30)
    return f1, f2, max(abs(f1) / scale1, abs(f2) / scale2)


def steady_state(p: LaserParams, current: float, tol: float = 1e-9,
                 max_iter: int = 200) -> LaserState:
    """Fixed point of the S and N equations at constant drive current.

    Damped Newton iteration from a closed-form starting point; falls back
    to a long integration restart if Newton stalls.  The returned phase is
    zero by convention (the phase equation has no fixed point above
    threshold).
    """
    if current < 0.0:
        raise ValueError(f"drive current must be non-negative, got {current}")
    if current == 0.0:
        return LaserState(0.0, 0.0, 0.0)

    s, n = _closed_form_guess(p, current)
    eps = p.compression
    g0 = p.gain_coeff
    for attempt in range(2):
        for _ in range(max_iter):
            f1, f2, rel = _steady_residual(p, s, n, current)
            if rel < tol:
                return LaserState(s, n, 0.0)
            comp = 1.0 + eps * s
            gain = g0 * (n - p.n_tr) / comp
            j11 = p.confinement * gain / comp - 1.0 / p.tau_p
            j12 = p.confinement * (s * g0 / comp + p.beta_sp / p.tau_n)
            j21 = -gain / comp
            j22 = -1.0 / p.tau_n - s * g0 / comp
            det = j11 * j22 - j12 * j21
            if det == 0.0:
                break
            ds = (-f1 * j22 + f2 * j12) / det
            dn = (-j11 * f2 + j21 * f1) / det
            step = 1.0
            for _ in range(60):
                s_new, n_new = s + step * ds, n + step * dn
                if s_new >= 0.0 and n_new >= 0.0:
                    _, _, rel_new = _steady_residual(p, s_new, n_new, current)
                    if rel_new < rel:
                        break
                step *= 0.5
            s, n = s + step * ds, n + step * dn
            s, n = max(s, 0.0), max(n, 0.0)
        else:
            return LaserState(s, n, 0.0)
        if attempt == 0:
            # Newton stalled: relax toward the attractor by integration,
            # then retry from there.
            drive = np.full(2048, current)
            traj = integrate_rate_equations(
                p, drive, sample_rate=1.0 / 25e-12,
                init=LaserState(s, n, 0.0), substeps=8)
            s, n = float(traj.s[-1]), float(traj.n[-1])
    _, _, rel = _steady_residual(p, s, n, current)
    if rel >= tol:
        raise RuntimeError(
            f"steady state did not converge at I = {current:.4g} A "
            f"(relative residual {rel:.3g})")
    return LaserState(s, n, 0.0)


def integrate_rate_equations(p: LaserParams, drive: np.ndarray,
                             sample_rate: float, init: LaserState,
                             substeps: int = 4) -> Trajectory:
    """Integrate the rate equations along a sampled drive current.

    Parameters
    ----------
    drive : ndarray, shape (T,) or (B, T)
        Injected current in A on a uniform grid.  Linear interpolation is
        used between samples.  Negative currents are rejected.
    sample_rate : float
        Drive sample rate in Hz.  RK4 takes `substeps` internal steps per
        drive interval.
    init : LaserState
        State at sample 0; fields may be (B,) arrays for batched drives.

    Returns
    -------
    Trajectory
        State series aligned with the drive grid (element 0 is `init`).
        S and N are clamped at zero; the clamped fraction of steps is
        reported and flags divergence above 1e-4.

    Raises
    ------
    DivergenceError
        If the state exceeds a million times the relevant physical scale.
    """
    drive = np.asarray(drive, dtype=float)
    if drive.ndim not in (1, 2):
        raise ValueError("drive must be 1-D or 2-D (batch, time)")
    if np.min(drive) < 0.0:
        raise ValueError("drive current must be non-negative everywhere")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")

    squeeze = drive.ndim == 1
    cur = drive[None, :] if squeeze else drive
    batch, n_samp = cur.shape

    s = np.broadcast_to(np.asarray(init.s, dtype=float), (batch,)).copy()
    n = np.broadcast_to(np.asarray(init.n, dtype=float), (batch,)).copy()
    phi = np.broadcast_to(np.asarray(init.phi, dtype=float), (batch,)).copy()

    out_s = np.empty((batch, n_samp))
    out_n = np.empty((batch, n_samp))
    out_phi = np.empty((batch, n_samp))
    out_s[:, 0], out_n[:, 0], out_phi[:, 0] = s, n, phi

    h = 1.0 / (sample_rate * substeps)
    fr = np.arange(substeps) / substeps
    fr_mid = fr + 0.5 / substeps
    fr_end = fr + 1.0 / substeps

    gam = p.confinement
    g0 = p.gain_coeff
    eps = p.compression
    inv_tp = 1.0 / p.tau_p
    inv_tn = 1.0 / p.tau_n
    sp = gam * p.beta_sp * inv_tn
    iq = p.eta_i / (Q_E * p.volume)
    n_tr = p.n_tr
    half_alpha = 0.5 * p.alpha

    # Explosion guard scales: generous multiples of the densities reachable
    # at the largest drive current.
    s_top, n_top = _closed_form_guess(p, float(np.max(cur)))
    s_cap = 1e6 * max(s_top, 1e15)
    n_cap = 1e6 * max(n_top, n_tr)

    clamped = 0
    total_steps = batch * (n_samp - 1) * substeps

    def deriv(s_, n_, i_):
        gain = g0 * (n_ - n_tr) / (1.0 + eps * s_)
        mg = gam * gain
        ds = (mg - inv_tp) * s_ + sp * n_
        dn = iq * i_ - inv_tn * n_ - gain * s_
        dphi = half_alpha * (gam * g0 * (n_ - n_tr) - inv_tp)
        return ds, dn, dphi

    for k in range(n_samp - 1):
        i0 = cur[:, k]
        di = cur[:, k + 1] - i0
        for j in range(substeps):
            ia = i0 + di * fr[j]
            im = i0 + di * fr_mid[j]
            ib = i0 + di * fr_end[j]
            k1s, k1n, k1p = deriv(s, n, ia)
            k2s, k2n, k2p = deriv(s + 0.5 * h * k1s, n + 0.5 * h * k1n, im)
            k3s, k3n, k3p = deriv(s + 0.5 * h * k2s, n + 0.5 * h * k2n, im)
            k4s, k4n, k4p = deriv(s + h * k3s, n + h * k3n, ib)
            s = s + (h / 6.0) * (k1s + 2.0 * (k2s + k3s) + k4s)
            n = n + (h / 6.0) * (k1n + 2.0 * (k2n + k3n) + k4n)
            phi = phi + (h / 6.0) * (k1p + 2.0 * (k2p + k3p) + k4p)
            if s.min() < 0.0:
                neg = s < 0.0
                clamped += int(neg.sum())
                s[neg] = 0.0
            if n.min() < 0.0:
                neg = n < 0.0
                clamped += int(neg.sum())
                n[neg] = 0.0
        out_s[:, k + 1], out_n[:, k + 1], out_phi[:, k + 1] = s, n, phi
        if (k & 127) == 0 and not (s.max() <= s_cap and n.max() <= n_cap):
            raise DivergenceError(
                f"laser state exploded at drive sample {k + 1} "
                f"(S max {s.max():.3g}, N max {n.max():.3g})")

    if squeeze:
        out_s, out_n, out_phi = out_s[0], out_n[0], out_phi[0]
    return Trajectory(out_s, out_n, out_phi, sample_rate,
                      clamp_fraction=clamped / max(total_steps, 1))


def photon_to_power(p: LaserParams, s: np.ndarray) -> np.ndarray:
    """Facet output power in W for a photon density series."""
    return np.asarray(s) * p.power_per_photon_density


def simulate_li_curve(p: LaserParams, currents: Sequence[float]) -> LICurve:
    """Steady-state L-I sweep with threshold and slope extraction.

    The slope is fitted on points whose power exceeds 30 percent of the
    sweep maximum; the threshold is that line's x-intercept.
    """
    currents = np.asarray(currents, dtype=float)
    if currents.size < 4:
        raise ValueError("need at least 4 sweep points")
    if np.any(np.diff(currents) <= 0):
        raise ValueError("current sweep must be strictly increasing")
    powers = np.array([
        photon_to_power(p, steady_state(p, float(i)).s) for i in currents])
    mask = powers > 0.3 * powers.max()
    if mask.sum() < 2:
        raise ValueError("sweep does not reach lasing operation")
    coef = np.polynomial.polynomial.polyfit(currents[mask], powers[mask], 1)
    slope = float(coef[1])
    thresh = float(-coef[0] / coef[1])
    return LICurve(currents, powers, thresh, slope)


def small_signal_coefficients(p: LaserParams, state: LaserState):
    """(omega_R^2, gamma) of the linearized S-N dynamics at a state."""
    s, n = float(state.s), float(state.n)
    comp = 1.0 + p.compression * s
    g0 = p.gain_coeff
    gain = g0 * (n - p.n_tr) / comp
    j11 = p.confinement * gain / comp - 1.0 / p.tau_p
    j12 = p.confinement * (s * g0 / comp + p.beta_sp / p.tau_n)
    j21 = -gain / comp
    j22 = -1.0 / p.tau_n - s * g0 / comp
    omega_sq = j11 * j22 - j12 * j21
    gamma = -(j11 + j22)
    return omega_sq, gamma


def _curve_stats(freqs: np.ndarray, mag: np.ndarray):
    """Peak frequency (parabolic refinement) and the |H| = 0.5 crossing."""
    k = int(np.argmax(mag))
    peak = freqs[k]
    if 0 < k < len(freqs) - 1:
        y0, y1, y2 = np.log(mag[k - 1:k + 2])
        denom = y0 - 2.0 * y1 + y2
        if denom < 0.0:
            delta = 0.5 * (y0 - y2) / denom
            delta = float(np.clip(delta, -1.0, 1.0))
            if delta >= 0.0:
                peak = freqs[k] + delta * (freqs[k + 1] - freqs[k])
            else:
                peak = freqs[k] - delta * (freqs[k - 1] - freqs[k])
    f3db = math.nan
    below = np.nonzero(mag[k:] <= 0.5)[0]
    if below.size:
        j = k + below[0]
        if j == 0:
            f3db = freqs[0]
        else:
            m0, m1 = mag[j - 1], mag[j]
            t = (0.5 - m0) / (m1 - m0)
            f3db = float(freqs[j - 1] + t * (freqs[j] - freqs[j - 1]))
    return float(peak), f3db


def _fit_two_pole(freqs: np.ndarray, mag: np.ndarray):
    """Least-squares (f_R, gamma) of |H| = fr^2 / sqrt((fr^2-f^2)^2 + f^2 g^2).

    Fitting 1/|H|^2 as a quadratic in f^2 is linear in the unknowns.
    Points with |H| < 0.2 are ignored (deep-stopband samples would dominate
    the quadratic otherwise).
    """
    use = mag >= 0.2
    if use.sum() < 4:
        use = np.ones_like(mag, dtype=bool)
    f_scale = freqs[use].max()
    x = (freqs[use] / f_scale) ** 2
    y = 1.0 / mag[use] ** 2
    design = np.stack([np.ones_like(x), x, x * x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    _, c1, c2 = coef
    if c2 <= 0.0:
        return math.nan, math.nan
    f_r = f_scale / c2 ** 0.25
    gg_sq = c1 * f_r ** 4 / f_scale ** 2 + 2.0 * f_r ** 2
    gamma = 2.0 * math.pi * math.sqrt(max(gg_sq, 0.0))
    return float(f_r), float(gamma)


def probe_small_signal(p: LaserParams, i_bias: float, freqs: Sequence[float],
                       mod_depth: float = 0.01) -> SmallSignalCurve:
    """Measure the intensity modulation response by direct simulation.

    A sinusoidal current of amplitude ``mod_depth * i_bias`` is applied at
    each probe frequency on top of the bias.  After discarding the settle
    transient (20 / gamma, rounded up to whole periods) the fundamental of
    the output power is extracted by single-bin Fourier projection over 32
    periods.  The curve is normalized by the exact DC response obtained
    from two steady-state solves.

    Raises
    ------
    RuntimeError
        If the projection leaves more than 5 percent residual AC power at
        some probe frequency even after quadrupling the capture window.
    """
    freqs = np.asarray(sorted(float(f) for f in freqs))
    if freqs.size < 2 or freqs[0] <= 0.0:
        raise ValueError("need at least two positive probe frequencies")
    ss = steady_state(p, i_bias)
    di = mod_depth * i_bias
    p_hi = photon_to_power(p, steady_state(p, i_bias + di).s)
    p_lo = photon_to_power(p, steady_state(p, i_bias - di).s)
    dc_response = 0.5 * (p_hi - p_lo)

    _, gamma_est = small_signal_coefficients(p, ss)
    settle = 20.0 / max(gamma_est, 1e9)

    mag = np.empty_like(freqs)
    for idx, f in enumerate(freqs):
        dt_max = min(2e-12, 1.0 / (64.0 * f))
        spp = int(math.ceil(1.0 / (f * dt_max)))
        dt = 1.0 / (f * spp)
        n_settle = max(int(math.ceil(settle * f)), 1)
        n_capture = 32
        for attempt in range(2):
            total = (n_settle + n_capture) * spp
            tgrid = np.arange(total + 1) * dt
            drive = i_bias + di * np.sin(2.0 * math.pi * f * tgrid)
            traj = integrate_rate_equations(
                p, drive, sample_rate=1.0 / dt,
                init=LaserState(ss.s, ss.n, 0.0), substeps=1)
            power = photon_to_power(p, traj.s[n_settle * spp:total])
            t_cap = tgrid[n_settle * spp:total]
            phasor = np.exp(-2j * math.pi * f * t_cap)
            amp = 2.0 * np.abs(np.mean(power * phasor))
            ac_power = np.mean((power - power.mean()) ** 2)
            leak = 1.0 - (amp ** 2 / 2.0) / max(ac_power, 1e-300)
            if leak <= 0.05:
                break
            n_capture *= 4
        else:
            raise RuntimeError(
                f"unresolved fundamental at {f:.3g} Hz "
                f"(leakage {leak:.1%})")
        mag[idx] = amp / dc_response

    peak, f3db = _curve_stats(freqs, mag)
    f_r, gamma = _fit_two_pole(freqs, mag)
    return SmallSignalCurve(i_bias, freqs, mag, peak, f3db, f_r, gamma)


def analytic_small_signal(p: LaserParams, i_bias: float, i_th: float,
                          k_factor: float, gamma_0: float,
                          freqs: Sequence[float]) -> SmallSignalCurve:
    """Two-pole response from the closed-form resonance frequency.

    f_R = (1 / 2 pi) sqrt(Gamma v_g a eta_i (I - I_th) / (q V)) and
    gamma = K f_R^2 + gamma_0; |H| is normalized to 1 at DC.
    """
    if i_bias <= i_th:
        raise ValueError("analytic response is defined above threshold only")
    freqs = np.asarray([float(f) for f in freqs])
    fr_sq = (p.confinement * p.gain_coeff * p.eta_i * (i_bias - i_th)
             / (Q_E * p.volume)) / (4.0 * math.pi ** 2)
    f_r = math.sqrt(fr_sq)
    gamma = k_factor * fr_sq + gamma_0
    gg = gamma / (2.0 * math.pi)
    mag = fr_sq / np.sqrt((fr_sq - freqs ** 2) ** 2 + freqs ** 2 * gg ** 2)
    peak, f3db = _curve_stats(freqs, mag)
    return SmallSignalCurve(i_bias, freqs, mag, peak, f3db, f_r, gamma)


def fit_damping(curves: Sequence[SmallSignalCurve]) -> DampingFit:
    """K-factor fit gamma = K f_R^2 + gamma_0 across bias points."""
    if len(curves) < 2:
        raise ValueError("need at least two bias points to fit damping")
    fr_sq = np.array([c.f_r ** 2 for c in curves])
    gam = np.array([c.gamma for c in curves])
    if np.ptp(fr_sq) < 1e-6 * max(fr_sq.max(), 1.0):
        raise ValueError("bias points share one resonance frequency; "
                         "damping fit is rank deficient")
    scale = fr_sq.max()
    design = np.stack([fr_sq / scale, np.ones_like(fr_sq)], axis=1)
    coef, *_ = np.linalg.lstsq(design, gam, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - gam) ** 2)))
    return DampingFit(float(coef[0] / scale), float(coef[1]), resid)


def instantaneous_chirp(p: LaserParams, power: np.ndarray,
                        sample_rate: float,
                        power_floor: float = 1e-6) -> np.ndarray:
    """Frequency deviation from transient and adiabatic chirp, Eq. form

    dnu(t) = (alpha / 4 pi) [ (1/P) dP/dt + kappa P ]

    with P floored before the division.
    """
    pw = np.maximum(np.asarray(power, dtype=float), power_floor)
    dpdt = np.gradient(pw, 1.0 / sample_rate, axis=-1)
    kappa = p.adiabatic_chirp_coeff
    return (p.alpha / (4.0 * math.pi)) * (dpdt / pw + kappa * pw)
