"""
Closed and open quantum propagation.

Times handed to and returned by the public functions are in driving
periods; ``dt`` is an absolute step.  Both evolutions are generators that
yield the state at the start time and at every sample time.
"""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import scipy.fft as sfft

from .classical import evolve_liouville
from .model import HarmonicParams, as_bath
from .phasespace import (AliasingError, PhaseGrid, WaveFunction, WignerField, gaussian_wavepacket,
                         wigner_transform)
from .propagator import LEAKAGE_LIMIT, LeakageError, evolve_field, sample_schedule

def default_dt(params) -> float:
    return params.period / 1000.0


# --- Schroedinger ----------------------------------------------------------

class SchrodingerStepper:
    """Strang-split propagator exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) with V at the step midpoint.

    Works on a single wave function or on the columns of an (nx, k) array.
    """

    def __init__(self, grid: PhaseGrid, params, dt: float):
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        k = 2 * np.pi * sfft.fftfreq(grid.nx, grid.dx)
        p = params.hbar * k
        self._kinetic = np.exp(-1j * p**2 * self.dt / (2 * params.m * params.hbar))
        self._x = grid.x
        self._static_half = np.exp(-0.5j * self.dt * params.static_potential(self._x) / params.hbar)

    def _half_potential(self, t_mid):
        return self._static_half * np.exp(-0.5j * self.dt * self._x * self.params.drive(t_mid) / self.params.hbar)

    def advance(self, amps: np.ndarray, t0: float, nsteps: int) -> np.ndarray:
        psi = np.asarray(amps, dtype=complex)
        col = psi.ndim == 2
        kin = self._kinetic[:, None] if col else self._kinetic
        for n in range(nsteps):
            half = self._half_potential(t0 + (n + 0.5) * self.dt)
            if col:
                half = half[:, None]
            psi = half * psi
            psi = sfft.ifft(kin * sfft.fft(psi, axis=0), axis=0)
            psi = half * psi
        return psi


def _check_wavefunction(psi: WaveFunction):
    amp = psi.amplitudes
    dens = np.abs(amp) ** 2
    total = dens.sum()
    n = psi.grid.nx
    edge = max(1, n // 32)
    leak = (dens[:edge].sum() + dens[-edge:].sum()) / total
    if leak > LEAKAGE_LIMIT:
        raise LeakageError(f"wave function boundary mass {leak:.2e} exceeds {LEAKAGE_LIMIT:.0e}")
    spec = np.abs(sfft.fft(amp)) ** 2
    kabs = np.abs(sfft.fftfreq(n)) * 2
    alias = spec[kabs > 1 - 1 / 16].sum() / spec.sum()
    if alias > LEAKAGE_LIMIT:
        raise AliasingError(f"{alias:.2e} of the momentum distribution sits at the grid Nyquist")


def evolve_schrodinger(psi: WaveFunction, params, t_span, dt=None, sample_every=None, check=True):
    """Yield the wave function at t_span[0] and every ``sample_every`` periods up to t_span[1]."""
    dt = default_dt(params) if dt is None else float(dt)
    if dt > params.period / 500 * (1 + 1e-12):
        raise ValueError("Schroedinger step must satisfy dt <= tau/500")
    tau = params.period
    chunks = sample_schedule(t_span, dt, tau, sample_every)
    stepper = SchrodingerStepper(psi.grid, params, dt)
    amps = psi.amplitudes.copy()
    t = float(t_span[0]) * tau
    cur = replace(psi, amplitudes=amps, time=float(t_span[0]))
    yield cur
    for n in chunks:
        amps = stepper.advance(amps, t, n)
        t += n * dt
        cur = WaveFunction(psi.grid, amps, t / tau)
        if check:
            _check_wavefunction(cur)
        yield cur


# --- Wigner-Moyal ----------------------------------------------------------

def evolve_wigner(field: WignerField, params, bath=None, t_span=(0.0, 1.0), dt=None, mode="quantum",
                  sample_every=None, check=True, dtype=np.float64):
    """Yield the Wigner (mode='quantum') or Liouville (mode='classical') evolution of ``field``.

    The quantum mode carries the full Moyal series through the nonlocal kick;
    both modes add momentum diffusion D d^2W/dp^2.  Raises LeakageError when
    more than 1e-4 of the mass reaches the box edges; warns with
    ResolutionWarning when closed quantum evolution puts more than 1e-3 of
    the spectral power in the Nyquist band.
    """
    if mode not in ("quantum", "classical"):
        raise ValueError(f"mode must be 'quantum' or 'classical', got {mode!r}")
    if mode == "classical":
        return evolve_liouville(field, params, bath, t_span, dt, sample_every=sample_every, check=check,
                                dtype=dtype)
    bath = as_bath(bath)
    dt = default_dt(params) if dt is None else float(dt)
    return evolve_field(field, params, bath.D, t_span, dt, "quantum", sample_every, check, dtype)


def final(iterator):
    """Exhaust an evolution generator and return its last element."""
    last = None
    for last in iterator:
        pass
    return last


# --- fringe decay ----------------------------------------------------------

def cat_state(grid: PhaseGrid, delta_x, sigma_x, hbar, parity=+1) -> WaveFunction:
    a = gaussian_wavepacket(grid, -0.5 * delta_x, 0.0, sigma_x, hbar).amplitudes
    b = gaussian_wavepacket(grid, 0.5 * delta_x, 0.0, sigma_x, hbar).amplitudes
    return WaveFunction(grid, a + parity * b).normalized()


def fringe_visibility(field: WignerField, delta_x) -> float:
    """|rho(-a, a)| / sqrt(rho(-a,-a) rho(a,a)) with a = delta_x / 2, read off the Wigner function.

    The coherence is the p-Fourier component of W at x = 0 and wave number
    delta_x / hbar, the populations are the position marginal at +-a.
    """
    g = field.grid
    x = g.x
    i0 = int(np.argmin(np.abs(x)))
    ia = int(np.argmin(np.abs(x - 0.5 * delta_x)))
    ib = int(np.argmin(np.abs(x + 0.5 * delta_x)))
    kp = delta_x / field.hbar
    coh = abs(np.sum(field.values[i0] * np.exp(-1j * kp * g.p)) * g.dp)
    marg = field.marginal_x()
    return float(coh / math.sqrt(marg[ia] * marg[ib]))


def fringe_decay_probe(delta_x, bath, params_free=None, grid=None, sigma_x=0.25, t_max=2.0,
                       n_samples=20, dt=None):
    """Fit the exponential decay rate (per unit time) of the interference visibility of a cat state.

    Returns the fitted rate.  ``params_free`` defaults to a heavy free particle
    (V = 0, m = 10) with hbar = 0.1 and unit period.
    """
    bath = as_bath(bath)
    params_free = params_free or HarmonicParams(m=10.0, w0=0.0, hbar=0.1, omega=2 * np.pi)
    if n_samples < 3:
        raise ValueError("need at least three samples to fit a decay rate")
    hbar = params_free.hbar
    if grid is None:
        half_x = 2.0 * delta_x + 8 * sigma_x
        dx = 1.0 / 32.0
        nx = 1 << int(math.ceil(math.log2(2 * half_x / dx)))
        half_p = max(8 * hbar / (2 * sigma_x), 1.0)
        # p spacing must carry coherences across the whole cat, |x - x'| <= delta_x + 8 sigma_x
        dp = math.pi * hbar / (1.25 * (delta_x + 8 * sigma_x))
        np_ = 1 << int(math.ceil(math.log2(2 * half_p / dp)))
        grid = PhaseGrid(nx, np_, -nx * dx / 2, nx * dx / 2, -half_p, half_p)
    psi = cat_state(grid, delta_x, sigma_x, hbar)
    w0 = wigner_transform(psi, grid, hbar)
    tau = params_free.period
    dt = dt or tau / 200
    every = t_max / n_samples
    times, vis = [], []
    for f in evolve_wigner(w0, params_free, bath, (0.0, t_max), dt=dt, sample_every=every):
        times.append(f.time * tau)
        vis.append(fringe_visibility(f, delta_x))
    vis = np.clip(np.asarray(vis), 1e-300, None)
    slope = np.polyfit(np.asarray(times), np.log(vis), 1)[0]
    return float(-slope)


# --- structure scales ------------------------------------------------------

def structure_scale(field: WignerField, q: float = 0.9):
    """Oscillation scales (delta_x, delta_p, area) from the q-quantile wave numbers of |W^|^2.

    delta = pi / k_q, i.e. half the wavelength of the q-quantile Fourier
    component along each axis.  A field with no power beyond the zero mode
    returns the grid extents.
    """
    g = field.grid
    spec = np.abs(sfft.rfft2(field.values.astype(np.float64))) ** 2
    # rfft along p (last axis) keeps the one-sided theta axis; count both signs once each
    w_p = np.full(spec.shape[1], 2.0)
    w_p[0] = 1.0
    if g.np % 2 == 0:
        w_p[-1] = 1.0
    spec = spec * w_p[None, :]
    kx = np.abs(2 * np.pi * sfft.fftfreq(g.nx, g.dx))
    kp = g.theta

    def quantile_k(k, power):
        order = np.argsort(k, kind="stable")
        ks, ps = k[order], power[order]
        cdf = np.cumsum(ps) / ps.sum()
        return ks[min(np.searchsorted(cdf, q), ks.size - 1)]

    kxq = quantile_k(kx, spec.sum(axis=1))
    kpq = quantile_k(kp, spec.sum(axis=0))
    dxs = np.pi / kxq if kxq > 0 else g.x_max - g.x_min
    dps = np.pi / kpq if kpq > 0 else g.p_max - g.p_min
    return float(dxs), float(dps), float(dxs * dps)
