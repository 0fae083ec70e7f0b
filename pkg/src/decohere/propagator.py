"""
Split-step spectral propagator for phase-space distributions.

One step of length dt applies, in order, a half kick, the free shear, a
second half kick and the diffusion factor.  The kick acts on
``W~(x, theta)`` (Fourier transform along p):

* quantum:   exp(+i dt [V(x + hbar theta/2, t) - V(x - hbar theta/2, t)] / hbar)
* classical: exp(+i dt theta V'(x, t))
* moyal1:    classical phase plus hbar^2 theta^3 V'''(x) / 24, the first
             correction of the Moyal series (exact for a quartic potential)

the shear acts on ``W~(lam, p)`` as exp(-i dt p lam / m) and diffusion as
exp(-D theta^2 dt).  Consecutive half kicks of neighbouring steps are fused,
so a block of n steps costs n + 1 transforms along each axis.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.fft as sfft

from .phasespace import PhaseGrid, WignerField

KICKS = ("quantum", "classical", "moyal1")


class LeakageError(RuntimeError):
    """Probability reached the edge of the periodic box."""


class TimeStepError(ValueError):
    pass


class ResolutionWarning(UserWarning):
    pass


EDGE_FRACTION = 1.0 / 32.0
LEAKAGE_LIMIT = 1e-4
NYQUIST_ALERT = 1e-3


def boundary_mass(values: np.ndarray) -> float:
    """Fraction of sum|W| in a frame of width EDGE_FRACTION along every edge of the box."""
    nx, np_ = values.shape
    ex = max(1, int(nx * EDGE_FRACTION))
    ep = max(1, int(np_ * EDGE_FRACTION))
    a = np.abs(values)
    total = a.sum(dtype=np.float64)
    if total == 0:
        return 0.0
    inner = a[ex:nx - ex, ep:np_ - ep].sum(dtype=np.float64)
    return float((total - inner) / total)


def nyquist_fraction(values: np.ndarray, band: float = 1.0 / 16.0) -> float:
    """Fraction of the spectral power sum|W^|^2 lying in the outer ``band`` of wave numbers."""
    spec = np.abs(sfft.rfft2(values.astype(np.float64))) ** 2
    nx, np_ = values.shape
    kx = np.abs(sfft.fftfreq(nx))[:, None] * 2
    kp = sfft.rfftfreq(np_)[None, :] * 2
    mask = np.broadcast_to((kx > 1 - band) | (kp > 1 - band), spec.shape)
    total = spec.sum()
    return float(spec[mask].sum() / total) if total else 0.0


class SplitStepPropagator:
    """Advance a real phase-space array with the split-step scheme described above."""

    def __init__(self, grid: PhaseGrid, params, D: float, dt: float, kick: str = "quantum",
                 dtype=np.float64):
        if kick not in KICKS:
            raise ValueError(f"unknown kick {kick!r}, expected one of {KICKS}")
        self.grid = grid
        self.params = params
        self.D = float(D)
        self.dt = float(dt)
        self.kick = kick
        self.dtype = np.dtype(dtype)
        self._cdtype = np.result_type(self.dtype, np.complex64)
        hbar = params.hbar

        x = grid.x[:, None]
        theta = grid.theta[None, :]
        if kick == "quantum":
            dv = params.static_potential(x + 0.5 * hbar * theta) - params.static_potential(x - 0.5 * hbar * theta)
            phase = dv / hbar
        else:
            phase = -params.static_force(x) * theta
            if kick == "moyal1":
                phase = phase + hbar**2 * theta**3 * params.d3v(x) / 24.0
        self._theta = grid.theta
        self._half_static = np.exp(0.5j * self.dt * phase).astype(self._cdtype)
        self._full_static = (self._half_static * self._half_static).astype(self._cdtype)
        self._diffusion = np.exp(-self.D * grid.theta**2 * self.dt)
        self._shear = np.exp(-1j * self.dt * grid.lam[:, None] * grid.p[None, :] / params.m).astype(self._cdtype)

    def check_time_step(self, values: np.ndarray, mass_floor: float = 1e-10) -> None:
        """Reject steps that move the support across a quarter of the box in one step."""
        g = self.grid
        a = np.abs(values)
        rho_x = a.sum(axis=1)
        rho_p = a.sum(axis=0)
        xs = g.x[rho_x > mass_floor * rho_x.max()]
        ps = g.p[rho_p > mass_floor * rho_p.max()]
        f = np.abs(self.params.static_force(xs)).max() + abs(getattr(self.params, "s", 0.0))
        if f * self.dt > 0.25 * (g.p_max - g.p_min):
            raise TimeStepError(f"momentum kick per step {f * self.dt:.3g} exceeds a quarter of the p box")
        if np.abs(ps).max() * self.dt / self.params.m > 0.25 * (g.x_max - g.x_min):
            raise TimeStepError("free flight per step exceeds a quarter of the x box")

    def _kick_pair(self, w, tm_a, tm_b):
        # trailing half kick + diffusion of the step centred at tm_a, leading half kick of tm_b
        spec = sfft.rfft(w, axis=1)
        if tm_b is None:
            spec *= self._half_static
            lin = np.exp(0.5j * self.dt * self._theta * self.params.drive(tm_a))
        else:
            spec *= self._full_static
            lin = np.exp(0.5j * self.dt * self._theta * (self.params.drive(tm_a) + self.params.drive(tm_b)))
        if self.D > 0:
            lin = lin * self._diffusion
        spec *= lin.astype(self._cdtype)[None, :]
        return sfft.irfft(spec, n=self.grid.np, axis=1)

    def _shear_step(self, w):
        spec = sfft.rfft(w, axis=0)
        spec *= self._shear
        return sfft.irfft(spec, n=self.grid.nx, axis=0)

    def advance(self, values: np.ndarray, t0: float, nsteps: int) -> np.ndarray:
        """Advance ``nsteps`` steps starting at absolute time t0."""
        if nsteps <= 0:
            return values
        dt = self.dt
        w = values.astype(self.dtype, copy=False)
        spec = sfft.rfft(w, axis=1)
        spec *= self._half_static
        lead = np.exp(0.5j * dt * self._theta * self.params.drive(t0 + 0.5 * dt))
        spec *= lead.astype(self._cdtype)[None, :]
        w = sfft.irfft(spec, n=self.grid.np, axis=1)
        for n in range(nsteps):
            w = self._shear_step(w)
            tm = t0 + (n + 0.5) * dt
            w = self._kick_pair(w, tm, tm + dt if n + 1 < nsteps else None)
        return w


def sample_schedule(t_span, dt, period, sample_every=None):
    """Step counts between consecutive samples; sample times must fall on whole steps."""
    t0, t1 = (float(v) for v in t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    every = (t1 - t0) if sample_every is None else float(sample_every)
    if every <= 0:
        return []
    steps_per = every * period / dt
    n_per = int(round(steps_per))
    if n_per == 0 or abs(steps_per - n_per) > 1e-6 * max(1.0, steps_per):
        raise ValueError(f"sample interval {every} tau is not a whole number of steps dt={dt:g}")
    total = (t1 - t0) * period / dt
    n_total = int(round(total))
    if abs(total - n_total) > 1e-6 * max(1.0, total):
        raise ValueError("t_span is not a whole number of steps")
    chunks = [n_per] * (n_total // n_per)
    if n_total % n_per:
        chunks.append(n_total % n_per)
    return chunks


def evolve_field(field: WignerField, params, D, t_span, dt, kick, sample_every=None, check=True,
                 dtype=np.float64):
    """Generator driving SplitStepPropagator; yields the field at t_span[0] and at each sample time (in tau)."""
    tau = params.period
    chunks = sample_schedule(t_span, dt, tau, sample_every)
    prop = SplitStepPropagator(field.grid, params, D, dt, kick=kick, dtype=dtype)
    values = field.values
    if check:
        prop.check_time_step(values)
    t = float(t_span[0]) * tau
    yield WignerField(field.grid, np.array(values, dtype=np.float64), float(t_span[0]), field.hbar)
    alerted = False
    for n in chunks:
        values = prop.advance(values, t, n)
        t += n * dt
        out = WignerField(field.grid, values.astype(np.float64), t / tau, field.hbar)
        if check:
            leak = boundary_mass(out.values)
            if leak > LEAKAGE_LIMIT:
                raise LeakageError(f"boundary mass {leak:.2e} at t={out.time:.3f} tau exceeds {LEAKAGE_LIMIT:.0e}")
            if kick != "classical" and D == 0 and not alerted:
                frac = nyquist_fraction(out.values)
                if frac > NYQUIST_ALERT:
                    warnings.warn(f"sub-grid structure: {frac:.2e} of the spectral power in the Nyquist band "
                                  f"at t={out.time:.2f} tau", ResolutionWarning, stacklevel=3)
                    alerted = True
        yield out
