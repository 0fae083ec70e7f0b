"""
Classical side: Hamilton's equations, tangent maps, stroboscopic sections,
local Lyapunov exponents and the Liouville + diffusion field solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import as_bath
from .phasespace import WignerField
from .propagator import evolve_field


class EscapeError(RuntimeError):
    """A trajectory became non-finite."""


class TangentError(RuntimeError):
    pass


def _rhs(params, y, t):
    # y[..., 0] = x, y[..., 1] = p
    out = np.empty_like(y)
    out[..., 0] = y[..., 1] / params.m
    out[..., 1] = params.force(y[..., 0], t)
    return out


def _check_dt(params, dt):
    if dt > params.period / 200 * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds tau/200")


def step_trajectory(params, state, t, dt):
    """One RK4 step of Hamilton's equations.  ``state`` has shape (..., 2) = (x, p)."""
    _check_dt(params, dt)
    y = np.asarray(state, dtype=float)
    k1 = _rhs(params, y, t)
    k2 = _rhs(params, y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = _rhs(params, y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = _rhs(params, y + dt * k3, t + dt)
    y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise EscapeError(f"non-finite trajectory at t={t + dt:g}")
    return y


def integrate(params, state, t0, nsteps, dt):
    y = np.asarray(state, dtype=float)
    for n in range(nsteps):
        y = step_trajectory(params, y, t0 + n * dt, dt)
    return y


def integrate_langevin(params, state, t0, nsteps, dt, D, rng):
    """Trajectories of dp = F dt + sqrt(2 D) dW: the Monte Carlo counterpart of Liouville flow plus
    momentum diffusion.  Noise is split symmetrically around each RK4 step.
    """
    y = np.array(state, dtype=float)
    kick = np.sqrt(D * dt)  # half step: variance 2 D (dt / 2)
    for n in range(nsteps):
        y[..., 1] += kick * rng.standard_normal(y.shape[:-1])
        y = step_trajectory(params, y, t0 + n * dt, dt)
        y[..., 1] += kick * rng.standard_normal(y.shape[:-1])
    return y


def poincare_section(params, seeds, n_periods, steps_per_period=200):
    """Stroboscopic points at t = k tau, k = 0..n_periods.

    Returns an array (n_seeds * (n_periods + 1), 3) with columns x, p, seed index.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise ValueError("need at least one seed")
    dt = params.period / steps_per_period
    y = seeds.copy()
    pts = [y.copy()]
    for k in range(n_periods):
        y = integrate(params, y, k * params.period, steps_per_period, dt)
        pts.append(y.copy())
    pts = np.stack(pts, axis=1)  # seed, k, 2
    idx = np.repeat(np.arange(len(seeds)), n_periods + 1)
    return np.column_stack([pts.reshape(-1, 2), idx])


@dataclass
class TrajectoryEnsemble:
    states: np.ndarray    # (n, 2)
    tangents: np.ndarray  # (n, 2, 2)
    weights: np.ndarray   # (n,)
    time: float = 0.0     # tau

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("weights must be non-negative and sum to one")

    @property
    def n(self) -> int:
        return len(self.states)

    def determinants(self):
        return np.linalg.det(self.tangents)


def sample_ensemble(state, n=10_000, seed=0) -> TrajectoryEnsemble:
    """Draw n points from the Gaussian (x0, p0, sigma_x, sigma_p) with identity tangents and equal weights."""
    rng = np.random.default_rng(seed)
    x = rng.normal(state.x0, state.sigma_x, n)
    p = rng.normal(state.p0, state.sigma_p, n)
    tangents = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    return TrajectoryEnsemble(np.column_stack([x, p]), tangents, np.full(n, 1.0 / n))


@dataclass
class LyapunovSeries:
    times: np.ndarray         # tau
    lambda_local: np.ndarray  # 1/tau

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.times, self.lambda_local]), delimiter=",",
                   header="t,lambda", comments="", fmt="%.10g")

    def at(self, t):
        return np.interp(t, self.times, self.lambda_local)


def _tangent_rk4(params, y, J, t, dt):
    # joint RK4 for the flow and its linearization dJ/dt = [[0, 1/m], [-V'', 0]] J
    def f(y, J, t):
        dy = _rhs(params, y, t)
        dJ = np.empty_like(J)
        dJ[:, 0, :] = J[:, 1, :] / params.m
        dJ[:, 1, :] = -params.d2v(y[:, 0])[:, None] * J[:, 0, :]
        return dy, dJ

    a1, b1 = f(y, J, t)
    a2, b2 = f(y + 0.5 * dt * a1, J + 0.5 * dt * b1, t + 0.5 * dt)
    a3, b3 = f(y + 0.5 * dt * a2, J + 0.5 * dt * b2, t + 0.5 * dt)
    a4, b4 = f(y + dt * a3, J + dt * b3, t + dt)
    return (y + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
            J + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4))


def _renormalize(J):
    # Gram-Schmidt on the columns; Q keeps det = +1, returns log of the first stretch
    c1 = J[:, :, 0]
    r11 = np.linalg.norm(c1, axis=1)
    if np.any(r11 <= 0) or not np.all(np.isfinite(r11)):
        raise TangentError("degenerate tangent vector during renormalization")
    q1 = c1 / r11[:, None]
    c2 = J[:, :, 1]
    c2 = c2 - np.sum(q1 * c2, axis=1)[:, None] * q1
    r22 = np.linalg.norm(c2, axis=1)
    if np.any(r22 <= 0):
        raise TangentError("tangent columns became parallel")
    q2 = c2 / r22[:, None]
    return np.stack([q1, q2], axis=2), np.log(r11)


def local_lyapunov(params, ensemble: TrajectoryEnsemble, t_max, dt=None, renorm_every=20, window=1.0):
    """Weighted ensemble local exponent (1/tau), smoothed over ``window`` periods.

    The first tangent column is renormalized ``renorm_every`` times per period
    and its accumulated log stretch G_i(t) is averaged with the ensemble
    weights; lambda(t) = [G(t + w/2) - G(t - w/2)] / w.  ``ensemble`` is
    advanced in place to t_max.
    """
    tau = params.period
    steps_per = 200 if dt is None else int(round(tau / dt))
    dt = tau / steps_per
    _check_dt(params, dt)
    if steps_per % renorm_every:
        raise ValueError("renormalization interval must divide the steps per period")
    sub = steps_per // renorm_every
    n_ren = int(round(t_max * renorm_every))
    y = ensemble.states.copy()
    J = ensemble.tangents.copy()
    w = ensemble.weights
    t = ensemble.time * tau
    growth = np.zeros(len(y))
    G = [0.0]
    for k in range(n_ren):
        for _ in range(sub):
            y, J = _tangent_rk4(params, y, J, t, dt)
            t += dt
        if not np.all(np.isfinite(y)):
            raise EscapeError("trajectory escaped during tangent integration")
        J, lg = _renormalize(J)
        growth += lg
        G.append(float(np.dot(w, growth)))
    ensemble.states, ensemble.tangents, ensemble.time = y, J, t / tau
    G = np.asarray(G)
    times = np.arange(n_ren + 1) / renorm_every
    half = int(round(window * renorm_every / 2))
    if 2 * half >= len(G):
        raise ValueError("t_max shorter than the smoothing window")
    lam = (G[2 * half:] - G[:-2 * half]) / (2 * half / renorm_every)
    return LyapunovSeries(times[half:len(G) - half] + ensemble.time - t_max, lam)


def evolve_liouville(field: WignerField, params, bath=None, t_span=(0.0, 1.0), dt=None, sample_every=None,
                     check=True, dtype=np.float64):
    """Classical Liouville flow plus momentum diffusion, same split-step scheme as the Wigner solver.

    Yields the field at t_span[0] and every ``sample_every`` periods (default: only the end).
    """
    bath = as_bath(bath)
    dt = params.period / 1000.0 if dt is None else float(dt)
    return evolve_field(field, params, bath.D, t_span, dt, "classical", sample_every, check, dtype)
