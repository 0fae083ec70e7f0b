import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decohere.classical import (EscapeError, LyapunovSeries, TrajectoryEnsemble, _tangent_rk4, evolve_liouville,
                                integrate, integrate_langevin, local_lyapunov, poincare_section, sample_ensemble, step_trajectory)
from decohere.model import HarmonicParams, InitialState, SystemParams, preset
from decohere.phasespace import PhaseGrid, gaussian_state
from decohere.quantum import final

UNDRIVEN = SystemParams(s=0.0)


def _single(x, p):
    return TrajectoryEnsemble(np.array([[x, p]]), np.eye(2)[None].copy(), np.array([1.0]))


def test_fixed_points_stay_put():
    tau = UNDRIVEN.period
    xm = UNDRIVEN.well_minima
    y0 = np.array([[xm, 0.0], [-xm, 0.0], [0.0, 0.0]])
    y = integrate(UNDRIVEN, y0, 0.0, 2000, tau / 200)
    assert np.abs(y - y0).max() < 1e-10


@given(x=st.floats(-4.5, 4.5), p=st.floats(-6.0, 6.0))
@settings(max_examples=10)
def test_energy_conserved_without_drive(x, p):
    tau = UNDRIVEN.period
    y = integrate(UNDRIVEN, np.array([x, p]), 0.0, 20000, tau / 2000)
    assert abs(UNDRIVEN.energy(y[0], y[1], 0) - UNDRIVEN.energy(x, p, 0)) < 1e-8


def test_harmonic_rotation():
    H = HarmonicParams(m=1.0, w0=2.0, omega=2 * np.pi)
    y = integrate(H, np.array([1.0, 0.0]), 0.0, 200, H.period / 200)
    assert y[0] == pytest.approx(math.cos(2.0), abs=1e-8)
    assert y[1] == pytest.approx(-2.0 * math.sin(2.0), abs=1e-8)


def test_langevin_free_particle_moments():
    # dp = sqrt(2D) dW from a point: var p = 2Dt, cov = D t^2 / m, var x = 2 D t^3 / (3 m^2)
    H = HarmonicParams(m=2.0, w0=0.0)
    D, n, t = 0.05, 20000, 1.0
    y0 = np.tile([0.5, 1.0], (n, 1))
    y = integrate_langevin(H, y0, 0.0, 200, t / 200, D, np.random.default_rng(3))
    c = np.cov(y.T)
    assert y[:, 0].mean() == pytest.approx(0.5 + 1.0 * t / H.m, abs=4 * math.sqrt(c[0, 0] / n))
    assert c[1, 1] == pytest.approx(2 * D * t, rel=0.05)
    assert c[0, 1] == pytest.approx(D * t**2 / H.m, rel=0.05)
    assert c[0, 0] == pytest.approx(2 * D * t**3 / (3 * H.m**2), rel=0.05)


def test_langevin_without_noise_is_hamiltonian():
    P = preset("fig1a").params
    y0 = np.array([[1.0, 0.2], [-0.5, 1.0]])
    dt = P.period / 200
    a = integrate_langevin(P, y0, 0.0, 50, dt, 0.0, np.random.default_rng(0))
    assert np.array_equal(a, integrate(P, y0, 0.0, 50, dt))


def test_step_limits():
    P = SystemParams()
    with pytest.raises(ValueError):
        step_trajectory(P, np.array([1.0, 0.0]), 0.0, P.period / 100)
    with pytest.raises(EscapeError), np.errstate(over="ignore", invalid="ignore"):
        integrate(P, np.array([1e30, 0.0]), 0.0, 5, P.period / 200)


# --- tangent map and Lyapunov exponents ---------------------------------------------

@given(x=st.floats(-4.0, 4.0), p=st.floats(-5.0, 5.0))
@settings(max_examples=10)
def test_tangent_map_is_symplectic(x, p):
    P = SystemParams()
    dt = P.period / 200
    y = np.array([[x, p]])
    J = np.eye(2)[None].copy()
    for k in range(200):
        y, J = _tangent_rk4(P, y, J, k * dt, dt)
    assert abs(np.linalg.det(J[0]) - 1) < 1e-6


def test_lyapunov_at_hyperbolic_point():
    # linearization at x = 0: V'' = -2b, stretching rate sqrt(2b/m) per unit time
    lam = local_lyapunov(UNDRIVEN, _single(0.0, 0.0), 4.0)
    assert lam.lambda_local[-1] == pytest.approx(math.sqrt(2 * UNDRIVEN.b) * UNDRIVEN.period, rel=1e-6)


def test_lyapunov_vanishes_for_harmonic_motion():
    H = HarmonicParams(m=1.0, w0=2 * np.pi, omega=2 * np.pi)
    lam = local_lyapunov(H, _single(1.0, 0.0), 5.0)
    assert np.abs(lam.lambda_local).max() < 1e-6


def test_ensemble_determinants_stay_one():
    P = SystemParams()
    ens = sample_ensemble(preset("fig1a").states["sea"], n=200, seed=3)
    local_lyapunov(P, ens, 2.0)
    assert np.abs(ens.determinants() - 1).max() < 1e-10
    assert ens.time == pytest.approx(2.0)


def test_sample_ensemble_statistics():
    st0 = InitialState(1.0, -0.5, 0.2, 0.4)
    ens = sample_ensemble(st0, n=20000, seed=1)
    assert ens.weights.sum() == pytest.approx(1.0)
    assert ens.states.mean(axis=0) == pytest.approx([1.0, -0.5], abs=0.01)
    assert ens.states.std(axis=0) == pytest.approx([0.2, 0.4], rel=0.02)
    with pytest.raises(ValueError):
        TrajectoryEnsemble(ens.states, ens.tangents, ens.weights * 2)


def test_lyapunov_csv(tmp_path):
    s = LyapunovSeries(np.array([0.5, 0.55]), np.array([0.1, 0.2]))
    s.to_csv(tmp_path / "l.csv")
    back = np.loadtxt(tmp_path / "l.csv", delimiter=",", skiprows=1)
    assert np.allclose(back, [[0.5, 0.1], [0.55, 0.2]])
    assert s.at(0.525) == pytest.approx(0.15)


# --- stroboscopic section ------------------------------------------------------------

def test_poincare_section_layout_and_energy():
    seeds = np.array([[2.0, 0.0], [-3.0, 1.0]])
    pts = poincare_section(UNDRIVEN, seeds, 5)
    assert pts.shape == (12, 3)
    assert np.array_equal(pts[:, 2], [0] * 6 + [1] * 6)
    assert np.allclose(pts[[0, 6], :2], seeds)
    for k in range(2):
        e = UNDRIVEN.energy(pts[pts[:, 2] == k, 0], pts[pts[:, 2] == k, 1], 0)
        assert np.ptp(e) < 1e-5


def test_poincare_section_periodic_in_drive():
    # the drive has period tau, so sections started one period apart coincide
    P = SystemParams()
    a = poincare_section(P, [[1.0, 0.5]], 3)
    b = poincare_section(P, a[1:2, :2], 2)
    assert np.allclose(a[1:, :2], b[:, :2], atol=1e-12)


# --- Liouville field solver -------------------------------------------------------------

def test_liouville_conserves_norm_and_square():
    # undriven, closed: area-preserving distortion of an island Gaussian
    g = PhaseGrid(512, 512, -6, 6, -13, 13)
    w = gaussian_state(g, -3.7, 0.0, 0.1, 0.6, UNDRIVEN.hbar, pure=False)
    first = w.purity()
    for f in evolve_liouville(w, UNDRIVEN, 0.0, (0, 1), sample_every=0.25):
        assert abs(f.norm() - 1) < 1e-10
        assert abs(f.purity() - first) < 1e-6 * first


def test_liouville_follows_ensemble():
    pr = preset("fig1a")
    P = pr.params
    g = PhaseGrid(512, 512, -6, 6, -13, 13)
    st0 = pr.states["island"]
    w = gaussian_state(g, st0.x0, st0.p0, st0.sigma_x, st0.sigma_p, P.hbar)
    ens = sample_ensemble(st0, n=10000, seed=7)
    y = ens.states
    for f in evolve_liouville(w, P, 0.0, (0, 2), sample_every=0.5):
        if f.time > 0:
            y = integrate(P, y, (f.time - 0.5) * P.period, 100, P.period / 200)
        mean_field = np.sum(f.values * g.x[:, None]) * g.cell
        assert abs(np.dot(ens.weights, y[:, 0]) - mean_field) < 2 * g.dx
