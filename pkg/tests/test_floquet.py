import math
from dataclasses import astuple, replace

import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given
from hypothesis import strategies as st

from decohere.floquet import (FloquetDensityMatrix, SaturationWarning, build_floquet_basis, build_generator,
                              closed_propagate, expansion, fold_quasienergy, propagate_sigma, pure_sigma,
                              sigma_observables, sigma_to_wigner, von_neumann_entropy)
from decohere.model import preset
from decohere.phasespace import PhaseGrid, gaussian_wavepacket, wigner_transform
from decohere.quantum import evolve_schrodinger, final

PR = preset("tunneling")
GRID = PhaseGrid(*astuple(PR.grid))


def _island():
    s = PR.states["island"]
    return gaussian_wavepacket(GRID, s.x0, s.p0, s.sigma_x, PR.params.hbar)


@pytest.fixture(scope="module")
def basis():
    return build_floquet_basis(PR.params, GRID, 20, psi0=_island())


def test_undriven_quasienergies_are_folded_eigenvalues():
    P = replace(PR.params, s=0.0)
    b = build_floquet_basis(P, GRID, 10)
    # direct diagonalization of the same spectral Hamiltonian
    k = 2 * np.pi * sfft.fftfreq(GRID.nx, GRID.dx)
    F = sfft.fft(np.eye(GRID.nx), axis=0)
    H = (F.conj().T * ((P.hbar * k) ** 2 / (2 * P.m))) @ F / GRID.nx + np.diag(P.static_potential(GRID.x))
    E = np.linalg.eigvalsh(H)[:10]
    expect = np.sort(fold_quasienergy(E, P.hbar, P.omega))
    assert np.abs(np.sort(b.quasienergies) - expect).max() < 1e-4
    assert np.sort(b.mean_energies()) == pytest.approx(E, abs=1e-3)


@given(e=st.floats(-1e3, 1e3))
def test_fold_range(e):
    P = PR.params
    w = P.hbar * P.omega
    f = float(fold_quasienergy(e, P.hbar, P.omega))
    assert -w / 2 < f <= w / 2 + 1e-12
    assert abs(math.remainder(f - e, w)) < 1e-9


def test_basis_structure(basis):
    assert basis.unitarity < 1e-8
    assert basis.orthonormality() < 1e-10
    assert basis.states.shape == (32, GRID.nx, 20)
    assert np.allclose(basis.x_t, basis.x_t.conj().transpose(0, 2, 1), atol=1e-12)


def test_expansion_fidelity(basis):
    c, fid = expansion(basis, _island(), min_fidelity=0.999)
    assert fid > 0.999
    assert np.sum(np.abs(c) ** 2) == pytest.approx(fid)


def test_closed_propagation_matches_schrodinger(basis):
    psi = _island()
    c, _ = expansion(basis, psi)
    P = PR.params
    direct = final(evolve_schrodinger(psi, P, (0, 3), dt=P.period / 1024))
    fl = closed_propagate(basis, c, 3)
    err = math.sqrt(np.sum(np.abs(fl.amplitudes - direct.amplitudes) ** 2) * GRID.dx)
    assert err < 1e-2  # bounded by the truncation, sqrt(1 - fidelity)
    b40 = build_floquet_basis(P, GRID, 40, psi0=psi)
    fl40 = closed_propagate(b40, expansion(b40, psi)[0], 3)
    assert math.sqrt(np.sum(np.abs(fl40.amplitudes - direct.amplitudes) ** 2) * GRID.dx) < 1e-5


# --- generator --------------------------------------------------------------------

@pytest.mark.parametrize("form", ["sideband", "mean"])
def test_generator_identities(basis, form):
    G = build_generator(basis, 0.01, form=form)
    assert G.trace_defect() < 1e-10
    assert G.hermiticity_defect() < 1e-10


def test_generator_against_explicit_superoperator(basis):
    # build M column by column from the Lindblad action on |alpha><beta|
    n = 4
    small = replace(basis, quasienergies=basis.quasienergies[:n], states=basis.states[:, :, :n],
                    x_t=basis.x_t[:, :n, :n], right_t=basis.right_t[:, :n, :n])
    D = 0.01
    hb = PR.params.hbar
    G = build_generator(small, D)
    E = np.diag(small.quasienergies)
    M = np.zeros((n, n, n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            rho = np.zeros((n, n), dtype=complex)
            rho[a, b] = 1.0
            out = -1j / hb * (E @ rho - rho @ E)
            for X in small.x_t:
                out -= D / hb**2 * (X @ X @ rho + rho @ X @ X - 2 * X @ rho @ X) / small.n_sub
            M[:, :, a, b] = out
    assert np.abs(G.M - M).max() < 1e-10 * np.abs(M).max()


def test_closed_sigma_keeps_populations(basis):
    c, _ = expansion(basis, _island())
    G = build_generator(basis, 0.0)
    sig, ok = propagate_sigma(G, pure_sigma(c), 5)
    pops = np.array([np.real(np.diag(s.sigma)) for s in sig])
    assert np.abs(pops - pops[0]).max() < 1e-12
    assert ok and all(von_neumann_entropy(s.sigma) < 1e-8 for s in sig)


def test_closed_sigma_matches_wave_function(basis):
    c, _ = expansion(basis, _island())
    sig, _ = propagate_sigma(build_generator(basis, 0.0), pure_sigma(c), 4)
    psi = closed_propagate(basis, c, 4, min_fidelity=0.99)
    mx = np.sum(GRID.x * np.abs(psi.amplitudes) ** 2) * GRID.dx / psi.norm()
    x0 = np.real(np.trace(basis.x_t[0] @ sig[-1].sigma))
    assert x0 == pytest.approx(mx, abs=1e-8)


def test_open_sigma_stays_a_density_matrix(basis):
    c, _ = expansion(basis, _island())
    sig, _ = propagate_sigma(build_generator(basis, 0.05), pure_sigma(c), 10)
    assert all(s.check(1e-8) for s in sig)
    H = [von_neumann_entropy(s.sigma) for s in sig]
    assert H[-1] > H[1] > 0


def test_switch_on_delays_mixing(basis):
    c, _ = expansion(basis, _island())
    G = build_generator(basis, 0.05)
    sig, _ = propagate_sigma(G, pure_sigma(c), 6, switch_on_period=3)
    assert von_neumann_entropy(sig[3].sigma) < 1e-8
    assert von_neumann_entropy(sig[4].sigma) > 1e-4


def test_saturation_flagged(basis):
    small = replace(basis, quasienergies=basis.quasienergies[:2], states=basis.states[:, :, :2],
                    x_t=basis.x_t[:, :2, :2], right_t=basis.right_t[:, :2, :2])
    G = build_generator(small, 5.0)
    with pytest.warns(SaturationWarning):
        _, ok = propagate_sigma(G, pure_sigma([1.0, 0.0]), 50)
    assert not ok


def test_entropy_limits():
    assert von_neumann_entropy(pure_sigma([1, 1j, 0])) == pytest.approx(0, abs=1e-12)
    assert von_neumann_entropy(np.eye(5) / 5) == pytest.approx(math.log(5))
    bad = FloquetDensityMatrix(np.diag([1.2, -0.2]), 0.0)
    assert not bad.check()


def test_observables_and_wigner(basis):
    c, _ = expansion(basis, _island())
    sig = pure_sigma(c)
    mx, H, pl, pr = sigma_observables(basis, sig)
    assert pl + pr == pytest.approx(1.0)
    assert pl > 0.99 and mx < -3
    W = sigma_to_wigner(basis, sig)
    psi = closed_propagate(basis, c, 0, min_fidelity=0.99)
    direct = wigner_transform(psi, GRID, PR.params.hbar)
    assert np.abs(W.values - direct.values).max() < 1e-8 * np.abs(direct.values).max()
    assert W.norm() == pytest.approx(1.0, abs=1e-8)


def test_quasienergy_csv(basis, tmp_path):
    basis.write_quasienergies(tmp_path / "q.csv")
    data = np.loadtxt(tmp_path / "q.csv", delimiter=",", skiprows=1)
    assert data.shape == (20, 3)
    assert np.allclose(data[:, 1], basis.quasienergies)
