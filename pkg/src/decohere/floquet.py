"""
Floquet basis of the driven well and the period-averaged master equation
for sigma, the density matrix averaged over one driving period, in that basis.

With X(t)_{mu nu} = <phi_mu(t)| x |phi_nu(t)> and <<.>> the average over
one period, the generator is

    M_{mu nu alpha beta} = -(i/hbar)(eps_mu - eps_nu) d_{mu alpha} d_{nu beta}
        - (D/hbar^2) << d_{nu beta} (X X)_{mu alpha} + d_{mu alpha} (X X)_{beta nu}
                        - 2 X_{mu alpha} X_{beta nu} >>

i.e. the period average of the position-dephasing Lindblad generator
restricted to the basis (``form="sideband"``, the default).  Products X X
are taken inside the truncated basis, which keeps the trace exactly.
``form="mean"`` replaces every average of a product by the product of the
averages, <<X>> <<X>>; it is also trace preserving but drops the driven
sidebands of x.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sl

from .phasespace import PhaseGrid, WaveFunction, WignerField, wigner_transform
from .quantum import SchrodingerStepper


class FloquetError(RuntimeError):
    pass


class SaturationWarning(UserWarning):
    """von Neumann entropy close to log n: the truncated basis is saturating."""


UNITARITY_TOL = 1e-6


@dataclass
class FloquetBasis:
    grid: PhaseGrid
    params: object
    quasienergies: np.ndarray  # (n,)
    states: np.ndarray         # (n_sub, nx, n): periodic parts phi_mu(t_k), sum |phi|^2 dx = 1
    sub_times: np.ndarray      # absolute times t_k = k tau / n_sub
    x_t: np.ndarray            # (n_sub, n, n) position matrix elements at the sub-times
    right_t: np.ndarray        # (n_sub, n, n) matrix elements of the projector on x > 0
    unitarity: float = 0.0
    conditioning: float = 0.0
    indices: np.ndarray = field(default=None)  # columns of the full eigen-decomposition kept

    @property
    def n(self) -> int:
        return len(self.quasienergies)

    @property
    def n_sub(self) -> int:
        return len(self.sub_times)

    def average(self, mats, every=1):
        """Trapezoidal period average of (n_sub, ...) samples (uniform periodic samples, so a plain mean)."""
        return np.mean(mats[::every], axis=0)

    @property
    def avg_x(self):
        return self.average(self.x_t)

    @property
    def avg_right(self):
        return self.average(self.right_t)

    def overlaps(self, psi: WaveFunction):
        """c_mu = <phi_mu(0)|psi>."""
        return self.states[0].conj().T @ psi.amplitudes * self.grid.dx

    def orthonormality(self):
        dx = self.grid.dx
        eye = np.eye(self.n)
        return max(np.abs(s.conj().T @ s * dx - eye).max() for s in self.states)

    def mean_energies(self):
        """Period-averaged <phi| p^2/2m + V0 |phi>."""
        g, P = self.grid, self.params
        k = 2 * np.pi * sfft.fftfreq(g.nx, g.dx)
        kin = (P.hbar * k) ** 2 / (2 * P.m)
        v0 = P.static_potential(g.x)
        out = np.zeros(self.n)
        for s in self.states:
            sh = sfft.fft(s, axis=0)
            out += (np.sum(kin[:, None] * np.abs(sh) ** 2, axis=0) / g.nx
                    + np.sum(v0[:, None] * np.abs(s) ** 2, axis=0)) * g.dx
        return out / self.n_sub

    def write_quasienergies(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "quasienergy", "mean_energy"])
            for i, (e, h) in enumerate(zip(self.quasienergies, self.mean_energies())):
                w.writerow([i, repr(float(e)), repr(float(h))])


def fold_quasienergy(eps, hbar, omega):
    """Map onto (-hbar omega / 2, hbar omega / 2]."""
    w = hbar * omega
    e = np.asarray(eps, dtype=float)
    e = e - w * np.floor(e / w + 0.5)
    return np.where(np.isclose(e, -0.5 * w, rtol=0, atol=1e-12 * w), 0.5 * w, e)


def _propagate_columns(stepper, cols, n_sub, steps_per_sub):
    """Return the columns at each sub-time k tau / n_sub, k = 0..n_sub."""
    out = [cols]
    t = 0.0
    for _ in range(n_sub):
        cols = stepper.advance(cols, t, steps_per_sub)
        t += steps_per_sub * stepper.dt
        out.append(cols)
    return out


def build_floquet_basis(params, grid: PhaseGrid, n, n_sub=32, steps_per_period=1024, psi0=None):
    """Floquet states of the one-period propagator assembled on the position grid.

    Keeps the n states with the largest overlap with ``psi0`` or, without an
    initial state, the n lowest in period-averaged energy.
    """
    nx = grid.nx
    if not 0 < n <= nx:
        raise ValueError(f"basis size must be in 1..{nx}")
    if steps_per_period % n_sub:
        raise ValueError("n_sub must divide steps_per_period")
    tau = params.period
    hbar = params.hbar
    stepper = SchrodingerStepper(grid, params, tau / steps_per_period)
    U = stepper.advance(np.eye(nx, dtype=complex), 0.0, steps_per_period)
    unit = float(np.abs(U.conj().T @ U - np.eye(nx)).max())
    if unit > UNITARITY_TOL:
        raise FloquetError(f"one-period propagator is not unitary ({unit:.2e}); refine grid or dt")
    # complex Schur form of a normal matrix: Z holds orthonormal eigenvectors
    T, Z = sl.schur(U, output="complex")
    evals = np.diag(T)
    cond = float(np.abs(np.triu(T, 1)).max()) if nx > 1 else 0.0
    if cond > 1e-6:
        warnings.warn(f"Schur form off-diagonal residue {cond:.1e}: near-degenerate Floquet states",
                      RuntimeWarning, stacklevel=2)
    eps = fold_quasienergy(-hbar * np.angle(evals) / tau, hbar, params.omega)
    vecs = Z / math.sqrt(grid.dx)  # grid normalization sum |phi|^2 dx = 1

    if psi0 is not None:
        score = -np.abs(vecs.conj().T @ psi0.amplitudes * grid.dx) ** 2
    else:
        k = 2 * np.pi * sfft.fftfreq(nx, grid.dx)
        kin = (hbar * k) ** 2 / (2 * params.m)
        score = (np.sum(kin[:, None] * np.abs(sfft.fft(vecs, axis=0)) ** 2, axis=0) / nx
                 + np.sum(params.static_potential(grid.x)[:, None] * np.abs(vecs) ** 2, axis=0)) * grid.dx
    keep = np.sort(np.argsort(score, kind="stable")[:n])
    eps = eps[keep]
    phi0 = vecs[:, keep]

    steps_per_sub = steps_per_period // n_sub
    cols = _propagate_columns(stepper, phi0, n_sub, steps_per_sub)
    sub_times = np.arange(n_sub) * tau / n_sub
    states = np.empty((n_sub, nx, len(keep)), dtype=complex)
    for k in range(n_sub):
        states[k] = cols[k] * np.exp(1j * eps * sub_times[k] / hbar)[None, :]
    closing = np.abs(cols[n_sub] * np.exp(1j * eps * tau / hbar)[None, :] - phi0).max() * math.sqrt(grid.dx)
    if closing > 1e-6:
        raise FloquetError(f"periodic parts fail to close after one period ({closing:.2e})")
    x = grid.x
    right = (x > 0).astype(float)
    x_t = np.einsum("kim,i,kin->kmn", states.conj(), x, states) * grid.dx
    r_t = np.einsum("kim,i,kin->kmn", states.conj(), right, states) * grid.dx
    return FloquetBasis(grid, params, eps, states, sub_times, x_t, r_t, unit, cond, keep)


def expansion(basis: FloquetBasis, psi: WaveFunction, min_fidelity=0.0):
    c = basis.overlaps(psi)
    fid = float(np.sum(np.abs(c) ** 2) / psi.norm())
    if fid < min_fidelity:
        raise FloquetError(f"expansion fidelity {fid:.6f} below {min_fidelity}")
    return c, fid


def closed_propagate(basis: FloquetBasis, coefficients, k_periods, min_fidelity=0.999) -> WaveFunction:
    """Sum_mu c_mu exp(-i eps_mu k tau / hbar) phi_mu(0)."""
    c = np.asarray(coefficients, dtype=complex)
    fid = float(np.sum(np.abs(c) ** 2))
    if fid < min_fidelity:
        raise FloquetError(f"expansion fidelity {fid:.6f} below {min_fidelity}")
    P = basis.params
    phase = np.exp(-1j * basis.quasienergies * k_periods * P.period / P.hbar)
    return WaveFunction(basis.grid, basis.states[0] @ (c * phase), float(k_periods))


# --- coarse-grained generator --------------------------------------------

@dataclass
class CoarseGenerator:
    M: np.ndarray  # (n, n, n, n): d sigma_{mu nu}/dt = sum M_{mu nu alpha beta} sigma_{alpha beta}
    basis: FloquetBasis
    D: float

    @property
    def n(self):
        return self.basis.n

    def matrix(self):
        n = self.n
        return self.M.reshape(n * n, n * n)

    def trace_defect(self):
        return float(np.abs(np.einsum("mmab->ab", self.M)).max())

    def hermiticity_defect(self):
        return float(np.abs(self.M.transpose(1, 0, 3, 2) - self.M.conj()).max())


def _dissipator(x_t, every=1, form="sideband"):
    xs = x_t[::every]
    n = xs.shape[1]
    eye = np.eye(n)
    if form == "mean":
        xbar = xs.mean(axis=0)
        x2 = xbar @ xbar
        cross = np.einsum("ma,bn->mnab", xbar, xbar)
    elif form == "sideband":
        x2 = np.einsum("kma,kab->kmb", xs, xs).mean(axis=0)
        cross = np.einsum("kma,kbn->mnab", xs, xs) / len(xs)
    else:
        raise ValueError(f"unknown generator form {form!r}")
    # d_{nu beta} (XX)_{mu alpha} + d_{mu alpha} (XX)_{beta nu} - 2 X_{mu alpha} X_{beta nu}
    return (np.einsum("ma,nb->mnab", x2, eye) + np.einsum("ma,bn->mnab", eye, x2) - 2.0 * cross)


def build_generator(basis: FloquetBasis, D, form="sideband", refine_tol=1e-6) -> CoarseGenerator:
    if basis.n_sub < 32:
        raise ValueError("the period averages need at least 32 sub-times")
    P = basis.params
    n = basis.n
    eps = basis.quasienergies
    eye = np.eye(n)
    rot = -1j / P.hbar * np.einsum("ma,nb->mnab", eye, eye) * (eps[:, None] - eps[None, :])[:, :, None, None]
    M = rot.astype(complex)
    if D:
        diss = _dissipator(basis.x_t, form=form)
        coarse = _dissipator(basis.x_t, every=2, form=form)
        if np.abs(diss - coarse).max() > refine_tol * max(1.0, np.abs(diss).max()):
            raise FloquetError("period averages not converged in the number of sub-times")
        M = M - D / P.hbar**2 * diss
    return CoarseGenerator(M, basis, float(D))


# --- sigma dynamics -------------------------------------------------------

@dataclass
class FloquetDensityMatrix:
    sigma: np.ndarray
    time: float  # tau

    def check(self, tol=1e-8):
        s = self.sigma
        ok = np.abs(s - s.conj().T).max() < tol and abs(np.trace(s) - 1) < tol
        return bool(ok and np.linalg.eigvalsh(0.5 * (s + s.conj().T)).min() > -tol)


def pure_sigma(coefficients):
    c = np.asarray(coefficients, dtype=complex)
    c = c / np.linalg.norm(c)
    return np.outer(c, c.conj())


def von_neumann_entropy(sigma):
    w = np.linalg.eigvalsh(0.5 * (sigma + sigma.conj().T))
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


def propagate_sigma(generator: CoarseGenerator, sigma0, k_periods, switch_on_period=0, saturation=0.05):
    """sigma at t = 0, 1, ..., k_periods (tau), coupling switched on at ``switch_on_period``.

    Returns the list of FloquetDensityMatrix and a reliability flag, which is
    cleared (with a SaturationWarning) once H_VN comes within ``saturation``
    of log n.
    """
    if switch_on_period < 0:
        raise ValueError("switch-on period must be >= 0")
    basis = generator.basis
    P = basis.params
    n = basis.n
    tau = P.period
    sigma = np.asarray(sigma0, dtype=complex)
    phase = np.exp(-1j * (basis.quasienergies[:, None] - basis.quasienergies[None, :]) * tau / P.hbar)
    step = sl.expm(generator.matrix() * tau)  # scaling and squaring, reused every period
    out = [FloquetDensityMatrix(sigma.copy(), 0.0)]
    reliable = True
    limit = (1 - saturation) * math.log(n)
    for k in range(1, k_periods + 1):
        if k <= switch_on_period:
            sigma = sigma * phase
        else:
            sigma = (step @ sigma.reshape(-1)).reshape(n, n)
        out.append(FloquetDensityMatrix(sigma.copy(), float(k)))
        if reliable and von_neumann_entropy(sigma) >= limit:
            warnings.warn(f"von Neumann entropy within {saturation:.0%} of log n at t={k} tau; "
                          "basis too small, results unreliable", SaturationWarning, stacklevel=2)
            reliable = False
    return out, reliable


def sigma_observables(basis: FloquetBasis, sigma):
    """(<x>, H_VN, P_left, P_right) with period-averaged matrix elements."""
    mx = float(np.real(np.trace(basis.avg_x @ sigma)))
    pr = float(np.real(np.trace(basis.avg_right @ sigma)))
    tr = float(np.real(np.trace(sigma)))
    return mx, von_neumann_entropy(sigma), tr - pr, pr


def sigma_to_wigner(basis: FloquetBasis, sigma, grid: PhaseGrid | None = None) -> WignerField:
    """Wigner function of sum sigma_{mu nu} |phi_mu(0)><phi_nu(0)| (period-start states)."""
    grid = grid or basis.grid
    if grid.nx != basis.grid.nx or not np.isclose(grid.dx, basis.grid.dx):
        raise ValueError("Wigner grid must share the basis position axis")
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    vals = np.zeros(grid.shape)
    hbar = basis.params.hbar
    for wk, vk in zip(w, v.T):
        if abs(wk) < 1e-14:
            continue
        psi = WaveFunction(grid, basis.states[0] @ vk)
        vals += wk * wigner_transform(psi, grid, hbar).values
    return WignerField(grid, vals, 0.0, hbar)
