"""
Phase-space grids, Wigner fields, wave functions and snapshot files.

Conventions
-----------
Fields are stored as ``values[ix, ip]`` (position index outermost) on a
periodic grid ``x_i = x_min + i dx``, ``p_j = p_min + j dp``.  Wigner
functions are normalised to ``sum(W) dx dp = 1`` and the purity of the
represented state is ``Tr rho^2 = 2 pi hbar sum(W^2) dx dp``.

Spectral variables: ``lam`` is conjugate to x and ``theta`` is conjugate to
p (numpy's forward transform convention, so d/dx <-> i lam).  With this
convention the p-transform of the Wigner function is a density matrix
element, ``W~(x, theta) = rho(x - hbar theta/2, x + hbar theta/2)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.special import erfc


class GridError(ValueError):
    pass


class UncertaintyError(ValueError):
    pass


class AliasingError(RuntimeError):
    pass


class SnapshotError(IOError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PhaseGrid:
    nx: int
    np: int
    x_min: float
    x_max: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if not (_is_pow2(self.nx) and _is_pow2(self.np)):
            raise GridError(f"grid sizes must be powers of two, got {self.nx} x {self.np}")
        if not (self.x_max > self.x_min and self.p_max > self.p_min):
            raise GridError("grid extents must satisfy x_max > x_min and p_max > p_min")

    @classmethod
    def symmetric(cls, nx, np_, x_extent, p_extent):
        return cls(nx, np_, -x_extent, x_extent, -p_extent, p_extent)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.np

    @property
    def cell(self) -> float:
        return self.dx * self.dp

    @property
    def shape(self):
        return (self.nx, self.np)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    @property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.np)

    @property
    def lam(self) -> np.ndarray:
        """Non-negative wave numbers along x (rfft layout)."""
        return 2.0 * np.pi * sfft.rfftfreq(self.nx, self.dx)

    @property
    def theta(self) -> np.ndarray:
        """Non-negative wave numbers along p (rfft layout)."""
        return 2.0 * np.pi * sfft.rfftfreq(self.np, self.dp)

    @property
    def kx_max(self) -> float:
        return np.pi / self.dx

    @property
    def kp_max(self) -> float:
        return np.pi / self.dp

    def max_coherence_length(self, hbar: float) -> float:
        """Largest |x1 - x2| representable in the theta direction."""
        return hbar * self.kp_max

    def max_momentum_coherence(self, hbar: float) -> float:
        return hbar * self.kx_max

    def mesh(self):
        return np.meshgrid(self.x, self.p, indexing="ij")

    def describe(self) -> dict:
        return {
            "nx": self.nx, "np": self.np,
            "x_min": self.x_min, "x_max": self.x_max,
            "p_min": self.p_min, "p_max": self.p_max,
        }


@dataclass
class WignerField:
    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0
    hbar: float = 0.1

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if np.iscomplexobj(self.values):
            raise ValueError("Wigner field values must be real")

    def norm(self) -> float:
        return float(self.values.sum(dtype=np.float64) * self.grid.cell)

    def purity(self) -> float:
        return float(2.0 * np.pi * self.hbar * np.sum(self.values.astype(np.float64) ** 2) * self.grid.cell)

    def marginal_x(self) -> np.ndarray:
        return self.values.sum(axis=1, dtype=np.float64) * self.grid.dp

    def marginal_p(self) -> np.ndarray:
        return self.values.sum(axis=0, dtype=np.float64) * self.grid.dx

    def copy(self) -> "WignerField":
        return replace(self, values=self.values.copy())


@dataclass
class WaveFunction:
    grid: PhaseGrid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.grid.nx,):
            raise GridError("wave function must live on the position axis of its grid")

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        return replace(self, amplitudes=self.amplitudes / math.sqrt(self.norm()))

    def expect_x(self) -> float:
        return float(np.sum(self.grid.x * np.abs(self.amplitudes) ** 2) * self.grid.dx)


def _gaussian_tail_outside(lo, hi, mu, sigma):
    return 0.5 * erfc((mu - lo) / (math.sqrt(2) * sigma)) + 0.5 * erfc((hi - mu) / (math.sqrt(2) * sigma))


def check_gaussian_fits(grid: PhaseGrid, x0, p0, sigma_x, sigma_p, tail=1e-8):
    if (x0 - 5 * sigma_x < grid.x_min or x0 + 5 * sigma_x > grid.x_max
            or p0 - 5 * sigma_p < grid.p_min or p0 + 5 * sigma_p > grid.p_max):
        raise GridError("the 5-sigma ellipse of the Gaussian overflows the grid")
    out = (_gaussian_tail_outside(grid.x_min, grid.x_max, x0, sigma_x)
           + _gaussian_tail_outside(grid.p_min, grid.p_max, p0, sigma_p))
    if out > tail:
        raise GridError(f"Gaussian tail mass outside the grid is {out:.2e} > {tail:.0e}")


def gaussian_state(grid: PhaseGrid, x0, p0, sigma_x, sigma_p, hbar, pure=True) -> WignerField:
    """Squeezing-free Gaussian Wigner function centred at (x0, p0).

    With ``pure`` the widths must satisfy sigma_x sigma_p = hbar/2; without it
    any sigma_x sigma_p >= hbar/2 is accepted and the state has purity
    hbar / (2 sigma_x sigma_p).
    """
    product = sigma_x * sigma_p
    if pure and not math.isclose(product, hbar / 2, rel_tol=1e-9):
        raise UncertaintyError(
            f"pure Gaussian needs sigma_x sigma_p = hbar/2 = {hbar / 2:g}, got {product:g}")
    if product < hbar / 2 * (1 - 1e-12):
        raise UncertaintyError(f"sigma_x sigma_p = {product:g} violates the uncertainty bound {hbar / 2:g}")
    check_gaussian_fits(grid, x0, p0, sigma_x, sigma_p)
    gx = np.exp(-((grid.x - x0) ** 2) / (2 * sigma_x**2))
    gp = np.exp(-((grid.p - p0) ** 2) / (2 * sigma_p**2))
    values = np.outer(gx, gp)
    values /= values.sum() * grid.cell
    return WignerField(grid, values, 0.0, hbar)


def gaussian_wavepacket(grid: PhaseGrid, x0, p0, sigma_x, hbar) -> WaveFunction:
    x = grid.x
    amp = np.exp(-((x - x0) ** 2) / (4 * sigma_x**2) + 1j * p0 * (x - x0) / hbar)
    return WaveFunction(grid, amp).normalized()


def integrate(field: WignerField, weight) -> float:
    """Riemann sum of weight(x, p) W(x, p) dx dp; ``weight`` may be a callable or an array."""
    if callable(weight):
        X, P = field.grid.mesh()
        weight = weight(X, P)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), field.grid.shape)
    return float(np.sum(weight * field.values) * field.grid.cell)


def _shift_matrix(psi_hat, k, shifts, pad_n, dx):
    """Rows are psi(x + u) for each u in ``shifts`` evaluated by Fourier interpolation."""
    phase = np.exp(1j * np.outer(shifts, k))
    return sfft.ifft(psi_hat[None, :] * phase, axis=1)


def wigner_transform(psi: WaveFunction, grid: PhaseGrid | None = None, hbar: float = 0.1) -> WignerField:
    """Wigner function of a pure state, W(x,p) = 1/(pi hbar) int dy psi*(x+y) psi(x-y) e^{2ipy/hbar}.

    Displaced copies psi(x +- hbar theta / 2) are evaluated by band-limited
    Fourier interpolation on a zero-padded line, so no periodic images enter.
    """
    grid = grid or psi.grid
    if psi.amplitudes.shape != (grid.nx,):
        raise GridError("psi must be defined on the position axis of the grid")
    if not (math.isclose(psi.grid.x_min, grid.x_min) and math.isclose(psi.grid.x_max, grid.x_max)):
        raise GridError("psi and target grid must share the position axis")
    amp = psi.amplitudes / math.sqrt(psi.norm())
    dx = grid.dx
    theta = grid.theta
    half = 0.5 * hbar * theta

    # momentum content must fit the p range, coherences must fit the theta range
    pk = hbar * 2 * np.pi * sfft.fftfreq(grid.nx, dx)
    prob_p = np.abs(sfft.fft(amp)) ** 2
    prob_p /= prob_p.sum()
    outside = prob_p[(pk < grid.p_min + grid.dp) | (pk > grid.p_max - grid.dp)].sum()
    if outside > 1e-6:
        raise AliasingError(f"{outside:.2e} of the momentum distribution falls outside the p range")
    rho_x = np.abs(amp) ** 2 * dx
    sep_lim = grid.max_coherence_length(hbar)
    auto = np.correlate(rho_x, rho_x, mode="full")
    lags = dx * (np.arange(auto.size) - (grid.nx - 1))
    too_far = auto[np.abs(lags) > sep_lim].sum()
    if too_far > 1e-6:
        raise AliasingError(f"coherence beyond {sep_lim:.3g} carries {too_far:.2e}: p spacing too coarse")

    pad = int(math.ceil(half.max() / dx)) + 2
    n_pad = sfft.next_fast_len(grid.nx + 2 * pad)
    line = np.zeros(n_pad, dtype=complex)
    line[pad:pad + grid.nx] = amp
    k = 2 * np.pi * sfft.fftfreq(n_pad, dx)
    line_hat = sfft.fft(line)
    if n_pad % 2 == 0:
        line_hat[n_pad // 2] = 0.0
    minus = _shift_matrix(line_hat, k, -half, n_pad, dx)[:, pad:pad + grid.nx]
    plus = _shift_matrix(line_hat, k, half, n_pad, dx)[:, pad:pad + grid.nx]
    # W~(x, theta) = rho(x - hbar theta/2, x + hbar theta/2); rows index theta
    w_hat = (minus * np.conj(plus)).T
    w_hat *= np.exp(1j * theta * grid.p_min)[None, :] / grid.dp
    values = sfft.irfft(w_hat, n=grid.np, axis=1)
    return WignerField(grid, values, psi.time, hbar)


# --- snapshot files -------------------------------------------------------

SNAPSHOT_MAGIC = b"WIGSNAP\x00"
SNAPSHOT_VERSION = 1
MODES = {"quantum": 0, "classical": 1, "wavefunction": 2}
_MODE_NAMES = {v: k for k, v in MODES.items()}
# magic, version, mode, nx, np, x_min, x_max, p_min, p_max, time, hbar
_HEADER = struct.Struct("<8sIIQQdddddd")


def write_snapshot(obj, path, mode: str | None = None, hbar: float | None = None) -> Path:
    """Write a WignerField or WaveFunction to ``path`` (little-endian float64 payload)."""
    path = Path(path)
    if isinstance(obj, WaveFunction):
        mode = "wavefunction"
        payload = np.ascontiguousarray(np.stack([obj.amplitudes.real, obj.amplitudes.imag], axis=1))
        hbar = 0.0 if hbar is None else hbar
    else:
        mode = mode or "quantum"
        payload = np.ascontiguousarray(obj.values, dtype=np.float64)
        hbar = obj.hbar
    if mode not in MODES:
        raise SnapshotError(f"unknown snapshot mode {mode!r}")
    g = obj.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, MODES[mode], g.nx, g.np,
                          g.x_min, g.x_max, g.p_min, g.p_max, float(obj.time), float(hbar))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f8").tobytes(order="C"))
    return path


@dataclass
class FieldSnapshot:
    mode: str
    version: int
    grid: PhaseGrid
    time: float
    hbar: float
    data: WignerField | WaveFunction


def read_snapshot(path) -> FieldSnapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotError("file shorter than the snapshot header")
    magic, version, mode_id, nx, np_, x0, x1, p0, p1, time, hbar = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError("bad magic: not a snapshot file")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version} (reader supports {SNAPSHOT_VERSION})")
    if mode_id not in _MODE_NAMES:
        raise SnapshotError(f"unknown mode tag {mode_id}")
    mode = _MODE_NAMES[mode_id]
    grid = PhaseGrid(int(nx), int(np_), x0, x1, p0, p1)
    count = 2 * grid.nx if mode == "wavefunction" else grid.nx * grid.np
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise SnapshotError(f"payload has {len(body)} bytes, expected {8 * count}")
    arr = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if mode == "wavefunction":
        pair = arr.reshape(grid.nx, 2)
        data = WaveFunction(grid, pair[:, 0] + 1j * pair[:, 1], time)
    else:
        data = WignerField(grid, arr.reshape(grid.nx, grid.np), time, hbar)
    return FieldSnapshot(mode, version, grid, time, hbar, data)
