"""
Reductions of phase-space fields: moments, purity and linear entropy, the
entropy production rate, negativity, and the derived diagnostics built on
time series of those (transition time, correspondence breakdown, scaling
fits).

Rates in an ObservableSeries are per driving period; the single-field
function ``entropy_rate_eq8`` returns a rate per unit time.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .phasespace import WignerField, integrate


class NotApplicable(ValueError):
    """The series does not show the structure the diagnostic needs."""


def linear_entropy(field: WignerField):
    purity = field.purity()
    return purity, -math.log(purity)


def negativity_fraction(field: WignerField) -> float:
    """(int|W| - int W) / (2 int|W|): share of the |W| mass sitting in negative regions."""
    a = np.abs(field.values).sum()
    return float((a - field.values.sum()) / (2 * a))


def dW_dp(field: WignerField) -> np.ndarray:
    g = field.grid
    spec = sfft.rfft(field.values, axis=1)
    spec *= 1j * g.theta[None, :]
    if g.np % 2 == 0:
        spec[:, -1] = 0.0
    return sfft.irfft(spec, n=g.np, axis=1)


def entropy_rate_eq8(field: WignerField, D: float) -> float:
    """2 D <(dW/dp)^2> / <W^2> per unit time, with a spectral p-derivative."""
    if D == 0:
        return 0.0
    num = np.sum(dW_dp(field) ** 2)
    den = np.sum(field.values ** 2)
    return float(2.0 * D * num / den)


def moments(field: WignerField, params):
    mx = integrate(field, lambda x, p: x)
    mp = integrate(field, lambda x, p: p)
    vx = integrate(field, lambda x, p: (x - mx) ** 2)
    vp = integrate(field, lambda x, p: (p - mp) ** 2)
    en = integrate(field, lambda x, p: p**2 / (2 * params.m) + params.static_potential(x))
    return mx, mp, vx, vp, en


COLUMNS = ("t", "mean_x", "mean_p", "var_x", "var_p", "energy", "purity", "H_lin", "dHdt_measured",
           "dHdt_eq8", "negativity")


@dataclass
class ObservableSeries:
    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray
    energy: np.ndarray
    purity: np.ndarray
    H_lin: np.ndarray
    dHdt_measured: np.ndarray
    dHdt_eq8: np.ndarray
    negativity: np.ndarray
    D: float = 0.0
    meta: dict = field(default_factory=dict)

    def rows(self):
        cols = [self.times, self.mean_x, self.mean_p, self.var_x, self.var_p, self.energy, self.purity,
                self.H_lin, self.dHdt_measured, self.dHdt_eq8, self.negativity]
        return np.column_stack(cols)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, D=0.0):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*[data[:, i] for i in range(len(COLUMNS))], D=D)

    def window(self, t0, t1):
        m = (self.times >= t0 - 1e-9) & (self.times <= t1 + 1e-9)
        return self.times[m], m


def centered_rate(times, H):
    """dH/dt by centered differences over one stride, one-sided at the ends."""
    times = np.asarray(times, dtype=float)
    H = np.asarray(H, dtype=float)
    out = np.empty_like(H)
    if len(H) < 2:
        out[:] = np.nan
        return out
    out[1:-1] = (H[2:] - H[:-2]) / (times[2:] - times[:-2])
    out[0] = (H[1] - H[0]) / (times[1] - times[0])
    out[-1] = (H[-1] - H[-2]) / (times[-1] - times[-2])
    return out


def rate_series(run, D, params, max_fields=None) -> ObservableSeries:
    """Reduce an iterable of WignerFields (times in tau) to an ObservableSeries."""
    tau = params.period
    recs = []
    for k, f in enumerate(run):
        pur, H = linear_entropy(f)
        recs.append((f.time, *moments(f, params), pur, H, entropy_rate_eq8(f, D) * tau, negativity_fraction(f)))
        if max_fields is not None and k + 1 >= max_fields:
            break
    a = np.array(recs, dtype=float)
    t, H = a[:, 0], a[:, 7]
    return ObservableSeries(t, a[:, 1], a[:, 2], a[:, 3], a[:, 4], a[:, 5], a[:, 6], H, centered_rate(t, H),
                            a[:, 8], a[:, 9], D=float(D))


def period_average(times, values, period=1.0):
    """Trapezoidal average of ``values`` over consecutive whole periods [k, k+1)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    k0 = math.ceil(times[0] - 1e-9)
    k1 = math.floor(times[-1] + 1e-9)
    mids, avgs = [], []
    for k in np.arange(k0, k1, period):
        m = (times >= k - 1e-9) & (times <= k + period + 1e-9)
        if m.sum() < 2:
            continue
        avgs.append(trapezoid(values[m], times[m]) / (times[m][-1] - times[m][0]))
        mids.append(k + 0.5 * period)
    return np.asarray(mids), np.asarray(avgs)


def running_average(times, values, width=1.0):
    """Centered boxcar average of width ``width``; defined where the window fits in the series."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    stride = np.median(np.diff(times))
    n = int(round(width / stride))
    if n < 1 or n >= len(times):
        raise ValueError("window does not fit the series")
    # trapezoid weights over n strides
    wts = np.ones(n + 1)
    wts[0] = wts[-1] = 0.5
    wts /= wts.sum()
    avg = np.convolve(values, wts[::-1], mode="valid")
    return times[n // 2: n // 2 + len(avg)] + (0.5 * stride if n % 2 else 0.0), avg


# --- transition time ------------------------------------------------------

@dataclass
class TransitionFit:
    t_c: float
    threshold: float
    initial_rate: float = float("nan")
    plateau_rate: float = float("nan")
    r2: float = float("nan")
    slope: float = float("nan")
    intercept: float = float("nan")

    def to_json(self):
        return json.dumps(asdict(self))


def transition_time(series: ObservableSeries, plateau_from=None, min_jump=10.0, smooth=1.0) -> TransitionFit:
    """Time at which the one-period running mean of the diffusive rate (dHdt_eq8) first crosses sqrt(initial * plateau).

    The initial level is the rate carried by the initial state; the plateau
    is the mean of the smoothed rate over the last half of the series
    (or from ``plateau_from`` on).  Raises NotApplicable if the plateau is
    not at least ``min_jump`` times the initial level.
    """
    t = series.times
    r = series.dHdt_eq8
    initial = float(r[0])
    ts, rs = running_average(t, r, smooth)
    t_pl = t[-1] / 2 if plateau_from is None else plateau_from
    m = ts >= t_pl
    if not np.any(m):
        raise NotApplicable("no samples in the plateau window")
    plateau = float(rs[m].mean())
    if not initial > 0 or plateau < min_jump * initial:
        raise NotApplicable(f"rate jump {plateau / initial if initial > 0 else float('inf'):.3g} "
                            f"below the required {min_jump:g}")
    thr = math.sqrt(initial * plateau)
    above = np.nonzero(rs >= thr)[0]
    if len(above) == 0:
        raise NotApplicable("rate never reaches the threshold")
    i = above[0]
    if i == 0:
        tc = ts[0]
    else:
        # log-linear interpolation between bracketing samples
        la, lb = math.log(rs[i - 1]), math.log(rs[i])
        tc = ts[i - 1] + (math.log(thr) - la) / (lb - la) * (ts[i] - ts[i - 1])
    return TransitionFit(float(tc), thr, initial, plateau)


def linear_fit(xs, ys):
    """Least squares y = slope x + intercept; returns (slope, intercept, r2)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss = np.sum((ys - ys.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def scaling_fit(xs, fits):
    """Attach a linear fit of t_c against ``xs`` to every TransitionFit in ``fits``."""
    slope, intercept, r2 = linear_fit(xs, [f.t_c for f in fits])
    for f in fits:
        f.slope, f.intercept, f.r2 = slope, intercept, r2
    return slope, intercept, r2


# --- correspondence -------------------------------------------------------

def baseline_gap(quantum_series, classical_series) -> float:
    """Largest |<x>_q - <x>_cl| of a regular (island) run."""
    n = min(len(quantum_series.times), len(classical_series.times))
    return float(np.max(np.abs(quantum_series.mean_x[:n] - classical_series.mean_x[:n])))


def correspondence_gap(quantum_series, classical_series, baseline, factor=3.0, sustain=0.5):
    """First time |<x>_q - <x>_cl| exceeds factor * baseline and stays above for ``sustain`` periods.

    Returns None when no breakdown occurs within the series.
    """
    t = np.asarray(quantum_series.times)
    if not np.allclose(t, classical_series.times[:len(t)]):
        raise ValueError("series must share sample times")
    gap = np.abs(quantum_series.mean_x - classical_series.mean_x[:len(t)])
    over = gap > factor * baseline
    for i in np.nonzero(over)[0]:
        m = (t >= t[i]) & (t <= t[i] + sustain + 1e-9)
        if t[i] + sustain > t[-1] + 1e-9:
            break
        if np.all(over[m]):
            return float(t[i])
    return None


# --- closed-form scales ---------------------------------------------------

def critical_width(D, lam):
    """sigma_c = sqrt(2 D / lambda); D and lambda in the same time unit."""
    if not lam > 0:
        raise ValueError("critical width needs a positive Lyapunov exponent")
    return math.sqrt(2.0 * D / lam)


def d_min(L, hbar):
    return hbar**2 / L**2


def t_hbar(lam, chi, sigma_q0, hbar):
    """Ehrenfest-type breakdown time ln(chi sigma / hbar) / lambda."""
    if not lam > 0:
        raise ValueError("t_hbar needs a positive Lyapunov exponent")
    return math.log(chi * sigma_q0 / hbar) / lam
