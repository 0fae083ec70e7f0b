"""
Long reference runs behind test_acceptance.py, with an optional on-disk cache.

Set DECOHERE_ACCEPTANCE_CACHE to a directory to keep results between pytest
sessions.  Entries are keyed by the run arguments and by a digest of the
numerical package sources, so any change there recomputes them.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import warnings
from dataclasses import astuple, dataclass, field, replace
from pathlib import Path

import numpy as np

import decohere
from decohere.classical import integrate, integrate_langevin, local_lyapunov, sample_ensemble
from decohere.floquet import (SaturationWarning, build_floquet_basis, build_generator, closed_propagate, expansion,
                              propagate_sigma, pure_sigma, sigma_observables)
from decohere.model import InitialState, preset
from decohere.observables import COLUMNS, ObservableSeries, rate_series
from decohere.phasespace import PhaseGrid, WignerField, gaussian_state, gaussian_wavepacket, wigner_transform
from decohere.propagator import LeakageError, ResolutionWarning
from decohere.quantum import evolve_schrodinger, evolve_wigner, final

SRC = Path(decohere.__file__).parent
REPORT: dict = {}  # criterion number -> PASS/FAIL line


@functools.lru_cache(maxsize=None)
def _source_digest():
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        if p.name not in ("cli.py", "__main__.py"):  # front end only, no numerics
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _cache_path(kind, key):
    root = os.environ.get("DECOHERE_ACCEPTANCE_CACHE")
    if not root:
        return None
    blob = json.dumps({"kind": kind, "key": key, "src": _source_digest()}, sort_keys=True)
    d = Path(root)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{kind}_{hashlib.sha256(blob.encode()).hexdigest()[:16]}.npz"


def cached(kind):
    """Memoize a function returning a dict of arrays, in memory and (optionally) on disk."""
    def deco(fn):
        memo = {}

        @functools.wraps(fn)
        def wrapper(**key):
            tag = json.dumps(key, sort_keys=True)
            if tag in memo:
                return memo[tag]
            path = _cache_path(kind, key)
            if path is not None and path.exists():
                with np.load(path, allow_pickle=False) as z:
                    out = {k: z[k] for k in z.files}
            else:
                out = fn(**key)
                if path is not None:
                    np.savez(path, **out)
            memo[tag] = out
            return out
        return wrapper
    return deco


def _grid(name):
    return PhaseGrid(*astuple(preset(name).grid))


def _state(name, state, ratio=None, H0=0.0):
    pr = preset(name)
    st = pr.states[state]
    if ratio is not None:
        # same area as the preset state, sigma_p / sigma_x = ratio
        area = st.sigma_x * st.sigma_p
        st = replace(st, sigma_x=np.sqrt(area / ratio), sigma_p=np.sqrt(area * ratio))
    return st.with_entropy(H0, pr.params.hbar) if H0 > 0 else st


@dataclass
class Run:
    series: ObservableSeries | None
    fields: dict = field(default_factory=dict)
    abort: str | None = None
    grid: PhaseGrid | None = None
    hbar: float = 0.1

    def field_at(self, t) -> WignerField:
        return WignerField(self.grid, self.fields[round(float(t), 6)], float(t), self.hbar)


@cached("wigner")
def _wigner(name, state, D, t_max, mode, keep, dtype, ratio, H0, nx, np_, sample_every):
    pr = preset(name)
    P = pr.params
    gs = pr.grid
    g = PhaseGrid(nx or gs.nx, np_ or gs.np, gs.x_min, gs.x_max, gs.p_min, gs.p_max)
    st = _state(name, state, ratio, H0)
    pure = bool(np.isclose(st.sigma_x * st.sigma_p, P.hbar / 2, rtol=1e-9))
    w = gaussian_state(g, st.x0, st.p0, st.sigma_x, st.sigma_p, P.hbar, pure=pure)
    kept = {}
    abort = ""

    def tap(run):
        nonlocal abort
        try:
            for f in run:
                if any(abs(f.time - k) < 1e-9 for k in keep):
                    kept[f"t{f.time:.6f}"] = f.values.astype(np.float64)
                yield f
        except LeakageError as e:
            abort = str(e)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        run = evolve_wigner(w, P, D, (0.0, t_max), mode=mode, sample_every=sample_every, dtype=np.dtype(dtype))
        s = rate_series(tap(run), D, P)
    return {"rows": s.rows(), "abort": np.array(abort), "D": np.array(D), **kept}


def wigner_run(name, state, D, t_max, mode="quantum", keep=(), dtype="float64", ratio=None, H0=0.0, nx=None,
               np_=None, sample_every=0.05) -> Run:
    out = _wigner(name=name, state=state, D=float(D), t_max=float(t_max), mode=mode,
                  keep=[float(k) for k in keep], dtype=dtype, ratio=ratio, H0=float(H0), nx=nx, np_=np_,
                  sample_every=sample_every)
    rows = out["rows"]
    series = ObservableSeries(*[rows[:, i] for i in range(len(COLUMNS))], D=float(out["D"]))
    gs = preset(name).grid
    g = PhaseGrid(nx or gs.nx, np_ or gs.np, gs.x_min, gs.x_max, gs.p_min, gs.p_max)
    fields = {round(float(k[1:]), 6): v for k, v in out.items() if k.startswith("t")}
    return Run(series, fields, str(out["abort"]) or None, g, preset(name).params.hbar)


@cached("schrodinger")
def _schrodinger_wigner(name, state, t):
    pr = preset(name)
    g = _grid(name)
    st = pr.states[state]
    psi = gaussian_wavepacket(g, st.x0, st.p0, st.sigma_x, pr.params.hbar)
    out = final(evolve_schrodinger(psi, pr.params, (0.0, t)))
    return {"W": wigner_transform(out, g, pr.params.hbar).values}


def schrodinger_wigner(name, state, t) -> np.ndarray:
    return _schrodinger_wigner(name=name, state=state, t=float(t))["W"]


@cached("lyapunov")
def _lyapunov(name, state, t_max, n, seed):
    pr = preset(name)
    lam = local_lyapunov(pr.params, sample_ensemble(pr.states[state], n, seed), t_max)
    return {"t": lam.times, "lam": lam.lambda_local}


def lyapunov_curve(name, state, t_max, n=10000, seed=0):
    out = _lyapunov(name=name, state=state, t_max=float(t_max), n=n, seed=seed)
    return out["t"], out["lam"]


@cached("ensemble")
def _ensemble_mean(name, state, t_max, every, n, seed):
    pr = preset(name)
    P = pr.params
    ens = sample_ensemble(pr.states[state], n, seed)
    y = ens.states
    steps = int(round(every * 200))
    times, mx = [0.0], [float(ens.weights @ y[:, 0])]
    for k in range(int(round(t_max / every))):
        y = integrate(P, y, k * every * P.period, steps, P.period / 200)
        times.append((k + 1) * every)
        mx.append(float(ens.weights @ y[:, 0]))
    return {"t": np.array(times), "mean_x": np.array(mx)}


def ensemble_mean_x(name, state, t_max, every=0.05, n=10000, seed=0):
    out = _ensemble_mean(name=name, state=state, t_max=float(t_max), every=every, n=n, seed=seed)
    return out["t"], out["mean_x"]


@cached("langevin")
def _langevin_mean(name, state, D, t_max, every, n, seed):
    pr = preset(name)
    P = pr.params
    ens = sample_ensemble(pr.states[state], n, seed)
    rng = np.random.default_rng(seed + 1)
    y = ens.states
    steps = int(round(every * 200))
    times, mx = [0.0], [float(y[:, 0].mean())]
    for k in range(int(round(t_max / every))):
        y = integrate_langevin(P, y, k * every * P.period, steps, P.period / 200, D, rng)
        times.append((k + 1) * every)
        mx.append(float(y[:, 0].mean()))
    return {"t": np.array(times), "mean_x": np.array(mx)}


def langevin_mean_x(name, state, D, t_max, every=0.05, n=100000, seed=0):
    """Classical <x>(t) with momentum diffusion D from stochastic trajectories."""
    out = _langevin_mean(name=name, state=state, D=float(D), t_max=float(t_max), every=every, n=n, seed=seed)
    return out["t"], out["mean_x"]


@functools.lru_cache(maxsize=None)
def tunneling_basis(n=40):
    pr = preset("tunneling")
    g = _grid("tunneling")
    st = pr.states["island"]
    psi = gaussian_wavepacket(g, st.x0, st.p0, st.sigma_x, pr.params.hbar)
    basis = build_floquet_basis(pr.params, g, n, psi0=psi)
    return basis, psi


@cached("tunneling")
def _tunneling(D, periods, switch_on, n):
    basis, psi = tunneling_basis(n)
    c, fid = expansion(basis, psi, min_fidelity=0.999)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        sig, reliable = propagate_sigma(build_generator(basis, D), pure_sigma(c), periods,
                                        switch_on_period=switch_on)
    obs = np.array([sigma_observables(basis, s.sigma) for s in sig])
    return {"t": np.arange(len(sig), dtype=float), "mean_x": obs[:, 0], "H_vn": obs[:, 1],
            "P_left": obs[:, 2], "P_right": obs[:, 3], "reliable": np.array(reliable), "fidelity": np.array(fid)}


def tunneling_run(D, periods=120, switch_on=0, n=40):
    return _tunneling(D=float(D), periods=periods, switch_on=switch_on, n=n)


@cached("closed_tunneling")
def _closed_tunneling(periods, n):
    basis, psi = tunneling_basis(n)
    c, _ = expansion(basis, psi, min_fidelity=0.999)
    mx = [closed_propagate(basis, c, k).expect_x() for k in range(periods + 1)]
    return {"t": np.arange(periods + 1, dtype=float), "mean_x": np.array(mx)}


def closed_tunneling(periods=120, n=40):
    return _closed_tunneling(periods=periods, n=n)
