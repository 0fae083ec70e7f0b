"""
Command line front end: configuration, experiment pipelines and the run manifest.

    python -m decohere <subcommand> [--preset NAME] [--config FILE.ini] [--set section.key=value ...]
                       [--out DIR] [subcommand flags]

Configuration is resolved in layers: preset, INI file, ``--set`` overrides,
then the subcommand flags.  Every run writes ``manifest.json`` next to its
outputs with the fully resolved configuration; ``replay MANIFEST`` re-runs it.
All times in the configuration and in the outputs are in driving periods.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .classical import EscapeError, local_lyapunov, poincare_section, sample_ensemble
from .floquet import (FloquetError, SaturationWarning, build_floquet_basis, build_generator, closed_propagate,
                      expansion, propagate_sigma, pure_sigma, sigma_observables, sigma_to_wigner)
from .model import InitialState, ModelError, SystemParams, preset
from .observables import (NotApplicable, ObservableSeries, period_average, rate_series, scaling_fit,
                          transition_time)
from .phasespace import (AliasingError, GridError, PhaseGrid, UncertaintyError, gaussian_state,
                         gaussian_wavepacket, integrate, write_snapshot)
from .propagator import LeakageError, TimeStepError, boundary_mass, nyquist_fraction
from .quantum import evolve_wigner

EXIT_OK, EXIT_CONFIG, EXIT_LEAKAGE, EXIT_SATURATION, EXIT_NUMERICAL = 0, 2, 3, 4, 5

SCHEMA = {
    "system": {"m": float, "b": float, "a": float, "s": float, "omega": float, "hbar": float},
    "bath": {"D": float, "gamma": float},
    "grid": {"nx": int, "np": int, "x_min": float, "x_max": float, "p_min": float, "p_max": float},
    "initial": {"state": str, "x0": float, "p0": float, "sigma_x": float, "sigma_p": float, "H0": float},
    "run": {"preset": str, "mode": str, "t_max": float, "dt": float, "sample_every": float, "dtype": str,
            "seed": int, "workers": int, "ensemble": int, "seeds": int, "periods": int, "n_basis": int,
            "n_sub": int, "steps_per_period": int, "switch_on": int, "snapshots": str, "D_list": str,
            "H0_list": str, "renorm_every": int, "min_fidelity": float},
}

RUN_DEFAULTS = {"mode": "quantum", "t_max": 10.0, "dt": 1e-3, "sample_every": 0.05, "dtype": "float64",
                "seed": 0, "workers": 1, "ensemble": 10000, "seeds": 30, "periods": 300, "n_basis": 40,
                "n_sub": 32, "steps_per_period": 1024, "switch_on": 0, "snapshots": "", "D_list": "",
                "H0_list": "", "renorm_every": 20, "min_fidelity": 0.999}


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------

def expand_preset(name: str, state: str | None = None) -> dict:
    pr = preset(name)
    cfg = {"system": asdict(pr.params), "bath": {"D": pr.D, "gamma": 0.0}, "grid": {}, "initial": {},
           "run": dict(RUN_DEFAULTS, preset=name)}
    if pr.grid is not None:
        cfg["grid"] = asdict(pr.grid)
    state = state or next(iter(pr.states))
    if state not in pr.states:
        raise ConfigError(f"initial.state: preset {name!r} has no state {state!r}; choose from {sorted(pr.states)}")
    cfg["initial"] = dict(asdict(pr.states[state]), state=state, H0=0.0)
    return cfg


def _coerce(section, key, value):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{section}.{key}: unknown key")
    typ = SCHEMA[section][key]
    try:
        if typ is int and isinstance(value, str):
            return int(float(value)) if float(value).is_integer() else int(value)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot read {value!r} as {typ.__name__}") from None


def resolve_config(preset_name=None, ini_path=None, sets=(), flags=None) -> dict:
    """Merge preset, INI file, key=value overrides and subcommand flags into one typed dict."""
    layers = []
    if ini_path:
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keys are case sensitive (D, H0)
        if not cp.read(ini_path):
            raise ConfigError(f"cannot read config file {ini_path}")
        for sec in cp.sections():
            for k, v in cp.items(sec):
                layers.append((sec, k, v))
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, v = item.split("=", 1)
        sec, k = lhs.split(".", 1)
        layers.append((sec.strip(), k.strip(), v.strip()))
    for (sec, k), v in (flags or {}).items():
        if v is not None:
            layers.append((sec, k, v))

    name = preset_name
    state = None
    for sec, k, v in layers:
        if (sec, k) == ("run", "preset"):
            name = str(v)
        if (sec, k) == ("initial", "state"):
            state = str(v)
    try:
        cfg = expand_preset(name or "fig1a", state)
    except ModelError as e:
        raise ConfigError(f"run.preset: {e}") from None
    for sec, k, v in layers:
        cfg[sec][k] = _coerce(sec, k, v)
    validate(cfg)
    return cfg


def validate(cfg):
    try:
        SystemParams(**cfg["system"])
    except (ModelError, TypeError) as e:
        raise ConfigError(f"system: {e}") from None
    if cfg["bath"]["D"] < 0:
        raise ConfigError("bath.D: must be >= 0")
    if cfg["bath"]["gamma"] != 0:
        raise ConfigError("bath.gamma: only 0 (pure diffusion) is supported")
    g = cfg["grid"]
    missing = [k for k in SCHEMA["grid"] if k not in g]
    if missing:
        raise ConfigError(f"grid: missing keys {missing}")
    try:
        PhaseGrid(g["nx"], g["np"], g["x_min"], g["x_max"], g["p_min"], g["p_max"])
    except GridError as e:
        raise ConfigError(f"grid: {e}") from None
    ini = cfg["initial"]
    if not (ini["sigma_x"] > 0 and ini["sigma_p"] > 0):
        raise ConfigError("initial.sigma_x/sigma_p: must be positive")
    if ini["sigma_x"] * ini["sigma_p"] < cfg["system"]["hbar"] / 2 * (1 - 1e-9):
        raise ConfigError("initial: sigma_x sigma_p below hbar/2")
    if ini["H0"] < 0:
        raise ConfigError("initial.H0: must be >= 0")
    r = cfg["run"]
    if r["mode"] not in ("quantum", "classical"):
        raise ConfigError("run.mode: must be quantum or classical")
    if r["dtype"] not in ("float64", "float32"):
        raise ConfigError("run.dtype: must be float64 or float32")
    for k in ("t_max", "dt", "sample_every"):
        if not r[k] > 0:
            raise ConfigError(f"run.{k}: must be positive")
    if r["workers"] < 1:
        raise ConfigError("run.workers: must be >= 1")


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def params_of(cfg) -> SystemParams:
    return SystemParams(**cfg["system"])


def grid_of(cfg) -> PhaseGrid:
    g = cfg["grid"]
    return PhaseGrid(g["nx"], g["np"], g["x_min"], g["x_max"], g["p_min"], g["p_max"])


def state_of(cfg) -> InitialState:
    ini = cfg["initial"]
    st = InitialState(ini["x0"], ini["p0"], ini["sigma_x"], ini["sigma_p"])
    return st.with_entropy(ini["H0"], cfg["system"]["hbar"]) if ini["H0"] > 0 else st


def initial_field(cfg):
    st = state_of(cfg)
    hbar = cfg["system"]["hbar"]
    pure = math.isclose(st.sigma_x * st.sigma_p, hbar / 2, rel_tol=1e-9)
    return gaussian_state(grid_of(cfg), st.x0, st.p0, st.sigma_x, st.sigma_p, hbar, pure=pure)


def config_hash(cfg) -> str:
    """Short digest of everything that can change the numbers (the worker count cannot)."""
    key = {sec: {k: v for k, v in vals.items() if k != "workers"} for sec, vals in cfg.items()}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]


# --- field runs ----------------------------------------------------------------

class _Tap:
    """Pass fields through while tracking diagnostics, snapshots and a clean abort."""

    def __init__(self, run, out_dir=None, snap_times=(), mode="quantum", tag=""):
        self.run = run
        self.out_dir = out_dir
        self.snap_times = sorted(snap_times)
        self.mode = mode
        self.tag = tag
        self.max_leak = 0.0
        self.norm_drift = 0.0
        self.error = None
        self.last = None
        self.snapshots = []

    def __iter__(self):
        try:
            for f in self.run:
                self.max_leak = max(self.max_leak, boundary_mass(f.values))
                self.norm_drift = max(self.norm_drift, abs(f.norm() - 1))
                for ts in self.snap_times:
                    if abs(f.time - ts) < 1e-9 and self.out_dir is not None:
                        p = Path(self.out_dir) / f"snapshot{self.tag}_t{ts:g}.wig"
                        write_snapshot(f, p, mode=self.mode)
                        self.snapshots.append(p.name)
                self.last = f
                yield f
        except (LeakageError, AliasingError, TimeStepError) as e:
            self.error = e

    def diagnostics(self):
        d = {"max_boundary_mass": self.max_leak, "max_norm_drift": self.norm_drift}
        if self.last is not None:
            d["final_time"] = self.last.time
            d["final_nyquist_fraction"] = nyquist_fraction(self.last.values)
        if self.error is not None:
            d["abort"] = f"{type(self.error).__name__}: {self.error}"
        return d


def field_run(cfg, out_dir=None, tag="", mode=None, D=None, snapshots=()):
    """One phase-space run; returns (ObservableSeries or None, diagnostics, error)."""
    P = params_of(cfg)
    r = cfg["run"]
    mode = mode or r["mode"]
    D = cfg["bath"]["D"] if D is None else D
    w = initial_field(cfg)
    run = evolve_wigner(w, P, D, (0.0, r["t_max"]), dt=r["dt"] * P.period, mode=mode,
                        sample_every=r["sample_every"], dtype=np.dtype(r["dtype"]))
    tap = _Tap(run, out_dir, snapshots, mode, tag)
    try:
        series = rate_series(tap, D, P)
    except (IndexError, ValueError):  # aborted before two samples existed
        series = None
    diag = tap.diagnostics()
    diag["snapshots"] = tap.snapshots
    diag["grid"] = w.grid.describe()
    diag["dt_tau"] = r["dt"]
    return series, diag, tap.error


def _member(job):
    """Sweep member (runs in a worker process)."""
    cfg, out_dir, name, resume = job
    path = Path(out_dir) / name
    if resume and path.exists():
        return {"csv": name, "resumed": True, "status": "ok"}
    series, diag, err = field_run(cfg)
    rec = {"csv": name, "diagnostics": diag, "status": "ok" if err is None else "aborted"}
    if series is not None:
        if err is not None:  # partial series never satisfies --resume
            name = rec["csv"] = name.replace(".csv", ".partial.csv")
        series.to_csv(Path(out_dir) / name)
    return rec


def _run_members(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_member, jobs))
    return [_member(j) for j in jobs]


# --- subcommands ----------------------------------------------------------------

def cmd_poincare(cfg, out, args):
    P = params_of(cfg)
    r = cfg["run"]
    g = cfg["grid"]
    rng = np.random.default_rng(r["seed"])
    seeds = np.column_stack([rng.uniform(0.7 * g["x_min"], 0.7 * g["x_max"], r["seeds"]),
                             rng.uniform(0.4 * g["p_min"], 0.4 * g["p_max"], r["seeds"])])
    pts = poincare_section(P, seeds, r["periods"])
    np.savetxt(out / "poincare.csv", pts, delimiter=",", header="x,p,seed", comments="", fmt="%.12g")
    return {"outputs": ["poincare.csv"], "diagnostics": {"points": len(pts)}}, EXIT_OK


def cmd_evolve(cfg, out, args):
    snaps = _floats(cfg["run"]["snapshots"])
    series, diag, err = field_run(cfg, out, snapshots=snaps)
    outputs = diag["snapshots"][:]
    if series is not None:
        series.to_csv(out / "series.csv")
        outputs.insert(0, "series.csv")
    if args.dt_check and err is None:
        diag["dt_check"] = dt_check(cfg)
    return {"outputs": outputs, "diagnostics": diag}, (EXIT_OK if err is None else _exit_for(err))


def dt_check(cfg, t_check=1.0):
    """|<x>(dt) - <x>(dt/2)| after min(t_max, 1) periods."""
    P = params_of(cfg)
    r = cfg["run"]
    t1 = min(r["t_max"], t_check)
    vals = []
    for dt in (r["dt"], r["dt"] / 2):
        run = evolve_wigner(initial_field(cfg), P, cfg["bath"]["D"], (0.0, t1), dt=dt * P.period,
                            mode=r["mode"], dtype=np.dtype(r["dtype"]))
        *_, f = run
        vals.append(integrate(f, lambda x, p: x))
    return {"t": t1, "mean_x_difference": abs(vals[0] - vals[1])}


def cmd_entropy_sweep(cfg, out, args):
    r = cfg["run"]
    Ds = _floats(r["D_list"]) or [cfg["bath"]["D"]]
    jobs = []
    for D in Ds:
        c = json.loads(json.dumps(cfg))
        c["bath"]["D"] = D
        jobs.append((c, str(out), f"rates_D{D:g}_{config_hash(c)}.csv", args.resume))
    recs = _run_members(jobs, r["workers"])
    rows = []
    for D, rec in zip(Ds, recs):
        rec["D"] = D
        path = out / rec["csv"]
        if path.exists():
            s = ObservableSeries.from_csv(path, D=D)
            mids, avg = period_average(s.times, s.dHdt_eq8)
            rows += [(D, m, a) for m, a in zip(mids, avg)]
    np.savetxt(out / "period_rates.csv", np.array(rows).reshape(-1, 3), delimiter=",", header="D,t,rate",
               comments="", fmt="%.12g")
    outputs = [rec["csv"] for rec in recs] + ["period_rates.csv"]
    diag = {"members": recs}
    if r["t_max"] >= 1.0:  # the local exponent is a one-period running mean
        lam = local_lyapunov(params_of(cfg), sample_ensemble(state_of(cfg), r["ensemble"], r["seed"]),
                             r["t_max"], renorm_every=r["renorm_every"])
        lam.to_csv(out / "lyapunov.csv")
        outputs.append("lyapunov.csv")
        diag["lyapunov_mean"] = float(np.mean(lam.lambda_local))
    aborted = [rec for rec in recs if rec["status"] != "ok"]
    return {"outputs": outputs, "diagnostics": diag}, (EXIT_LEAKAGE if aborted else EXIT_OK)


def cmd_tc_scan(cfg, out, args):
    r = cfg["run"]
    Ds, H0s = _floats(r["D_list"]), _floats(r["H0_list"])
    if bool(Ds) == bool(H0s):
        raise ConfigError("tc-scan: give exactly one of run.D_list / --D or run.H0_list / --H0")
    jobs, xs = [], []
    for v in Ds or H0s:
        c = json.loads(json.dumps(cfg))
        if Ds:
            c["bath"]["D"] = v
            xs.append(math.log10(v))
        else:
            c["initial"]["H0"] = v
            xs.append(v)
        jobs.append((c, str(out), f"series_{'D' if Ds else 'H0'}{v:g}_{config_hash(c)}.csv", args.resume))
    recs = _run_members(jobs, r["workers"])
    fits, keep = [], []
    for x, rec, job in zip(xs, recs, jobs):
        path = out / rec["csv"]
        if rec["status"] != "ok" or not path.exists():
            continue
        try:
            fits.append(transition_time(ObservableSeries.from_csv(path, D=job[0]["bath"]["D"])))
            keep.append(x)
        except (NotApplicable, ValueError) as e:
            rec["status"] = f"no transition: {e}"
    if len(fits) >= 2:
        scaling_fit(keep, fits)
    table = [dict(asdict(f), x=x) for x, f in zip(keep, fits)]
    (out / "tc.json").write_text(json.dumps({"variable": "log10_D" if Ds else "H0", "fits": table}, indent=1))
    bad = [rec for rec in recs if rec["status"] != "ok"]
    code = EXIT_OK if not bad else (EXIT_LEAKAGE if any(rec["status"] == "aborted" for rec in bad)
                                    else EXIT_NUMERICAL)
    return {"outputs": [rec["csv"] for rec in recs] + ["tc.json"], "diagnostics": {"members": recs}}, code


def _basis(cfg):
    P = params_of(cfg)
    g = grid_of(cfg)
    st = state_of(cfg)
    psi = gaussian_wavepacket(g, st.x0, st.p0, st.sigma_x, P.hbar)
    r = cfg["run"]
    basis = build_floquet_basis(P, g, r["n_basis"], n_sub=r["n_sub"], steps_per_period=r["steps_per_period"],
                                psi0=psi)
    return basis, psi


def cmd_floquet(cfg, out, args):
    basis, psi = _basis(cfg)
    basis.write_quasienergies(out / "quasienergies.csv")
    _, fid = expansion(basis, psi)
    diag = {"unitarity": basis.unitarity, "orthonormality": basis.orthonormality(),
            "schur_offdiagonal": basis.conditioning, "expansion_fidelity": fid}
    return {"outputs": ["quasienergies.csv"], "diagnostics": diag}, EXIT_OK


def cmd_tunneling(cfg, out, args):
    r = cfg["run"]
    basis, psi = _basis(cfg)
    c, fid = expansion(basis, psi, min_fidelity=r["min_fidelity"])
    D = cfg["bath"]["D"]
    G = build_generator(basis, D)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        sig, reliable = propagate_sigma(G, pure_sigma(c), r["periods"], switch_on_period=r["switch_on"])
    rows = [(s.time, *sigma_observables(basis, s.sigma)) for s in sig]
    np.savetxt(out / "sigma.csv", np.array(rows), delimiter=",", header="t,mean_x,H_VN,P_left,P_right",
               comments="", fmt="%.12g")
    outputs = ["sigma.csv"]
    for k in _floats(r["snapshots"]):
        k = int(round(k))
        if 0 <= k < len(sig):
            w = sigma_to_wigner(basis, sig[k].sigma)
            w.time = float(k)
            name = f"wigner_t{k}.wig"
            write_snapshot(w, out / name)
            outputs.append(name)
    if D == 0:
        # closed reference: the wave function itself at the requested period
        psi_k = closed_propagate(basis, c, r["periods"])
        write_snapshot(psi_k, out / "psi_final.wig", hbar=basis.params.hbar)
        outputs.append("psi_final.wig")
    diag = {"expansion_fidelity": fid, "unitarity": basis.unitarity, "trace_defect": G.trace_defect(),
            "hermiticity_defect": G.hermiticity_defect(), "reliable": reliable}
    if not reliable:
        diag["abort"] = "von Neumann entropy saturated: basis too small"
    return {"outputs": outputs, "diagnostics": diag}, (EXIT_OK if reliable else EXIT_SATURATION)


COMMANDS = {"poincare": cmd_poincare, "evolve": cmd_evolve, "entropy-sweep": cmd_entropy_sweep,
            "tc-scan": cmd_tc_scan, "floquet": cmd_floquet, "tunneling": cmd_tunneling}


def _exit_for(err):
    if isinstance(err, LeakageError):
        return EXIT_LEAKAGE
    return EXIT_NUMERICAL


# --- argument parsing ---------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="decohere", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", help="named parameter set (fig1a, fig1b, fig9, tunneling)")
        p.add_argument("--config", help="INI file with [system] [bath] [grid] [initial] [run] sections")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--state", help="named initial state of the preset")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--resume", action="store_true", help="reuse sweep members already on disk")
        p.add_argument("--dt-check", action="store_true", help="repeat the first period at dt/2")
        return p

    p = common(sub.add_parser("poincare", help="stroboscopic section"))
    p.add_argument("--periods", type=int)
    p.add_argument("--seeds", type=int)
    p = common(sub.add_parser("evolve", help="single Wigner or Liouville run"))
    p.add_argument("--D", type=float)
    p.add_argument("--mode", choices=["quantum", "classical"])
    p.add_argument("--t-max", type=float)
    p.add_argument("--snapshots", help="comma separated times (tau)")
    p = common(sub.add_parser("entropy-sweep", help="rates for several D plus the Lyapunov curve"))
    p.add_argument("--D", help="comma separated diffusion coefficients")
    p.add_argument("--t-max", type=float)
    p = common(sub.add_parser("tc-scan", help="transition time against log D or H(0)"))
    p.add_argument("--D", help="comma separated diffusion coefficients")
    p.add_argument("--H0", help="comma separated initial linear entropies")
    p.add_argument("--t-max", type=float)
    p = common(sub.add_parser("floquet", help="Floquet basis and quasienergy table"))
    p.add_argument("--n", type=int)
    p = common(sub.add_parser("tunneling", help="period-averaged master equation in the Floquet basis"))
    p.add_argument("--D", type=float)
    p.add_argument("--switch-on", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--snapshots", help="comma separated periods")
    p = sub.add_parser("replay", help="re-run the configuration recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="out")
    return ap


def _flags(args):
    cmd = args.command
    f = {("run", "seed"): args.seed, ("run", "workers"): args.workers, ("initial", "state"): args.state}
    g = vars(args).get
    if cmd == "poincare":
        f.update({("run", "periods"): g("periods"), ("run", "seeds"): g("seeds")})
    if cmd in ("evolve", "tunneling") and g("D") is not None:
        f[("bath", "D")] = g("D")
    if cmd in ("entropy-sweep", "tc-scan"):
        f[("run", "D_list")] = g("D")
    if cmd == "tc-scan":
        f[("run", "H0_list")] = g("H0")
    if cmd in ("evolve", "entropy-sweep", "tc-scan"):
        f[("run", "t_max")] = g("t_max")
    if cmd == "evolve":
        f[("run", "mode")] = g("mode")
    if cmd in ("evolve", "tunneling"):
        f[("run", "snapshots")] = g("snapshots")
    if cmd in ("floquet", "tunneling"):
        f[("run", "n_basis")] = g("n")
    if cmd == "tunneling":
        f.update({("run", "switch_on"): g("switch_on"), ("run", "periods"): g("periods")})
    return f


def _subcommand_defaults(cmd, cfg_layers_preset):
    # tunneling and floquet runs default to the tunneling preset, poincare to fig1b
    return {"tunneling": "tunneling", "floquet": "tunneling", "poincare": "fig1b", "tc-scan": "fig9"}.get(
        cmd, cfg_layers_preset)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"argv": argv, "version": __version__, "numpy": np.__version__, "scipy": scipy.__version__}

    if args.command == "replay":
        prior = json.loads(Path(args.manifest).read_text())
        cmd, cfg = prior["subcommand"], prior["config"]
        args = build_parser().parse_args([cmd, "--out", str(out)])
    else:
        cmd = args.command
        try:
            cfg = resolve_config(args.preset or _subcommand_defaults(cmd, None), args.config, args.set, _flags(args))
        except (ConfigError, UncertaintyError) as e:
            manifest.update(subcommand=cmd, status="config error", error=str(e))
            (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
    manifest.update(subcommand=cmd, config=cfg, config_hash=config_hash(cfg))
    try:
        report, code = COMMANDS[cmd](cfg, out, args)
    except ConfigError as e:
        report, code = {"error": str(e)}, EXIT_CONFIG
    except LeakageError as e:
        report, code = {"error": f"LeakageError: {e}"}, EXIT_LEAKAGE
    except (FloquetError, AliasingError, TimeStepError, EscapeError, UncertaintyError, GridError, ValueError,
            FloatingPointError) as e:
        report, code = {"error": f"{type(e).__name__}: {e}"}, EXIT_NUMERICAL
    manifest.update(report)
    manifest["status"] = {EXIT_OK: "ok", EXIT_CONFIG: "config error", EXIT_LEAKAGE: "aborted: leakage",
                          EXIT_SATURATION: "aborted: saturation", EXIT_NUMERICAL: "aborted: numerical"}[code]
    manifest["exit_code"] = code
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=float))
    if code:
        print(f"{cmd}: {manifest['status']} (see {out / 'manifest.json'})", file=sys.stderr)
    return code
