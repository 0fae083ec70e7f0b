"""
Driven quartic double well

    H(x, p, t) = p^2 / 2m - b x^2 + x^4 / (64 a) + s x cos(omega t)

plus parameter presets for the experiments reproduced by this package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    m: float = 1.0
    b: float = 10.0
    a: float = 1.0 / 32.0
    s: float = 1.0
    omega: float = 5.35
    hbar: float = 0.1

    def __post_init__(self):
        for name in ("m", "a", "b", "omega", "hbar"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def static_potential(self, x):
        return -self.b * x**2 + x**4 / (64.0 * self.a)

    def static_force(self, x):
        return 2.0 * self.b * x - x**3 / (16.0 * self.a)

    def drive(self, t):
        """Coefficient of the term linear in x: V(x, t) = V0(x) + x * drive(t)."""
        return self.s * np.cos(self.omega * t)

    def potential(self, x, t):
        return self.static_potential(x) + x * self.drive(t)

    def force(self, x, t):
        return self.static_force(x) - self.drive(t)

    def d2v(self, x):
        return -2.0 * self.b + 3.0 * x**2 / (16.0 * self.a)

    def d3v(self, x):
        return 3.0 * x / (8.0 * self.a)

    def energy(self, x, p, t):
        return p**2 / (2.0 * self.m) + self.potential(x, t)

    @property
    def well_minima(self) -> float:
        return math.sqrt(32.0 * self.b * self.a)

    @property
    def well_depth(self) -> float:
        return -16.0 * self.b**2 * self.a


@dataclass(frozen=True)
class HarmonicParams:
    """Harmonic test potential V = m w0^2 x^2 / 2, optionally driven by s x cos(omega t).

    omega only sets the time unit (period) when s == 0.
    """

    m: float = 1.0
    w0: float = 1.0
    s: float = 0.0
    omega: float = 2.0 * math.pi
    hbar: float = 0.1

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def static_potential(self, x):
        return 0.5 * self.m * self.w0**2 * x**2

    def static_force(self, x):
        return -self.m * self.w0**2 * x

    def drive(self, t):
        return self.s * np.cos(self.omega * t)

    def potential(self, x, t):
        return self.static_potential(x) + x * self.drive(t)

    def force(self, x, t):
        return self.static_force(x) - self.drive(t)

    def d2v(self, x):
        return self.m * self.w0**2 + 0.0 * x

    def d3v(self, x):
        return 0.0 * x

    def energy(self, x, p, t):
        return p**2 / (2.0 * self.m) + self.potential(x, t)


@dataclass(frozen=True)
class BathParams:
    """Momentum diffusion D of the high-temperature environment; friction is not modelled."""

    D: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.D < 0:
            raise ModelError(f"diffusion coefficient must be >= 0, got {self.D}")
        if self.gamma != 0:
            raise ModelError("only gamma = 0 (pure diffusion) is supported")


def as_bath(bath) -> BathParams:
    """Accept None, a bare diffusion coefficient or a BathParams."""
    if bath is None:
        return BathParams(0.0)
    if isinstance(bath, BathParams):
        return bath
    return BathParams(float(bath))


def potential(params, x, t):
    return params.potential(x, t)


def force(params, x, t):
    return params.force(x, t)


def d3V(params, x):
    return params.d3v(x)


def nonlinearity_scale(params, x):
    """chi = (V'(x) / V'''(x))^(1/2) on the undriven potential.

    The absolute value of the ratio is used so that the scale is defined on
    both sides of the inflection points of V.
    """
    x = np.asarray(x, dtype=float)
    d3 = params.d3v(x)
    if np.any(np.abs(d3) < 1e-12):
        raise ModelError("nonlinearity scale is singular where V''' vanishes (x = 0)")
    chi = np.sqrt(np.abs(-params.static_force(x) / d3))
    return float(chi) if chi.ndim == 0 else chi


@dataclass(frozen=True)
class InitialState:
    x0: float
    p0: float
    sigma_x: float
    sigma_p: float

    @property
    def pure(self) -> bool:
        return True

    def with_entropy(self, h0: float, hbar: float) -> "InitialState":
        """Inflate both widths by the same factor so the linear entropy is h0."""
        base = 2.0 * self.sigma_x * self.sigma_p / hbar
        factor = math.sqrt(math.exp(h0) / base)
        return replace(self, sigma_x=self.sigma_x * factor, sigma_p=self.sigma_p * factor)


@dataclass(frozen=True)
class GridSpec:
    nx: int
    np: int
    x_min: float
    x_max: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class Preset:
    name: str
    params: SystemParams
    states: dict
    D: float = 0.0
    grid: GridSpec | None = None
    metadata: dict = field(default_factory=dict)


_SEA = InitialState(1.0, 0.0, math.sqrt(0.05), math.sqrt(0.05))

PRESETS = {
    "fig1a": Preset(
        "fig1a",
        SystemParams(m=1.0, b=10.0, a=1 / 32, s=1.0, omega=5.35, hbar=0.1),
        {"island": InitialState(-3.7, 0.0, 0.05, 1.0), "sea": _SEA},
        grid=GridSpec(1024, 1024, -6.0, 6.0, -13.0, 13.0),
    ),
    "fig1b": Preset(
        "fig1b",
        SystemParams(m=1.0, b=10.0, a=1 / 32, s=10.0, omega=6.07, hbar=0.1),
        {"sea": _SEA},
        grid=GridSpec(1024, 1024, -7.0, 7.0, -22.0, 22.0),
    ),
    "tunneling": Preset(
        "tunneling",
        SystemParams(m=1.0, b=10.0, a=1 / 32, s=4.0, omega=5.35, hbar=1.0),
        {"island": InitialState(-3.52, 0.0, 0.25, 2.0)},
        D=0.01,
        grid=GridSpec(256, 256, -8.0, 8.0, -25.0, 25.0),
    ),
    # letters B, C, E of the original parameter table: B -> b, E -> s and C is the
    # x^4 coefficient, so a = 1 / (64 C)
    "fig9": Preset(
        "fig9",
        SystemParams(m=1.0, b=10.0, a=1 / (64 * 0.5), s=10.0, omega=6.16, hbar=0.1),
        # minimum-uncertainty Gaussian at the sea centre, sigma_p / sigma_x = 3
        {"sea": InitialState(1.0, 0.0, math.sqrt(0.05 / 3), math.sqrt(0.15))},
        D=1e-3,
        grid=GridSpec(2048, 2048, -7.0, 7.0, -22.0, 22.0),
        metadata={"mapping": {"B": "b", "E": "s", "C": "a = 1/(64 C)"}, "B": 10.0, "C": 0.5, "E": 10.0},
    ),
}


def preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
