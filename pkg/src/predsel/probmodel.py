"""Priors, the lognormal likelihood, model specifications and synthetic data."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .dynamics import (
    ForcingKind,
    IntegratorConfig,
    OscillatorState,
    SpringKind,
    _forcing_fn,
    integrate,
    integrate_batch,
    observable_force,
    observable_kinetic_energy,
)
from .errors import DomainError, SchemaError

LOG_2PI = math.log(2.0 * math.pi)

# Uniform prior bounds. The constant stiffness terms stay positive (stable
# origin) and so does the highest-order term of every spring, which keeps the
# potential confining: a softening cubic lets forced trajectories escape.
DEFAULT_BOUNDS = {
    "c": (0.0, 0.5),
    "k1_0": (0.1, 10.0),
    "k3_0": (0.1, 10.0),
    "k3_2": (0.1, 10.0),
    "k5_0": (0.1, 10.0),
    "k5_2": (-10.0, 10.0),
    "k5_4": (0.1, 10.0),
    "F0": (0.1, 5.0),
    "tau": (1.0, 20.0),
    "alpha": (0.0, 1.0),
    "omega": (0.1, 5.0),
    "log_sigma_A": (math.log(0.01), math.log(1.0)),
    "log_sigma_B": (math.log(0.01), math.log(1.0)),
}


@dataclass(frozen=True)
class ModelSpec:
    """A single-physics model class (spring or forcing) or a coupled pair.

    Physics A models carry ``c``, the spring coefficients and
    ``log_sigma_A``; physics B models carry the forcing parameters and
    ``log_sigma_B``. A coupled model's parameter vector is the A vector
    followed by the B vector.
    """

    spring: Optional[SpringKind] = None
    forcing: Optional[ForcingKind] = None

    def __post_init__(self):
        if self.spring is None and self.forcing is None:
            raise DomainError("a model needs a spring, a forcing, or both")
        if self.spring is not None:
            object.__setattr__(self, "spring", SpringKind(self.spring))
        if self.forcing is not None:
            object.__setattr__(self, "forcing", ForcingKind(self.forcing))

    @classmethod
    def parse(cls, model_id: str) -> "ModelSpec":
        parts = model_id.upper().split("-")
        spring = forcing = None
        for part in parts:
            if part in SpringKind.__members__:
                spring = SpringKind(part)
            elif part in ForcingKind.__members__:
                forcing = ForcingKind(part)
            else:
                raise DomainError(f"unknown model component '{part}'")
        return cls(spring, forcing)

    @property
    def physics(self) -> str:
        if self.spring is not None and self.forcing is not None:
            return "AB"
        return "A" if self.spring is not None else "B"

    @property
    def id(self) -> str:
        return "-".join(k.value for k in (self.spring, self.forcing) if k is not None)

    @property
    def parameter_names(self) -> tuple:
        names = ()
        if self.spring is not None:
            names += ("c",) + self.spring.parameter_names + ("log_sigma_A",)
        if self.forcing is not None:
            names += self.forcing.parameter_names + ("log_sigma_B",)
        return names

    @property
    def dim(self) -> int:
        return len(self.parameter_names)

    def component(self, physics: str) -> "ModelSpec":
        if physics == "A" and self.spring is not None:
            return ModelSpec(spring=self.spring)
        if physics == "B" and self.forcing is not None:
            return ModelSpec(forcing=self.forcing)
        raise DomainError(f"model {self.id} has no physics-{physics} component")

    def __str__(self):
        return self.id


def coupled_models(springs: Sequence, forcings: Sequence) -> list:
    """All pairings, row-major in ``springs`` (|A| * |B| models)."""
    return [ModelSpec(s, f) for s in springs for f in forcings]


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors; ``bounds`` is an ordered tuple of ``(name, lo, hi)``."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple((str(n), float(a), float(b)) for n, a, b in self.bounds)
        names = [b[0] for b in bounds]
        if len(set(names)) != len(names):
            raise SchemaError("prior parameter names must be unique")
        for name, lo, hi in bounds:
            if not lo < hi:
                raise DomainError(f"prior for '{name}' needs lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def for_model(cls, model: ModelSpec, overrides: Optional[Mapping] = None) -> "PriorSpec":
        table = dict(DEFAULT_BOUNDS)
        table.update({k: tuple(v) for k, v in (overrides or {}).items()})
        return cls(tuple((n,) + tuple(table[n]) for n in model.parameter_names))

    @property
    def names(self) -> tuple:
        return tuple(b[0] for b in self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[2] for b in self.bounds])

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.upper - self.lower)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, len(self.bounds)))

    def log_density(self, theta: np.ndarray) -> np.ndarray:
        """Vectorised log-density for an ``(n, d)`` array of parameter vectors."""
        theta = np.atleast_2d(theta)
        inside = np.all((theta >= self.lower) & (theta <= self.upper), axis=1)
        return np.where(inside, -self.log_volume, -np.inf)


def log_prior(prior: PriorSpec, theta) -> float:
    """Log-density of one parameter vector given as a mapping or an ordered sequence."""
    if isinstance(theta, Mapping):
        missing = [n for n in prior.names if n not in theta]
        extra = [n for n in theta if n not in prior.names]
        if missing or extra:
            raise SchemaError(f"parameter vector does not match prior: missing {missing}, unexpected {extra}")
        values = np.array([float(theta[n]) for n in prior.names])
    else:
        values = np.asarray(theta, dtype=float).ravel()
        if values.size != len(prior.names):
            raise SchemaError(f"expected {len(prior.names)} parameters, got {values.size}")
    return float(prior.log_density(values[None, :])[0])


@dataclass
class Dataset:
    physics: str
    times: np.ndarray
    values: np.ndarray
    seed: Optional[int] = None
    sigma: Optional[float] = None
    truth: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.physics not in ("A", "B"):
            raise DomainError(f"physics must be 'A' or 'B', got {self.physics!r}")
        if self.times.shape != self.values.shape or self.times.ndim != 1 or self.times.size == 0:
            raise DomainError("times and values must be equal-length, nonempty 1-D arrays")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("observation times must be strictly increasing")
        if np.any(~(self.values > 0)):
            raise DomainError("observed values must be strictly positive")

    @property
    def count(self) -> int:
        return int(self.times.size)

    def to_csv(self, path) -> Path:
        """Write ``time,value`` CSV plus a ``.json`` manifest next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = "\n".join(f"{t!r},{v!r}" for t, v in zip(self.times.tolist(), self.values.tolist()))
        path.write_text("time,value\n" + rows + "\n")
        manifest = {"physics": self.physics, "seed": self.seed, "sigma": self.sigma, "truth": self.truth}
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_csv(cls, path, physics: Optional[str] = None) -> "Dataset":
        path = Path(path)
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
        if raw.dtype.names is None or set(raw.dtype.names) < {"time", "value"}:
            raise SchemaError(f"{path} needs a 'time,value' header")
        raw = np.atleast_1d(raw)
        meta = {}
        if path.with_suffix(".json").exists():
            meta = json.loads(path.with_suffix(".json").read_text())
        physics = physics or meta.get("physics")
        if physics is None:
            raise SchemaError(f"physics of {path} unknown; pass it explicitly or provide a manifest")
        return cls(physics, raw["time"], raw["value"], meta.get("seed"), meta.get("sigma"), bool(meta.get("truth", False)))


@dataclass(frozen=True)
class TruthConfig:
    """The data-generating OQS-OED system."""

    m: float = 1.0
    c: float = 0.1
    k5_0: float = 4.0
    k5_2: float = -5.0
    k5_4: float = 1.0
    F0: float = 1.0
    tau: float = 2.0 * math.pi
    alpha: float = 0.2
    omega: float = 2.0
    noise_std: float = 0.1
    free_ic: OscillatorState = field(default_factory=lambda: OscillatorState(0.5, 0.0))
    coupled_ic: OscillatorState = field(default_factory=OscillatorState)

    spring = SpringKind.OQS
    forcing = ForcingKind.OED

    @property
    def params(self) -> dict:
        return {
            "m": self.m, "c": self.c, "k5_0": self.k5_0, "k5_2": self.k5_2, "k5_4": self.k5_4,
            "F0": self.F0, "tau": self.tau, "alpha": self.alpha, "omega": self.omega,
        }

    def with_(self, **changes) -> "TruthConfig":
        return replace(self, **changes)


def truth_observable(truth: TruthConfig, physics: str, times, step: float = 1e-3) -> np.ndarray:
    """Noise-free physics-A kinetic energy (free oscillator) or physics-B force."""
    times = np.asarray(times, dtype=float)
    if physics == "A":
        horizon = max(float(times.max()), 2.0 * step)
        cfg = IntegratorConfig(step, math.ceil(horizon / step - 1e-9) * step)
        traj = integrate(truth.spring, None, truth.params, truth.free_ic, cfg)
        return observable_kinetic_energy(traj, times)
    if physics == "B":
        return observable_force(truth.forcing, truth.params, times)
    raise DomainError(f"physics must be 'A' or 'B', got {physics!r}")


def generate_synthetic_data(
    truth: TruthConfig,
    physics: str,
    times,
    seed: int,
    sigma: Optional[float] = None,
    step: float = 1e-3,
) -> Dataset:
    """Perturb the truth observable with multiplicative lognormal noise.

    ``d_i = y_i * exp(sigma * z_i)`` with ``z_i`` drawn from ``default_rng(seed)``.
    """
    sigma = truth.noise_std if sigma is None else float(sigma)
    if sigma < 0:
        raise DomainError("noise std must be non-negative")
    times = np.asarray(times, dtype=float)
    y = truth_observable(truth, physics, times, step)
    bad = np.flatnonzero(~(y > 0))
    if bad.size:
        raise DomainError(
            f"truth observable is not positive at t={times[bad].tolist()}; choose other observation times"
        )
    z = np.random.default_rng(seed).standard_normal(times.size)
    return Dataset(physics, times, y * np.exp(sigma * z), seed=seed, sigma=sigma, truth=True)


def log_likelihood(predictions, data: Dataset, sigma: float) -> float:
    """Lognormal multiplicative-noise log-likelihood of one prediction vector.

    Non-positive predictions make their observation contribute ``-inf``.
    """
    pred = np.asarray(predictions, dtype=float)
    if pred.shape != data.values.shape:
        raise DomainError(f"expected {data.count} predictions, got {pred.shape}")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    return float(log_likelihood_batch(pred[None, :], data.values, np.array([sigma]))[0])


def log_likelihood_batch(pred: np.ndarray, values: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Row-wise log-likelihood for ``(n, m)`` predictions and ``(n,)`` noise levels."""
    log_d = np.log(values)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_y = np.where(pred > 0, np.log(np.where(pred > 0, pred, 1.0)), -np.inf)
        r = log_d[None, :] - log_y
        sigma = np.asarray(sigma, dtype=float)[:, None]
        terms = -log_d[None, :] - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * (r / sigma) ** 2
    terms = np.where(np.isfinite(terms), terms, -np.inf)
    return terms.sum(axis=1)


def predict_observable(
    model: ModelSpec,
    theta: np.ndarray,
    times,
    ic: OscillatorState = OscillatorState(0.5, 0.0),
    step: float = 1e-3,
) -> np.ndarray:
    """Noise-free observable for every row of ``theta``; ``nan`` where the ODE diverged."""
    theta = np.atleast_2d(theta)
    times = np.asarray(times, dtype=float)
    params = {n: theta[:, i] for i, n in enumerate(model.parameter_names)}
    if model.physics == "A":
        horizon = max(float(times.max()), 2.0 * step)
        cfg = IntegratorConfig(step, math.ceil(horizon / step - 1e-9) * step)
        res = integrate_batch(model.spring, None, params, ic, cfg, record_times=times)
        return 0.5 * res.v_at ** 2
    if model.physics == "B":
        cols = {n: v[:, None] for n, v in params.items()}
        out = _forcing_fn(model.forcing, cols)(times[None, :])
        return np.broadcast_to(out, (theta.shape[0], times.size)).astype(float)
    raise DomainError("observables are defined for single-physics models only")


def make_log_likelihood(model: ModelSpec, data: Dataset, ic=OscillatorState(0.5, 0.0), step: float = 1e-3):
    """Vectorised ``theta (n, d) -> log L (n,)`` for a single-physics model."""
    if model.physics != data.physics:
        raise SchemaError(f"model {model.id} is physics {model.physics}, data is physics {data.physics}")
    sigma_col = model.parameter_names.index(f"log_sigma_{model.physics}")

    def loglike(theta):
        theta = np.atleast_2d(theta)
        pred = predict_observable(model, theta, data.times, ic, step)
        return log_likelihood_batch(pred, data.values, np.exp(theta[:, sigma_col]))

    return loglike
