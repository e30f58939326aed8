"""Forward models for the driven spring-mass-damper problem.

The oscillator obeys ``m x'' + c x' + k(x) x = f(t)`` with ``m = 1`` unless a
parameter vector says otherwise. Spring laws ``k(x)`` and forcing laws ``f(t)``
come in three flavours each; any pairing is a coupled model.

Two integrators share the same fixed-step classical RK4 scheme:

* :func:`integrate` advances a single parameter vector and keeps the whole
  trajectory.
* :func:`integrate_batch` advances many parameter vectors at once (numpy
  arrays, one entry per particle) and keeps only what calibration and
  prediction need: velocities at requested times and the running max ``|v|``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DivergenceError, DomainError, SchemaError

__all__ = [
    "SpringKind",
    "ForcingKind",
    "OscillatorState",
    "Trajectory",
    "IntegratorConfig",
    "BatchResult",
    "spring_stiffness",
    "forcing_value",
    "integrate",
    "integrate_batch",
    "qoi_max_velocity",
    "observable_kinetic_energy",
    "observable_force",
]


class SpringKind(str, enum.Enum):
    OLS = "OLS"
    OCS = "OCS"
    OQS = "OQS"

    @property
    def parameter_names(self) -> tuple:
        return _SPRING_PARAMS[self]


class ForcingKind(str, enum.Enum):
    SED = "SED"
    OLD = "OLD"
    OED = "OED"

    @property
    def parameter_names(self) -> tuple:
        return _FORCING_PARAMS[self]


# Coefficients of k(x) in increasing even powers of x.
_SPRING_PARAMS = {
    SpringKind.OLS: ("k1_0",),
    SpringKind.OCS: ("k3_0", "k3_2"),
    SpringKind.OQS: ("k5_0", "k5_2", "k5_4"),
}

_FORCING_PARAMS = {
    ForcingKind.SED: ("F0", "tau"),
    ForcingKind.OLD: ("F0", "tau", "alpha", "omega"),
    ForcingKind.OED: ("F0", "tau", "alpha", "omega"),
}


@dataclass(frozen=True)
class OscillatorState:
    x: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise DomainError(f"oscillator state must be finite, got ({self.x}, {self.v})")


@dataclass(frozen=True)
class IntegratorConfig:
    """Uniform grid ``t_i = i * step`` for ``i = 0 .. n_steps``."""

    step: float = 1e-3
    horizon: float = 8.0 * math.pi

    def __post_init__(self):
        if not self.step > 0 or not self.horizon > 0:
            raise DomainError("step and horizon must be positive")
        if self.step >= self.horizon:
            raise DomainError("step must be smaller than the horizon")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def end_time(self) -> float:
        return self.n_steps * self.step


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.x) == len(self.v)) or len(self.times) < 2:
            raise DomainError("trajectory needs matching arrays with at least two nodes")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")

    @property
    def states(self) -> list:
        return [OscillatorState(float(a), float(b)) for a, b in zip(self.x, self.v)]

    def __len__(self):
        return len(self.times)


@dataclass
class BatchResult:
    """Output of :func:`integrate_batch` for ``n`` particles and ``m`` record times."""

    v_at: np.ndarray  # (n, m) velocity at the record times
    v_max: np.ndarray  # (n,) grid maximum of |v|
    diverged: np.ndarray  # (n,) bool
    fail_time: np.ndarray  # (n,) nan where not diverged


def _require(params: Mapping, names: Sequence[str], what: str):
    out = []
    for name in names:
        try:
            out.append(params[name])
        except KeyError:
            raise SchemaError(f"{what} is missing parameter '{name}'") from None
    return out


def _spring_coeffs(kind: SpringKind, params: Mapping):
    return _require(params, SpringKind(kind).parameter_names, f"spring {SpringKind(kind).value}")


def _stiffness(coeffs, x):
    # Horner in x**2; works for floats and arrays alike
    x2 = x * x
    k = coeffs[-1]
    for a in reversed(coeffs[:-1]):
        k = a + k * x2
    return k


def spring_stiffness(kind: SpringKind, params: Mapping, x: float) -> float:
    """Evaluate ``k(x)`` for the given spring law."""
    return _stiffness(_spring_coeffs(kind, params), x)


def _forcing_fn(kind: ForcingKind, params: Mapping):
    """Return ``f(t)`` as a closure over the (scalar or array) parameters."""
    kind = ForcingKind(kind)
    values = _require(params, kind.parameter_names, f"forcing {kind.value}")
    if kind is ForcingKind.SED:
        F0, tau = values
        return lambda t: F0 * np.exp(-t / tau)
    F0, tau, alpha, omega = values
    if kind is ForcingKind.OED:
        return lambda t: F0 * np.exp(-t / tau) * (alpha * np.sin(omega * t) + 1.0)

    def old(t):
        ramp = F0 * (1.0 - t / tau) * (alpha * np.sin(omega * t) + 1.0)
        return np.where(t <= tau, ramp, 0.0)

    return old


def forcing_value(kind: ForcingKind, params: Mapping, t: float) -> float:
    if t < 0:
        raise DomainError(f"forcing is defined for t >= 0, got t={t}")
    return float(_forcing_fn(kind, params)(float(t)))


def observable_force(kind: ForcingKind, params: Mapping, times) -> np.ndarray:
    """Forcing sampled at ``times``; the physics-B observable."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise DomainError("forcing is defined for t >= 0")
    return np.asarray(_forcing_fn(kind, params)(times), dtype=float) * np.ones_like(times)


def _scalar_forcing(kind: Optional[ForcingKind], params: Mapping):
    if kind is None:
        return lambda t: 0.0
    kind = ForcingKind(kind)
    F0, tau, *rest = _require(params, kind.parameter_names, f"forcing {kind.value}")
    F0, tau = float(F0), float(tau)
    if kind is ForcingKind.SED:
        return lambda t: F0 * math.exp(-t / tau)
    alpha, omega = float(rest[0]), float(rest[1])
    if kind is ForcingKind.OED:
        return lambda t: F0 * math.exp(-t / tau) * (alpha * math.sin(omega * t) + 1.0)
    return lambda t: F0 * (1.0 - t / tau) * (alpha * math.sin(omega * t) + 1.0) if t <= tau else 0.0


def integrate(
    spring: SpringKind,
    forcing: Optional[ForcingKind],
    params: Mapping,
    ic: OscillatorState = OscillatorState(),
    cfg: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Classical RK4 solution of the oscillator on the uniform grid of ``cfg``.

    With ``forcing=None`` the right-hand side is zero (free oscillator).
    Raises :class:`DivergenceError` as soon as the state stops being finite.
    """
    coeffs = [float(a) for a in _spring_coeffs(spring, params)]
    (c,) = _require(params, ("c",), "oscillator")
    c = float(c)
    inv_m = 1.0 / float(params.get("m", 1.0))
    f = _scalar_forcing(forcing, params)

    def acc(t, x, v):
        x2 = x * x
        k = coeffs[-1]
        for a in reversed(coeffs[:-1]):
            k = a + k * x2
        return (f(t) - c * v - k * x) * inv_m

    n = cfg.n_steps
    h = cfg.step
    xs = np.empty(n + 1)
    vs = np.empty(n + 1)
    x, v = float(ic.x), float(ic.v)
    xs[0], vs[0] = x, v
    half = 0.5 * h
    for i in range(n):
        t = i * h
        a1 = acc(t, x, v)
        x2, v2 = x + half * v, v + half * a1
        a2 = acc(t + half, x2, v2)
        x3, v3 = x + half * v2, v + half * a2
        a3 = acc(t + half, x3, v3)
        x4, v4 = x + h * v3, v + h * a3
        a4 = acc(t + h, x4, v4)
        x = x + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if not (math.isfinite(x) and math.isfinite(v)):
            raise DivergenceError((i + 1) * h)
        xs[i + 1], vs[i + 1] = x, v
    return Trajectory(np.arange(n + 1) * h, xs, vs)


def integrate_batch(
    spring: SpringKind,
    forcing: Optional[ForcingKind],
    params: Mapping[str, np.ndarray],
    ic: OscillatorState = OscillatorState(),
    cfg: IntegratorConfig = IntegratorConfig(),
    record_times: Sequence[float] = (),
) -> BatchResult:
    """Vectorised RK4 over a population of parameter vectors.

    ``params`` maps names to 1-D arrays of equal length ``n``. Velocities at
    ``record_times`` are linearly interpolated between grid nodes. Particles
    whose state becomes non-finite are flagged in ``diverged`` and frozen at
    zero for the rest of the run instead of raising.
    """
    coeffs = [np.asarray(a, dtype=float) for a in _spring_coeffs(spring, params)]
    (c,) = _require(params, ("c",), "oscillator")
    c = np.asarray(c, dtype=float)
    n_part = max(np.size(a) for a in params.values())
    inv_m = 1.0 / np.asarray(params.get("m", 1.0), dtype=float)
    f = None if forcing is None else _forcing_fn(forcing, {k: np.asarray(v, dtype=float) for k, v in params.items()})

    n = cfg.n_steps
    h = cfg.step
    record_times = np.asarray(record_times, dtype=float)
    if record_times.size and (record_times.min() < -1e-12 or record_times.max() > n * h + 1e-12):
        raise DomainError("record times must lie within the integration horizon")
    pos = np.clip(record_times / h, 0.0, n)
    lo = np.minimum(np.floor(pos).astype(int), n - 1)
    frac = pos - lo
    # which grid nodes we need to keep, mapped to storage columns
    needed = np.unique(np.concatenate([lo, lo + 1])) if record_times.size else np.empty(0, int)
    col = {int(j): i for i, j in enumerate(needed)}
    store = np.zeros((n_part, len(needed)))

    def acc(t, x, v):
        k = _stiffness(coeffs, x)
        rhs = -c * v - k * x
        if f is not None:
            rhs = rhs + f(t)
        return rhs * inv_m

    x = np.full(n_part, float(ic.x))
    v = np.full(n_part, float(ic.v))
    v_max = np.abs(v)
    diverged = np.zeros(n_part, dtype=bool)
    fail_time = np.full(n_part, np.nan)
    if 0 in col:
        store[:, col[0]] = v
    half = 0.5 * h
    with np.errstate(all="ignore"):
        for i in range(n):
            t = i * h
            a1 = acc(t, x, v)
            x2 = x + half * v
            v2 = v + half * a1
            a2 = acc(t + half, x2, v2)
            x3 = x + half * v2
            v3 = v + half * a2
            a3 = acc(t + half, x3, v3)
            x4 = x + h * v3
            v4 = v + h * a3
            a4 = acc(t + h, x4, v4)
            x = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            bad = ~(np.isfinite(x) & np.isfinite(v))
            if bad.any():
                fresh = bad & ~diverged
                fail_time[fresh] = (i + 1) * h
                diverged |= bad
                x[bad] = 0.0
                v[bad] = 0.0
            np.maximum(v_max, np.abs(v), out=v_max)
            j = col.get(i + 1)
            if j is not None:
                store[:, j] = v
    if record_times.size:
        v_lo = store[:, [col[int(j)] for j in lo]]
        v_hi = store[:, [col[int(j) + 1] for j in lo]]
        v_at = v_lo + frac * (v_hi - v_lo)
    else:
        v_at = np.zeros((n_part, 0))
    v_at[diverged] = np.nan
    v_max[diverged] = np.nan
    return BatchResult(v_at=v_at, v_max=v_max, diverged=diverged, fail_time=fail_time)


def qoi_max_velocity(traj: Trajectory) -> float:
    """Grid maximum of ``|v|``; no sub-grid refinement of the extremum."""
    return float(np.max(np.abs(traj.v)))


def observable_kinetic_energy(traj: Trajectory, times) -> np.ndarray:
    """``v(t)**2 / 2`` at ``times`` with ``v`` linearly interpolated; the physics-A observable."""
    times = np.asarray(times, dtype=float)
    lo, hi = traj.times[0], traj.times[-1]
    eps = 1e-12 * max(1.0, abs(hi))
    if np.any(times < lo - eps) or np.any(times > hi + eps):
        raise DomainError(f"observation times must lie in [{lo}, {hi}]")
    v = np.interp(times, traj.times, traj.v)
    return 0.5 * v * v
