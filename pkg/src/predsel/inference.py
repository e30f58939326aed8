"""Transitional MCMC calibration and predictive propagation to the QoI."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .dynamics import IntegratorConfig, OscillatorState, integrate_batch
from .errors import DegenerateError, DomainError, PropagationError
from .probmodel import Dataset, ModelSpec, PriorSpec, make_log_likelihood

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TmcmcSettings:
    n_pop: int = 2000
    target_cov: float = 1.0
    n_steps: int = 5
    beta: float = 0.2
    seed: int = 0
    max_stages: int = 500

    def __post_init__(self):
        if self.n_pop < 100:
            raise DomainError("n_pop must be at least 100")
        if not self.target_cov > 0 or not self.beta > 0:
            raise DomainError("target_cov and beta must be positive")
        if self.n_steps < 1:
            raise DomainError("n_steps must be at least 1")


@dataclass
class PosteriorEnsemble:
    names: tuple
    samples: np.ndarray
    log_evidence: float
    schedule: np.ndarray
    acceptance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_likelihood: Optional[np.ndarray] = None
    model_id: str = ""
    settings: Optional[dict] = None

    def __post_init__(self):
        self.names = tuple(self.names)
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.schedule = np.asarray(self.schedule, dtype=float)
        self.acceptance = np.asarray(self.acceptance, dtype=float)
        if self.samples.shape[0] == 0 or self.samples.shape[1] != len(self.names):
            raise DomainError("posterior samples must be nonempty with one column per parameter")
        if not math.isfinite(self.log_evidence):
            raise DomainError("log evidence must be finite")
        if self.schedule.size < 2 or self.schedule[0] != 0.0 or self.schedule[-1] != 1.0 or np.any(np.diff(self.schedule) <= 0):
            raise DomainError("tempering schedule must increase strictly from 0 to 1")

    def __len__(self):
        return self.samples.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(self.names)]
        lines += [",".join(repr(v) for v in row) for row in self.samples.tolist()]
        path.write_text("\n".join(lines) + "\n")
        manifest = {
            "model_id": self.model_id,
            "log_evidence": self.log_evidence,
            "schedule": self.schedule.tolist(),
            "acceptance": self.acceptance.tolist(),
            "settings": self.settings,
            "seed": (self.settings or {}).get("seed"),
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_csv(cls, path) -> "PosteriorEnsemble":
        path = Path(path)
        header = path.read_text().splitlines()[0].split(",")
        samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(
            tuple(header), samples, meta["log_evidence"], np.array(meta["schedule"]),
            np.array(meta["acceptance"]), model_id=meta.get("model_id", ""), settings=meta.get("settings"),
        )


@dataclass
class PredictiveEnsemble:
    qoi_samples: np.ndarray
    model_id: str = ""
    includes_model_error: bool = True
    n_skipped: int = 0

    def __post_init__(self):
        self.qoi_samples = np.asarray(self.qoi_samples, dtype=float).ravel()
        if self.qoi_samples.size == 0:
            raise DomainError("predictive ensemble is empty")
        if not np.all(np.isfinite(self.qoi_samples)) or np.any(self.qoi_samples < 0):
            raise DomainError("QoI samples must be finite and non-negative")

    def __len__(self):
        return self.qoi_samples.size


def _weight_cov(log_l: np.ndarray, dp: float) -> float:
    lw = dp * log_l
    w = np.exp(lw - lw.max())
    return float(np.std(w) / np.mean(w))


def _next_increment(log_l: np.ndarray, p: float, target: float) -> float:
    """Tempering increment whose stage-weight CoV hits ``target``, capped at ``1 - p``."""
    remaining = 1.0 - p
    finite = log_l[np.isfinite(log_l)]
    # Particles with zero likelihood get zero weight at any increment. When
    # they alone push the CoV past the target, aim the target at the rest.
    dead = 1.0 - finite.size / log_l.size
    if dead > 0 and math.sqrt(dead / (1.0 - dead)) >= target:
        log_l = finite
    if _weight_cov(log_l, remaining) <= target:
        return remaining
    lo, hi = 0.0, remaining
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _weight_cov(log_l, mid) > target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * remaining:
            break
    return lo if lo > 0 else hi


def tmcmc_sample(
    log_prior: Callable[[np.ndarray], np.ndarray],
    log_likelihood: Callable[[np.ndarray], np.ndarray],
    prior_sampler: Callable[[np.random.Generator, int], np.ndarray],
    settings: TmcmcSettings = TmcmcSettings(),
    names: Optional[tuple] = None,
) -> PosteriorEnsemble:
    """Transitional MCMC with the evidence accumulated over tempering stages.

    ``log_prior`` and ``log_likelihood`` map an ``(n, d)`` array to ``(n,)``
    values. Stage ``s`` draws its randomness from ``default_rng([seed, s])``.
    """
    n = settings.n_pop
    rng = np.random.default_rng([settings.seed, 0])
    theta = np.atleast_2d(prior_sampler(rng, n)).astype(float)
    d = theta.shape[1]
    names = tuple(names) if names is not None else tuple(f"theta{i}" for i in range(d))
    log_l = np.asarray(log_likelihood(theta), dtype=float)
    log_l = np.where(np.isnan(log_l), -np.inf, log_l)
    log_p = np.asarray(log_prior(theta), dtype=float)

    p = 0.0
    log_z = 0.0
    schedule = [0.0]
    acceptance = []
    stage = 0
    while p < 1.0:
        stage += 1
        if stage > settings.max_stages:
            raise DegenerateError(f"tempering did not reach p=1 within {settings.max_stages} stages")
        if not np.any(np.isfinite(log_l)):
            raise DegenerateError(f"all particles have zero likelihood at stage {stage} (p={p:.6g})")
        dp = _next_increment(log_l, p, settings.target_cov)
        lw = dp * log_l
        log_z += float(logsumexp(lw) - math.log(n))
        w = np.exp(lw - lw.max())
        w /= w.sum()
        p = 1.0 if dp >= 1.0 - p else p + dp
        schedule.append(p)

        mean = w @ theta
        dev = theta - mean
        cov = (dev * w[:, None]).T @ dev + 1e-10 * np.eye(d)
        chol = np.linalg.cholesky(settings.beta ** 2 * cov)

        rng = np.random.default_rng([settings.seed, stage])
        idx = rng.choice(n, size=n, p=w)
        theta, log_l, log_p = theta[idx], log_l[idx], log_p[idx]

        accepted = 0
        for _ in range(settings.n_steps):
            prop = theta + rng.standard_normal((n, d)) @ chol.T
            lp_prop = np.asarray(log_prior(prop), dtype=float)
            ok = np.isfinite(lp_prop)
            ll_prop = np.full(n, -np.inf)
            if ok.any():
                ll_prop[ok] = log_likelihood(prop[ok])
            ll_prop = np.where(np.isnan(ll_prop), -np.inf, ll_prop)
            with np.errstate(invalid="ignore"):
                log_ratio = (lp_prop + p * ll_prop) - (log_p + p * log_l)
            log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
            take = np.log(rng.uniform(size=n)) < log_ratio
            theta[take], log_l[take], log_p[take] = prop[take], ll_prop[take], lp_prop[take]
            accepted += int(take.sum())
        acceptance.append(accepted / (n * settings.n_steps))
        logger.debug("stage %d: p=%.4g acceptance=%.3f", stage, p, acceptance[-1])

    return PosteriorEnsemble(
        names, theta, log_z, np.array(schedule), np.array(acceptance), log_l, settings=asdict(settings)
    )


def calibrate(
    model: ModelSpec,
    data: Dataset,
    prior: Optional[PriorSpec] = None,
    settings: TmcmcSettings = TmcmcSettings(),
    ic: OscillatorState = OscillatorState(0.5, 0.0),
    step: float = 1e-3,
) -> PosteriorEnsemble:
    """Calibrate a single-physics model class against its dataset."""
    prior = prior or PriorSpec.for_model(model)
    if prior.names != model.parameter_names:
        raise DomainError(f"prior parameters {prior.names} do not match model {model.parameter_names}")
    post = tmcmc_sample(
        prior.log_density, make_log_likelihood(model, data, ic, step), prior.sample, settings, model.parameter_names
    )
    post.model_id = model.id
    return post


def coupled_posterior(post_a: PosteriorEnsemble, post_b: PosteriorEnsemble, n: int, seed) -> PosteriorEnsemble:
    """Joint samples of independent single-physics posteriors; evidences add."""
    if len(post_a) == 0 or len(post_b) == 0:
        raise DomainError("both posteriors must be nonempty")
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, len(post_a), size=n)
    ib = rng.integers(0, len(post_b), size=n)
    samples = np.hstack([post_a.samples[ia], post_b.samples[ib]])
    model_id = "-".join(m for m in (post_a.model_id, post_b.model_id) if m)
    return PosteriorEnsemble(
        post_a.names + post_b.names, samples, post_a.log_evidence + post_b.log_evidence,
        np.array([0.0, 1.0]), model_id=model_id,
    )


def qoi_noise_std(post: PosteriorEnsemble, rows: np.ndarray, source: str = "A") -> np.ndarray:
    """Multiplicative QoI model-error std per posterior row.

    ``source`` selects the calibrated noise level: ``"A"`` (oscillator),
    ``"B"`` (forcing), ``"combined"`` (root-sum-square) or ``"none"``.
    """
    if source == "none":
        return np.zeros(len(rows))
    if source in ("A", "B"):
        return np.exp(post.samples[rows, post.names.index(f"log_sigma_{source}")])
    if source == "combined":
        sa = np.exp(post.samples[rows, post.names.index("log_sigma_A")])
        sb = np.exp(post.samples[rows, post.names.index("log_sigma_B")])
        return np.hypot(sa, sb)
    raise DomainError(f"unknown QoI noise source {source!r}")


def propagate_predictive(
    post: PosteriorEnsemble,
    model: ModelSpec,
    n_draws: int,
    seed,
    cfg: IntegratorConfig = IntegratorConfig(),
    ic: OscillatorState = OscillatorState(),
    noise: str = "A",
    max_skip_fraction: float = 0.1,
) -> PredictiveEnsemble:
    """Push posterior draws through the coupled ODE to the max-velocity QoI.

    Each draw picks a posterior row uniformly, integrates the coupled model
    (once per distinct row), takes ``q_det = max |v|`` and applies the
    calibrated multiplicative error ``q = q_det * exp(sigma * z)``. Draws
    whose integration diverges are dropped; more than ``max_skip_fraction``
    of them raises :class:`PropagationError`.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be at least 1")
    if model.physics != "AB":
        raise DomainError("predictive propagation needs a coupled model")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, len(post), size=n_draws)
    z = rng.standard_normal(n_draws)
    sigma = qoi_noise_std(post, rows, noise)

    uniq, inverse = np.unique(post.samples[rows], axis=0, return_inverse=True)
    inverse = inverse.ravel()
    params = {name: uniq[:, post.names.index(name)] for name in model.parameter_names}
    res = integrate_batch(model.spring, model.forcing, params, ic, cfg)
    q_det = res.v_max[inverse]
    bad = res.diverged[inverse]
    n_bad = int(bad.sum())
    if n_bad > max_skip_fraction * n_draws:
        raise PropagationError(f"{model.id}: {n_bad} of {n_draws} draws diverged")
    if n_bad:
        logger.warning("%s: skipped %d diverging draws", model.id, n_bad)
    q = q_det[~bad] * np.exp(sigma[~bad] * z[~bad])
    return PredictiveEnsemble(q, model.id, includes_model_error=noise != "none", n_skipped=n_bad)
