"""Plausibility-based and predictive (QoI-aware) model selection.

Plausibility selection picks the model class with the largest posterior
plausibility. Predictive selection picks the model whose QoI predictive
distribution is closest in KL divergence to the plausibility-weighted
mixture of all predictives (the BMA predictive).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .dynamics import IntegratorConfig, OscillatorState, integrate_batch
from .errors import DegenerateError, DomainError
from .inference import PosteriorEnsemble, PredictiveEnsemble, qoi_noise_std
from .infotheory import kl_between_predictives, knn_kl_divergence
from .probmodel import ModelSpec, PriorSpec

NEGLIGIBLE = 1e-6
NOISE_FLOOR = 0.05


@dataclass
class PlausibilityTable:
    """Prior and posterior plausibilities over a set of model ids.

    Coupled tables also carry ``rows`` (physics-A ids) and ``cols``
    (physics-B ids); ``ids`` is then the row-major flattening ``"row-col"``.
    """

    ids: tuple
    prior: np.ndarray
    posterior: np.ndarray
    log_evidence: Optional[np.ndarray] = None
    rows: Optional[tuple] = None
    cols: Optional[tuple] = None

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.prior = np.asarray(self.prior, dtype=float)
        self.posterior = np.asarray(self.posterior, dtype=float)
        if len(set(self.ids)) != len(self.ids):
            raise DomainError("model ids must be unique")
        for name, arr in (("prior", self.prior), ("posterior", self.posterior)):
            if arr.shape != (len(self.ids),):
                raise DomainError(f"{name} needs one entry per model")
            if np.any(arr < 0) or np.any(arr > 1) or abs(arr.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} plausibilities must lie in [0, 1] and sum to 1")

    def __getitem__(self, model_id: str) -> float:
        return float(self.posterior[self.ids.index(model_id)])

    @property
    def is_coupled(self) -> bool:
        return self.rows is not None

    def matrix(self) -> np.ndarray:
        if not self.is_coupled:
            raise DomainError("only coupled tables have a matrix form")
        return self.posterior.reshape(len(self.rows), len(self.cols))

    def to_dict(self) -> dict:
        out = {
            "ids": list(self.ids),
            "prior": self.prior.tolist(),
            "posterior": self.posterior.tolist(),
            "log_evidence": None if self.log_evidence is None else np.asarray(self.log_evidence).tolist(),
        }
        if self.is_coupled:
            out.update(rows=list(self.rows), cols=list(self.cols))
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlausibilityTable":
        le = d.get("log_evidence")
        return cls(
            tuple(d["ids"]), np.array(d["prior"]), np.array(d["posterior"]),
            None if le is None else np.array(le),
            tuple(d["rows"]) if d.get("rows") else None, tuple(d["cols"]) if d.get("cols") else None,
        )


@dataclass
class SelectionReport:
    scheme: str
    winner: str
    scores: dict
    plausibilities: dict
    noise_floor: list = field(default_factory=list)
    bma: Optional[PredictiveEnsemble] = None
    settings: dict = field(default_factory=dict)

    @property
    def settings_hash(self) -> str:
        blob = json.dumps(self.settings, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "winner": self.winner,
            "scores": dict(self.scores),
            "plausibilities": dict(self.plausibilities),
            "noise_floor": list(self.noise_floor),
            "settings": self.settings,
            "settings_hash": self.settings_hash,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectionReport":
        return cls(d["scheme"], d["winner"], dict(d["scores"]), dict(d["plausibilities"]),
                   list(d.get("noise_floor", [])), settings=dict(d.get("settings", {})))


def posterior_plausibilities(log_evidences: Sequence[float], priors: Optional[Sequence[float]] = None,
                             ids: Optional[Sequence[str]] = None) -> PlausibilityTable:
    """Normalise ``evidence * prior`` over the model set with a log-sum-exp guard."""
    log_z = np.asarray(log_evidences, dtype=float)
    k = log_z.size
    prior = np.full(k, 1.0 / k) if priors is None else np.asarray(priors, dtype=float)
    if prior.shape != (k,) or abs(prior.sum() - 1.0) > 1e-12 or np.any(prior < 0):
        raise DomainError("priors must be non-negative, one per model, and sum to 1")
    with np.errstate(divide="ignore"):
        log_w = log_z + np.log(prior)
    if not np.any(np.isfinite(log_w)):
        raise DegenerateError("every model has zero evidence or zero prior plausibility")
    post = np.exp(log_w - logsumexp(log_w))
    post /= post.sum()
    ids = tuple(ids) if ids is not None else tuple(f"M{i + 1}" for i in range(k))
    return PlausibilityTable(ids, prior, post, log_z)


def coupled_plausibilities(table_a: PlausibilityTable, table_b: PlausibilityTable) -> PlausibilityTable:
    """Product rule: a coupled model is as plausible as its two components jointly."""
    post = np.outer(table_a.posterior, table_b.posterior).ravel()
    prior = np.outer(table_a.prior, table_b.prior).ravel()
    log_z = None
    if table_a.log_evidence is not None and table_b.log_evidence is not None:
        log_z = np.add.outer(table_a.log_evidence, table_b.log_evidence).ravel()
    ids = tuple(f"{a}-{b}" for a in table_a.ids for b in table_b.ids)
    return PlausibilityTable(ids, prior, post, log_z, rows=table_a.ids, cols=table_b.ids)


@dataclass(frozen=True)
class BayesFactor:
    log_ratio: float

    @property
    def ratio(self) -> float:
        return math.exp(self.log_ratio)


def bayes_factor(log_z1: float, log_z2: float) -> BayesFactor:
    if not (math.isfinite(log_z1) and math.isfinite(log_z2)):
        raise DomainError("Bayes factors need finite log evidences")
    return BayesFactor(float(log_z1) - float(log_z2))


def _ensembles_by_id(predictives, ids) -> dict:
    if isinstance(predictives, Mapping):
        return dict(predictives)
    by_id = {p.model_id: p for p in predictives}
    if len(by_id) != len(predictives) or not set(by_id) <= set(ids):
        # fall back to positional alignment with the table
        if len(predictives) != len(ids):
            raise DomainError("predictive ensembles cannot be matched to the plausibility table")
        by_id = dict(zip(ids, predictives))
    return by_id


def _mixture_weights(ensembles: Mapping, plaus: PlausibilityTable):
    weights = plaus.posterior.copy()
    for i, mid in enumerate(plaus.ids):
        if mid not in ensembles or len(ensembles[mid]) == 0:
            if weights[i] > NEGLIGIBLE:
                raise DomainError(f"no predictive ensemble for model {mid} (plausibility {weights[i]:.3g})")
            weights[i] = 0.0
    if weights.sum() <= 0:
        raise DegenerateError("no model with an ensemble carries plausibility")
    return weights / weights.sum()


def bma_predictive(predictives, plaus: PlausibilityTable, n: int, seed) -> PredictiveEnsemble:
    """Draw ``n`` samples from the plausibility-weighted mixture of predictives.

    Component counts are multinomial in the plausibilities. Within a
    component, draws walk through successive random permutations of its
    ensemble, so points repeat only once a component's ensemble is used up.
    """
    ensembles = _ensembles_by_id(predictives, plaus.ids)
    weights = _mixture_weights(ensembles, plaus)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, weights)
    parts = []
    for mid, count in zip(plaus.ids, counts):
        if count == 0:
            continue
        pool = ensembles[mid].qoi_samples
        reps = -(-count // pool.size)
        order = np.concatenate([rng.permutation(pool.size) for _ in range(reps)])[:count]
        parts.append(pool[order])
    draws = np.concatenate(parts)
    return PredictiveEnsemble(draws[rng.permutation(draws.size)], "BMA", includes_model_error=True)


def _split_halves(ens: PredictiveEnsemble):
    q = ens.qoi_samples
    return (PredictiveEnsemble(q[0::2], ens.model_id, ens.includes_model_error),
            PredictiveEnsemble(q[1::2], ens.model_id, ens.includes_model_error))


def _tie_key(score_sign: float, plaus: PlausibilityTable):
    return lambda item: (score_sign * item[1], -plaus[item[0]], item[0])


def predictive_select(predictives, plaus: PlausibilityTable, n_bma: Optional[int] = None, seed=0,
                      noise_floor: float = NOISE_FLOOR) -> SelectionReport:
    """Pick ``argmin_j KL(BMA || model_j)`` over every model in the table.

    Each ensemble is split into interleaved halves: even positions feed the
    BMA mixture, odd positions are the reference cloud for the divergence.
    Without the split the mixture would share exact points with the model it
    is compared against. Ties go to the more plausible model, then to the
    lexicographically smaller id.
    """
    ensembles = _ensembles_by_id(predictives, plaus.ids)
    missing = [m for m in plaus.ids if m not in ensembles]
    if missing:
        raise DomainError(f"no predictive ensemble for models {missing}")
    pools, refs = {}, {}
    for mid in plaus.ids:
        pools[mid], refs[mid] = _split_halves(ensembles[mid])
    weights = _mixture_weights(pools, plaus)
    if n_bma is None:
        n_bma = min(len(pools[m]) for m, w in zip(plaus.ids, weights) if w > 0)
    ss = np.random.SeedSequence(seed)
    bma_seed, kl_seed = ss.spawn(2)
    bma = bma_predictive(pools, plaus, n_bma, bma_seed)
    kl_seed = int(kl_seed.generate_state(1)[0])
    scores = {mid: kl_between_predictives(bma, refs[mid], kl_seed) for mid in plaus.ids}
    winner = min(scores.items(), key=_tie_key(1.0, plaus))[0]
    return SelectionReport(
        "predictive", winner, scores, {m: plaus[m] for m in plaus.ids},
        noise_floor=sorted(m for m, s in scores.items() if abs(s) < noise_floor),
        bma=bma, settings={"n_bma": int(n_bma), "noise_floor": noise_floor},
    )


def plausibility_select(plaus: PlausibilityTable) -> SelectionReport:
    """Highest posterior plausibility; exact ties go to the smaller id."""
    items = {m: plaus[m] for m in plaus.ids}
    winner = min(items.items(), key=lambda it: (-it[1], it[0]))[0]
    return SelectionReport("plausibility", winner, dict(items), dict(items))


def evidence_decomposition(post: PosteriorEnsemble, prior: PriorSpec, log_likelihood=None,
                           n_prior: Optional[int] = None, seed=0) -> dict:
    """Split the log evidence into data fit and complexity.

    Returns the posterior mean log-likelihood, the nearest-neighbour estimate
    of ``KL(posterior || prior)`` and their difference. Posterior rows that
    repeat (resampling ties) enter the divergence estimate once.
    """
    if post.log_likelihood is not None:
        log_l = np.asarray(post.log_likelihood, dtype=float)
    elif log_likelihood is not None:
        log_l = np.asarray(log_likelihood(post.samples), dtype=float)
    else:
        raise DomainError("need stored or computable log-likelihood values")
    fit = float(np.mean(log_l))
    unique = np.unique(post.samples, axis=0)
    rng = np.random.default_rng(seed)
    prior_draws = prior.sample(rng, n_prior or len(post))
    if unique.shape[0] < 2:
        complexity = 0.0
    else:
        complexity = knn_kl_divergence(unique, prior_draws, int(rng.integers(2 ** 31)))
    return {
        "expected_log_likelihood": fit,
        "kl_posterior_prior": complexity,
        "difference": fit - complexity,
        "log_evidence": post.log_evidence,
    }


def risk_ratio(post_m1: PosteriorEnsemble, model_m1: ModelSpec, predictive_m2: PredictiveEnsemble,
               predictive_m1: PredictiveEnsemble, n_theta: int, seed, cloud_size: int = 2000,
               cfg: IntegratorConfig = IntegratorConfig(), ic: OscillatorState = OscillatorState(),
               noise: str = "A") -> dict:
    """Predictive risk ``R(M1 || M2)`` estimated over posterior draws of ``M1``.

    For each of ``n_theta`` draws the per-parameter QoI law is lognormal
    around the deterministic QoI with the calibrated noise level (a point
    mass when that level is zero), represented by ``cloud_size`` samples.
    ``risk_m2`` is the mean KL to ``M2``'s predictive (the cost of reporting
    ``M2`` when the truth lies in ``M1``), ``risk_m1`` the mean KL to
    ``M1``'s own predictive (the cost of not knowing the parameters), and
    ``risk`` their difference.
    """
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, len(post_m1), size=n_theta)
    params = {n: post_m1.samples[rows, post_m1.names.index(n)] for n in model_m1.parameter_names}
    res = integrate_batch(model_m1.spring, model_m1.forcing, params, ic, cfg)
    sigma = qoi_noise_std(post_m1, rows, noise)
    k2, k1 = [], []
    for i in range(n_theta):
        if res.diverged[i]:
            continue
        cloud = PredictiveEnsemble(res.v_max[i] * np.exp(sigma[i] * rng.standard_normal(cloud_size)))
        s = int(rng.integers(2 ** 31))
        k2.append(kl_between_predictives(cloud, predictive_m2, s))
        k1.append(kl_between_predictives(cloud, predictive_m1, s))
    if not k1:
        raise DegenerateError("every posterior draw diverged")
    risk_m2, risk_m1 = float(np.mean(k2)), float(np.mean(k1))
    return {"risk_m2": risk_m2, "risk_m1": risk_m1, "risk": risk_m2 - risk_m1, "n_theta": len(k1)}
