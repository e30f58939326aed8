"""End-to-end runs of the three coupled-model selection cases."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .dynamics import IntegratorConfig, OscillatorState, integrate
from .errors import DomainError, StageError
from .inference import (
    PosteriorEnsemble,
    PredictiveEnsemble,
    TmcmcSettings,
    calibrate,
    coupled_posterior,
    propagate_predictive,
)
from .probmodel import Dataset, ModelSpec, PriorSpec, TruthConfig, generate_synthetic_data
from .selection import (
    NEGLIGIBLE,
    PlausibilityTable,
    SelectionReport,
    coupled_plausibilities,
    plausibility_select,
    posterior_plausibilities,
    predictive_select,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

_BASE = {
    "case": "custom",
    "springs": ["OLS", "OCS", "OQS"],
    "forcings": ["SED", "OLD", "OED"],
    "times_a": {"count": 10, "start": 0.5, "stop": 5.0},
    "times_b": {"count": 61, "start": 0.0, "stop": 3.0 * TWO_PI},
    "data_files": {},
    "prior_overrides": {},
    "tmcmc": {"n_pop": 2000, "target_cov": 1.0, "n_steps": 5, "beta": 0.2},
    "n_posterior": 4000,
    "n_predictive": 4000,
    "n_bma": None,
    "step": 1e-3,
    "horizon": 4.0 * TWO_PI,
    "truth_step": 1e-4,
    "free_ic": [0.5, 0.0],
    "coupled_ic": [0.0, 0.0],
    "noise_std": 0.1,
    "qoi_noise": "A",
    "seed": 2011,
    "out": "runs",
    "threads": 1,
}

CASES = {
    "1": {},
    "2": {"forcings": ["SED", "OLD"], "times_b": {"count": 7, "start": 0.0, "stop": 6.0}},
    "3": {
        "springs": ["OLS", "OCS"],
        "forcings": ["SED", "OLD"],
        "times_a": {"count": 5, "start": 0.5, "stop": 4.5},
        "times_b": {"count": 4, "start": 0.0, "stop": 6.0},
    },
}

# Keys that change where or how fast a run happens but never its results.
_EXECUTION_KEYS = ("out", "threads")

_TIMES_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "start": {"type": "number", "minimum": 0},
                "stop": {"type": "number", "minimum": 0},
            },
            "required": ["count", "start", "stop"],
            "additionalProperties": False,
        },
        {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "case": {"type": "string", "enum": ["1", "2", "3", "custom"]},
        "springs": {"type": "array", "items": {"enum": ["OLS", "OCS", "OQS"]}, "minItems": 1, "uniqueItems": True},
        "forcings": {"type": "array", "items": {"enum": ["SED", "OLD", "OED"]}, "minItems": 1, "uniqueItems": True},
        "times_a": _TIMES_SCHEMA,
        "times_b": _TIMES_SCHEMA,
        "data_files": {
            "type": "object",
            "properties": {"A": {"type": "string"}, "B": {"type": "string"}},
            "additionalProperties": False,
        },
        "prior_overrides": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "tmcmc": {
            "type": "object",
            "properties": {
                "n_pop": {"type": "integer", "minimum": 100},
                "target_cov": {"type": "number", "exclusiveMinimum": 0},
                "n_steps": {"type": "integer", "minimum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "n_posterior": {"type": "integer", "minimum": 1},
        "n_predictive": {"type": "integer", "minimum": 4},
        "n_bma": {"type": ["integer", "null"], "minimum": 2},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "truth_step": {"type": "number", "exclusiveMinimum": 0},
        "free_ic": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "coupled_ic": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "noise_std": {"type": "number", "minimum": 0},
        "qoi_noise": {"enum": ["A", "B", "combined", "none"]},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


def default_config(case: str = "1") -> dict:
    """Embedded defaults for a case, as a plain JSON-ready dict."""
    case = str(case)
    cfg = copy.deepcopy(_BASE)
    cfg.update(copy.deepcopy(CASES.get(case, {})))
    cfg["case"] = case if case in CASES else "custom"
    return cfg


@dataclass
class ScenarioConfig:
    values: dict

    def __post_init__(self):
        merged = default_config(self.values.get("case", "custom"))
        for key, val in self.values.items():
            if key == "tmcmc":
                merged["tmcmc"] = {**merged["tmcmc"], **val}
            else:
                merged[key] = val
        try:
            jsonschema.validate(merged, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise DomainError(f"invalid config at {where}: {exc.message}") from None
        self.values = merged

    @classmethod
    def for_case(cls, case, **overrides) -> "ScenarioConfig":
        return cls({"case": str(case), **overrides})

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls(json.loads(Path(path).read_text()))

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **changes) -> "ScenarioConfig":
        vals = copy.deepcopy(self.values)
        vals.update(changes)
        return ScenarioConfig(vals)

    @property
    def result_values(self) -> dict:
        return {k: v for k, v in self.values.items() if k not in _EXECUTION_KEYS}

    @property
    def settings_hash(self) -> str:
        blob = json.dumps(self.result_values, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def run_name(self) -> str:
        return f"case{self.case}_seed{self.seed}"

    def times(self, physics: str) -> np.ndarray:
        spec = self.values["times_a" if physics == "A" else "times_b"]
        if isinstance(spec, dict):
            return np.linspace(spec["start"], spec["stop"], spec["count"])
        return np.asarray(spec, dtype=float)

    def truth(self) -> TruthConfig:
        return TruthConfig(
            noise_std=self.noise_std,
            free_ic=OscillatorState(*self.free_ic),
            coupled_ic=OscillatorState(*self.coupled_ic),
        )

    def tmcmc_settings(self, seed: int) -> TmcmcSettings:
        return TmcmcSettings(seed=seed, **self.tmcmc)

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.step, self.horizon)

    def models(self):
        springs = [ModelSpec(spring=s) for s in self.springs]
        forcings = [ModelSpec(forcing=f) for f in self.forcings]
        return springs, forcings, [ModelSpec(s.spring, f.forcing) for s in springs for f in forcings]


def substream_seed(master: int, name: str) -> int:
    """Seed of the named sub-stream derived from the master seed."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RunArtifacts:
    config: ScenarioConfig
    datasets: dict
    posteriors: dict
    coupled: dict
    predictives: dict
    plaus_a: PlausibilityTable
    plaus_b: PlausibilityTable
    plaus: PlausibilityTable
    plausibility_report: SelectionReport
    predictive_report: SelectionReport
    truth_qoi: float
    run_dir: Optional[Path] = None
    extras: dict = field(default_factory=dict)


def truth_qoi(cfg: ScenarioConfig, truth: Optional[TruthConfig] = None) -> float:
    """Max ``|v|`` of the truth system on a refined grid."""
    truth = truth or cfg.truth()
    traj = integrate(truth.spring, truth.forcing, truth.params, truth.coupled_ic,
                     IntegratorConfig(cfg.truth_step, cfg.horizon))
    return float(np.max(np.abs(traj.v)))


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class _Stage:
    """Re-raise failures as :class:`StageError` tagged with stage and model."""

    def __init__(self, name: str):
        self.name = name

    def wrap(self, fn, model_id):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(self.name, model_id, exc) from exc


def run_scenario(cfg: ScenarioConfig, persist: bool = True) -> RunArtifacts:
    """Data -> calibration -> plausibilities -> predictives -> both selections."""
    seed = cfg.seed
    springs, forcings, pairs = cfg.models()
    truth = cfg.truth()
    run_dir = Path(cfg.out) / cfg.run_name if persist else None
    partial = {"config": cfg, "datasets": {}, "posteriors": {}, "predictives": {}}

    try:
        stage = _Stage("data")
        datasets = {}
        for phys in ("A", "B"):
            src = cfg.data_files.get(phys)
            if src:
                datasets[phys] = stage.wrap(lambda: Dataset.from_csv(src, phys), phys)
            else:
                datasets[phys] = stage.wrap(
                    lambda: generate_synthetic_data(truth, phys, cfg.times(phys), substream_seed(seed, f"data/{phys}"),
                                                    step=cfg.step), phys)
        partial["datasets"] = datasets

        stage = _Stage("calibration")
        singles = springs + forcings

        def fit(model):
            prior = PriorSpec.for_model(model, cfg.prior_overrides)
            settings = cfg.tmcmc_settings(substream_seed(seed, f"sampler/{model.id}"))
            return stage.wrap(lambda: calibrate(model, datasets[model.physics], prior, settings, truth.free_ic, cfg.step),
                              model.id)

        posteriors = dict(zip([m.id for m in singles], _map(fit, singles, cfg.threads)))
        partial["posteriors"] = posteriors

        plaus_a = posterior_plausibilities([posteriors[m.id].log_evidence for m in springs], ids=[m.id for m in springs])
        plaus_b = posterior_plausibilities([posteriors[m.id].log_evidence for m in forcings], ids=[m.id for m in forcings])
        plaus = coupled_plausibilities(plaus_a, plaus_b)

        stage = _Stage("propagation")
        integ = cfg.integrator()

        def predict(pair):
            joint = coupled_posterior(posteriors[pair.spring.value], posteriors[pair.forcing.value], cfg.n_posterior,
                                      substream_seed(seed, f"coupled/{pair.id}"))
            # Models outside the mixture only contribute a KL entry; their
            # surviving draws are kept however many diverge.
            skip = 0.1 if plaus[pair.id] > NEGLIGIBLE else 1.0
            pred = stage.wrap(lambda: propagate_predictive(joint, pair, cfg.n_predictive,
                                                           substream_seed(seed, f"propagation/{pair.id}"),
                                                           integ, truth.coupled_ic, cfg.qoi_noise, skip), pair.id)
            return joint, pred

        results = _map(predict, pairs, cfg.threads)
        coupled = {p.id: r[0] for p, r in zip(pairs, results)}
        predictives = {p.id: r[1] for p, r in zip(pairs, results)}
        partial["predictives"] = predictives

        stage = _Stage("selection")
        plaus_report = plausibility_select(plaus)
        pred_report = stage.wrap(lambda: predictive_select(predictives, plaus, cfg.n_bma,
                                                           substream_seed(seed, "estimator")), "all")
        q_true = truth_qoi(cfg, truth)
    except StageError:
        if run_dir is not None:
            _flush_partial(run_dir, partial)
        raise

    art = RunArtifacts(cfg, datasets, posteriors, coupled, predictives, plaus_a, plaus_b, plaus,
                       plaus_report, pred_report, q_true, run_dir)
    if persist:
        save_artifacts(art, run_dir)
    return art


def _flush_partial(run_dir: Path, partial: dict):
    run_dir.mkdir(parents=True, exist_ok=True)
    for phys, ds in partial["datasets"].items():
        ds.to_csv(run_dir / f"data_{phys}.csv")
    for mid, post in partial["posteriors"].items():
        post.to_csv(run_dir / "posteriors" / f"{mid}.csv")
    for mid, pred in partial["predictives"].items():
        _write_predictive(run_dir / "predictives" / f"{mid}.csv", pred)
    (run_dir / "config.json").write_text(json.dumps(partial["config"].values, indent=2, sort_keys=True))


def _write_predictive(path: Path, pred: PredictiveEnsemble):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("qoi\n" + "\n".join(repr(v) for v in pred.qoi_samples.tolist()) + "\n")


def _read_predictive(path: Path, model_id: str) -> PredictiveEnsemble:
    return PredictiveEnsemble(np.loadtxt(path, skiprows=1, ndmin=1), model_id)


def mass_near(pred: PredictiveEnsemble, value: float, rel: float = 0.1) -> float:
    """Fraction of QoI samples within ``value * (1 +- rel)``."""
    q = pred.qoi_samples
    return float(np.mean(np.abs(q - value) <= rel * value))


def report_dict(art: RunArtifacts) -> dict:
    """Machine-readable summary; independent of output location and thread count."""
    models = {}
    for mid, pred in art.predictives.items():
        q = pred.qoi_samples
        models[mid] = {
            "plausibility": art.plaus[mid],
            "kl_to_bma": art.predictive_report.scores[mid],
            "log_evidence": float(art.plaus.log_evidence[art.plaus.ids.index(mid)]),
            "qoi_mean": float(q.mean()),
            "qoi_std": float(q.std()),
            "qoi_quantiles": [float(v) for v in np.quantile(q, [0.05, 0.5, 0.95])],
            "mass_near_truth": mass_near(pred, art.truth_qoi),
            "n_samples": int(q.size),
            "n_skipped": int(pred.n_skipped),
        }
    singles = {}
    for mid, post in art.posteriors.items():
        singles[mid] = {
            "log_evidence": float(post.log_evidence),
            "n_stages": int(post.schedule.size - 1),
            "mean_acceptance": float(post.acceptance.mean()) if post.acceptance.size else None,
            "posterior_mean": dict(zip(post.names, [float(v) for v in post.samples.mean(axis=0)])),
        }
    return {
        "case": art.config.case,
        "seed": art.config.seed,
        "settings_hash": art.config.settings_hash,
        "config": art.config.result_values,
        "truth_qoi": art.truth_qoi,
        "plausibility_a": art.plaus_a.to_dict(),
        "plausibility_b": art.plaus_b.to_dict(),
        "plausibility_coupled": art.plaus.to_dict(),
        "selection": {
            "plausibility": art.plausibility_report.to_dict(),
            "predictive": art.predictive_report.to_dict(),
        },
        "single_physics": singles,
        "coupled_models": models,
    }


def save_artifacts(art: RunArtifacts, run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(art.config.values, indent=2, sort_keys=True))
    for phys, ds in art.datasets.items():
        ds.to_csv(run_dir / f"data_{phys}.csv")
    for mid, post in art.posteriors.items():
        post.to_csv(run_dir / "posteriors" / f"{mid}.csv")
    for mid, pred in art.predictives.items():
        _write_predictive(run_dir / "predictives" / f"{mid}.csv", pred)
    _write_predictive(run_dir / "predictives" / "BMA.csv", art.predictive_report.bma)
    art.run_dir = run_dir
    from .report import emit_report

    emit_report(art, ("json", "table", "plot"), run_dir)
    return run_dir


def load_artifacts(run_dir) -> RunArtifacts:
    """Rebuild artifacts from a persisted run directory."""
    run_dir = Path(run_dir)
    report = json.loads(next(run_dir.glob("report_*.json")).read_text())
    cfg = ScenarioConfig(json.loads((run_dir / "config.json").read_text()))
    datasets = {p: Dataset.from_csv(run_dir / f"data_{p}.csv") for p in ("A", "B")}
    posteriors = {p.stem: PosteriorEnsemble.from_csv(p) for p in sorted((run_dir / "posteriors").glob("*.csv"))}
    plaus = PlausibilityTable.from_dict(report["plausibility_coupled"])
    predictives = {m: _read_predictive(run_dir / "predictives" / f"{m}.csv", m) for m in plaus.ids}
    for m, pred in predictives.items():
        pred.n_skipped = report["coupled_models"][m]["n_skipped"]
    pred_report = SelectionReport.from_dict(report["selection"]["predictive"])
    pred_report.bma = _read_predictive(run_dir / "predictives" / "BMA.csv", "BMA")
    return RunArtifacts(
        cfg, datasets, posteriors, {}, predictives,
        PlausibilityTable.from_dict(report["plausibility_a"]), PlausibilityTable.from_dict(report["plausibility_b"]),
        plaus, SelectionReport.from_dict(report["selection"]["plausibility"]), pred_report,
        report["truth_qoi"], run_dir,
    )
