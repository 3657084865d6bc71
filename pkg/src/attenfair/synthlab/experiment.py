"""Seeded baseline-vs-attention experiments on the synthetic lesion data."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import fairness
from .._io import atomic_write
from .data import SynthSample, SynthSpec, as_arrays, generate
from .model import MODES, AttENClassifier

logger = logging.getLogger(__name__)

# per-group and gap metrics summarized per mode
GROUP_METRICS = ("precision", "recall", "f1")
SUMMARY_METRICS = ("accuracy", "macro_f1", "group_mean_f1") + fairness.FC_METRICS


class ExperimentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Training schedule, modes, seeds and the dataset recipe.

    ``data`` holds :class:`SynthSpec` fields; its ``seed`` is replaced by
    each experiment seed. ``n_jobs`` > 1 trains seeds on a thread pool.
    """

    modes: Tuple[str, ...] = ("baseline", "atten_full")
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    alphas: Optional[Tuple[float, ...]] = None
    temperature: float = 100.0
    channels: Tuple[int, ...] = (8, 16)
    reduction_ratio: int = 8
    spatial_kernel: int = 7
    select_best: bool = True
    fate_lambda: float = 1.0
    fate_accuracy: str = "macro_f1"
    n_jobs: int = 1
    data: Dict[str, object] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.modes or len(set(self.modes)) != len(self.modes):
            raise ExperimentConfigError("modes must be a non-empty list without repeats")
        for m in self.modes:
            if m not in MODES:
                raise ExperimentConfigError(f"unknown mode {m!r}; expected one of {MODES}")
        if "baseline" not in self.modes or len(self.modes) < 2:
            raise ExperimentConfigError("modes must include baseline and at least one attention mode")
        if not self.seeds or any(int(s) < 0 for s in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ExperimentConfigError("seeds must be distinct non-negative integers")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ExperimentConfigError("need epochs >= 1, batch_size >= 1, learning_rate >= 0")
        if self.temperature <= 0:
            raise ExperimentConfigError("temperature must be positive")
        if self.alphas is not None and len(self.alphas) != len(self.channels):
            raise ExperimentConfigError(f"{len(self.alphas)} alphas for {len(self.channels)} blocks")
        if self.fate_accuracy not in fairness.ACC_AGGREGATIONS:
            raise ExperimentConfigError(f"fate_accuracy must be one of {fairness.ACC_AGGREGATIONS}")
        if self.n_jobs < 1:
            raise ExperimentConfigError("n_jobs must be >= 1")
        known = {f.name for f in fields(SynthSpec)}
        unknown = sorted(set(self.data) - known)
        if unknown:
            raise ExperimentConfigError(f"unknown data fields {unknown}")
        self.spec_for(self.seeds[0]).validate()

    def spec_for(self, seed: int) -> SynthSpec:
        return SynthSpec(**{**self.data, "seed": int(seed)})

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ExperimentConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ExperimentConfigError(f"unknown config keys {unknown}")
        kw = dict(doc)
        for key in ("modes", "seeds", "alphas", "channels"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if "seeds" in kw:
            kw["seeds"] = tuple(int(s) for s in kw["seeds"])
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ExperimentConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ExperimentConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("modes", "seeds", "alphas", "channels"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


def make_model(cfg: ExperimentConfig, mode: str, seed: int) -> AttENClassifier:
    return AttENClassifier(
        mode=mode,
        channels=tuple(cfg.channels),
        reduction_ratio=cfg.reduction_ratio,
        spatial_kernel=cfg.spatial_kernel,
        alphas=None if cfg.alphas is None else tuple(cfg.alphas),
        temperature=cfg.temperature,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        select_best=cfg.select_best,
        random_state=int(seed),
    )


def train(model: AttENClassifier, data: Tuple[List[SynthSample], List[SynthSample]]) -> AttENClassifier:
    """Fit ``model`` on (train, val) sample lists.

    Only images, labels and masks reach the estimator; the sensitive
    attribute is never read here.
    """
    train_s, val_s = data
    if not train_s:
        raise ValueError("empty training split")
    X, y, M = as_arrays(train_s)
    if val_s:
        Xv, yv, Mv = as_arrays(val_s)
    else:
        Xv = yv = Mv = None
    return model.fit(X, y, M, Xv, yv, Mv)


def evaluate(model: AttENClassifier, split: List[SynthSample], n_classes: int):
    """Predict ``split`` and score it against the true tone groups.

    Returns:
        (records, report): one :class:`PredictionRecord` per sample and the
        :class:`FairnessReport` over them.
    """
    if not split:
        raise ValueError("empty split")
    X, _, M = as_arrays(split)
    pred = model.predict(X, M)
    records = [
        fairness.PredictionRecord(s.sample_id, s.label, int(p), int(s.sensitive)) for s, p in zip(split, pred)
    ]
    return records, fairness.evaluate(fairness.tally(records, n_classes))


@dataclass
class RunResult:
    seed: int
    mode: str
    report: dict
    records: List[fairness.PredictionRecord]
    best_epoch: int
    loss_trace: List[float]
    val_f1_trace: List[float]


def run_seed(cfg: ExperimentConfig, seed: int) -> List[RunResult]:
    spec = cfg.spec_for(seed)
    train_s, val_s, test_s = generate(spec)
    out = []
    for mode in cfg.modes:
        model = train(make_model(cfg, mode, seed), (train_s, val_s))
        records, report = evaluate(model, test_s, spec.num_classes)
        logger.info("seed %d %s: macro_f1=%.4f eodd=%.4f", seed, mode, float(report.macro_f1), float(report.eodd))
        out.append(
            RunResult(
                seed,
                mode,
                report.to_dict(),
                records,
                int(model.best_epoch_),
                [float(v) for v in model.loss_trace_],
                [float(v) for v in model.val_f1_trace_],
            )
        )
    return out


def _fate_or_none(base: dict, mitig: dict, metric: str, lam: float, aggregation: str) -> Optional[float]:
    try:
        return fairness.fate_from_reports(base, mitig, metric, lam, aggregation)
    except fairness.FairnessError:
        return None


def _mean_std(values: Sequence[Optional[float]]) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(vals)}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: List[RunResult]

    def run(self, mode: str, seed: int) -> RunResult:
        for r in self.runs:
            if r.mode == mode and r.seed == seed:
                return r
        raise KeyError((mode, seed))

    def per_seed(self, mode: str, metric: str) -> List[float]:
        """Metric of ``mode`` for each seed, in seed order."""
        return [self.run(mode, s).report[metric] for s in sorted(self.config.seeds)]

    def fate_values(self, mode: str, seed: int) -> Dict[str, Optional[float]]:
        base = self.run("baseline", seed).report
        mitig = self.run(mode, seed).report
        cfg = self.config
        return {m: _fate_or_none(base, mitig, m, cfg.fate_lambda, cfg.fate_accuracy) for m in fairness.FC_METRICS}

    def summary(self) -> Dict[str, dict]:
        seeds = sorted(self.config.seeds)
        out = {}
        for mode in self.config.modes:
            reps = [self.run(mode, s).report for s in seeds]
            entry = {m: _mean_std([r[m] for r in reps]) for m in SUMMARY_METRICS}
            entry["groups"] = {
                a: {m: _mean_std([r["groups"][a][m] for r in reps]) for m in GROUP_METRICS} for a in ("0", "1")
            }
            fates = [self.fate_values(mode, s) for s in seeds]
            entry["fate"] = {m: _mean_std([f[m] for f in fates]) for m in fairness.FC_METRICS}
            out[mode] = entry
        return out

    def to_dict(self) -> dict:
        seeds = sorted(self.config.seeds)
        return {
            "config": self.config.to_dict(),
            "summary": self.summary(),
            "runs": [
                {
                    "seed": s,
                    "mode": mode,
                    "best_epoch": self.run(mode, s).best_epoch,
                    "report": self.run(mode, s).report,
                    "fate": self.fate_values(mode, s),
                }
                for s in seeds
                for mode in self.config.modes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_markdown(self) -> str:
        """Per-mode mean±std table: one row per tone group, gaps on the first row."""
        def cell(ms, digits=4):
            if ms["mean"] is None:
                return "-"
            return f"{ms['mean']:.{digits}f}±{ms['std']:.{digits}f}"

        summ = self.summary()
        head = ["Method", "Group", "Precision", "Recall", "F1-score"]
        head += [f"{m.capitalize()} / FATE" for m in fairness.FC_METRICS]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for mode in self.config.modes:
            e = summ[mode]
            for i, a in enumerate(("1", "0")):
                g = e["groups"][a]
                cells = [mode if i == 0 else "", a] + [cell(g[m]) for m in GROUP_METRICS]
                for m in fairness.FC_METRICS:
                    cells.append("" if i else f"{cell(e[m])} / {cell(e['fate'][m])}")
                lines.append("| " + " | ".join(cells) + " |")
        n = len(self.config.seeds)
        lines.append("")
        lines.append(f"Mean±std over {n} seeds on the test split; FATE is against baseline with "
                     f"λ={self.config.fate_lambda:g} on {self.config.fate_accuracy}.")
        return "\n".join(lines) + "\n"

    def manifest(self) -> dict:
        seeds = sorted(self.config.seeds)
        return {
            "seeds": [
                {
                    "seed": s,
                    "data": self.config.spec_for(s).to_dict(),
                    "runs": {
                        mode: {
                            "best_epoch": self.run(mode, s).best_epoch,
                            "loss_trace": self.run(mode, s).loss_trace,
                            "val_macro_f1_trace": self.run(mode, s).val_f1_trace,
                        }
                        for mode in self.config.modes
                    },
                }
                for s in seeds
            ]
        }

    def write(self, out_dir: str) -> List[str]:
        """Write reports, tables, prediction CSVs and the seed manifest."""
        os.makedirs(out_dir, exist_ok=True)
        pred_dir = os.path.join(out_dir, "predictions")
        os.makedirs(pred_dir, exist_ok=True)
        written = []

        def put(rel, text):
            path = os.path.join(out_dir, rel)
            atomic_write(path, text)
            written.append(path)

        put("report.json", self.to_json())
        put("report.md", self.to_markdown())
        put("manifest.json", json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        for mode in self.config.modes:
            per_mode = {str(s): self.run(mode, s).report for s in sorted(self.config.seeds)}
            put(f"{mode}.json", json.dumps(per_mode, indent=2, sort_keys=True) + "\n")
            for s in sorted(self.config.seeds):
                put(os.path.join("predictions", f"{mode}_seed{s}.csv"),
                    fairness.write_predictions_csv(self.run(mode, s).records))
        return written


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train every mode on every seed and collect test-split reports."""
    cfg.validate()
    seeds = sorted(int(s) for s in cfg.seeds)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            per_seed = list(pool.map(lambda s: run_seed(cfg, s), seeds))
    else:
        per_seed = [run_seed(cfg, s) for s in seeds]
    runs = sorted((r for rs in per_seed for r in rs), key=lambda r: (r.seed, cfg.modes.index(r.mode)))
    return ExperimentResult(cfg, runs)
