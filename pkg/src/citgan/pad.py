"""Reference PAD classifier, TDR at fixed FDR, and the experiment runner."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifiers import ClassifierConfig, SmallCNN, predict_proba, train_classifier
from .data import ConfigError, DomainRegistry, ImageSample, stack_pixels
from .networks import CITGAN, ContractError
from .translate import BONAFIDE, ExperimentSet, build_experiment_set

FDR_TARGETS = (0.001, 0.002, 0.01)
RESULTS_HEADER = ["experiment", "classifier", "tdr_at_0.1", "tdr_at_0.2", "tdr_at_1.0"]


@dataclass
class ScoreSet:
    """Classifier scores; higher means more PA-like."""

    bonafide_scores: np.ndarray
    pa_scores: np.ndarray

    def __post_init__(self):
        self.bonafide_scores = np.asarray(self.bonafide_scores, dtype=np.float64).ravel()
        self.pa_scores = np.asarray(self.pa_scores, dtype=np.float64).ravel()
        if self.bonafide_scores.size == 0 or self.pa_scores.size == 0:
            raise ValueError("both bonafide and PA score lists must be nonempty")
        if not (np.isfinite(self.bonafide_scores).all() and np.isfinite(self.pa_scores).all()):
            raise ValueError("scores must be finite")


def _thresholds(scores: ScoreSet) -> np.ndarray:
    return np.append(np.unique(np.concatenate([scores.bonafide_scores, scores.pa_scores])), np.inf)


def tdr_at_fdr(scores: ScoreSet, fdr_targets: Sequence[float] = FDR_TARGETS) -> list[float]:
    """TDR at each FDR target.

    The threshold is the smallest candidate t (an observed score, or +inf)
    with fraction(bonafide >= t) <= f; TDR is fraction(PA >= t).
    """
    b = np.sort(scores.bonafide_scores)
    p = np.sort(scores.pa_scores)
    cand = _thresholds(scores)
    b_above = b.size - np.searchsorted(b, cand, side="left")
    fdr = b_above / b.size
    out = []
    for f in fdr_targets:
        if not 0.0 <= f <= 1.0:
            raise ContractError(f"FDR target {f} outside [0, 1]")
        t = cand[np.argmax(fdr <= f)]  # the +inf candidate always qualifies
        out.append(float((p.size - np.searchsorted(p, t, side="left")) / p.size))
    return out


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """(FDR, TDR) at every candidate threshold, ordered by increasing FDR."""
    b = np.sort(scores.bonafide_scores)
    p = np.sort(scores.pa_scores)
    cand = _thresholds(scores)[::-1]
    fdr = (b.size - np.searchsorted(b, cand, side="left")) / b.size
    tdr = (p.size - np.searchsorted(p, cand, side="left")) / p.size
    return list(zip(fdr.tolist(), tdr.tolist()))


@dataclass
class PadResult:
    experiment_id: int
    classifier_id: str
    tdr: dict[float, float]
    roc: list[tuple[float, float]] = field(repr=False, default_factory=list)

    def row(self) -> list[str]:
        return [str(self.experiment_id), self.classifier_id] + [f"{self.tdr[f]:.6f}" for f in FDR_TARGETS]


def pad_labels(samples: Sequence[ImageSample]) -> np.ndarray:
    return np.array([0 if s.pa_class == BONAFIDE else 1 for s in samples], dtype=np.int64)


def train_pad_classifier(samples: Sequence[ImageSample], cfg: ClassifierConfig | None = None) -> SmallCNN:
    """Binary bonafide-vs-PA CNN; the sigmoid output is the PA score."""
    cfg = replace(cfg or ClassifierConfig(), num_classes=2)
    y = pad_labels(samples)
    if not (y == 0).any():
        raise ConfigError("training set has no bonafide samples")
    if not (y == 1).any():
        raise ConfigError("training set has no PA samples")
    px = stack_pixels(samples)
    cfg = replace(cfg, resolution=px.shape[1], channels=px.shape[3])
    return train_classifier(px, y, cfg)


def score_samples(model: SmallCNN, samples: Sequence[ImageSample]) -> ScoreSet:
    s = predict_proba(model, stack_pixels(samples))
    y = pad_labels(samples)
    return ScoreSet(s[y == 0], s[y == 1])


def evaluate(experiment_id: int, model: SmallCNN, test: Sequence[ImageSample], classifier_id: str = "smallcnn") -> PadResult:
    scores = score_samples(model, test)
    return PadResult(experiment_id, classifier_id, dict(zip(FDR_TARGETS, tdr_at_fdr(scores, FDR_TARGETS))),
                     roc_points(scores))


def run_experiment(experiment_id: int, samples: Sequence[ImageSample], registry: DomainRegistry,
                   gan: CITGAN | None = None, cfg: ClassifierConfig | None = None, seed: int = 0,
                   target: int | None = None) -> tuple[PadResult, ExperimentSet]:
    """Compose the experiment's training set, train the reference classifier, score the fixed test set."""
    cfg = cfg or ClassifierConfig()
    exp = build_experiment_set(experiment_id, samples, registry, gan, seed=seed, target=target)
    if not exp.test:
        raise ConfigError("dataset has no test-split samples")
    model = train_pad_classifier(exp.train, replace(cfg, seed=cfg.seed + seed))
    return evaluate(experiment_id, model, exp.test), exp


def write_results(path, results: Sequence[PadResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in results:
            w.writerow(r.row())


def write_roc(path, result: PadResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fdr", "tdr"])
        for f, t in result.roc:
            w.writerow([f"{f:.6f}", f"{t:.6f}"])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def collect_results(runs_dir) -> list[dict]:
    """All rows of every ``pad_results.csv`` below ``runs_dir``, sorted by experiment."""
    rows = []
    for p in sorted(Path(runs_dir).rglob("pad_results.csv")):
        for r in read_results(p):
            r["run"] = str(p.parent.relative_to(runs_dir))
            rows.append(r)
    return sorted(rows, key=lambda r: (int(r["experiment"]), r["run"]))
