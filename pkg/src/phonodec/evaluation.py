"""Metrics, dataset splits, and the experiment protocols.

Percentages in reports are rounded half-up to two decimals. Metric cells
with a zero denominator report 0 and carry an "undefined" flag instead of
aborting a long experiment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

import numpy as np

from .covariance import EegTrial
from .exceptions import ShapeError, ValidationError
from .labels import TOKEN_INDEX, TOKEN_ORDER
from .pipeline import PipelineConfig, PipelineModel, predict_tokens, \
    task_probabilities, train_pipeline, trial_features


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    kappa: float
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "specificity": self.specificity,
            "f1": self.f1, "kappa": self.kappa,
            "undefined": list(self.undefined),
        }


@dataclass
class SplitSpec:
    kind: str = "random-ratio"  # or "leave-one-subject-out"
    ratios: tuple[float, ...] = (0.8, 0.1, 0.1)
    seed: int = 0
    held_out_subject: str | None = None

    def __post_init__(self):
        if any(r < 0 for r in self.ratios) or sum(self.ratios) > 1.0 + 1e-9:
            raise ValidationError(f"ratios must be nonnegative and sum <= 1: {self.ratios}")


def percent(value: float) -> str:
    """Fraction -> percent string, two decimals, half-up."""
    return str(Decimal(repr(value * 100.0)).quantize(Decimal("0.01"), ROUND_HALF_UP))


def confusion(true_labels, predicted_labels, k: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ShapeError(f"label sequences differ in length: {t.shape} vs {p.shape}")
    if t.size and (max(t.max(), p.max()) >= k or min(t.min(), p.min()) < 0):
        raise ValidationError(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def cohen_kappa(cm: np.ndarray) -> tuple[float, bool]:
    """(kappa, defined). Expected agreement from marginal products."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        return 0.0, False
    po = np.trace(cm) / total
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (total * total)
    if pe >= 1.0:
        # degenerate marginals: all mass in one cell row/column
        return (1.0, True) if po == 1.0 else (0.0, False)
    return float((po - pe) / (1.0 - pe)), True


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, False
    return num / den, True


def binary_metrics(cm: np.ndarray) -> Metrics:
    """Class 1 is positive: cm[1,1]=TP, cm[0,0]=TN, cm[0,1]=FP, cm[1,0]=FN."""
    cm = np.asarray(cm)
    if cm.shape != (2, 2):
        raise ShapeError(f"expected a 2x2 confusion matrix, got {cm.shape}")
    total = int(cm.sum())
    if total == 0:
        raise ValidationError("empty confusion matrix")
    tn, fp, fn, tp = int(cm[0, 0]), int(cm[0, 1]), int(cm[1, 0]), int(cm[1, 1])
    undefined = []
    accuracy = (tp + tn) / total
    precision, ok = _ratio(tp, tp + fp)
    if not ok:
        undefined.append("precision")
    recall, ok = _ratio(tp, tp + fn)
    if not ok:
        undefined.append("recall")
    specificity, ok = _ratio(tn, tn + fp)
    if not ok:
        undefined.append("specificity")
    f1, ok = _ratio(2 * precision * recall, precision + recall)
    if not ok:
        undefined.append("f1")
    kappa, ok = cohen_kappa(cm)
    if not ok:
        undefined.append("kappa")
    return Metrics(accuracy, precision, recall, specificity, f1, kappa,
                   tuple(undefined))


@dataclass
class MulticlassSummary:
    per_class: list[Metrics]
    macro: Metrics
    accuracy: float
    kappa: float

    def to_dict(self) -> dict:
        return {
            "per_class": [m.to_dict() for m in self.per_class],
            "macro": self.macro.to_dict(),
            "accuracy": self.accuracy,
            "kappa": self.kappa,
        }


def multiclass_summary(cm: np.ndarray) -> MulticlassSummary:
    """One-vs-rest metrics per class plus unweighted macro averages."""
    cm = np.asarray(cm)
    k = cm.shape[0]
    if cm.ndim != 2 or cm.shape[1] != k or k < 2:
        raise ShapeError(f"expected K x K matrix with K >= 2, got {cm.shape}")
    total = int(cm.sum())
    per_class: list[Metrics] = []
    for cls in range(k):
        tp = int(cm[cls, cls])
        fn = int(cm[cls].sum()) - tp
        fp = int(cm[:, cls].sum()) - tp
        tn = total - tp - fn - fp
        per_class.append(binary_metrics(np.array([[tn, fp], [fn, tp]])))
    macro = Metrics(
        accuracy=float(np.mean([m.accuracy for m in per_class])),
        precision=float(np.mean([m.precision for m in per_class])),
        recall=float(np.mean([m.recall for m in per_class])),
        specificity=float(np.mean([m.specificity for m in per_class])),
        f1=float(np.mean([m.f1 for m in per_class])),
        kappa=float(np.mean([m.kappa for m in per_class])),
    )
    accuracy = float(np.trace(cm) / total) if total else 0.0
    kappa, _ = cohen_kappa(cm)
    return MulticlassSummary(per_class, macro, accuracy, kappa)


def split(trials: list[EegTrial], spec: SplitSpec):
    """(train, dev, test) partition of the trial list."""
    if not trials:
        raise ValidationError("empty dataset")
    if spec.kind == "random-ratio":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
        order = rng.permutation(len(trials))
        n = len(trials)
        n_train = int(n * spec.ratios[0])
        n_dev = int(n * spec.ratios[1]) if len(spec.ratios) > 1 else 0
        train = [trials[i] for i in order[:n_train]]
        dev = [trials[i] for i in order[n_train:n_train + n_dev]]
        test = [trials[i] for i in order[n_train + n_dev:]]
        if not train or not test:
            raise ValidationError(
                f"ratios {spec.ratios} leave an empty split for {n} trials"
            )
        return train, dev, test
    if spec.kind == "leave-one-subject-out":
        subjects = sorted({t.subject_id for t in trials})
        if len(subjects) < 2:
            raise ValidationError("leave-one-subject-out needs at least 2 subjects")
        if spec.held_out_subject not in subjects:
            raise ValidationError(
                f"held-out subject {spec.held_out_subject!r} not in dataset"
            )
        test = [t for t in trials if t.subject_id == spec.held_out_subject]
        rest = [t for t in trials if t.subject_id != spec.held_out_subject]
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
        order = rng.permutation(len(rest))
        dev_frac = 0.0
        if len(spec.ratios) > 1 and sum(spec.ratios[:2]) > 0:
            dev_frac = spec.ratios[1] / (spec.ratios[0] + spec.ratios[1])
        n_dev = int(len(rest) * dev_frac)
        dev = [rest[i] for i in order[:n_dev]]
        train = [rest[i] for i in order[n_dev:]]
        if not train:
            raise ValidationError("leave-one-subject-out split left no training trials")
        return train, dev, test
    raise ValidationError(f"unknown split kind {spec.kind!r}")


@dataclass
class EvalReport:
    phase1: dict[str, Metrics]
    phase1_confusions: dict[str, np.ndarray]
    token_summary: MulticlassSummary
    token_confusion: np.ndarray

    @property
    def phase1_mean_accuracy(self) -> float:
        return float(np.mean([m.accuracy for m in self.phase1.values()]))

    def to_dict(self) -> dict:
        return {
            "phase1": {k: m.to_dict() for k, m in self.phase1.items()},
            "phase1_confusions": {k: c.tolist() for k, c in self.phase1_confusions.items()},
            "phase1_mean_accuracy": self.phase1_mean_accuracy,
            "token": self.token_summary.to_dict(),
            "token_confusion": self.token_confusion.tolist(),
            "token_order": [t.value for t in TOKEN_ORDER],
        }


def evaluate_pipeline(model: PipelineModel, trials: list[EegTrial]) -> EvalReport:
    """Binary metrics for every phase-1 task plus the 11-way token summary."""
    if not trials:
        raise ValidationError("no trials to evaluate")
    pred_idx, _, phon = predict_tokens(model, trials)
    truth_idx = np.asarray([TOKEN_INDEX[t.token] for t in trials])
    from .labels import PHON_ORDER, derive_phonological_labels  # local: avoids cycle

    phase1: dict[str, Metrics] = {}
    phase1_cms: dict[str, np.ndarray] = {}
    for j, cat in enumerate(model.categories):
        true_bits = np.asarray([
            derive_phonological_labels(t.token)[PHON_ORDER.index(cat)] for t in trials
        ], dtype=np.int64)
        pred_bits = (phon[:, j] >= 0.5).astype(np.int64)
        cm = confusion(true_bits, pred_bits, 2)
        phase1[cat.value] = binary_metrics(cm)
        phase1_cms[cat.value] = cm
    token_cm = confusion(truth_idx, pred_idx, len(TOKEN_ORDER))
    return EvalReport(phase1, phase1_cms, multiclass_summary(token_cm), token_cm)


@dataclass
class RatioPoint:
    train_fraction: float
    phase1_mean_accuracy: float
    phase2_accuracy: float


def ratio_sweep(trials: list[EegTrial], train_fractions, config: PipelineConfig,
                seed: int = 0) -> list[RatioPoint]:
    """Retrain the pipeline per train fraction; the remainder is halved into
    dev and test. Accuracies are measured on the test part."""
    points: list[RatioPoint] = []
    for frac in train_fractions:
        rest = (1.0 - frac) / 2.0
        spec = SplitSpec(ratios=(frac, rest, rest), seed=seed)
        train, dev, test = split(trials, spec)
        model, _ = train_pipeline(train, config, dev)
        report = evaluate_pipeline(model, test)
        points.append(RatioPoint(
            train_fraction=float(frac),
            phase1_mean_accuracy=report.phase1_mean_accuracy,
            phase2_accuracy=report.token_summary.accuracy,
        ))
    return points


@dataclass
class LosoFold:
    subject: str
    phase1_accuracy: dict[str, float]
    phase2_accuracy: float
    token_confusion: np.ndarray


@dataclass
class LosoResult:
    folds: list[LosoFold]
    mean_phase2_accuracy: float
    std_phase2_accuracy: float

    def to_dict(self) -> dict:
        return {
            "folds": [
                {
                    "subject": f.subject,
                    "phase1_accuracy": f.phase1_accuracy,
                    "phase2_accuracy": f.phase2_accuracy,
                    "token_confusion": f.token_confusion.tolist(),
                }
                for f in self.folds
            ],
            "mean_phase2_accuracy": self.mean_phase2_accuracy,
            "std_phase2_accuracy": self.std_phase2_accuracy,
            "token_order": [t.value for t in TOKEN_ORDER],
        }


def loso_protocol(trials: list[EegTrial], config: PipelineConfig,
                  seed: int = 0) -> LosoResult:
    """One train/evaluate cycle per held-out subject, in sorted subject order."""
    subjects = sorted({t.subject_id for t in trials})
    if len(subjects) < 2:
        raise ValidationError("leave-one-subject-out needs at least 2 subjects")
    folds: list[LosoFold] = []
    for subject in subjects:
        if not any(t.subject_id == subject for t in trials):
            continue
        spec = SplitSpec(kind="leave-one-subject-out", ratios=(0.9, 0.1),
                         seed=seed, held_out_subject=subject)
        train, dev, test = split(trials, spec)
        model, _ = train_pipeline(train, config, dev)
        report = evaluate_pipeline(model, test)
        folds.append(LosoFold(
            subject=subject,
            phase1_accuracy={k: m.accuracy for k, m in report.phase1.items()},
            phase2_accuracy=report.token_summary.accuracy,
            token_confusion=report.token_confusion,
        ))
    accs = [f.phase2_accuracy for f in folds]
    return LosoResult(folds, float(np.mean(accs)), float(np.std(accs)))


# ---------------------------------------------------------------------------
# report files


def write_confusion_csv(path: Path, cm: np.ndarray, labels: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + labels)
        for name, row in zip(labels, cm):
            writer.writerow([name] + [int(v) for v in row])


def write_eval_report(report: EvalReport, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "phase1_metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "accuracy", "precision", "recall",
                         "specificity", "f1", "kappa", "undefined"])
        for task, m in report.phase1.items():
            writer.writerow([task, percent(m.accuracy), percent(m.precision),
                             percent(m.recall), percent(m.specificity),
                             percent(m.f1), percent(m.kappa),
                             ";".join(m.undefined)])
    token_names = [t.value for t in TOKEN_ORDER]
    with open(out_dir / "phase2_metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "precision", "recall", "f1", "kappa"])
        for name, m in zip(token_names, report.token_summary.per_class):
            writer.writerow([name, percent(m.precision), percent(m.recall),
                             percent(m.f1), percent(m.kappa)])
        macro = report.token_summary.macro
        writer.writerow(["macro", percent(macro.precision), percent(macro.recall),
                         percent(macro.f1), percent(macro.kappa)])
        writer.writerow(["accuracy", percent(report.token_summary.accuracy), "", "", ""])
        writer.writerow(["multiclass_kappa", percent(report.token_summary.kappa), "", "", ""])
    write_confusion_csv(out_dir / "confusion_token.csv", report.token_confusion,
                        token_names)
    for task, cm in report.phase1_confusions.items():
        write_confusion_csv(out_dir / f"confusion_{task}.csv", cm,
                            ["absent", "present"])


def write_sweep_report(points: list[RatioPoint], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_fraction", "phase1_mean_accuracy", "phase2_accuracy"])
        for p in points:
            writer.writerow([p.train_fraction, percent(p.phase1_mean_accuracy),
                             percent(p.phase2_accuracy)])
    with open(out_dir / "sweep.json", "w") as fh:
        json.dump([
            {"train_fraction": p.train_fraction,
             "phase1_mean_accuracy": p.phase1_mean_accuracy,
             "phase2_accuracy": p.phase2_accuracy}
            for p in points
        ], fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_loso_report(result: LosoResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "loso.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        task_names = list(result.folds[0].phase1_accuracy) if result.folds else []
        writer.writerow(["subject", "phase2_accuracy"] + task_names)
        for f in result.folds:
            writer.writerow([f.subject, percent(f.phase2_accuracy)] +
                            [percent(f.phase1_accuracy[t]) for t in task_names])
        writer.writerow(["mean", percent(result.mean_phase2_accuracy)] +
                        [""] * len(task_names))
        writer.writerow(["std", percent(result.std_phase2_accuracy)] +
                        [""] * len(task_names))
    with open(out_dir / "loso.json", "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    token_names = [t.value for t in TOKEN_ORDER]
    for f in result.folds:
        write_confusion_csv(out_dir / f"confusion_token_{f.subject}.csv",
                            f.token_confusion, token_names)
