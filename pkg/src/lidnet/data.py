"""Label set, manifests, confusion matrices and per-class metric reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DataError(ValueError):
    pass


class UnknownLabelError(DataError):
    pass


# ISO 639-3 code, language, genus, family
LANGUAGES = (
    ("kab", "Kabyle", "Berber", "Afro-Asiatic"),
    ("ind", "Indonesian", "Malayo-Sumbawan", "Austronesian"),
    ("sun", "Sundanese", "Malayo-Sumbawan", "Austronesian"),
    ("jav", "Javanese", "Javanese", "Austronesian"),
    ("eus", "Euskara", "Basque", "Basque"),
    ("tam", "Tamil", "Southern Dravidian", "Dravidian"),
    ("kan", "Kannada", "Southern Dravidian", "Dravidian"),
    ("tel", "Telugu", "South-Central Dravidian", "Dravidian"),
    ("hin", "Hindi", "Indic", "Indo-European"),
    ("por", "Portuguese", "Romance", "Indo-European"),
    ("rus", "Russian", "Slavic", "Indo-European"),
    ("eng", "English", "Germanic", "Indo-European"),
    ("mar", "Marathi", "Indic", "Indo-European"),
    ("tha", "Thai", "Kam-Tai", "Tai-Kadai"),
    ("iba", "Iban", "Malayo-Sumbawan", "Austronesian"),
    ("cnh", "Chin, Hakha", "Gur", "Niger-Congo"),
)


@dataclass(frozen=True)
class LabelSet:
    """Ordered class codes; position in ``codes`` is the class index."""

    codes: tuple
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.codes:
            raise DataError("label set is empty")
        if len(set(self.codes)) != len(self.codes):
            raise DataError(f"duplicate codes in label set: {self.codes}")

    @classmethod
    def default(cls) -> "LabelSet":
        return cls(tuple(r[0] for r in LANGUAGES),
                   {r[0]: {"name": r[1], "genus": r[2], "family": r[3]} for r in LANGUAGES})

    @classmethod
    def from_codes(cls, codes: Sequence[str]) -> "LabelSet":
        known = cls.default().info
        return cls(tuple(codes), {c: known[c] for c in codes if c in known})

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code) -> bool:
        return code in self.codes

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise UnknownLabelError(f"unknown label {code!r}") from None


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    line: int = 0


def load_manifest(path, label_set: LabelSet) -> list:
    """Parse ``<path>\\t<code>`` lines; blank and ``#`` lines are skipped.

    Relative paths are resolved against the manifest's directory.
    """
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected '<path>\\t<label>', got {line!r}")
            src, label = parts[0], parts[1].strip()
            if label not in label_set:
                raise UnknownLabelError(f"{path}:{lineno}: unknown label {label!r}")
            p = Path(src)
            entries.append(ManifestEntry(str(p if p.is_absolute() else base / p), label, lineno))
    return entries


def write_manifest(path, entries: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, label in entries:
            fh.write(f"{src}\t{label}\n")


@dataclass
class ConfusionMatrix:
    """Counts with rows = true label, columns = predicted label."""

    labels: LabelSet
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.labels.codes != self.labels.codes:
            raise DataError("cannot merge confusion matrices over different label sets")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


def build_confusion(pairs: Iterable[tuple], label_set: LabelSet) -> ConfusionMatrix:
    counts = np.zeros((len(label_set), len(label_set)), dtype=np.int64)
    for true, pred in pairs:
        counts[label_set.index(true), label_set.index(pred)] += 1
    return ConfusionMatrix(label_set, counts)


@dataclass(frozen=True)
class ClassMetrics:
    language: str
    support: int
    precision: float
    recall: float
    f1: float


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def class_metrics(m: ConfusionMatrix) -> list:
    c = m.counts
    tp = np.diag(c)
    out = []
    for i, code in enumerate(m.labels.codes):
        p = _ratio(tp[i], c[:, i].sum())
        r = _ratio(tp[i], c[i].sum())
        out.append(ClassMetrics(code, int(c[i].sum()), float(p), float(r), f1_score(p, r)))
    return out


@dataclass(frozen=True)
class Report:
    classes: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float


def aggregate_report(metrics: Sequence[ClassMetrics], m: ConfusionMatrix) -> Report:
    if m.total == 0:
        raise DataError("cannot report on an empty confusion matrix")
    return Report(
        classes=list(metrics),
        accuracy=float(np.trace(m.counts)) / m.total,
        macro_precision=float(np.mean([x.precision for x in metrics])),
        macro_recall=float(np.mean([x.recall for x in metrics])),
        macro_f1=float(np.mean([x.f1 for x in metrics])),
    )


METRICS_HEADER = ("language", "support", "precision", "recall", "f1")


def write_metrics_csv(path, report: Report) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for c in report.classes:
            w.writerow([c.language, c.support, f"{c.precision:.4f}", f"{c.recall:.4f}", f"{c.f1:.4f}"])
        for name in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
            w.writerow([name, "", "", "", f"{getattr(report, name):.4f}"])


def read_metrics_csv(path) -> tuple:
    """Return ``(class rows, aggregates)`` from a metrics CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    classes, agg = [], {}
    for r in rows:
        if r["support"] == "":
            agg[r["language"]] = float(r["f1"])
        else:
            classes.append(ClassMetrics(r["language"], int(r["support"]), float(r["precision"]),
                                        float(r["recall"]), float(r["f1"])))
    return classes, agg


def write_confusion_csv(path, m: ConfusionMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *m.labels.codes])
        for code, row in zip(m.labels.codes, m.counts):
            w.writerow([code, *(int(v) for v in row)])


def read_confusion_csv(path, label_set: Optional[LabelSet] = None) -> ConfusionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    codes = tuple(rows[0][1:])
    if [r[0] for r in rows[1:]] != list(codes):
        raise DataError(f"{path}: row labels do not match column labels")
    labels = label_set or LabelSet.from_codes(codes)
    return ConfusionMatrix(labels, np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64))


def render_confusion_text(m: ConfusionMatrix) -> str:
    """Fixed-width count grid, rows true, columns predicted."""
    width = max(4, len(str(int(m.counts.max(initial=0)))) + 1)
    lines = ["true\\pred " + "".join(c.rjust(width) for c in m.labels.codes)]
    for code, row in zip(m.labels.codes, m.counts):
        lines.append(code.ljust(10) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines) + "\n"
