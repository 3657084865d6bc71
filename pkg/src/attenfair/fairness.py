"""Group fairness metrics for multi-class predictions with a binary sensitive attribute.

Records are tallied one-vs-rest per class and per group; the gap metrics
are computed in exact rational arithmetic and only turned into floats when
serialized.

Eopp0 sums the per-class absolute TNR gaps between the two groups, Eopp1
the TPR gaps, and Eodd the absolute value of the combined TPR plus FPR gap
of each class. A rate whose denominator is zero in either group drops that
class's term from the affected metric and is listed in ``skipped_classes``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CSV_HEADER = ("sample_id", "y_true", "y_pred", "sensitive")
GROUPS = (0, 1)
ACC_AGGREGATIONS = ("macro_f1", "group_mean_f1")
FC_METRICS = ("eopp0", "eopp1", "eodd")


class FairnessError(ValueError):
    """Domain error while building a report."""


class MissingGroupError(FairnessError):
    pass


class CsvSchemaError(ValueError):
    """The prediction CSV header does not match the expected columns."""


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    y_true: int
    y_pred: int
    sensitive: int


@dataclass
class GroupConfusion:
    """One-vs-rest tallies; ``counts[k, a]`` holds (tp, fp, tn, fn)."""

    n_classes: int
    counts: np.ndarray
    group_sizes: Tuple[int, int]

    def quad(self, k: int, a: int) -> Dict[str, int]:
        tp, fp, tn, fn = (int(v) for v in self.counts[k, a])
        return {"tp": tp, "fp": fp, "tn": tn, "fn": fn}

    def correct(self, a: int) -> int:
        return int(self.counts[:, a, 0].sum())


def _check_record(rec: PredictionRecord, n_classes: int) -> None:
    for name in ("y_true", "y_pred"):
        v = getattr(rec, name)
        if not 0 <= v < n_classes:
            raise FairnessError(f"record {rec.sample_id!r}: {name}={v} outside 0..{n_classes - 1}")
    if rec.sensitive not in GROUPS:
        raise FairnessError(f"record {rec.sample_id!r}: sensitive={rec.sensitive} is not 0 or 1")


def tally(records: Sequence[PredictionRecord], n_classes: int) -> GroupConfusion:
    if n_classes < 2:
        raise FairnessError("need at least two classes")
    if not records:
        raise FairnessError("no records")
    # Plain lists: per-record numpy indexing dominates on small inputs.
    pos = [[0, 0] for _ in range(n_classes)]
    predicted = [[0, 0] for _ in range(n_classes)]
    diag = [[0, 0] for _ in range(n_classes)]
    sizes = [0, 0]
    for rec in records:
        _check_record(rec, n_classes)
        a = rec.sensitive
        sizes[a] += 1
        pos[rec.y_true][a] += 1
        predicted[rec.y_pred][a] += 1
        if rec.y_true == rec.y_pred:
            diag[rec.y_true][a] += 1
    counts = [
        [
            (d, p - d, sizes[a] - t - p + d, t - d)
            for a, (d, t, p) in enumerate(zip(diag[k], pos[k], predicted[k]))
        ]
        for k in range(n_classes)
    ]
    return GroupConfusion(n_classes, np.array(counts, dtype=np.int64), (sizes[0], sizes[1]))


def _confusion_from_pairs(pair: np.ndarray) -> GroupConfusion:
    k = pair.shape[0]
    sizes = pair.sum(axis=(0, 1))
    diag = np.einsum("kka->ka", pair)
    pos = pair.sum(axis=1)  # y_true == k
    predicted = pair.sum(axis=0)  # y_pred == k
    tp = diag
    fn = pos - diag
    fp = predicted - diag
    tn = sizes[None, :] - tp - fn - fp
    counts = np.stack([tp, fp, tn, fn], axis=-1)
    return GroupConfusion(k, counts, (int(sizes[0]), int(sizes[1])))


def tally_arrays(y_true, y_pred, sensitive, n_classes: int) -> GroupConfusion:
    """Vectorized :func:`tally` for aligned integer arrays."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    sensitive = np.asarray(sensitive, dtype=np.int64)
    if not (y_true.shape == y_pred.shape == sensitive.shape) or y_true.ndim != 1:
        raise FairnessError("y_true, y_pred and sensitive must be aligned 1-d arrays")
    if y_true.size == 0:
        raise FairnessError("no records")
    if n_classes < 2:
        raise FairnessError("need at least two classes")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise FairnessError(f"{name} outside 0..{n_classes - 1}")
    if not np.isin(sensitive, GROUPS).all():
        raise FairnessError("sensitive must be 0 or 1")
    pair = np.zeros((n_classes, n_classes, 2), dtype=np.int64)
    np.add.at(pair, (y_true, y_pred, sensitive), 1)
    return _confusion_from_pairs(pair)


@dataclass
class GroupScores:
    n: int
    precision: Fraction
    recall: Fraction
    f1: Fraction


@dataclass
class FairnessReport:
    """Gap metrics plus per-group macro precision/recall/F1.

    Numeric fields hold :class:`fractions.Fraction`; :meth:`to_dict`
    converts them to floats.
    """

    n_classes: int
    eopp0: Fraction
    eopp1: Fraction
    eodd: Fraction
    accuracy: Fraction
    macro_f1: Fraction
    groups: Dict[int, GroupScores]
    per_class: List[Dict[str, Optional[Fraction]]]
    skipped_classes: List[Tuple[int, int, str]] = field(default_factory=list)

    def acc(self, aggregation: str = "macro_f1") -> float:
        """Accuracy figure fed to FATE."""
        if aggregation == "macro_f1":
            return float(self.macro_f1)
        if aggregation == "group_mean_f1":
            return float((self.groups[0].f1 + self.groups[1].f1) / 2)
        raise ValueError(f"unknown accuracy aggregation {aggregation!r}")

    def to_dict(self) -> dict:
        def f(v):
            return None if v is None else float(v)

        return {
            "n_classes": self.n_classes,
            "eopp0": f(self.eopp0),
            "eopp1": f(self.eopp1),
            "eodd": f(self.eodd),
            "accuracy": f(self.accuracy),
            "macro_f1": f(self.macro_f1),
            "group_mean_f1": f((self.groups[0].f1 + self.groups[1].f1) / 2),
            "groups": {
                str(a): {"n": g.n, "precision": f(g.precision), "recall": f(g.recall), "f1": f(g.f1)}
                for a, g in sorted(self.groups.items())
            },
            "per_class": [{key: f(v) if key != "class" else v for key, v in row.items()} for row in self.per_class],
            "skipped_classes": [list(s) for s in self.skipped_classes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _diff(x: Tuple[int, int], y: Tuple[int, int]) -> Tuple[int, int]:
    return x[0] * y[1] - y[0] * x[1], x[1] * y[1]


def _ratio_mean(pairs, count: int) -> Fraction:
    """Exact ``sum(num/den) / count`` over pairs (0/0 counts as 0), normalized once."""
    num, den = 0, 1
    for n, d in pairs:
        if d:
            num, den = num * d + n * den, den * d
    return Fraction(num, den * count)


def _macro_scores(pair_counts: Sequence[Tuple[int, int, int]]) -> Tuple[Fraction, Fraction, Fraction]:
    """Macro precision/recall/F1 from (tp, fp, fn) per present class.

    Classes that never occur as a label or a prediction are left out, and
    0/0 counts as 0, matching scikit-learn's defaults.
    """
    present = [(tp, fp, fn) for tp, fp, fn in pair_counts if tp + fp + fn > 0]
    if not present:
        return Fraction(0), Fraction(0), Fraction(0)
    n = len(present)
    p = _ratio_mean(((tp, tp + fp) for tp, fp, _ in present), n)
    r = _ratio_mean(((tp, tp + fn) for tp, _, fn in present), n)
    f1 = _ratio_mean(((2 * tp, 2 * tp + fp + fn) for tp, fp, fn in present), n)
    return p, r, f1


def evaluate(confusion: GroupConfusion) -> FairnessReport:
    """Build a :class:`FairnessReport` from group tallies."""
    n0, n1 = confusion.group_sizes
    if n0 == 0 or n1 == 0:
        missing = 0 if n0 == 0 else 1
        raise MissingGroupError(f"group {missing} has no records")
    c = confusion.counts.tolist()  # python ints: [K][2][(tp, fp, tn, fn)]
    K = confusion.n_classes
    eopp0 = eopp1 = eodd = Fraction(0)
    per_class: List[Dict[str, Optional[Fraction]]] = []
    skipped: List[Tuple[int, int, str]] = []
    for k in range(K):
        # rates kept as (numerator, denominator) integer pairs
        tpr = {}
        tnr = {}
        for a in GROUPS:
            tp, fp, tn, fn = c[k][a]
            tpr[a] = (tp, tp + fn) if tp + fn else None
            tnr[a] = (tn, tn + fp) if tn + fp else None
            if tpr[a] is None:
                skipped.append((k, a, "TPR"))
            if tnr[a] is None:
                skipped.append((k, a, "TNR"))
        row: Dict[str, Optional[Fraction]] = {"class": k, "eopp0": None, "eopp1": None, "eodd": None}
        tnr_ok = tnr[0] is not None and tnr[1] is not None
        tpr_ok = tpr[0] is not None and tpr[1] is not None
        if tnr_ok:
            d_tnr = _diff(tnr[1], tnr[0])
            row["eopp0"] = Fraction(abs(d_tnr[0]), d_tnr[1])
            eopp0 += row["eopp0"]
        if tpr_ok:
            d_tpr = _diff(tpr[1], tpr[0])
            row["eopp1"] = Fraction(abs(d_tpr[0]), d_tpr[1])
            eopp1 += row["eopp1"]
        if tnr_ok and tpr_ok:
            # FPR = 1 - TNR, so the FPR gap is minus the TNR gap
            d = _diff(d_tpr, d_tnr)
            row["eodd"] = Fraction(abs(d[0]), d[1])
            eodd += row["eodd"]
        per_class.append(row)
    for k, a, name in skipped:
        logger.info("class %d group %d: %s undefined, term skipped", k, a, name)

    groups = {}
    for a in GROUPS:
        p, r, f1 = _macro_scores([(c[k][a][0], c[k][a][1], c[k][a][3]) for k in range(K)])
        groups[a] = GroupScores(confusion.group_sizes[a], p, r, f1)
    pooled = [[c[k][0][i] + c[k][1][i] for i in range(4)] for k in range(K)]
    _, _, macro_f1 = _macro_scores([(q[0], q[1], q[3]) for q in pooled])
    accuracy = Fraction(sum(q[0] for q in pooled), n0 + n1)
    return FairnessReport(K, eopp0, eopp1, eodd, accuracy, macro_f1, groups, per_class, skipped)


def fairness_report(y_true, y_pred, sensitive, n_classes: Optional[int] = None) -> FairnessReport:
    """Convenience wrapper over arrays, in the style of sklearn metrics."""
    if n_classes is None:
        n_classes = int(max(np.max(y_true), np.max(y_pred))) + 1
        n_classes = max(n_classes, 2)
    return evaluate(tally_arrays(y_true, y_pred, sensitive, n_classes))


# -- FATE ----------------------------------------------------------------


def fate(acc_b: float, acc_m: float, fc_b: float, fc_m: float, lam: float = 1.0) -> float:
    """Normalized accuracy change minus ``lam`` times normalized fairness change.

    Positive values mean the mitigated model trades accuracy for fairness
    favorably relative to the baseline.
    """
    if acc_b == 0:
        raise FairnessError("baseline accuracy is zero; FATE undefined")
    if fc_b == 0:
        raise FairnessError("baseline fairness score is zero; FATE undefined")
    return (acc_m - acc_b) / acc_b - lam * (fc_m - fc_b) / fc_b


def fate_sweep(acc_b: float, acc_m: float, fc_b: float, fc_m: float, lambdas: Iterable[float]) -> List[Tuple[float, float]]:
    return [(float(lam), fate(acc_b, acc_m, fc_b, fc_m, lam)) for lam in lambdas]


def fate_from_reports(
    base: dict, mitig: dict, metric: str = "eodd", lam: float = 1.0, aggregation: str = "macro_f1"
) -> float:
    """FATE from two report dicts as produced by :meth:`FairnessReport.to_dict`."""
    if metric not in FC_METRICS:
        raise ValueError(f"unknown fairness metric {metric!r}")
    if aggregation not in ACC_AGGREGATIONS:
        raise ValueError(f"unknown accuracy aggregation {aggregation!r}")
    return fate(base[aggregation], mitig[aggregation], base[metric], mitig[metric], lam)


# -- I/O -----------------------------------------------------------------


def read_predictions_csv(text: str) -> List[PredictionRecord]:
    """Parse prediction CSV text.

    Raises:
        CsvSchemaError: header differs from ``sample_id,y_true,y_pred,sensitive``.
        FairnessError: a row is malformed (message carries the line number).
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    header = [h.strip() for h in header]
    if tuple(header) != CSV_HEADER:
        unknown = sorted(set(header) - set(CSV_HEADER))
        missing = sorted(set(CSV_HEADER) - set(header))
        raise CsvSchemaError(f"bad header {header}; unknown={unknown} missing={missing}")
    records = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise FairnessError(f"line {line}: expected 4 fields, got {len(row)}")
        try:
            rec = PredictionRecord(row[0].strip(), int(row[1]), int(row[2]), int(row[3]))
        except ValueError:
            raise FairnessError(f"line {line}: non-integer field in {row}") from None
        records.append(rec)
    return records


def write_predictions_csv(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.sample_id, r.y_true, r.y_pred, r.sensitive])
    return buf.getvalue()


def _fmt(v, digits: int = 4) -> str:
    return "-" if v is None else f"{float(v):.{digits}f}"


def markdown_rows(name: str, report: dict, fate_values: Optional[Dict[str, Optional[float]]] = None) -> List[str]:
    """Two table rows (group 1 then group 0) in the results-table layout."""
    rows = []
    for i, a in enumerate(("1", "0")):
        g = report["groups"][a]
        cells = [name if i == 0 else "", a, _fmt(g["precision"]), _fmt(g["recall"]), _fmt(g["f1"])]
        for m in FC_METRICS:
            if i:
                cells.append("")
                continue
            cell = _fmt(report[m])
            if fate_values is not None:
                cell += f" / {_fmt(fate_values.get(m))}"
            cells.append(cell)
        rows.append("| " + " | ".join(cells) + " |")
    return rows


def markdown_table(rows: Sequence[Tuple[str, dict, Optional[Dict[str, Optional[float]]]]]) -> str:
    with_fate = any(fv is not None for _, _, fv in rows)
    suffix = " / FATE" if with_fate else ""
    head = ["Method", "Group", "Precision", "Recall", "F1-score"] + [f"{m.capitalize()}{suffix}" for m in FC_METRICS]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for name, rep, fv in rows:
        lines.extend(markdown_rows(name, rep, fv))
    return "\n".join(lines) + "\n"
