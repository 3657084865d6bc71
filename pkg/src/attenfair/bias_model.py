"""Shortcut-bias algebra for one class and two sensitive groups.

Group A has ``alpha`` times as many samples as group A'. An unbiased model
scales every confusion count by ``alpha`` between the groups. A shortcut
adds ``X`` false positives to A (taken from its true negatives) and ``Y``
false negatives to A' relative to the scaled parity, which shows up in A as
``Y`` extra true positives. Under that model the class's fairness gaps have
closed forms::

    eopp0 = X / (TN_A + FP_A)
    eopp1 = Y / (TP_A + FN_A)
    eodd  = eopp0 + eopp1
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, Tuple, Union

from . import fairness

Number = Union[int, Fraction, str, float]


class BiasModelError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionQuad:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v:
                raise BiasModelError(f"{name}={v} is not an integer")
            if v < 0:
                raise BiasModelError(f"{name}={v} is negative")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionQuad":
        try:
            return cls(d["tp"], d["fp"], d["tn"], d["fn"])
        except KeyError as exc:
            raise BiasModelError(f"quad is missing field {exc}") from None


def to_fraction(value: Number) -> Fraction:
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class BiasParams:
    """(alpha, X, Y); X and Y may be negative only when returned by :func:`estimate`."""

    alpha: Fraction
    X: Fraction
    Y: Fraction
    misfit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alpha", to_fraction(self.alpha))
        object.__setattr__(self, "X", to_fraction(self.X))
        object.__setattr__(self, "Y", to_fraction(self.Y))
        if self.alpha <= 0:
            raise BiasModelError("alpha must be positive")

    def to_dict(self) -> dict:
        return {"alpha": str(self.alpha), "X": str(self.X), "Y": str(self.Y), "misfit": self.misfit}

    @classmethod
    def from_dict(cls, d: dict) -> "BiasParams":
        try:
            return cls(d["alpha"], d["X"], d["Y"], bool(d.get("misfit", False)))
        except KeyError as exc:
            raise BiasModelError(f"params are missing field {exc}") from None
        except (ValueError, ZeroDivisionError) as exc:
            raise BiasModelError(f"bad parameter value: {exc}") from None


def _integral(value: Fraction, what: str) -> int:
    if value.denominator != 1:
        raise BiasModelError(f"{what} = {value} is not an integer; choose alpha so that alpha*count is integral")
    return int(value)


def synthesize(base: ConfusionQuad, params: BiasParams) -> Tuple[ConfusionQuad, ConfusionQuad]:
    """Return (quad for A, quad for A') given A' counts and the bias parameters."""
    a, X, Y = params.alpha, params.X, params.Y
    if X < 0 or Y < 0:
        raise BiasModelError("X and Y must be non-negative for synthesis")
    X = _integral(X, "X")
    Y = _integral(Y, "Y")
    scaled = {name: _integral(a * getattr(base, name), f"alpha*{name}'") for name in ("tp", "fp", "tn", "fn")}
    counts = {
        "tp": scaled["tp"] + Y,
        "fp": scaled["fp"] + X,
        "tn": scaled["tn"] - X,
        "fn": scaled["fn"] - Y,
    }
    if counts["tn"] < 0:
        raise BiasModelError(f"TN_A = alpha*TN' - X = {counts['tn']} < 0 (bound X <= alpha*TN' = {scaled['tn']})")
    if counts["fn"] < 0:
        raise BiasModelError(f"FN_A = alpha*FN' - Y = {counts['fn']} < 0 (bound Y <= alpha*FN' = {scaled['fn']})")
    return ConfusionQuad(**counts), base


def closed_form_gaps(base: ConfusionQuad, params: BiasParams) -> Tuple[Fraction, Fraction, Fraction]:
    """Exact (eopp0, eopp1, eodd) for the class under analysis."""
    neg_a = params.alpha * base.negatives
    pos_a = params.alpha * base.positives
    if neg_a == 0 or pos_a == 0:
        raise BiasModelError("zero denominator: group A has no positives or no negatives")
    eopp0 = params.X / neg_a
    eopp1 = params.Y / pos_a
    return eopp0, eopp1, eopp0 + eopp1


def estimate(quad_a: ConfusionQuad, quad_aprime: ConfusionQuad) -> BiasParams:
    """Invert :func:`synthesize`.

    Negative X or Y, or positives/negatives that do not scale by the same
    alpha, set ``misfit`` instead of being clamped.
    """
    if quad_aprime.total == 0:
        raise BiasModelError("group A' has no samples")
    alpha = Fraction(quad_a.total, quad_aprime.total)
    if alpha == 0:
        raise BiasModelError("group A has no samples")
    X = quad_a.fp - alpha * quad_aprime.fp
    Y = alpha * quad_aprime.fn - quad_a.fn
    misfit = (
        X < 0
        or Y < 0
        or quad_a.positives != alpha * quad_aprime.positives
        or quad_a.negatives != alpha * quad_aprime.negatives
    )
    return BiasParams(alpha, X, Y, misfit)


def quads_to_records(quad_a: ConfusionQuad, quad_aprime: ConfusionQuad):
    """Expand two quads into binary prediction records.

    Class 1 is the class under analysis, class 0 is everything else; group A
    gets ``sensitive=1``.
    """
    records = []
    for group, quad in ((1, quad_a), (0, quad_aprime)):
        for name, (yt, yp) in (("tp", (1, 1)), ("fn", (1, 0)), ("fp", (0, 1)), ("tn", (0, 0))):
            for i in range(getattr(quad, name)):
                records.append(fairness.PredictionRecord(f"{group}-{name}-{i}", yt, yp, group))
    return records


def metric_gaps(quad_a: ConfusionQuad, quad_aprime: ConfusionQuad) -> Tuple[Fraction, Fraction, Fraction]:
    """Class-1 gap terms computed through the general metrics path."""
    y_true, y_pred, group = [], [], []
    for g, quad in ((1, quad_a), (0, quad_aprime)):
        for name, (yt, yp) in (("tp", (1, 1)), ("fn", (1, 0)), ("fp", (0, 1)), ("tn", (0, 0))):
            n = getattr(quad, name)
            y_true += [yt] * n
            y_pred += [yp] * n
            group += [g] * n
    report = fairness.evaluate(fairness.tally_arrays(y_true, y_pred, group, 2))
    row = report.per_class[1]
    if row["eodd"] is None:
        raise BiasModelError("metrics path: class rate undefined")
    return row["eopp0"], row["eopp1"], row["eodd"]


@dataclass
class ConsistencyReport:
    closed_form: Tuple[Fraction, Fraction, Fraction]
    metrics_path: Tuple[Fraction, Fraction, Fraction]

    @property
    def consistent(self) -> bool:
        return self.closed_form == self.metrics_path


def verify_consistency(base: ConfusionQuad, params: BiasParams) -> ConsistencyReport:
    """Compute the gaps in closed form and through the metrics, and assert they agree exactly."""
    quad_a, quad_ap = synthesize(base, params)
    report = ConsistencyReport(closed_form_gaps(base, params), metric_gaps(quad_a, quad_ap))
    if not report.consistent:
        raise AssertionError(f"closed form {report.closed_form} != metrics {report.metrics_path}")
    return report
