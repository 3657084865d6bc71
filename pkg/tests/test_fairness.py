from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, precision_score, recall_score

from attenfair import fairness
from attenfair.fairness import PredictionRecord as R


def fixture_records():
    g1 = [(1, 1), (1, 1), (0, 0), (0, 1)]
    g0 = [(1, 1), (1, 0), (0, 0), (0, 0)]
    recs = [R(f"a{i}", y, p, 1) for i, (y, p) in enumerate(g1)]
    recs += [R(f"b{i}", y, p, 0) for i, (y, p) in enumerate(g0)]
    return recs


records_strategy = st.lists(
    st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1)), min_size=2, max_size=40
).filter(lambda rs: {r[2] for r in rs} == {0, 1})


def to_records(rows):
    return [R(str(i), y, p, a) for i, (y, p, a) in enumerate(rows)]


def test_single_record_tally():
    conf = fairness.tally([R("x", 0, 0, 1)], 2)
    assert conf.quad(0, 1) == {"tp": 1, "fp": 0, "tn": 0, "fn": 0}
    assert conf.quad(1, 1) == {"tp": 0, "fp": 0, "tn": 1, "fn": 0}


def test_fixture_tally_class1_group1():
    assert fairness.tally(fixture_records(), 2).quad(1, 1) == {"tp": 2, "fn": 0, "fp": 1, "tn": 1}


def test_fixture_report():
    rep = fairness.evaluate(fairness.tally(fixture_records(), 2))
    assert (rep.eopp0, rep.eopp1, rep.eodd) == (1, 1, 2)
    assert rep.skipped_classes == []


def test_duplicating_records_doubles_tallies():
    one = fairness.tally(fixture_records(), 2)
    two = fairness.tally(fixture_records() * 2, 2)
    np.testing.assert_array_equal(two.counts, 2 * one.counts)
    assert two.group_sizes == (8, 8)


def test_tally_errors():
    with pytest.raises(fairness.FairnessError):
        fairness.tally([], 2)
    with pytest.raises(fairness.FairnessError):
        fairness.tally([R("x", 3, 0, 0)], 2)
    with pytest.raises(fairness.FairnessError):
        fairness.tally([R("x", 0, 0, 2)], 2)


def test_missing_group_is_an_error():
    conf = fairness.tally([R("x", 0, 0, 0), R("y", 1, 1, 0)], 2)
    with pytest.raises(fairness.MissingGroupError):
        fairness.evaluate(conf)


def test_zero_denominator_is_skipped_and_logged():
    # group 1 has no class-1 positives
    recs = [R("a", 0, 0, 1), R("b", 1, 1, 0), R("c", 0, 1, 0)]
    rep = fairness.evaluate(fairness.tally(recs, 2))
    assert (1, 1, "TPR") in rep.skipped_classes
    row = rep.per_class[1]
    assert row["eopp1"] is None and row["eodd"] is None
    assert row["eopp0"] is not None


def test_eodd_takes_absolute_value_of_the_summed_gap():
    # TPR and FPR gaps cancel inside the absolute value
    recs = [R("a", 1, 1, 1), R("b", 0, 1, 1), R("c", 1, 0, 0), R("d", 0, 0, 0)]
    rep = fairness.evaluate(fairness.tally(recs, 2))
    assert rep.per_class[1]["eopp1"] == 1
    assert rep.per_class[1]["eodd"] == 2
    recs = [R("a", 1, 1, 1), R("b", 0, 0, 1), R("c", 1, 0, 0), R("d", 0, 1, 0)]
    rep = fairness.evaluate(fairness.tally(recs, 2))
    assert rep.per_class[1]["eopp1"] == 1 and rep.per_class[1]["eodd"] == 0


@settings(max_examples=150, deadline=None)
@given(records_strategy, st.randoms(use_true_random=False))
def test_permutation_invariance(rows, rnd):
    a = fairness.evaluate(fairness.tally(to_records(rows), 3))
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    b = fairness.evaluate(fairness.tally(to_records(shuffled), 3))
    assert a.to_dict() == b.to_dict()


@settings(max_examples=150, deadline=None)
@given(records_strategy)
def test_group_relabel_symmetry_and_bounds(rows):
    k = 3
    rep = fairness.evaluate(fairness.tally(to_records(rows), k))
    flipped = fairness.evaluate(fairness.tally(to_records([(y, p, 1 - a) for y, p, a in rows]), k))
    assert (rep.eopp0, rep.eopp1, rep.eodd) == (flipped.eopp0, flipped.eopp1, flipped.eodd)
    assert 0 <= rep.eopp0 <= k and 0 <= rep.eopp1 <= k and 0 <= rep.eodd <= 2 * k
    fpr_gap = Fraction(0)
    for row in rep.per_class:
        for m in ("eopp0", "eopp1"):
            assert row[m] is None or 0 <= row[m] <= 1
        assert row["eodd"] is None or 0 <= row["eodd"] <= 2
        if row["eodd"] is not None:
            fpr_gap += row["eopp0"]  # |dFPR| == |dTNR|
    assert rep.eodd <= rep.eopp1 + fpr_gap


def test_identical_behavior_gives_zero_gaps():
    rows = [(0, 0), (1, 2), (2, 2), (1, 1), (0, 1)]
    recs = [R(f"{a}{i}", y, p, a) for a in (0, 1) for i, (y, p) in enumerate(rows)]
    rep = fairness.evaluate(fairness.tally(recs, 3))
    assert rep.eopp0 == rep.eopp1 == rep.eodd == 0


@settings(max_examples=100, deadline=None)
@given(records_strategy)
def test_group_scores_match_sklearn(rows):
    rep = fairness.evaluate(fairness.tally(to_records(rows), 3))
    y, p, a = (np.array(c) for c in zip(*rows))
    for g in (0, 1):
        m = a == g
        kw = dict(average="macro", zero_division=0)
        assert float(rep.groups[g].precision) == pytest.approx(precision_score(y[m], p[m], **kw), abs=1e-12)
        assert float(rep.groups[g].recall) == pytest.approx(recall_score(y[m], p[m], **kw), abs=1e-12)
        assert float(rep.groups[g].f1) == pytest.approx(f1_score(y[m], p[m], **kw), abs=1e-12)
    assert float(rep.macro_f1) == pytest.approx(f1_score(y, p, average="macro", zero_division=0), abs=1e-12)


def test_fairness_report_array_wrapper_matches_records():
    recs = fixture_records()
    y = [r.y_true for r in recs]
    p = [r.y_pred for r in recs]
    a = [r.sensitive for r in recs]
    assert fairness.fairness_report(y, p, a, 2).to_dict() == fairness.evaluate(fairness.tally(recs, 2)).to_dict()


# -- FATE ------------------------------------------------------------------


def test_fate_values():
    assert fairness.fate(0.8, 0.8, 0.1, 0.1, 3.0) == 0.0
    assert fairness.fate(0.75, 0.76, 0.028, 0.015, 1.0) == pytest.approx(0.47762, abs=1e-5)
    assert fairness.fate(0.75, 0.76, 0.028, 0.015, 0.0) == pytest.approx(0.01 / 0.75)


def test_fate_zero_baselines_raise():
    with pytest.raises(fairness.FairnessError):
        fairness.fate(0.0, 0.5, 0.1, 0.1)
    with pytest.raises(fairness.FairnessError):
        fairness.fate(0.5, 0.5, 0.0, 0.1)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.1, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 3.0), st.floats(0.0, 3.0),
)
def test_fate_sweep_is_affine(acc_b, acc_m, fc_b, fc_m):
    rows = fairness.fate_sweep(acc_b, acc_m, fc_b, fc_m, [0.0, 1.0, 2.5])
    slope = rows[1][1] - rows[0][1]
    assert slope == pytest.approx(-(fc_m - fc_b) / fc_b, rel=1e-12, abs=1e-12)
    assert rows[2][1] == pytest.approx(rows[0][1] + 2.5 * slope, rel=1e-12, abs=1e-12)


def test_fate_sweep_increases_when_fairness_improves():
    vals = [v for _, v in fairness.fate_sweep(0.7, 0.69, 0.2, 0.1, range(5))]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_fate_from_reports_aggregations():
    base = {"macro_f1": 0.75, "group_mean_f1": 0.5, "eodd": 0.028}
    mitig = {"macro_f1": 0.76, "group_mean_f1": 0.5, "eodd": 0.015}
    assert fairness.fate_from_reports(base, mitig) == pytest.approx(0.47762, abs=1e-5)
    assert fairness.fate_from_reports(base, mitig, aggregation="group_mean_f1") == pytest.approx(13 / 28)
    with pytest.raises(ValueError):
        fairness.fate_from_reports(base, mitig, metric="dp")


# -- I/O ---------------------------------------------------------------------


def test_csv_roundtrip():
    recs = fixture_records()
    assert fairness.read_predictions_csv(fairness.write_predictions_csv(recs)) == recs


def test_csv_errors():
    assert fairness.read_predictions_csv("") == []
    with pytest.raises(fairness.CsvSchemaError):
        fairness.read_predictions_csv("sample_id,y_true,y_pred,group\n")
    with pytest.raises(fairness.FairnessError, match="line 3"):
        fairness.read_predictions_csv("sample_id,y_true,y_pred,sensitive\na,0,0,0\nb,0,x,0\n")
    with pytest.raises(fairness.FairnessError, match="line 2"):
        fairness.read_predictions_csv("sample_id,y_true,y_pred,sensitive\na,0,0\n")


def test_report_json_roundtrip():
    import json

    rep = fairness.evaluate(fairness.tally(fixture_records(), 2))
    doc = json.loads(rep.to_json())
    assert doc["eopp0"] == 1.0 and doc["eodd"] == 2.0
    assert fairness.fate_from_reports(doc, doc) == 0.0


def test_markdown_table_layout():
    rep = fairness.evaluate(fairness.tally(fixture_records(), 2)).to_dict()
    table = fairness.markdown_table([("base", rep, None), ("ours", rep, {"eopp0": 0.0, "eopp1": 0.0, "eodd": None})])
    lines = table.strip().splitlines()
    assert lines[0].startswith("| Method | Group | Precision | Recall | F1-score")
    assert len(lines) == 2 + 4
    assert lines[2].split("|")[2].strip() == "1" and lines[3].split("|")[2].strip() == "0"
    assert "/ -" in lines[4]
