import json
from pathlib import Path

import numpy as np
import pytest

from synthpc.metrics import (MetricsRow, aggregate, confusion, evaluate, f1_from_pr, iou_from_f1, parse_report_csv,
                             per_class, render_report)

TABLES = json.loads((Path(__file__).parent / "data" / "reported_tables.json").read_text())["tables"]
CLASS_ROWS = ("ground", "building", "tree")


def reported(table, site):
    return next(t for t in TABLES if t["table"] == table)["sites"][site]


def test_perfect_prediction_diagonal(rng):
    y = rng.integers(0, 5, 10)
    cm = confusion(y, y)
    assert (cm.counts == np.diag(np.bincount(y, minlength=5))).all()
    assert cm.total == 10


def test_all_ignored_zero_matrix():
    cm = confusion(np.full(6, 255), np.array([0, 1, 2, 255, 3, 4]))
    assert cm.total == 0 and cm.counts.shape == (5, 5)


def test_remap_to_three_classes(rng):
    gt = rng.integers(0, 5, 200)
    pred = rng.integers(0, 5, 200)
    cm = confusion(pred, gt, {3: None, 4: None})
    assert cm.class_names == ["ground", "building", "tree"]
    keep = (gt < 3) & (pred < 3)
    assert cm.total == keep.sum()
    expect = np.zeros((3, 3), int)
    np.add.at(expect, (gt[keep], pred[keep]), 1)
    assert (cm.counts == expect).all()
    merged = confusion(pred, gt, {3: 4})
    assert merged.class_names == ["ground", "building", "tree", "clutter"]


def test_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        confusion(np.zeros(3), np.zeros(4))


def test_stray_label_rejected():
    with pytest.raises(ValueError):
        confusion(np.array([0, 9]), np.array([0, 1]))


@pytest.mark.parametrize("table,site,cls", [(1, "Fort Drum", "ground"), (1, "Fort Drum", "building"),
                                            (3, "Fort Drum", "tree")])
def test_reported_class_rows(table, site, cls):
    row = reported(table, site)[cls]
    # printed P and R are rounded to 3 decimals, hence the tolerances
    f1 = f1_from_pr(row["precision"], row["recall"])
    assert f1 == pytest.approx(row["f1"], abs=0.0015)
    assert iou_from_f1(f1) == pytest.approx(row["iou"], abs=0.005)


def test_reported_examples_literal():
    for p, r, f1, iou in [(0.944, 0.863, 0.901, 0.820), (0.409, 0.861, 0.555, 0.384),
                          (0.984, 0.049, 0.093, 0.049)]:
        assert f1_from_pr(p, r) == pytest.approx(f1, abs=0.0015)
        assert iou_from_f1(f1_from_pr(p, r)) == pytest.approx(iou, abs=0.005)
        assert round(iou_from_f1(f1), 3) == iou


@pytest.mark.parametrize("table,site,expected", [(1, "Fort Drum", 0.769), (4, "MTUC", 0.924)])
def test_reported_macro_precision(table, site, expected):
    t = reported(table, site)
    rows = [MetricsRow(c, t[c]["precision"], t[c]["recall"], t[c]["f1"], t[c]["iou"], 1) for c in CLASS_ROWS]
    macro, _ = aggregate(rows)
    assert macro.precision == pytest.approx(expected, abs=0.0015)
    assert t["macro avg"]["precision"] == expected


def test_equal_supports_weighted_equals_macro(rng):
    rows = [MetricsRow(str(i), *rng.uniform(0, 1, 4), 10) for i in range(4)]
    macro, weighted = aggregate(rows)
    np.testing.assert_allclose(macro.values(), weighted.values())


def brute(pred, gt, n):
    # per-point counting oracle
    out = []
    for c in range(n):
        tp = sum(1 for p, g in zip(pred, gt) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gt) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gt) if p != c and g == c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        i = tp / (tp + fp + fn) if tp + fp + fn else 0.0
        out.append((p, r, f, i, tp + fn))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_equivalence(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 1000))
    gt = rng.integers(0, 5, n)
    pred = np.where(rng.uniform(size=n) < 0.7, gt, rng.integers(0, 5, n))
    rep = evaluate(pred, gt)
    for row, ref in zip(rep.rows, brute(pred.tolist(), gt.tolist(), 5)):
        np.testing.assert_allclose(row.values(), ref[:4], atol=1e-12)
        assert row.support == ref[4]
    for r in rep.all_rows():
        assert 0 <= r.iou <= r.f1 + 1e-12 <= 1 + 1e-12
        if r in rep.rows and r.precision + r.recall > 0:
            assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
            assert r.iou == pytest.approx(r.f1 / (2 - r.f1))
    sup = np.array([r.support for r in rep.rows], float)
    vals = np.array([r.values() for r in rep.rows])
    np.testing.assert_allclose(rep.weighted.values(), (vals * sup[:, None]).sum(0) / sup.sum())
    np.testing.assert_allclose(rep.macro.values(), vals.mean(0))


def test_zero_denominators_flagged():
    rows = per_class(confusion(np.array([0, 0]), np.array([0, 0])))
    building = rows[1]
    assert building.values() == (0.0, 0.0, 0.0, 0.0)
    assert any("precision" in n for n in building.notes) and any("recall" in n for n in building.notes)
    assert rows[0].values() == (1.0, 1.0, 1.0, 1.0) and not rows[0].notes


def test_perfect_three_class_text_table():
    y = np.repeat([0, 1, 2], 4)
    text = render_report(evaluate(y, y, {3: None, 4: None}), "text")
    lines = text.splitlines()
    assert lines[0].split() == ["precision", "recall", "f1-score", "IOU", "support"]
    assert [ln.split()[0] for ln in lines[1:4]] == ["ground", "building", "tree"]
    assert lines[4] == ""
    assert lines[5].startswith("macro avg") and lines[6].startswith("weighted avg")
    for ln in lines[1:4] + lines[5:7]:
        assert ln.split()[-5:-1] == ["1.000"] * 4


def test_csv_round_trip_and_recompute(rng):
    gt = rng.integers(0, 5, 700)
    pred = np.where(rng.uniform(size=700) < 0.6, gt, rng.integers(0, 5, 700))
    rep = evaluate(pred, gt)
    text = render_report(rep, "csv")
    assert text.splitlines()[0] == "class,precision,recall,f1,iou,support"
    back = parse_report_csv(text)
    for a, b in zip(rep.all_rows(), back.all_rows()):
        assert a.name == b.name and a.support == b.support
        np.testing.assert_allclose(a.values(), b.values(), atol=5e-7)
    assert render_report(back, "csv") == text
    # the CSV numbers equal a direct recomputation from the counts
    for row, ref in zip(back.rows, brute(pred.tolist(), gt.tolist(), 5)):
        np.testing.assert_allclose(row.values(), ref[:4], atol=5e-7)


def test_json_report():
    y = np.array([0, 1, 1, 2])
    doc = json.loads(render_report(evaluate(y, y), "json"))
    assert doc[-2]["class"] == "macro avg" and doc[-1]["class"] == "weighted avg"
    assert set(doc[0]) == {"class", "precision", "recall", "f1", "iou", "support"}
    with pytest.raises(ValueError):
        render_report(evaluate(y, y), "xml")
