import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from attnwnet.evalseg import (
    MetricsReport, dice, iou, merge_clusters, read_report, select_clusters, write_report,
)

masks = arrays(bool, (4, 3, 2))


def test_merge_clusters():
    lab = np.array([0, 1, 2, 1])
    np.testing.assert_array_equal(merge_clusters(lab, {1, 2}), [0, 1, 1, 1])
    assert merge_clusters(lab, {0, 1, 2}).all()
    assert not merge_clusters(lab, {5}).any()
    with pytest.raises(ValueError):
        merge_clusters(lab, set())


def test_metric_examples():
    a = np.array([1, 1, 0, 0], bool)
    assert iou(a, a) == 1.0 and dice(a, a) == 1.0
    assert iou(a, ~a) == 0.0 and dice(a, ~a) == 0.0
    assert iou([1, 1, 1, 0], [0, 1, 1, 1]) == 0.5
    assert dice([1, 1, 1, 0, 0], [0, 1, 1, 1, 0]) == pytest.approx(4 / 6)
    empty = np.zeros(5, bool)
    assert iou(empty, empty) == 1.0 and dice(empty, empty) == 1.0


def test_dice_iou_identity_random(rng):
    for _ in range(100):
        a, b = rng.random(64) < rng.random(), rng.random(64) < rng.random()
        j = iou(a, b)
        assert abs(dice(a, b) - 2 * j / (1 + j)) < 1e-12


def test_table_pair_consistency():
    iou_t, dice_t = 0.7885, 0.8812
    assert abs(dice_t - 2 * iou_t / (1 + iou_t)) < 1e-3


@given(masks, masks)
def test_metric_properties(a, b):
    assert iou(a, b) == iou(b, a) and dice(a, b) == dice(b, a)
    assert 0 <= iou(a, b) <= 1 and 0 <= dice(a, b) <= 1
    perm = np.random.default_rng(0).permutation(a.size)
    assert iou(a.ravel()[perm], b.ravel()[perm]) == iou(a, b)
    assert dice(a.ravel()[perm], b.ravel()[perm]) == dice(a, b)


@given(arrays(np.uint8, (3, 3, 3), elements=st.integers(0, 4)))
def test_merge_all_is_full(lab):
    assert iou(merge_clusters(lab, range(5)), np.ones(lab.shape, bool)) == 1.0


def test_select_clusters():
    lab = np.array([0, 0, 1, 1, 2, 2, 3])
    truth = np.array([0, 0, 1, 1, 1, 0, 0], bool)
    assert select_clusters(lab, truth) == [1, 2]
    assert select_clusters(lab, np.array([0, 0, 0, 0, 0, 1, 0], bool), 0.9) == [2]


def test_report_round_trip(tmp_path):
    r = MetricsReport()
    r.add("a", [1, 1, 0], [1, 0, 0])
    r.add("b", [1, 1, 1], [1, 1, 1])
    c, j = write_report(r, tmp_path / "metrics.csv")
    rows = list(csv.reader(open(c)))
    assert rows[0] == ["volume_id", "iou", "dice"] and len(rows) == 3
    back = read_report(j)
    assert back.to_dict() == r.to_dict()
    agg = r.aggregates()
    assert agg["mean_iou"] == pytest.approx((0.5 + 1) / 2)
    assert agg["pooled_iou"] == pytest.approx(4 / 5)


def test_empty_report(tmp_path):
    c, j = write_report(MetricsReport(), tmp_path)
    assert c.read_text() == "volume_id,iou,dice\n"
    assert read_report(j).volumes == []


def test_one_row(tmp_path):
    r = MetricsReport()
    r.add("x", [1], [1])
    c, _ = write_report(r, tmp_path / "m.json")
    assert len(c.read_text().splitlines()) == 2
