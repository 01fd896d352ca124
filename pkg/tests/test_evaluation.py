import math

import numpy as np
import pytest

from poleloc.errors import InvalidArgumentError
from poleloc.evaluation import (
    AccuracyReport,
    EvalRecord,
    SyntheticSetup,
    accuracy,
    read_records,
    run_experiment,
    run_synthetic,
    write_records,
)
from poleloc.geometry import Point2, Pose2
from poleloc.matcher import RansacParams
from poleloc.synth import ObservationSpec, WorldSpec


def rec(err, mode="baseline", qid=0):
    gt = Point2(10.0, 20.0)
    pred = None if err is None else Point2(10.0 + err, 20.0)
    return EvalRecord(qid, mode, gt, pred, 3)


def test_accuracy_half():
    assert accuracy([rec(0.5), rec(6.0)], 5.0) == 50.0


def test_accuracy_is_strict():
    assert accuracy([rec(5.0)], 5.0) == 0.0
    assert accuracy([rec(4.999)], 5.0) == 100.0


def test_accuracy_empty_raises():
    with pytest.raises(InvalidArgumentError):
        accuracy([], 1.0)


def test_failures_count_against_accuracy():
    r = rec(None)
    assert r.error == math.inf
    assert accuracy([r, rec(0.1)], 1.0) == 50.0


def test_report_monotone_in_threshold():
    rng = np.random.default_rng(0)
    errs = list(rng.exponential(3.0, 200)) + [None] * 10
    records = [rec(e, m, i) for i, e in enumerate(errs) for m in ("baseline", "class_gated")]
    thresholds = (0.5, 1.0, 2.0, 5.0, 10.0)
    rep = AccuracyReport.from_records(records, thresholds)
    for mode in rep.results:
        accs = [rep.accuracy(mode, t) for t in thresholds]
        assert accs == sorted(accs)


def test_summary_and_table_layout():
    records = [rec(0.5), rec(3.0, qid=1), rec(0.2, "class_gated"), rec(0.4, "class_gated", 1)]
    rep = AccuracyReport.from_records(records)
    text = rep.summary_text()
    assert "baseline.5m.accuracy: 100.00" in text
    assert "baseline.1m.success: 1" in text
    assert "class_gated.1m.total: 2" in text
    assert rep.table_csv("synthetic") == (
        "dataset,ours_5m,baseline_5m,ours_1m,baseline_1m\nsynthetic,100.00,100.00,100.00,50.00\n"
    )


def test_records_round_trip(tmp_path):
    records = [rec(0.123456789), rec(None, qid=1), rec(7.25, "class_gated", 2)]
    path = tmp_path / "trajectory.csv"
    write_records(records, path)
    back = read_records(path)
    assert [r.error for r in back] == [r.error for r in records]
    a = AccuracyReport.from_records(records)
    b = AccuracyReport.from_records(back)
    assert a.summary_text() == b.summary_text()
    assert a.table_csv() == b.table_csv()


def test_no_queries_raises():
    from conftest import make_map

    with pytest.raises(InvalidArgumentError):
        run_experiment(make_map([(0, 0), (5, 0)]), [], {"baseline": RansacParams(mode="baseline")})


def small_setup(**obs):
    return SyntheticSetup(
        world=WorldSpec(extent=(80, 80), pole_count=80),
        observation=ObservationSpec(sensor_range=20, **obs),
        query_count=20,
        query_margin=10,
        seed=5,
    )


def test_zero_noise_is_perfect():
    run = run_synthetic(small_setup())
    for mode in ("baseline", "class_gated"):
        assert run.report.accuracy(mode, 1.0) == 100.0
    for r in run.records:
        assert r.error < 1e-6


def test_synthetic_run_is_deterministic():
    a = run_synthetic(small_setup(noise_sigma=0.3, dropout=0.3, distractors=5))
    b = run_synthetic(small_setup(noise_sigma=0.3, dropout=0.3, distractors=5))
    assert a.records == b.records
    assert a.report.summary_text() == b.report.summary_text()


def test_run_experiment_with_pairs():
    from conftest import make_map

    xy = np.array([[0, 0], [8, 1], [2, 9], [11, 7]], dtype=float)
    g = make_map(xy)
    T = Pose2(1, 2, 0.3)
    from poleloc.geometry import inverse

    local = make_map(inverse(T).apply_points(xy), frame="local")
    rep, records = run_experiment(g, [(T, local)], {"baseline": RansacParams(mode="baseline")})
    assert rep.accuracy("baseline", 1.0) == 100.0 and records[0].error < 1e-9
