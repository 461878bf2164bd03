from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from revup.exceptions import MetricError
from revup.metrics import (
    CurvePoints,
    Scored,
    ScoredSample,
    auqc,
    auuc,
    evaluate,
    export_curves,
    krcc,
    lift_at_h,
    mape,
    normalized_area,
    qini_curve_values,
    rank_descending,
    uplift_curve_values,
)

# Ranked by uplift: (t=1, y=4), (t=0, y=1), (t=1, y=0), (t=0, y=1)
FOUR = Scored.of([4.0, 3.0, 2.0, 1.0], [1, 0, 1, 0], [4.0, 1.0, 0.0, 1.0])


def test_curve_values_by_hand():
    uplift = uplift_curve_values(FOUR, buckets=2)
    assert uplift.value.tolist() == [6.0, 4.0]
    qini = qini_curve_values(FOUR, buckets=2)
    assert qini.value.tolist() == [3.0, 2.0]
    assert uplift.fraction.tolist() == [0.5, 1.0]
    assert uplift.n_treated.tolist() == [1, 2]


def test_ranking_is_stable_for_ties():
    assert rank_descending([1.0, 2.0, 2.0, 0.0, 2.0]).tolist() == [1, 2, 4, 0, 3]


def test_scored_from_samples():
    samples = [ScoredSample(0.5, 1, 3.0, 2.0), ScoredSample(0.1, 0, 0.0, 1.0)]
    scored = Scored.from_samples(samples)
    assert scored.prediction is not None
    assert scored.treatment.tolist() == [1, 0]
    with pytest.raises(MetricError):
        Scored.of([1.0, math.nan], [1, 0], [0.0, 0.0])
    with pytest.raises(MetricError):
        Scored.of([1.0], [2], [0.0])


def brute_force(scored: Scored, kind: str, k: int) -> float:
    order = rank_descending(scored)
    n_t = n_c = 0
    r_t = r_c = 0.0
    for i in order[:k]:
        if scored.treatment[i] == 1:
            n_t += 1
            r_t += scored.response[i]
        else:
            n_c += 1
            r_c += scored.response[i]
    if n_t == 0 or n_c == 0:
        return math.nan
    if kind == "uplift":
        return (r_t / n_t - r_c / n_c) * (n_t + n_c)
    return r_t - r_c * (n_t / n_c)


@pytest.mark.parametrize("n", [100, 500, 1200])
def test_bucketed_curves_match_brute_force(n):
    rng = np.random.default_rng(n)
    scored = Scored.of(
        rng.normal(size=n),
        rng.integers(0, 2, size=n),
        rng.integers(0, 50, size=n) * (rng.random(n) < 0.4),
    )
    uplift = uplift_curve_values(scored)
    qini = qini_curve_values(scored)
    for p in range(1, 101):
        k = n * p // 100
        for curve, kind in ((uplift, "uplift"), (qini, "qini")):
            expected = brute_force(scored, kind, k)
            got = curve.value[p - 1]
            assert (math.isnan(expected) and math.isnan(got)) or got == expected


def test_undefined_buckets_are_flagged():
    scored = Scored.of([3.0, 2.0, 1.0, 0.0], [1, 1, 0, 0], [1.0, 1.0, 0.0, 0.0])
    flags: list[str] = []
    curve = uplift_curve_values(scored, buckets=4, flags=flags)
    assert np.isnan(curve.value[:2]).all()
    assert curve.value[3] == 4.0
    assert curve.defined.tolist() == [False, False, True, True]
    assert len(flags) == 1


def linear_curve(v_max: float) -> CurvePoints:
    fraction = np.arange(1, 101) / 100
    ones = np.ones(100)
    return CurvePoints(
        "uplift", fraction, fraction * v_max, ones, ones, ones, ones
    )


def test_normalized_area_of_linear_curve():
    assert normalized_area(linear_curve(7.0)) == pytest.approx(0.505, abs=1e-12)


def test_normalized_area_undefined_for_non_positive_total():
    flags: list[str] = []
    assert math.isnan(normalized_area(linear_curve(-1.0), flags))
    assert flags


def test_auuc_in_unit_interval_for_monotone_curves():
    rng = np.random.default_rng(2)
    for _ in range(20):
        value = np.cumsum(rng.random(100))
        ones = np.ones(100)
        fraction = np.arange(1, 101) / 100
        curve = CurvePoints("uplift", fraction, value, ones, ones, ones, ones)
        assert 0.0 <= auuc(curve) <= 1.0


def test_good_ranking_beats_reversed():
    rng = np.random.default_rng(5)
    effect = rng.random(1000)
    treatment = np.arange(1000) % 2
    response = np.where(treatment == 1, 10.0 * effect, 0.0)
    good = Scored.of(effect, treatment, response)
    bad = Scored.of(-effect, treatment, response)
    assert auqc(qini_curve_values(good)) > auqc(qini_curve_values(bad))
    assert auuc(uplift_curve_values(good)) > auuc(uplift_curve_values(bad))


def grouped(uplifts: list[float], per_bucket: int = 10) -> Scored:
    """Buckets in rank order whose treated minus control means are `uplifts`."""
    scores, treatment, response = [], [], []
    for b, u in enumerate(uplifts):
        for i in range(per_bucket):
            scores.append(1000.0 - b * per_bucket - i)
            treatment.append(i % 2)
            response.append(u if i % 2 else 0.0)
    return Scored.of(scores, treatment, response)


def test_krcc_concordant_and_reversed():
    assert krcc(grouped([4.0, 3.0, 2.0, 1.0]), buckets=4) == pytest.approx(1.0)
    assert krcc(grouped([1.0, 2.0, 3.0, 4.0]), buckets=4) == pytest.approx(-1.0)


def test_krcc_by_hand():
    assert krcc(grouped([3.0, 1.0, 2.0]), buckets=3) == pytest.approx(1 / 3)


def test_krcc_with_truth(small_synthetic):
    ds, truth = small_synthetic
    perfect = Scored.of(truth.cate, ds.treatment, ds.response)
    assert krcc(perfect, buckets=100, true_uplift=truth.cate) == pytest.approx(1.0)
    reversed_ = Scored.of(-truth.cate, ds.treatment, ds.response)
    assert krcc(reversed_, buckets=100, true_uplift=truth.cate) == pytest.approx(-1.0)


def test_rank_metrics_depend_only_on_the_ordering(small_synthetic):
    ds, truth = small_synthetic
    noisy = truth.cate + np.random.default_rng(1).normal(0.0, 0.2, len(ds))
    base = evaluate(Scored.of(noisy, ds.treatment, ds.response), 10, 30.0)
    variants = [noisy + 2.5, np.exp(3.0 * noisy), noisy**3]
    for scores in variants:
        report = evaluate(Scored.of(scores, ds.treatment, ds.response), 10, 30.0)
        assert report.auuc_norm == pytest.approx(base.auuc_norm, nan_ok=True)
        assert report.auqc_norm == pytest.approx(base.auqc_norm, nan_ok=True)
        assert report.krcc == pytest.approx(base.krcc, nan_ok=True)
        assert report.lift_at_h == pytest.approx(base.lift_at_h, nan_ok=True)


def test_krcc_ties_and_degenerate_buckets():
    flags: list[str] = []
    tied = Scored.of(np.zeros(8), [0, 1] * 4, np.arange(8.0))
    assert krcc(tied, buckets=4, flags=flags) == 0.0
    assert flags

    one_sided = Scored.of([4.0, 3.0, 2.0, 1.0], [1, 1, 1, 0], [1.0, 1.0, 1.0, 0.0])
    with pytest.raises(MetricError, match="at least 2 buckets"):
        krcc(one_sided, buckets=2)


def test_krcc_merges_buckets_lacking_a_group():
    # the first bucket holds only treated samples and merges into the second
    scored = Scored.of(
        [6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
        [1, 1, 1, 0, 1, 0],
        [9.0, 9.0, 5.0, 0.0, 1.0, 0.0],
    )
    assert krcc(scored, buckets=3) == pytest.approx(1.0)


def test_lift_at_h():
    scored = Scored.of(
        np.arange(10, 0, -1), [1, 0, 1] + [0] * 7, [5.0, 2.0, 5.0] + [0.0] * 7
    )
    assert lift_at_h(scored, 30) == 3.0
    flags: list[str] = []
    assert math.isnan(lift_at_h(scored, 10, flags))
    assert flags
    with pytest.raises(MetricError):
        lift_at_h(scored, 0)


def test_mape():
    assert mape([1.0, 5.0], [2.0, 4.0]) == pytest.approx(0.375)
    # zero responses are left out
    assert mape([1.0, 5.0, 3.0], [2.0, 4.0, 0.0]) == pytest.approx(0.375)
    flags: list[str] = []
    assert math.isnan(mape([1.0], [0.0], flags))
    assert flags


def test_export_curves(tmp_path):
    scored = Scored.of([3.0, 2.0, 1.0, 0.0], [1, 1, 0, 0], [1.0, 1.0, 0.0, 0.0])
    curve = uplift_curve_values(scored, buckets=4)
    path = tmp_path / "uplift.csv"
    export_curves(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "fraction,value,n_treated,n_control,r_treated,r_control,flag"
    assert lines[1].split(",")[1] == ""
    assert lines[1].endswith(",undefined")
    frame = pd.read_csv(path, keep_default_na=False)
    assert len(frame) == 4
    assert frame["n_treated"].tolist() == [1, 2, 2, 2]
    assert float(frame["value"].iloc[3]) == 4.0


def test_evaluate_report(small_synthetic):
    ds, truth = small_synthetic
    scored = Scored.of(
        truth.cate, ds.treatment, ds.response, prediction=ds.response + 1
    )
    report = evaluate(scored, buckets=10, h=30.0, true_uplift=truth.cate)
    assert report.krcc_truth == pytest.approx(1.0)
    assert report.h == 30.0
    assert report.mape > 0
    assert report.uplift_curve is not None and len(report.uplift_curve) == 10
    serial = report.to_serial()
    assert serial.krcc_truth == report.krcc_truth
    assert set(serial.metric_values()) == {
        "auuc_norm",
        "auqc_norm",
        "krcc",
        "lift_at_h",
        "mape",
        "krcc_truth",
    }


def test_evaluate_flags_degenerate_data():
    scored = Scored.of([2.0, 1.0], [1, 1], [1.0, 0.0])
    report = evaluate(scored, buckets=2, h=50.0)
    assert math.isnan(report.auuc_norm)
    assert math.isnan(report.krcc)
    assert math.isnan(report.lift_at_h)
    assert math.isnan(report.mape)
    assert report.krcc_truth is None
    assert len(report.flags) >= 5
