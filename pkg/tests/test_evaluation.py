import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limbpose.evaluation import (COCO_K, DEFAULT_THRESHOLDS, PredictionInstance, evaluate,
                                 greedy_match, interpolated_ap, oks, parse_predictions,
                                 perfect_predictions)
from limbpose.keypoints import Dataset, ImageRecord, InputError, parse_annotations

from cases import base_xy, handcrafted, oracle_report, pred_from
from conftest import make_person
from oracles import K_CONST, ap_oracle, best_assignment, oks_oracle


def test_k_constants_match_oracle():
    np.testing.assert_allclose(COCO_K, K_CONST, rtol=0)


def test_oks_identity():
    g = make_person()
    assert oks(pred_from(g), g) == 1.0


def test_oks_far_away():
    g = make_person()
    assert oks(pred_from(g, 1e6, 1e6), g) == 0.0


def test_oks_single_joint_e_inverse():
    vis = np.zeros(17, int)
    vis[9] = 2
    g = make_person(vis=vis, area=400.0)
    d = math.sqrt(2 * 400.0 * COCO_K[9] ** 2)
    got = oks(pred_from(g, d, 0.0), g)
    assert got == pytest.approx(math.exp(-1), rel=1e-12)
    assert got == pytest.approx(0.3679, abs=5e-5)


def test_oks_ignores_unlabeled_joints():
    vis = np.full(17, 2)
    vis[0] = 0
    g = make_person(vis=vis)
    p = pred_from(g)
    p.keypoints[0, :2] = 1e5
    assert oks(p, g) == 1.0


def test_oks_requires_labels():
    with pytest.raises(ValueError):
        oks(pred_from(make_person()), make_person(vis=0))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10 ** 6), tx=st.floats(-500, 500), ty=st.floats(-500, 500))
def test_oks_translation_invariant_and_matches_oracle(seed, tx, ty):
    rng = np.random.default_rng(seed)
    g = make_person(rng.uniform(0, 200, (17, 2)), vis=rng.integers(1, 3, 17))
    p = pred_from(g)
    p.keypoints[:, :2] += rng.normal(0, 5, (17, 2))
    value = oks(p, g)
    assert value == pytest.approx(oks_oracle(p.keypoints, g.xy, g.vis, g.area), rel=1e-12)
    g2 = make_person(g.xy + (tx, ty), vis=g.vis)
    p2 = PredictionInstance(1, 1.0, p.keypoints + (tx, ty, 0))
    assert oks(p2, g2) == pytest.approx(value, rel=1e-9)


@given(d1=st.floats(0, 100), d2=st.floats(0, 100))
def test_oks_monotone_in_distance(d1, d2):
    g = make_person()
    a, b = sorted((d1, d2))
    assert oks(pred_from(g, a), g) >= oks(pred_from(g, b), g)


def test_perfect_predictions(coco3_bytes):
    ds = parse_annotations(coco3_bytes)
    r = evaluate(perfect_predictions(ds), ds)
    assert r.ap == r.ar == r.ap50 == r.ap75 == r.ar50 == r.ar75 == 1.0
    assert r.ap_large == 1.0
    assert r.ap_by_tag == {'hard': 1.0}
    r1 = evaluate(perfect_predictions(ds), ds, thresholds=[0.95])
    assert r1.ap == 1.0


def test_empty_predictions(coco3_bytes):
    ds = parse_annotations(coco3_bytes)
    r = evaluate([], ds)
    assert r.ap == r.ar == r.ap50 == r.ap75 == 0.0


def test_unknown_image_id(coco3_bytes):
    ds = parse_annotations(coco3_bytes)
    preds = perfect_predictions(ds) + [pred_from(make_person(), image_id=42)]
    with pytest.raises(InputError, match='42'):
        evaluate(preds, ds)


def test_duplicate_is_false_positive():
    g = make_person(area=20000.0)
    ds = Dataset((ImageRecord(1, 'a', 640, 480),), (g,))
    r = evaluate([pred_from(g, score=0.9), pred_from(g, score=0.8)], ds, thresholds=[0.5])
    # rank 1 is a hit (precision 1 at recall 1), so AP stays 1 despite the duplicate
    assert r.ap == 1.0 and r.ar == 1.0
    r = evaluate([pred_from(g, 50, 50, score=0.9), pred_from(g, score=0.8)], ds,
                 thresholds=[0.5])
    assert r.ap == pytest.approx(0.5)


def test_handcrafted_matches_exhaustive_oracle():
    ds, preds = handcrafted()
    r = evaluate(preds, ds)
    ap, ar, aps, recs = oracle_report(ds, preds, DEFAULT_THRESHOLDS)
    assert r.ap == pytest.approx(ap, abs=1e-9)
    assert r.ar == pytest.approx(ar, abs=1e-9)
    assert r.ap50 == pytest.approx(aps[0], abs=1e-9)
    assert r.ap75 == pytest.approx(aps[5], abs=1e-9)
    assert 0 < r.ap < r.ap50 <= 1


@pytest.mark.parametrize('transform', [lambda s: s ** 3, lambda s: 10 * s - 4, np.exp])
def test_ap_depends_on_ranking_only(transform):
    ds, preds = handcrafted()
    moved = [PredictionInstance(p.image_id, float(transform(p.score)), p.keypoints)
             for p in preds]
    assert evaluate(moved, ds).to_json() == evaluate(preds, ds).to_json()


def test_size_buckets():
    images = (ImageRecord(1, 'a', 640, 480),)
    small = make_person(base_xy(10, 10), bbox=(0, 0, 30, 30), id=1)
    medium = make_person(base_xy(100, 100), bbox=(90, 90, 50, 60), id=2)
    ds = Dataset(images, (small, medium))
    r = evaluate([pred_from(medium, score=0.9)], ds, thresholds=[0.5])
    assert r.ap_medium == 1.0
    assert r.ap_large is None
    assert r.ap == pytest.approx(ap_oracle([True], 2))


@settings(max_examples=100, deadline=None)
@given(flags=st.lists(st.booleans(), max_size=12), extra=st.integers(0, 3))
def test_interpolated_ap_matches_definition(flags, extra):
    num_gt = sum(flags) + extra
    if num_gt == 0:
        return
    tp = np.array(flags, bool)
    assert interpolated_ap(tp, ~tp, num_gt) == pytest.approx(ap_oracle(flags, num_gt), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10 ** 6), d=st.integers(1, 4), g=st.integers(1, 4),
       thr=st.sampled_from([0.3, 0.5, 0.75]))
def test_greedy_match_is_lexicographic_best(seed, d, g, thr):
    sims = np.random.default_rng(seed).random((d, g))
    pred_gt, _ = greedy_match(sims, thr, np.zeros(g, bool))
    assert list(pred_gt) == best_assignment(sims, thr)


def test_report_serialization():
    ds, preds = handcrafted()
    r = evaluate(preds, ds)
    doc = json.loads(json.dumps(r.to_json()))
    assert set(doc) >= {'ap', 'ap50', 'ap75', 'ar', 'ar50', 'ar75', 'ap_medium', 'ap_large'}
    assert dict(r.csv_rows())['ap'] == r.ap


def test_parse_predictions_round_trip():
    ds, preds = handcrafted()
    lines = [json.dumps(p.to_json()) for p in preds]
    back = parse_predictions(lines + [''])
    assert [p.score for p in back] == [p.score for p in preds]
    with pytest.raises(InputError, match='line 1'):
        parse_predictions(['{"image_id": 1}'])


def test_predictions_on_image_without_labels(coco3_bytes):
    ds = parse_annotations(coco3_bytes)
    stray = pred_from(make_person(), image_id=3, score=0.5)
    r = evaluate(perfect_predictions(ds) + [stray], ds, thresholds=[0.5])
    # the stray ranks below every hit, so precision stays 1 up to full recall
    assert r.ap == 1.0
    r = evaluate(perfect_predictions(ds) + [pred_from(make_person(), image_id=3, score=2.0)],
                 ds, thresholds=[0.5])
    assert r.ap == pytest.approx(ap_oracle([False, True, True, True], 3))
