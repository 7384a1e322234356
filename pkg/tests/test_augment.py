import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limbpose.augment import (AugmentConfig, ContractViolation, OcclusionRecord, Rect,
                              apply_occlusion, augment_instance, instance_rng, occlusion_count,
                              occlusion_rect, select_occlusion_joints)
from limbpose.keypoints import LIMB_JOINTS

from conftest import make_person
from oracles import rect_oracle


@pytest.mark.parametrize('V, alpha, expected', [(12, 0.15, 2), (0, 0.15, 0), (7, 0.15, 2),
                                                (12, 1.0, 12), (1, 0.05, 1)])
def test_select_count(V, alpha, expected):
    got = select_occlusion_joints(list(range(V)), alpha, np.random.default_rng(0))
    assert len(got) == expected
    assert len(set(got)) == len(got)
    assert set(got) <= set(range(V))


def test_occlusion_count_exhaustive():
    for k in range(1, 21):
        alpha = k / 20
        for V in range(13):
            assert occlusion_count(alpha, V) == math.ceil(Fraction(k, 20) * V)


@pytest.mark.parametrize('alpha', [0.0, -0.1, 1.01])
def test_select_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        select_occlusion_joints([5, 6], alpha, np.random.default_rng(0))


def test_select_is_uniform():
    counts = np.zeros(17)
    rng = np.random.default_rng(123)
    for _ in range(6000):
        for j in select_occlusion_joints(list(LIMB_JOINTS), 0.15, rng):
            counts[j] += 1
    freq = counts[5:] / counts[5:].sum()
    assert np.allclose(freq, 1 / 12, atol=0.01)


def test_select_deterministic():
    a = select_occlusion_joints(list(LIMB_JOINTS), 0.3, np.random.default_rng(5))
    b = select_occlusion_joints(list(LIMB_JOINTS), 0.3, np.random.default_rng(5))
    assert a == b


def test_rect_raw():
    r = occlusion_rect((100, 150), (300, 200), 0.20, (10_000, 10_000))
    assert r.as_tuple() == (80, 120, 120, 180)
    assert not r.degenerate


def test_rect_clipped():
    r = occlusion_rect((5, 5), (300, 200), 0.20, (640, 480))
    # raw (-15, -25, 25, 35) clipped to the image
    assert r.as_tuple() == (0, 0, 25, 35)


def test_rect_rounds_outward():
    r = occlusion_rect((10.3, 20.7), (10, 10), 0.5, (100, 100))
    # raw (7.8, 18.2, 12.8, 23.2)
    assert r.as_tuple() == (7, 18, 13, 24)


@pytest.mark.parametrize('xy', [(100.0, 100.0), (100.4, 37.9)])
def test_rect_tiny_beta_is_degenerate(xy):
    r = occlusion_rect(xy, (300, 200), 1e-9, (640, 480))
    assert r.degenerate
    assert r.width <= 2 and r.height <= 2


def test_rect_outside_image_is_degenerate():
    r = occlusion_rect((700, 100), (300, 200), 0.2, (640, 480))
    assert r.degenerate and r.width == 0


def test_rect_rejects_bad_bbox():
    with pytest.raises(ValueError):
        occlusion_rect((1, 1), (0, 10), 0.2, (10, 10))


@settings(max_examples=300, deadline=None)
@given(x=st.floats(-50, 700), y=st.floats(-50, 500), h=st.floats(1, 600),
       w=st.floats(1, 600), beta=st.floats(0.01, 1.0))
def test_rect_matches_pixel_enumeration(x, y, h, w, beta):
    r = occlusion_rect((x, y), (h, w), beta, (640, 480))
    expected = rect_oracle(x, y, h, w, beta, 640, 480)
    if expected is None:
        assert r.width <= 0 or r.height <= 0
    else:
        assert r.as_tuple() == expected


@settings(max_examples=200, deadline=None)
@given(x=st.floats(200, 400), y=st.floats(200, 300), h=st.floats(10, 300),
       w=st.floats(10, 300), beta=st.floats(0.05, 0.5))
def test_rect_centre_and_size(x, y, h, w, beta):
    # interior joints: no clipping, so only outward rounding can move the edges
    r = occlusion_rect((x, y), (h, w), beta, (1000, 1000))
    assert abs((r.x_min + r.x_max) / 2 - x) <= 1
    assert abs((r.y_min + r.y_max) / 2 - y) <= 1
    assert beta * w <= r.width <= beta * w + 2
    assert beta * h <= r.height <= beta * h + 2


def test_apply_empty_is_identity():
    img = np.random.default_rng(0).integers(0, 256, (20, 30, 3), dtype=np.uint8)
    out = apply_occlusion(img, [])
    assert np.array_equal(out, img) and out is not img


def test_apply_single_block_169():
    img = np.zeros((40, 40, 3), dtype=np.uint8)
    out = apply_occlusion(img, [OcclusionRecord(9, Rect(5, 5, 15, 15), 169)])
    for c in range(3):
        assert (out[..., c] != img[..., c]).sum() == 100
    assert (out[5:15, 5:15] == 169).all()


def test_apply_last_writer_wins():
    img = np.zeros((20, 20), dtype=np.uint8)
    out = apply_occlusion(img, [OcclusionRecord(5, Rect(0, 0, 10, 10), 10),
                                OcclusionRecord(6, Rect(5, 5, 15, 15), 200)])
    assert (out[5:10, 5:10] == 200).all()
    assert (out[0:5, 0:5] == 10).all()


def test_apply_rejects_out_of_bounds():
    img = np.zeros((10, 10), dtype=np.uint8)
    with pytest.raises(ContractViolation):
        apply_occlusion(img, [OcclusionRecord(5, Rect(0, 0, 11, 5), 1)])


def _image(seed=0, shape=(300, 240, 3)):
    return np.random.default_rng(seed).integers(0, 256, shape, dtype=np.uint8)


def test_augment_nothing_visible():
    inst = make_person(vis=1)
    img = _image()
    out, recs = augment_instance(img, inst, AugmentConfig(), np.random.default_rng(0))
    assert recs == [] and np.array_equal(out, img)


def test_augment_defaults_give_two_centred_blocks(person):
    img = _image()
    out, recs = augment_instance(img, person, AugmentConfig(), np.random.default_rng(3))
    assert len(recs) == 2
    h, w = person.height_width
    for rec in recs:
        kp = person.keypoints[rec.joint]
        assert rec.joint in LIMB_JOINTS
        assert rec.rect == occlusion_rect((kp.x, kp.y), (h, w), 0.2, (240, 300))
        assert 0 <= rec.fill <= 255


def test_augment_keeps_annotations(person):
    before = (person.xy.copy(), person.vis.copy())
    augment_instance(_image(), person, AugmentConfig(alpha=1.0), np.random.default_rng(0))
    assert np.array_equal(person.xy, before[0]) and np.array_equal(person.vis, before[1])


def test_augment_fixed_fill(person):
    _, recs = augment_instance(_image(), person, AugmentConfig(alpha=0.5, fill=169),
                               np.random.default_rng(0))
    assert recs and all(r.fill == 169 for r in recs)


def test_augment_deterministic(person):
    cfg = AugmentConfig(alpha=0.4)
    a = augment_instance(_image(), person, cfg, instance_rng(7, 3, person.id))
    b = augment_instance(_image(), person, cfg, instance_rng(7, 3, person.id))
    assert a[0].tobytes() == b[0].tobytes() and a[1] == b[1]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), alpha=st.floats(0.05, 1.0),
       beta=st.floats(0.05, 0.5))
def test_augment_purity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (120, 100, 3), dtype=np.uint8)
    xy = rng.uniform(0, 100, (17, 2))
    vis = rng.integers(0, 3, 17)
    inst = make_person(xy=xy, vis=vis, bbox=(0, 0, 100, 120))
    out, recs = augment_instance(img, inst, AugmentConfig(alpha, beta), rng)
    covered = np.zeros(img.shape[:2], bool)
    expected = img.copy()
    for r in recs:
        covered[r.rect.y_min:r.rect.y_max, r.rect.x_min:r.rect.x_max] = True
        expected[r.rect.y_min:r.rect.y_max, r.rect.x_min:r.rect.x_max] = r.fill
    assert np.array_equal(out[~covered], img[~covered])
    assert np.array_equal(out, expected)


def test_config_validation():
    assert AugmentConfig().alpha == 0.15 and AugmentConfig().beta == 0.20
    assert AugmentConfig().fill_mode == 'random_uniform'
    for bad in (dict(alpha=0), dict(beta=1.5), dict(fill=256)):
        with pytest.raises(ValueError):
            AugmentConfig(**bad)
