import json

import numpy as np
import pytest

from limbpose.keypoints import JOINT_INDEX, LIMB_JOINTS
from limbpose.schedule import ScheduleSpec
from limbpose.toyfit import (VARIANTS, SyntheticInstance, _argmin_shift, loss_comparison,
                             make_suite, optimize_occluded_channel, random_init_shift,
                             shift_sweep)

J = JOINT_INDEX


@pytest.fixture(scope='module')
def suite():
    return make_suite(8, seed=3)


def test_suite_is_valid_and_seeded(suite):
    again = make_suite(8, seed=3)
    for a, b in zip(suite, again):
        assert np.array_equal(a.cells, b.cells) and a.occluded == b.occluded
    assert all(inst.occluded in LIMB_JOINTS for inst in suite)
    assert not all(np.array_equal(a.cells, b.cells) for a, b in zip(suite, make_suite(8, 4)))
    # a prefix of a bigger suite is the same suite
    assert all(np.array_equal(a.cells, b.cells) for a, b in zip(suite, make_suite(12, 3)))


def test_instance_validation():
    cells = make_suite(1)[0].cells
    with pytest.raises(ValueError):
        SyntheticInstance(cells, J['nose'])
    bad = cells.copy()
    bad[0] = (100, 0)
    with pytest.raises(ValueError):
        SyntheticInstance(bad, J['left_wrist'])


@pytest.mark.parametrize('lam', [0.0, 1e-4, 1e-2])
def test_sweep_structure_minimum_is_unique_origin(suite, lam):
    for inst in suite:
        res = shift_sweep(inst, lam=lam)
        assert res.argmin['l_lsl'] == (0, 0)
        assert res.value_at('l_lsl', (0, 0)) == 0.0
        others = res.valid & (np.abs(res.shifts).sum(axis=1) > 0)
        assert (res.l_lsl[others] > 0).all()


def test_sweep_lambda_zero_matches_mse(suite):
    for inst in suite[:3]:
        res = shift_sweep(inst, lam=0.0)
        assert res.argmin['l_dsl'] == res.argmin['l_mse'] == (0, 0)
        valid = res.valid
        assert np.array_equal(res.l_dsl[valid], res.l_mse[valid])


def test_sweep_surface_identity(suite):
    for inst in suite:
        res = shift_sweep(inst, lam=1e-3)
        v = res.valid
        np.testing.assert_allclose(res.l_dsl[v], res.l_mse[v] + 1e-3 * res.l_lsl[v], rtol=1e-12)


def test_sweep_marks_off_grid_invalid():
    inst = make_suite(1, seed=0, radius=40)[0]
    res = shift_sweep(inst)
    assert not res.valid.all()
    assert np.isnan(res.l_mse[~res.valid]).all()
    assert res.surface('l_lsl').shape == (81, 81)


@pytest.mark.parametrize('name', ['l_mse', 'l_lsl', 'l_dsl'])
def test_sweep_monotone_along_rays(suite, name):
    directions = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)]
    for inst in suite:
        res = shift_sweep(inst, lam=1e-4)
        reach = int(3 * inst.sigma)
        for dx, dy in directions:
            vals = []
            for t in range(reach + 1):
                if dx * dx * t * t + dy * dy * t * t > (3 * inst.sigma) ** 2:
                    break
                shift = (dx * t, dy * t)
                if not inst.in_grid(inst.cells[inst.occluded] + shift):
                    break
                vals.append(res.value_at(name, shift))
            assert all(b > a for a, b in zip(vals, vals[1:])), (dx, dy, vals)


def test_sweep_tie_break_prefers_small_shift():
    # equal losses: smallest norm wins, then row-major (dy before dx)
    shifts = np.array([[1, 0], [0, -1], [-1, 0], [0, 1], [2, 2]])
    vals = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    assert _argmin_shift(shifts, vals, np.ones(5, bool)) == (0, -1)


@pytest.mark.parametrize('lam', [0.0, 1e-4, 1e-2])
def test_optimize_full_supervision_converges(suite, lam):
    for inst in suite[:4]:
        tr = optimize_occluded_channel(inst, lam=lam, steps=300, supervision='full')
        assert not tr.diverged
        assert tr.final_distance <= inst.stride / 2


@pytest.mark.slow
def test_optimize_structure_only_improves_on_average():
    suite = make_suite(100, seed=7)
    improvements = []
    for i, inst in enumerate(suite):
        shift = random_init_shift(inst, np.random.default_rng([7, i]))
        tr = optimize_occluded_channel(inst, lam=1e-4, steps=100, supervision='structure_only',
                                       init_shift=shift)
        improvements.append(tr.init_distance - tr.final_distance)
    assert np.mean(improvements) > 0


def test_optimize_structure_only_lambda_zero_is_frozen(suite):
    tr = optimize_occluded_channel(suite[0], lam=0.0, steps=20, supervision='structure_only')
    assert (tr.positions == tr.positions[0]).all()
    assert tr.final_distance == tr.init_distance


def test_optimize_reports_divergence():
    inst = make_suite(1)[0]
    tr = optimize_occluded_channel(inst, lam=1e-2, steps=200, rate=100.0)
    assert tr.diverged and tr.steps_run < 200


def test_optimize_accepts_schedule(suite):
    spec = ScheduleSpec('step', 1e-4, total_epochs=210, step_epoch=139)
    tr = optimize_occluded_channel(suite[0], lam=spec, steps=50, supervision='structure_only',
                                   rate=1 / 12e-4)
    # the weight is zero for the first 139/210 of the run, so the peak cannot move early
    assert (tr.positions[:33] == tr.positions[0]).all()


@pytest.mark.parametrize('kwargs', [dict(steps=0), dict(supervision='none'), dict(rate=-1.0),
                                    dict(init_shift=(500, 0)), dict(lam=-1.0)])
def test_optimize_errors(kwargs):
    with pytest.raises(ValueError):
        optimize_occluded_channel(make_suite(1)[0], **kwargs)


def test_comparison_shape_and_determinism(suite):
    a = loss_comparison(suite[:4], steps=60)
    b = loss_comparison(suite[:4], steps=60)
    assert len(a.rows()) == len(VARIANTS)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    for v in VARIANTS:
        assert np.array_equal(a.distances[v], b.distances[v])
    assert a.to_json()['protocol'].startswith('synthetic')


def test_comparison_unshifted_start(suite):
    t = loss_comparison(suite[:3], steps=30, init_shifts=[(0, 0)] * 3)
    assert all(v == 0.0 for _, v in t.rows())
    assert t.sign_test_p == 1.0


def test_comparison_subset_of_variants(suite):
    t = loss_comparison(suite[:2], variants=('sal',), steps=10)
    assert [r[0] for r in t.rows()] == ['sal'] and t.sign_test_p is None
    with pytest.raises(ValueError):
        loss_comparison([], steps=10)
    with pytest.raises(ValueError):
        loss_comparison(suite[:1], variants=('l1',), steps=10)


def test_random_init_shift_within_three_sigma(suite):
    rng = np.random.default_rng(0)
    for inst in suite:
        dx, dy = random_init_shift(inst, rng)
        assert 0 < dx * dx + dy * dy <= 36


@pytest.mark.parametrize('scheme', ['linear', 'exponential'])
def test_growing_schedule_is_not_divergence(suite, scheme):
    # the weight rises every step, so the raw loss sequence can rise too
    spec = ScheduleSpec(scheme, 1e-4)
    inst = suite[0]
    shift = random_init_shift(inst, np.random.default_rng(0))
    tr = optimize_occluded_channel(inst, lam=spec, steps=210, rate=1 / 12e-4,
                                   supervision='structure_only', init_shift=shift)
    assert not tr.diverged and tr.steps_run == 210
    assert tr.final_distance < tr.init_distance
