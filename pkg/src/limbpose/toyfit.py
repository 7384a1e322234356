"""Desk-scale experiments on synthetic stick figures.

These optimize heatmap values directly instead of network weights, so they
isolate the geometry of the losses. ``structure_only`` supervision removes
the occluded joint from the MSE term; it stands in for an occluded joint
whose target the network cannot see. This protocol is constructed here for
verification and does not reproduce any benchmark number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .heatmap import HeatmapStack, decode, gaussian
from .keypoints import (JOINT_INDEX, LIMB_GRAPH, LIMB_JOINTS, NUM_JOINTS, SKELETON_TREE,
                        JointGraph, PersonInstance)
from .loss import dsl_gradient, dsl_loss
from .schedule import ScheduleSpec, lambda_at

PROTOCOL_NOTE = 'synthetic desk-scale protocol; not a benchmark reproduction'


@dataclass(frozen=True)
class PoseFamily:
    """Articulated 2D figure; lengths in heatmap cells, angles in degrees.

    Limb angles are measured from straight down, positive pointing away from
    the body midline.
    """
    torso: float = 14.0
    head: float = 5.0
    shoulder_half: float = 5.0
    hip_half: float = 3.5
    upper_arm: float = 7.0
    forearm: float = 6.0
    thigh: float = 9.0
    shin: float = 9.0
    lean: Tuple[float, float] = (-15.0, 15.0)
    upper_arm_angle: Tuple[float, float] = (-20.0, 150.0)
    elbow_bend: Tuple[float, float] = (0.0, 130.0)
    thigh_angle: Tuple[float, float] = (-15.0, 50.0)
    knee_bend: Tuple[float, float] = (0.0, 110.0)
    margin: int = 2


DEFAULT_FAMILY = PoseFamily()


@dataclass(frozen=True)
class SyntheticInstance:
    """Stick figure on the heatmap grid with one designated occluded joint.

    ``cells`` holds integer ``(u, v)`` cells so encoding is exact.
    """
    cells: np.ndarray
    occluded: int
    grid: Tuple[int, int] = (64, 48)
    sigma: float = 2.0
    stride: float = 4.0
    radius: int = 10
    step: int = 1

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=int).reshape(NUM_JOINTS, 2)
        object.__setattr__(self, 'cells', cells)
        if self.occluded not in LIMB_JOINTS:
            raise ValueError('occluded joint must be a limb joint')
        h, w = self.grid
        if not ((cells >= 0).all() and (cells[:, 0] < w).all() and (cells[:, 1] < h).all()):
            raise ValueError('all joints must lie on the grid')

    @property
    def keypoints_px(self) -> np.ndarray:
        return self.cells * self.stride

    def person(self) -> PersonInstance:
        xy = self.keypoints_px
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        bbox = (lo[0], lo[1], max(hi[0] - lo[0], 1.0), max(hi[1] - lo[1], 1.0))
        return PersonInstance.from_arrays(xy, np.full(NUM_JOINTS, 2), bbox)

    @cached_property
    def gt(self) -> np.ndarray:
        return np.stack([gaussian(self.grid, c, self.sigma) for c in self.cells])

    def channel_at(self, cell) -> np.ndarray:
        return gaussian(self.grid, cell, self.sigma)

    def in_grid(self, cell) -> bool:
        h, w = self.grid
        return 0 <= cell[0] < w and 0 <= cell[1] < h

    def shifts(self) -> np.ndarray:
        r = np.arange(-self.radius, self.radius + 1, self.step)
        dy, dx = np.meshgrid(r, r, indexing='ij')
        return np.stack([dx.ravel(), dy.ravel()], axis=1)


def _rot(angle_deg: float, length: float, side: int) -> np.ndarray:
    """Vector of ``length`` at ``angle`` from straight down, mirrored by ``side``."""
    a = math.radians(angle_deg)
    return np.array([side * math.sin(a) * length, math.cos(a) * length])


def sample_pose(rng: np.random.Generator, family: PoseFamily = DEFAULT_FAMILY,
                grid: Tuple[int, int] = (64, 48)) -> np.ndarray:
    """Sample integer joint cells ``(17, 2)`` for one figure, rejecting off-grid poses."""
    h, w = grid
    f = family
    for _ in range(1000):
        lean = math.radians(rng.uniform(*f.lean))
        up = np.array([math.sin(lean), -math.cos(lean)])
        across = np.array([math.cos(lean), math.sin(lean)])  # toward the figure's left
        pelvis = np.array([w / 2 + rng.uniform(-3, 3), h / 2 + 6 + rng.uniform(-3, 3)])
        neck = pelvis + f.torso * up
        pts = np.zeros((NUM_JOINTS, 2))
        nose = neck + f.head * up
        pts[JOINT_INDEX['nose']] = nose
        pts[JOINT_INDEX['left_eye']] = nose + 1.5 * across + 1.2 * up
        pts[JOINT_INDEX['right_eye']] = nose - 1.5 * across + 1.2 * up
        pts[JOINT_INDEX['left_ear']] = nose + 3.0 * across
        pts[JOINT_INDEX['right_ear']] = nose - 3.0 * across
        for side, name in ((1, 'left'), (-1, 'right')):
            shoulder = neck + side * f.shoulder_half * across
            a1 = rng.uniform(*f.upper_arm_angle)
            elbow = shoulder + _rot(a1, f.upper_arm, side)
            wrist = elbow + _rot(a1 + rng.uniform(*f.elbow_bend), f.forearm, side)
            hip = pelvis + side * f.hip_half * across
            a2 = rng.uniform(*f.thigh_angle)
            knee = hip + _rot(a2, f.thigh, side)
            ankle = knee + _rot(a2 - rng.uniform(*f.knee_bend), f.shin, side)
            for joint, p in (('shoulder', shoulder), ('elbow', elbow), ('wrist', wrist),
                             ('hip', hip), ('knee', knee), ('ankle', ankle)):
                pts[JOINT_INDEX[f'{name}_{joint}']] = p
        cells = np.floor(pts + 0.5).astype(int)
        m = f.margin
        if ((cells >= m).all() and (cells[:, 0] < w - m).all()
                and (cells[:, 1] < h - m).all()):
            return cells
    raise RuntimeError('could not sample an in-grid pose; check the pose family')


def make_suite(n: int, seed: int = 0, family: PoseFamily = DEFAULT_FAMILY,
               **kwargs) -> List[SyntheticInstance]:
    """``n`` instances; instance ``i`` depends only on ``(seed, i)``."""
    suite = []
    grid = kwargs.get('grid', (64, 48))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        cells = sample_pose(rng, family, grid)
        occluded = int(rng.choice(LIMB_JOINTS))
        suite.append(SyntheticInstance(cells, occluded, **kwargs))
    return suite


@dataclass
class SweepResult:
    shifts: np.ndarray  # (n, 2) dx, dy in cells
    valid: np.ndarray
    l_mse: np.ndarray
    l_lsl: np.ndarray
    l_dsl: np.ndarray
    lam: float
    argmin: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def surface(self, name: str) -> np.ndarray:
        """Loss values reshaped to the square shift grid (NaN where invalid)."""
        side = int(round(math.sqrt(len(self.shifts))))
        return getattr(self, name).reshape(side, side)

    def value_at(self, name: str, shift) -> float:
        hit = np.flatnonzero((self.shifts == np.asarray(shift)).all(axis=1))
        return float(getattr(self, name)[hit[0]])


def _argmin_shift(shifts, values, valid) -> Tuple[int, int]:
    idx = np.flatnonzero(valid)
    s = shifts[idx]
    norm2 = (s ** 2).sum(axis=1)
    # lexsort: last key is primary -> loss, then |shift|, then row-major (dy, dx)
    order = np.lexsort((s[:, 0], s[:, 1], norm2, values[idx]))
    best = s[order[0]]
    return int(best[0]), int(best[1])


def shift_sweep(inst: SyntheticInstance, graph: JointGraph = LIMB_GRAPH,
                lam: float = 1e-4) -> SweepResult:
    """Losses with the occluded joint's predicted channel displaced over a grid.

    Shifts that push the joint off the heatmap are marked invalid.
    """
    shifts = inst.shifts()
    n = len(shifts)
    valid = np.zeros(n, dtype=bool)
    l_mse, l_lsl, l_dsl = (np.full(n, np.nan) for _ in range(3))
    gt = inst.gt
    pred = gt.copy()
    j = inst.occluded
    origin = inst.cells[j]
    for s, shift in enumerate(shifts):
        cell = origin + shift
        if not inst.in_grid(cell):
            continue
        valid[s] = True
        pred[j] = inst.channel_at(cell)
        b = dsl_loss(pred, gt, graph, lam)
        l_mse[s], l_lsl[s], l_dsl[s] = b.l_mse, b.l_lsl, b.l_dsl
    pred[j] = gt[j]
    res = SweepResult(shifts, valid, l_mse, l_lsl, l_dsl, lam)
    for name in ('l_mse', 'l_lsl', 'l_dsl'):
        res.argmin[name] = _argmin_shift(shifts, getattr(res, name), valid)
    return res


@dataclass
class Trajectory:
    positions: np.ndarray  # (steps_run + 1, 2) decoded pixels
    losses: np.ndarray
    init_distance: float
    final_distance: float
    diverged: bool
    steps_run: int


LambdaLike = Union[float, ScheduleSpec]


def _lambda_fn(lam: LambdaLike, steps: int):
    if isinstance(lam, ScheduleSpec):
        return lambda s: lambda_at(lam, s * lam.total_epochs / steps), lam.lambda_max
    if lam < 0:
        raise ValueError('lambda must be non-negative')
    return lambda s: float(lam), float(lam)


def default_rate(lam_max: float, supervision: str, num_supervised: int = NUM_JOINTS,
                 max_degree: int = 3) -> float:
    """Step size that keeps the per-cell update contractive.

    The occluded channel's loss is quadratic with curvature at most
    ``2/N + 2 * lam * (1 + degree)``; half the inverse is a safe step.
    """
    curv = 2.0 * lam_max * (1 + max_degree)
    if supervision == 'full':
        curv += 2.0 / num_supervised
    return 0.5 / curv if curv > 0 else 1.0


def optimize_occluded_channel(inst: SyntheticInstance, graph: JointGraph = LIMB_GRAPH,
                              lam: LambdaLike = 1e-4, steps: int = 200,
                              rate: Optional[float] = None, supervision: str = 'full',
                              init_shift=(3, 3)) -> Trajectory:
    """Gradient descent on the occluded joint's channel, all others frozen at truth.

    Args:
        lam: constant weight or a schedule, read at epoch
            ``step * total_epochs / steps``.
        rate: step size; ``None`` picks :func:`default_rate`.
        supervision: ``'full'`` or ``'structure_only'`` (the occluded channel
            is dropped from the MSE term).
        init_shift: starting displacement of the channel's peak, in cells.

    Divergence (loss rising ten steps in a row) stops the run and is flagged.
    """
    if steps < 1:
        raise ValueError('steps must be >= 1')
    if supervision not in ('full', 'structure_only'):
        raise ValueError(f'unknown supervision {supervision!r}')
    lam_of, lam_max = _lambda_fn(lam, steps)
    mask = np.ones(NUM_JOINTS, dtype=bool)
    j = inst.occluded
    if supervision == 'structure_only':
        mask[j] = False
    if rate is None:
        deg = max((graph.degree(i) for i in graph.nodes), default=0)
        rate = default_rate(lam_max, supervision, int(mask.sum()), deg)
    if not rate > 0:
        raise ValueError('rate must be positive')

    gt = inst.gt
    pred = gt.copy()
    start = inst.cells[j] + np.asarray(init_shift, dtype=int)
    if not inst.in_grid(start):
        raise ValueError(f'initial position {tuple(start)} is off the grid')
    pred[j] = inst.channel_at(start)
    truth = inst.keypoints_px[j]

    def locate():
        return decode(HeatmapStack(pred[j:j + 1], inst.sigma, inst.stride)).coords[0]

    positions = [locate()]
    prev = dsl_loss(pred, gt, graph, lam_of(0), mask)
    losses = [prev.l_dsl]
    rising = 0
    diverged = False
    for s in range(steps):
        lam_s = lam_of(s)
        grad = dsl_gradient(pred, gt, graph, lam_s, mask)
        pred[j] -= rate * grad[j]
        positions.append(locate())
        cur = dsl_loss(pred, gt, graph, lam_s, mask)
        losses.append(cur.l_dsl)
        # compare at the same weight so a growing schedule does not look like a rise
        before = prev.l_mse + lam_s * prev.l_lsl
        rising = rising + 1 if cur.l_dsl > before else 0
        prev = cur
        if rising >= 10 or not np.isfinite(cur.l_dsl):
            diverged = True
            break
    positions = np.array(positions)
    return Trajectory(
        positions=positions, losses=np.array(losses),
        init_distance=float(np.linalg.norm(positions[0] - truth)),
        final_distance=float(np.linalg.norm(positions[-1] - truth)),
        diverged=diverged, steps_run=len(positions) - 1,
    )


VARIANTS = ('mse_only', 'sal', 'lsl_dynamic')


def variant_setup(variant: str, lam_max: float):
    """``(graph, lambda-or-schedule)`` for a comparison variant."""
    if variant == 'mse_only':
        return LIMB_GRAPH, 0.0
    if variant == 'sal':
        return SKELETON_TREE, lam_max
    if variant == 'lsl_dynamic':
        # step at the same fraction of training as 139 of 210 epochs
        return LIMB_GRAPH, ScheduleSpec('step', lam_max, total_epochs=210, step_epoch=139)
    raise ValueError(f'unknown variant {variant!r}; expected one of {VARIANTS}')


def random_init_shift(inst: SyntheticInstance, rng: np.random.Generator) -> Tuple[int, int]:
    """Nonzero integer shift within 3 sigma whose target stays on the grid."""
    r = int(math.floor(3 * inst.sigma))
    for _ in range(1000):
        dx, dy = (int(v) for v in rng.integers(-r, r + 1, size=2))
        if (dx, dy) != (0, 0) and dx * dx + dy * dy <= (3 * inst.sigma) ** 2 \
                and inst.in_grid(inst.cells[inst.occluded] + (dx, dy)):
            return dx, dy
    raise RuntimeError('no valid initial shift found')


@dataclass
class ComparisonTable:
    variants: Tuple[str, ...]
    mean_final_distance: Dict[str, float]
    mean_init_distance: float
    distances: Dict[str, np.ndarray]
    sign_test_p: Optional[float]
    wins: int
    losses: int

    def rows(self) -> List[Tuple[str, float]]:
        return [(v, self.mean_final_distance[v]) for v in self.variants]

    def to_json(self) -> dict:
        return {
            'protocol': PROTOCOL_NOTE,
            'variants': list(self.variants),
            'mean_final_distance_px': self.mean_final_distance,
            'mean_init_distance_px': self.mean_init_distance,
            'sign_test': {'p_value': self.sign_test_p, 'wins': self.wins,
                          'losses': self.losses,
                          'hypothesis': 'lsl_dynamic closer than mse_only'},
            'instances': len(next(iter(self.distances.values()))) if self.distances else 0,
        }


def loss_comparison(suite: Sequence[SyntheticInstance], variants: Sequence[str] = VARIANTS,
                    lam_max: float = 1e-4, steps: int = 210, rate: Optional[float] = None,
                    seed: int = 0, supervision: str = 'structure_only',
                    init_shifts=None) -> ComparisonTable:
    """Mean final localization error of the occluded joint per loss variant.

    Every variant sees the same instances, initial shifts and step size. The
    ``sal`` comparator applies the neighbour-sum loss over a whole-skeleton
    tree with a constant weight; ``lsl_dynamic`` uses the limb chains with a
    step schedule.
    """
    if not suite:
        raise ValueError('suite must not be empty')
    if rate is None:
        # shared step, contractive for node degree <= 3 at lam_max
        rate = 1.0 / (12.0 * lam_max) if lam_max > 0 else 1.0
    if init_shifts is None:
        init_shifts = [random_init_shift(inst, np.random.default_rng([seed, i]))
                       for i, inst in enumerate(suite)]
    distances: Dict[str, np.ndarray] = {}
    init = []
    for v in variants:
        graph, lam = variant_setup(v, lam_max)
        d = []
        for inst, shift in zip(suite, init_shifts):
            tr = optimize_occluded_channel(inst, graph, lam, steps, rate, supervision, shift)
            d.append(tr.final_distance)
            if v == variants[0]:
                init.append(tr.init_distance)
        distances[v] = np.array(d)

    p = None
    wins = losses = 0
    if 'lsl_dynamic' in distances and 'mse_only' in distances:
        diff = distances['mse_only'] - distances['lsl_dynamic']
        wins, losses = int((diff > 0).sum()), int((diff < 0).sum())
        if wins + losses:
            p = float(stats.binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue)
        else:
            p = 1.0
    return ComparisonTable(tuple(variants), {v: float(distances[v].mean()) for v in variants},
                           float(np.mean(init)), distances, p, wins, losses)
