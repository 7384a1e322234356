"""Limb joint occlusion augmentation.

A fraction ``alpha`` of the visible limb joints is picked at random and a
constant-valued block sized ``beta`` times the person box is pasted centred on
each picked joint. Keypoint labels are left untouched, so the network is still
supervised on where the hidden joints really are.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .keypoints import LIMB_GRAPH, JointGraph, PersonInstance, visible_limb_joints

VIS_FILL = 169  # fixed fill used for figures


@dataclass(frozen=True)
class AugmentConfig:
    """Occlusion augmentation settings.

    ``fill=None`` draws one value per block uniformly from [0, 255];
    an integer pins every block to that value.
    """
    alpha: float = 0.15
    beta: float = 0.20
    seed: int = 0
    fill: Optional[int] = None

    def __post_init__(self):
        _check_ratio('alpha', self.alpha)
        _check_ratio('beta', self.beta)
        if self.fill is not None and not 0 <= self.fill <= 255:
            raise ValueError(f'fill must be in [0, 255], got {self.fill}')

    @property
    def fill_mode(self) -> str:
        return 'random_uniform' if self.fill is None else 'fixed'


@dataclass(frozen=True)
class Rect:
    """Integer pixel rectangle, half-open: columns ``x_min..x_max-1``."""
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    degenerate: bool = False

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return self.x_min, self.y_min, self.x_max, self.y_max


@dataclass(frozen=True)
class OcclusionRecord:
    joint: int
    rect: Rect
    fill: int

    def to_json(self, image_id=None) -> dict:
        rec = {'joint': self.joint, 'rect': list(self.rect.as_tuple()), 'fill': self.fill}
        if image_id is not None:
            rec = {'image_id': image_id, **rec}
        return rec


class ContractViolation(RuntimeError):
    """A caller broke a documented precondition of an internal routine."""


def _check_ratio(name, value):
    if not (0 < value <= 1):
        raise ValueError(f'{name} must lie in (0, 1], got {value}')


def occlusion_count(alpha: float, num_visible: int) -> int:
    """``ceil(alpha * V)``, robust to binary noise in decimal ``alpha``."""
    # 0.6 * 5 == 3.0000000000000004 in binary; rounding first keeps ceil honest
    return math.ceil(round(alpha * num_visible, 9))


def select_occlusion_joints(visible: Sequence[int], alpha: float,
                            rng: np.random.Generator) -> List[int]:
    """Draw ``ceil(alpha * len(visible))`` joints without replacement."""
    _check_ratio('alpha', alpha)
    visible = list(visible)
    if len(set(visible)) != len(visible):
        raise ValueError('visible joints contain duplicates')
    v = occlusion_count(alpha, len(visible))
    if v == 0:
        return []
    picked = rng.choice(len(visible), size=v, replace=False)
    return [visible[i] for i in picked]


def occlusion_rect(joint_xy, bbox_hw, beta: float, image_wh) -> Rect:
    """Block of size ``beta * (h, w)`` centred on a joint, clipped to the image.

    The raw block is clipped to ``[0, W] x [0, H]`` and rounded outward
    (floor the minima, ceil the maxima). The result is flagged degenerate when
    the clipped block is empty or the unrounded block is under one pixel on a
    side; callers skip degenerate blocks.
    """
    h, w = bbox_hw
    if not (h > 0 and w > 0):
        raise ValueError('bbox height and width must be positive')
    _check_ratio('beta', beta)
    x, y = joint_xy
    img_w, img_h = image_wh
    h_o, w_o = beta * h, beta * w
    x0 = min(max(x - w_o / 2, 0), img_w)
    x1 = min(max(x + w_o / 2, 0), img_w)
    y0 = min(max(y - h_o / 2, 0), img_h)
    y1 = min(max(y + h_o / 2, 0), img_h)
    rect = Rect(math.floor(x0), math.floor(y0), math.ceil(x1), math.ceil(y1))
    degenerate = rect.width <= 0 or rect.height <= 0 or w_o < 1 or h_o < 1
    if degenerate:
        rect = Rect(*rect.as_tuple(), degenerate=True)
    return rect


def apply_occlusion(image: np.ndarray, records: Sequence[OcclusionRecord]) -> np.ndarray:
    """Return a copy of ``image`` with every record's block set to its fill.

    Later records overwrite earlier ones where blocks overlap.
    """
    out = np.array(image, copy=True)
    img_h, img_w = out.shape[:2]
    for rec in records:
        r = rec.rect
        if not (0 <= r.x_min <= r.x_max <= img_w and 0 <= r.y_min <= r.y_max <= img_h):
            raise ContractViolation(f'rect {r.as_tuple()} exceeds image {img_w}x{img_h}')
        out[r.y_min:r.y_max, r.x_min:r.x_max, ...] = rec.fill
    return out


def augment_instance(image: np.ndarray, inst: PersonInstance, cfg: AugmentConfig,
                     rng: np.random.Generator,
                     graph: JointGraph = LIMB_GRAPH) -> Tuple[np.ndarray, List[OcclusionRecord]]:
    """Occlude a random subset of the instance's visible limb joints.

    Args:
        image: ``H x W`` or ``H x W x C`` uint8 buffer; the instance bbox and
            keypoints are read in this buffer's coordinates.
        inst: the person to augment. Never modified.
        cfg: ratios and fill mode. ``cfg.seed`` is not consumed here; pass a
            generator from :func:`instance_rng`.
        rng: source of the joint draw and the fill values.

    Returns:
        The augmented copy and the applied records in application order.
    """
    selected = select_occlusion_joints(visible_limb_joints(inst, graph), cfg.alpha, rng)
    img_h, img_w = image.shape[:2]
    records = []
    for j in selected:
        # one draw per selected joint, so geometry never shifts the random stream
        fill = int(rng.integers(0, 256)) if cfg.fill is None else int(cfg.fill)
        kp = inst.keypoints[j]
        rect = occlusion_rect((kp.x, kp.y), inst.height_width, cfg.beta, (img_w, img_h))
        if not rect.degenerate:
            records.append(OcclusionRecord(j, rect, fill))
    return apply_occlusion(image, records), records


def instance_rng(seed: int, image_id: int, instance_id: int = 0) -> np.random.Generator:
    """Generator keyed by ``(seed, image_id, instance_id)``.

    Keying rather than sharing one stream keeps results independent of the
    order or parallelism in which images are processed.
    """
    return np.random.default_rng([seed, image_id, instance_id])


def augment_image(image: np.ndarray, instances: Sequence[PersonInstance],
                  cfg: AugmentConfig, image_id: int = 0):
    """Augment every instance of one image independently, in list order."""
    records = []
    for inst in instances:
        rng = instance_rng(cfg.seed, image_id, inst.id)
        image, recs = augment_instance(image, inst, cfg, rng)
        records.extend(recs)
    return image, records
