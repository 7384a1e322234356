"""Keypoint, person and limb-graph data model plus COCO-style annotation IO.

Joint indices follow the COCO 17-keypoint order throughout the package.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NUM_JOINTS = 17

JOINT_NAMES = (
    'nose', 'left_eye', 'right_eye', 'left_ear', 'right_ear',
    'left_shoulder', 'right_shoulder', 'left_elbow', 'right_elbow',
    'left_wrist', 'right_wrist', 'left_hip', 'right_hip',
    'left_knee', 'right_knee', 'left_ankle', 'right_ankle',
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

HEAD_JOINTS = tuple(range(0, 5))
LIMB_JOINTS = tuple(range(5, 17))


class InputError(ValueError):
    """Malformed user-supplied input (files, flags, records)."""


class AnnotationParseError(InputError):
    """The annotation bytes are not valid UTF-8 JSON.

    ``offset`` is the byte offset of the failure within the input.
    """

    def __init__(self, msg: str, offset: int):
        super().__init__(f'{msg} (byte offset {offset})')
        self.offset = offset


class SchemaError(InputError):
    """Well-formed JSON that does not match the annotation schema."""

    def __init__(self, msg: str, field_name: str):
        super().__init__(f'{field_name}: {msg}')
        self.field = field_name


class Visibility(IntEnum):
    NOT_LABELED = 0
    LABELED_OCCLUDED = 1
    LABELED_VISIBLE = 2


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    vis: Visibility = Visibility.LABELED_VISIBLE

    def __post_init__(self):
        object.__setattr__(self, 'vis', Visibility(self.vis))
        if self.labeled and not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError('labeled keypoint with non-finite coordinates')

    @property
    def labeled(self) -> bool:
        return self.vis != Visibility.NOT_LABELED


@dataclass(frozen=True)
class PersonInstance:
    """One annotated person.

    ``bbox`` is ``(x0, y0, w, h)`` in pixels. ``area`` falls back to ``w * h``.
    """
    id: int
    bbox: Tuple[float, float, float, float]
    keypoints: Tuple[Keypoint, ...]
    area: Optional[float] = None
    image_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'bbox', tuple(float(v) for v in self.bbox))
        object.__setattr__(self, 'keypoints', tuple(self.keypoints))
        if len(self.bbox) != 4:
            raise ValueError('bbox must have 4 entries')
        if not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise ValueError(f'bbox width and height must be positive, got {self.bbox}')
        if len(self.keypoints) != NUM_JOINTS:
            raise ValueError(f'expected {NUM_JOINTS} keypoints, got {len(self.keypoints)}')
        if self.area is None:
            object.__setattr__(self, 'area', self.bbox[2] * self.bbox[3])

    @classmethod
    def from_arrays(cls, xy, vis, bbox, id: int = 0, image_id: int = 0,
                    area: Optional[float] = None) -> 'PersonInstance':
        xy = np.asarray(xy, dtype=float).reshape(NUM_JOINTS, 2)
        vis = np.asarray(vis, dtype=int).reshape(NUM_JOINTS)
        kps = tuple(Keypoint(float(x), float(y), Visibility(int(v)))
                    for (x, y), v in zip(xy, vis))
        return cls(id=id, bbox=tuple(bbox), keypoints=kps, area=area, image_id=image_id)

    @property
    def xy(self) -> np.ndarray:
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=float)

    @property
    def vis(self) -> np.ndarray:
        return np.array([int(k.vis) for k in self.keypoints], dtype=int)

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.vis > 0

    @property
    def height_width(self) -> Tuple[float, float]:
        return self.bbox[3], self.bbox[2]

    @property
    def unlabeled(self) -> bool:
        """True when no keypoint carries a label (all-zero COCO record)."""
        return not self.labeled_mask.any()


class JointGraph:
    """Undirected graph over joint indices.

    The package-wide limb graph is :data:`LIMB_GRAPH`; other instances exist
    only as comparators (e.g. a whole-skeleton tree).
    """

    def __init__(self, edges: Iterable[Tuple[int, int]], name: str = ''):
        self.name = name
        self.edges: Tuple[Tuple[int, int], ...] = tuple(
            (min(a, b), max(a, b)) for a, b in edges)
        adj: Dict[int, List[int]] = {}
        for a, b in self.edges:
            if a == b:
                raise ValueError('self loops are not allowed')
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        self._adj = {k: tuple(sorted(v)) for k, v in adj.items()}
        self.nodes: Tuple[int, ...] = tuple(sorted(self._adj))

    def neighbors(self, joint: int) -> Tuple[int, ...]:
        try:
            return self._adj[joint]
        except KeyError:
            raise ValueError(f'joint {joint} is not a node of graph {self.name!r}') from None

    def degree(self, joint: int) -> int:
        return len(self.neighbors(joint))

    def __contains__(self, joint) -> bool:
        return joint in self._adj

    def __repr__(self):
        return f'JointGraph({self.name!r}, nodes={len(self.nodes)}, edges={len(self.edges)})'


def _chain(*names: str) -> List[Tuple[int, int]]:
    idx = [JOINT_INDEX[n] for n in names]
    return list(zip(idx[:-1], idx[1:]))


LIMB_CHAINS = (
    ('left_wrist', 'left_elbow', 'left_shoulder', 'right_shoulder', 'right_elbow', 'right_wrist'),
    ('left_ankle', 'left_knee', 'left_hip', 'right_hip', 'right_knee', 'right_ankle'),
)

LIMB_GRAPH = JointGraph(_chain(*LIMB_CHAINS[0]) + _chain(*LIMB_CHAINS[1]), name='limbs')

# spanning tree over all 17 joints; used by the whole-skeleton structure loss comparator
SKELETON_TREE = JointGraph(
    _chain('left_ear', 'left_eye', 'nose', 'right_eye', 'right_ear')
    + _chain('nose', 'left_shoulder', 'left_elbow', 'left_wrist')
    + _chain('nose', 'right_shoulder', 'right_elbow', 'right_wrist')
    + _chain('left_shoulder', 'left_hip', 'left_knee', 'left_ankle')
    + _chain('right_shoulder', 'right_hip', 'right_knee', 'right_ankle'),
    name='skeleton_tree',
)


def limb_neighbors(graph: JointGraph, joint: int) -> List[int]:
    return list(graph.neighbors(joint))


def visible_limb_joints(inst: PersonInstance, graph: JointGraph = LIMB_GRAPH) -> List[int]:
    """Limb joints labeled visible (flag 2), ascending.

    Flag-1 joints are labeled but occluded and are not candidates for
    occlusion augmentation.
    """
    return [i for i in graph.nodes
            if inst.keypoints[i].vis == Visibility.LABELED_VISIBLE]


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    difficulty: Optional[str] = None


@dataclass(frozen=True)
class Dataset:
    images: Tuple[ImageRecord, ...]
    instances: Tuple[PersonInstance, ...]
    clamped_boxes: int = 0
    unlabeled_instances: Tuple[int, ...] = ()
    _by_image: Dict[int, Tuple[PersonInstance, ...]] = field(
        default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise SchemaError('duplicate image id', 'images.id')
        by_image: Dict[int, List[PersonInstance]] = {i: [] for i in ids}
        for inst in self.instances:
            if inst.image_id not in by_image:
                raise SchemaError(f'unknown image_id {inst.image_id}', 'annotations.image_id')
            by_image[inst.image_id].append(inst)
        object.__setattr__(self, '_by_image', {k: tuple(v) for k, v in by_image.items()})

    @property
    def image_ids(self) -> Tuple[int, ...]:
        return tuple(im.id for im in self.images)

    def image(self, image_id: int) -> ImageRecord:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)

    def instances_for(self, image_id: int) -> Tuple[PersonInstance, ...]:
        return self._by_image[image_id]


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaError('expected an object', where)
    if key not in obj:
        raise SchemaError('missing required field', f'{where}.{key}')
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f'expected a number, got {type(value).__name__}', where)
    return float(value)


def _clamp_bbox(bbox, width: float, height: float) -> Tuple[Tuple[float, ...], bool]:
    x0, y0, w, h = bbox
    x1, y1 = x0 + w, y0 + h
    cx0, cy0 = min(max(x0, 0.0), width), min(max(y0, 0.0), height)
    cx1, cy1 = min(max(x1, 0.0), width), min(max(y1, 0.0), height)
    clamped = (cx0, cy0, cx1 - cx0, cy1 - cy0)
    return clamped, clamped != (x0, y0, w, h)


def parse_annotations(data: bytes) -> Dataset:
    """Parse COCO keypoint annotations into a :class:`Dataset`.

    Only the ``images[].{id,file_name,width,height}`` and
    ``annotations[].{id,image_id,bbox,keypoints,area}`` subset is read. An
    optional ``images[].difficulty`` string is kept for grouped evaluation.
    Boxes reaching outside their image are clamped and counted in
    ``Dataset.clamped_boxes``.

    Raises:
        AnnotationParseError: input is not UTF-8 JSON.
        SchemaError: a required field is missing or malformed.
    """
    if isinstance(data, str):
        data = data.encode('utf-8')
    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as e:
        raise AnnotationParseError(f'invalid UTF-8: {e.reason}', e.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationParseError(e.msg, len(text[:e.pos].encode('utf-8'))) from None

    images_raw = _require(doc, 'images', 'root')
    anns_raw = _require(doc, 'annotations', 'root')
    if not isinstance(images_raw, list):
        raise SchemaError('expected an array', 'images')
    if not isinstance(anns_raw, list):
        raise SchemaError('expected an array', 'annotations')

    images = []
    for im in images_raw:
        difficulty = im.get('difficulty') if isinstance(im, dict) else None
        images.append(ImageRecord(
            id=int(_number(_require(im, 'id', 'images'), 'images.id')),
            file_name=str(_require(im, 'file_name', 'images')),
            width=int(_number(_require(im, 'width', 'images'), 'images.width')),
            height=int(_number(_require(im, 'height', 'images'), 'images.height')),
            difficulty=None if difficulty is None else str(difficulty),
        ))
    sizes = {im.id: (im.width, im.height) for im in images}

    instances = []
    clamped = 0
    unlabeled = []
    for ann in anns_raw:
        ann_id = int(_number(_require(ann, 'id', 'annotations'), 'annotations.id'))
        image_id = int(_number(_require(ann, 'image_id', 'annotations'), 'annotations.image_id'))
        if image_id not in sizes:
            raise SchemaError(f'unknown image_id {image_id}', 'annotations.image_id')
        bbox = _require(ann, 'bbox', 'annotations')
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise SchemaError('expected 4 numbers', 'bbox')
        bbox = tuple(_number(v, 'bbox') for v in bbox)
        kps = _require(ann, 'keypoints', 'annotations')
        if not isinstance(kps, list) or len(kps) != 3 * NUM_JOINTS:
            n = len(kps) if isinstance(kps, list) else 'non-array'
            raise SchemaError(f'expected {3 * NUM_JOINTS} numbers, got {n}', 'keypoints')
        kps = [_number(v, 'keypoints') for v in kps]

        box, was_clamped = _clamp_bbox(bbox, *sizes[image_id])
        if box[2] <= 0 or box[3] <= 0:
            raise SchemaError(f'annotation {ann_id} bbox {bbox} has no overlap with its image', 'bbox')
        clamped += was_clamped

        keypoints = []
        for j in range(NUM_JOINTS):
            x, y, v = kps[3 * j: 3 * j + 3]
            if v not in (0, 1, 2):
                raise SchemaError(f'visibility flag {v} not in {{0, 1, 2}}', 'keypoints')
            keypoints.append(Keypoint(x, y, Visibility(int(v))))
        area = ann.get('area')
        inst = PersonInstance(
            id=ann_id, bbox=box, keypoints=tuple(keypoints),
            area=None if area is None else _number(area, 'area'),
            image_id=image_id)
        if all(v == 0 for v in kps):
            unlabeled.append(ann_id)
        instances.append(inst)

    if clamped:
        logger.warning('clamped %d bounding boxes to image bounds', clamped)
    return Dataset(images=tuple(images), instances=tuple(instances),
                   clamped_boxes=clamped, unlabeled_instances=tuple(unlabeled))


def dump_annotations(ds: Dataset) -> bytes:
    """Serialize back to the COCO subset read by :func:`parse_annotations`."""
    images = []
    for im in ds.images:
        rec = {'id': im.id, 'file_name': im.file_name, 'width': im.width, 'height': im.height}
        if im.difficulty is not None:
            rec['difficulty'] = im.difficulty
        images.append(rec)
    anns = []
    for inst in ds.instances:
        flat = []
        for k in inst.keypoints:
            flat.extend([k.x, k.y, int(k.vis)])
        anns.append({'id': inst.id, 'image_id': inst.image_id, 'bbox': list(inst.bbox),
                     'keypoints': flat, 'area': inst.area})
    return json.dumps({'images': images, 'annotations': anns}, sort_keys=True).encode('utf-8')


def load_annotations(path) -> Dataset:
    with open(path, 'rb') as f:
        return parse_annotations(f.read())


def keypoints_array(instances: Sequence[PersonInstance]) -> np.ndarray:
    """Stack instances into an ``(n, 17, 3)`` array of ``x, y, vis``."""
    out = np.zeros((len(instances), NUM_JOINTS, 3))
    for n, inst in enumerate(instances):
        out[n, :, :2] = inst.xy
        out[n, :, 2] = inst.vis
    return out
