"""Gaussian heatmap targets, argmax decoding and limb structure heatmaps.

Grid cell ``(u, v)`` is column ``u``, row ``v`` and sits at input pixel
``(u * stride, v * stride)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .keypoints import LIMB_GRAPH, NUM_JOINTS, InputError, JointGraph, PersonInstance

DEFAULT_GRID = (64, 48)  # (H, W) for a 256x192 input
DEFAULT_SIGMA = 2.0
DEFAULT_STRIDE = 4.0

HMS_MAGIC = b'HMS1'
_HMS_HEADER = struct.Struct('<4sIIIff')


@dataclass
class HeatmapStack:
    """``K x H x W`` heatmaps plus encode metadata.

    ``out_of_grid`` marks labeled joints whose cell fell outside the grid;
    their channels are zero.
    """
    data: np.ndarray
    sigma: float = DEFAULT_SIGMA
    stride: float = DEFAULT_STRIDE
    out_of_grid: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f'heatmap data must be K x H x W, got shape {self.data.shape}')
        if self.data.shape[1] < 2 or self.data.shape[2] < 2:
            raise ValueError('heatmap grid must be at least 2 x 2')
        if self.stride < 1:
            raise ValueError('stride must be >= 1')

    @property
    def shape(self):
        return self.data.shape

    @property
    def grid(self) -> Tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


def gaussian(grid: Tuple[int, int], center: Tuple[float, float], sigma: float) -> np.ndarray:
    """Unnormalized 2D Gaussian with peak 1 at ``center = (u, v)``."""
    h, w = grid
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)[:, None]
    return np.exp(-((u - center[0]) ** 2 + (v - center[1]) ** 2) / (2 * sigma ** 2))


def encode(inst: PersonInstance, grid: Tuple[int, int] = DEFAULT_GRID,
           sigma: float = DEFAULT_SIGMA, stride: float = DEFAULT_STRIDE) -> HeatmapStack:
    """Gaussian target heatmaps for one instance.

    Each labeled joint is quantized to its nearest cell and a Gaussian with
    peak 1.0 is placed there. Unlabeled joints and joints whose cell is off
    the grid get all-zero channels.
    """
    if not sigma > 0:
        raise ValueError(f'sigma must be positive, got {sigma}')
    h, w = grid
    data = np.zeros((NUM_JOINTS, h, w), dtype=np.float64)
    out_of_grid = np.zeros(NUM_JOINTS, dtype=bool)
    for i, kp in enumerate(inst.keypoints):
        if not kp.labeled:
            continue
        u, v = int(np.floor(kp.x / stride + 0.5)), int(np.floor(kp.y / stride + 0.5))
        if not (0 <= u < w and 0 <= v < h):
            out_of_grid[i] = True
            continue
        data[i] = gaussian(grid, (u, v), sigma)
    return HeatmapStack(data, sigma=sigma, stride=stride, out_of_grid=out_of_grid)


class Decoded(NamedTuple):
    coords: np.ndarray      # (K, 2) input pixels
    confidence: np.ndarray  # (K,)
    missing: np.ndarray     # (K,) bool


def decode(hm: HeatmapStack) -> Decoded:
    """Argmax decoding with a quarter-cell shift toward the larger neighbour.

    Ties between equal maxima resolve to the first cell in row-major order.
    Channels without a positive value are reported missing at ``(0, 0)``.
    """
    k, h, w = hm.data.shape
    flat = hm.data.reshape(k, -1)
    idx = np.argmax(flat, axis=1)
    conf = flat[np.arange(k), idx].astype(np.float64)
    coords = np.zeros((k, 2))
    missing = ~(conf > 0)
    for c in range(k):
        if missing[c]:
            conf[c] = 0.0
            continue
        v, u = divmod(int(idx[c]), w)
        ch = hm.data[c]
        x, y = float(u), float(v)
        if 0 < u < w - 1:
            x += 0.25 * np.sign(ch[v, u + 1] - ch[v, u - 1])
        if 0 < v < h - 1:
            y += 0.25 * np.sign(ch[v + 1, u] - ch[v - 1, u])
        coords[c] = x * hm.stride, y * hm.stride
    return Decoded(coords, conf, missing)


def structure_maps(data: np.ndarray, graph: JointGraph = LIMB_GRAPH) -> np.ndarray:
    """Neighbour-summed maps on raw arrays.

    ``data`` has joints on axis -3; the result has one row per graph node in
    ``graph.nodes`` order, each the node's channel plus its neighbours'.
    """
    data = np.asarray(data)
    out = np.empty(data.shape[:-3] + (len(graph.nodes),) + data.shape[-2:],
                   dtype=np.result_type(data.dtype, np.float64))
    for r, i in enumerate(graph.nodes):
        acc = data[..., i, :, :].astype(out.dtype, copy=True)
        for k in graph.neighbors(i):
            acc += data[..., k, :, :]
        out[..., r, :, :] = acc
    return out


def structure_heatmap(hm: HeatmapStack, graph: JointGraph = LIMB_GRAPH) -> HeatmapStack:
    """Structure heatmaps for the limb joints: each channel plus its neighbours.

    No clipping or renormalization, so values may exceed 1. Row ``r`` of the
    result belongs to joint ``graph.nodes[r]``.
    """
    if hm.data.shape[0] != NUM_JOINTS:
        raise ValueError(f'expected {NUM_JOINTS} channels, got {hm.data.shape[0]}')
    return HeatmapStack(structure_maps(hm.data, graph), sigma=hm.sigma, stride=hm.stride)


def write_hms(path, hm: HeatmapStack) -> None:
    """Write the little-endian HMS1 interchange format."""
    with open(path, 'wb') as f:
        f.write(to_hms_bytes(hm))


def to_hms_bytes(hm: HeatmapStack) -> bytes:
    k, h, w = hm.data.shape
    header = _HMS_HEADER.pack(HMS_MAGIC, k, h, w, hm.sigma, hm.stride)
    return header + np.ascontiguousarray(hm.data, dtype='<f4').tobytes()


def from_hms_bytes(buf: bytes) -> HeatmapStack:
    if len(buf) < _HMS_HEADER.size:
        raise InputError('HMS1 file is shorter than its header')
    magic, k, h, w, sigma, stride = _HMS_HEADER.unpack_from(buf)
    if magic != HMS_MAGIC:
        raise InputError(f'bad HMS1 magic {magic!r}')
    expected = _HMS_HEADER.size + 4 * k * h * w
    if len(buf) != expected:
        raise InputError(f'HMS1 payload size mismatch: {len(buf)} bytes, expected {expected}')
    data = np.frombuffer(buf, dtype='<f4', offset=_HMS_HEADER.size).reshape(k, h, w)
    return HeatmapStack(data.astype(np.float32), sigma=float(sigma), stride=float(stride))


def read_hms(path) -> HeatmapStack:
    with open(path, 'rb') as f:
        return from_hms_bytes(f.read())


def crop_affine(bbox, input_wh: Tuple[float, float], padding: float = 1.25) -> np.ndarray:
    """2x3 affine mapping a person box onto a top-down input frame.

    The box is padded, widened or heightened to the input aspect ratio and
    centred, the usual top-down cropping convention.
    """
    x0, y0, bw, bh = bbox
    in_w, in_h = input_wh
    cx, cy = x0 + bw / 2, y0 + bh / 2
    aspect = in_w / in_h
    if bw > aspect * bh:
        bh = bw / aspect
    else:
        bw = bh * aspect
    bw, bh = bw * padding, bh * padding
    s = in_w / bw
    return np.array([[s, 0, in_w / 2 - s * cx],
                     [0, s, in_h / 2 - s * cy]])


def transform_instance(inst: PersonInstance, affine: np.ndarray) -> PersonInstance:
    xy = inst.xy @ affine[:, :2].T + affine[:, 2]
    x0, y0, w, h = inst.bbox
    corners = np.array([[x0, y0], [x0 + w, y0 + h]]) @ affine[:, :2].T + affine[:, 2]
    bbox = (*corners[0], *(corners[1] - corners[0]))
    scale = abs(np.linalg.det(affine[:, :2]))
    return PersonInstance.from_arrays(xy, inst.vis, bbox, id=inst.id,
                                      image_id=inst.image_id, area=inst.area * scale)
