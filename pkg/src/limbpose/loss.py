"""Heatmap MSE, limb structure loss and their weighted sum, with gradients.

All functions take ``K x H x W`` arrays (or :class:`HeatmapStack`) and
accumulate in float64, or in ``longdouble`` when given ``longdouble`` input.
The ``batch_*`` variants take a leading batch axis and average per-sample
values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .heatmap import HeatmapStack, structure_maps
from .keypoints import LIMB_GRAPH, JointGraph


@dataclass(frozen=True)
class LossBreakdown:
    l_mse: float
    l_lsl: float
    lam: float
    l_dsl: float
    joint_mask: Tuple[bool, ...]
    # graph nodes excluded from the MSE term whose (zero) target still enters
    # the structure term
    unsupervised_graph_joints: Tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            'l_mse': self.l_mse, 'l_lsl': self.l_lsl, 'lambda': self.lam,
            'l_dsl': self.l_dsl, 'joint_mask': list(self.joint_mask),
            'unsupervised_graph_joints': list(self.unsupervised_graph_joints),
        }


def _arrays(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p = pred.data if isinstance(pred, HeatmapStack) else pred
    g = gt.data if isinstance(gt, HeatmapStack) else gt
    dtype = np.promote_types(np.result_type(p, g), np.float64)
    p = np.asarray(p, dtype=dtype)
    g = np.asarray(g, dtype=dtype)
    if p.shape != g.shape:
        raise ValueError(f'shape mismatch: pred {p.shape} vs gt {g.shape}')
    if p.ndim < 3:
        raise ValueError(f'expected (..., K, H, W) heatmaps, got shape {p.shape}')
    return p, g


def _mask(mask, k: int) -> np.ndarray:
    if mask is None:
        return np.ones(k, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != (k,):
        raise ValueError(f'mask must have {k} entries, got shape {m.shape}')
    return m


def mse_loss(pred, gt, mask=None) -> float:
    """Sum of squared errors per channel, averaged over supervised joints."""
    p, g = _arrays(pred, gt)
    m = _mask(mask, p.shape[0])
    n = int(m.sum())
    if n == 0:
        raise ValueError('no supervised joints (mask is all false)')
    d = p[m] - g[m]
    return np.sum(d * d) / n


def limb_structure_loss(pred, gt, graph: JointGraph = LIMB_GRAPH) -> float:
    """Squared error between neighbour-summed maps, summed over graph nodes.

    There is no averaging over the nodes; the weighting factor absorbs scale.
    """
    p, g = _arrays(pred, gt)
    d = structure_maps(p - g, graph)
    return np.sum(d * d)


def dsl_loss(pred, gt, graph: JointGraph = LIMB_GRAPH, lam: float = 0.0,
             mask=None) -> LossBreakdown:
    if lam < 0:
        raise ValueError(f'lambda must be non-negative, got {lam}')
    p, g = _arrays(pred, gt)
    m = _mask(mask, p.shape[0])
    l_mse = mse_loss(p, g, m)
    l_lsl = limb_structure_loss(p, g, graph)
    return LossBreakdown(
        l_mse=l_mse, l_lsl=l_lsl, lam=float(lam), l_dsl=l_mse + l_mse.dtype.type(lam) * l_lsl,
        joint_mask=tuple(bool(v) for v in m),
        unsupervised_graph_joints=tuple(i for i in graph.nodes if not m[i]),
    )


def dsl_gradient(pred, gt, graph: JointGraph = LIMB_GRAPH, lam: float = 0.0,
                 mask=None) -> np.ndarray:
    """Analytic gradient of :func:`dsl_loss` w.r.t. ``pred``.

    The structure term scatters ``2 * lam * (P'_i - G'_i)`` back onto joint
    ``i`` and each of its neighbours.
    """
    if lam < 0:
        raise ValueError(f'lambda must be non-negative, got {lam}')
    p, g = _arrays(pred, gt)
    m = _mask(mask, p.shape[0])
    n = int(m.sum())
    if n == 0:
        raise ValueError('no supervised joints (mask is all false)')
    diff = p - g
    grad = np.zeros_like(diff)
    grad[m] = (2.0 / n) * diff[m]
    if lam != 0:
        d = structure_maps(diff, graph)
        for r, i in enumerate(graph.nodes):
            grad[i] += 2.0 * lam * d[r]
            for k in graph.neighbors(i):
                grad[k] += 2.0 * lam * d[r]
    return grad


def batch_dsl_loss(preds, gts, graph: JointGraph = LIMB_GRAPH, lam: float = 0.0,
                   masks=None) -> LossBreakdown:
    """Mean of per-sample breakdowns over the leading batch axis."""
    p, g = _arrays(preds, gts)
    if p.ndim != 4:
        raise ValueError('batch inputs must be B x K x H x W')
    b = p.shape[0]
    masks = [None] * b if masks is None else masks
    parts = [dsl_loss(p[s], g[s], graph, lam, masks[s]) for s in range(b)]
    # fsum is exactly rounded, so the mean does not depend on sample order
    l_mse = math.fsum(x.l_mse for x in parts) / b
    l_lsl = math.fsum(x.l_lsl for x in parts) / b
    joint_mask = tuple(bool(all(x.joint_mask[k] for x in parts)) for k in range(p.shape[1]))
    return LossBreakdown(l_mse, l_lsl, float(lam), l_mse + lam * l_lsl, joint_mask,
                         tuple(sorted({j for x in parts for j in x.unsupervised_graph_joints})))


def batch_dsl_gradient(preds, gts, graph: JointGraph = LIMB_GRAPH, lam: float = 0.0,
                       masks=None) -> np.ndarray:
    p, g = _arrays(preds, gts)
    if p.ndim != 4:
        raise ValueError('batch inputs must be B x K x H x W')
    b = p.shape[0]
    masks = [None] * b if masks is None else masks
    return np.stack([dsl_gradient(p[s], g[s], graph, lam, masks[s]) for s in range(b)]) / b


def supervision_mask(vis) -> np.ndarray:
    """Joints with any label (flag 1 or 2) are supervised."""
    return np.asarray(vis) > 0
