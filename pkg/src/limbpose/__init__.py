"""Occlusion-oriented training components for heatmap pose estimation.

Limb joint occlusion augmentation, the limb structure loss and its analytic
gradient, weighting schedules, a Gaussian heatmap codec and COCO-style OKS
evaluation.
"""
from .augment import (AugmentConfig, OcclusionRecord, Rect, apply_occlusion, augment_instance,
                      occlusion_rect, select_occlusion_joints)
from .evaluation import EvalReport, PredictionInstance, evaluate, oks
from .heatmap import HeatmapStack, decode, encode, read_hms, structure_heatmap, write_hms
from .keypoints import (LIMB_GRAPH, Dataset, Keypoint, PersonInstance, Visibility,
                        limb_neighbors, parse_annotations, visible_limb_joints)
from .loss import LossBreakdown, dsl_gradient, dsl_loss, limb_structure_loss, mse_loss
from .schedule import ScheduleSpec, lambda_at

__version__ = '0.1.0'

__all__ = [
    'AugmentConfig', 'OcclusionRecord', 'Rect', 'apply_occlusion', 'augment_instance',
    'occlusion_rect', 'select_occlusion_joints', 'EvalReport', 'PredictionInstance', 'evaluate',
    'oks', 'HeatmapStack', 'decode', 'encode', 'read_hms', 'structure_heatmap', 'write_hms',
    'LIMB_GRAPH', 'Dataset', 'Keypoint', 'PersonInstance', 'Visibility', 'limb_neighbors',
    'parse_annotations', 'visible_limb_joints', 'LossBreakdown', 'dsl_gradient', 'dsl_loss',
    'limb_structure_loss', 'mse_loss', 'ScheduleSpec', 'lambda_at',
]
