"""How much of each person the occlusion augmentation covers, over an alpha/beta grid.

Uses random synthetic people on blank canvases and reports, per (alpha, beta),
the mean number of blocks and the mean fraction of the person box filled.

    python scripts/ablate_occlusion.py --trials 200
"""
import argparse
import csv
import itertools
import sys
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from limbpose.augment import AugmentConfig, augment_instance, instance_rng
from limbpose.keypoints import PersonInstance
from limbpose.toyfit import make_suite


@dataclass
class Config:
    alphas: Tuple[float, ...] = (0.05, 0.10, 0.15, 0.20, 0.30)
    betas: Tuple[float, ...] = (0.10, 0.15, 0.20, 0.25, 0.30)
    trials: int = 200
    seed: int = 0
    canvas: Tuple[int, int] = field(default=(256, 192))  # h, w in pixels


def _people(cfg: Config):
    for inst in make_suite(cfg.trials, cfg.seed):
        xy = inst.keypoints_px
        lo, hi = xy.min(0), xy.max(0)
        bbox = (lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1])
        yield PersonInstance.from_arrays(xy, np.full(17, 2), bbox)


def run(cfg: Config):
    people = list(_people(cfg))
    blank = np.zeros(cfg.canvas, dtype=np.uint8)
    rows = []
    for alpha, beta in itertools.product(cfg.alphas, cfg.betas):
        aug_cfg = AugmentConfig(alpha, beta, seed=cfg.seed, fill=255)
        blocks, cover = [], []
        for i, person in enumerate(people):
            out, recs = augment_instance(blank, person, aug_cfg, instance_rng(cfg.seed, 0, i))
            x0, y0, w, h = (int(round(v)) for v in person.bbox)
            box = out[y0:y0 + h, x0:x0 + w]
            blocks.append(len(recs))
            cover.append(float((box == 255).mean()) if box.size else 0.0)
        rows.append((alpha, beta, np.mean(blocks), np.mean(cover)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument('--trials', type=int, default=200)
    ap.add_argument('--seed', type=int, default=0)
    args = ap.parse_args()
    rows = run(Config(trials=args.trials, seed=args.seed))
    w = csv.writer(sys.stdout, lineterminator='\n')
    w.writerow(['alpha', 'beta', 'mean_blocks', 'mean_box_coverage'])
    for alpha, beta, nb, cov in rows:
        w.writerow([alpha, beta, f'{nb:.3f}', f'{cov:.4f}'])


if __name__ == '__main__':
    main()
