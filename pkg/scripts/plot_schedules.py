"""Plot the four weighting curves (needs the ``plots`` extra).

    python scripts/plot_schedules.py --out results/schedules.png
"""
import argparse
from pathlib import Path

import numpy as np

from limbpose.schedule import SCHEMES, ScheduleSpec, lambda_at


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument('--lambda-max', type=float, default=1e-4)
    ap.add_argument('--total-epochs', type=int, default=210)
    ap.add_argument('--step-epoch', type=int, default=139)
    ap.add_argument('--rate', type=float, default=5.0)
    ap.add_argument('--out', default='results/schedules.png')
    args = ap.parse_args()

    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    epochs = np.linspace(0, args.total_epochs, 421)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for scheme in SCHEMES:
        spec = ScheduleSpec(scheme, args.lambda_max, args.total_epochs, args.step_epoch, args.rate)
        ax.plot(epochs, [lambda_at(spec, e) for e in epochs], label=scheme)
    ax.set_xlabel('epoch')
    ax.set_ylabel('lambda')
    ax.legend(frameon=False)
    fig.tight_layout()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out, dpi=150)
    print('wrote', args.out)


if __name__ == '__main__':
    main()
