"""``limbpose`` command line.

Exit codes: 0 success, 1 bad input or usage, 2 internal error. Every run that
writes files also writes ``run.json`` next to them; ``limbpose rerun
run.json --out DIR`` replays it.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .augment import VIS_FILL, AugmentConfig, augment_image
from .evaluation import DEFAULT_THRESHOLDS, evaluate, parse_predictions
from .heatmap import (DEFAULT_GRID, DEFAULT_SIGMA, DEFAULT_STRIDE, HeatmapStack, crop_affine,
                      decode, encode, read_hms, transform_instance, write_hms)
from .keypoints import (LIMB_GRAPH, SKELETON_TREE, InputError, Visibility, load_annotations)
from .loss import dsl_gradient, dsl_loss
from .schedule import SCHEMES, ScheduleSpec, schedule_table
from . import toyfit

logger = logging.getLogger('limbpose')

THREADS_ENV = 'LIMBPOSE_THREADS'
MANIFEST = 'run.json'


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f'{self.prog}: error: {message}', file=sys.stderr)
        raise UsageError(message)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, '1')))
    except ValueError:
        return 1


def _fill(value: str):
    if value == 'random':
        return None
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("fill must be 'random' or an integer in [0, 255]")
    if not 0 <= v <= 255:
        raise argparse.ArgumentTypeError('fill must lie in [0, 255]')
    return v


# ---------------------------------------------------------------- io helpers

def _read_image(path: Path) -> np.ndarray:
    from PIL import Image
    try:
        with Image.open(path) as im:
            if im.mode not in ('L', 'RGB'):
                im = im.convert('RGB')
            return np.asarray(im, dtype=np.uint8).copy()
    except FileNotFoundError:
        raise InputError(f'image not found: {path}') from None


def _write_png(path: Path, image: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(image).save(path, format='PNG')


def _png_name(file_name: str) -> str:
    return str(Path(file_name).with_suffix('.png'))


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    doc = {'tool': 'limbpose', 'version': __version__, 'command': command, 'config': config}
    (out_dir / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n')


def _config(args) -> dict:
    skip = {'func', 'out', 'log_level', 'threads'}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- commands

def cmd_augment(args) -> None:
    ds = load_annotations(args.ann)
    cfg = AugmentConfig(alpha=args.alpha, beta=args.beta, seed=args.seed, fill=args.fill)
    out = _out_dir(args)
    images = Path(args.images)

    def work(im):
        img = _read_image(images / im.file_name)
        aug, recs = augment_image(img, ds.instances_for(im.id), cfg, image_id=im.id)
        return im, aug, recs

    lines = []
    for im, aug, recs in _map_ordered(work, ds.images, args.threads):
        dest = out / _png_name(im.file_name)
        dest.parent.mkdir(parents=True, exist_ok=True)
        _write_png(dest, aug)
        lines.extend(json.dumps(r.to_json(im.id)) for r in recs)
    (out / 'records.jsonl').write_text(''.join(l + '\n' for l in lines))
    _write_manifest(out, 'augment', _config(args))
    logger.info('augmented %d images, %d blocks', len(ds.images), len(lines))


def _draw_skeleton(draw, inst, radius=3):
    edges = set(SKELETON_TREE.edges) | set(LIMB_GRAPH.edges)
    for a, b in sorted(edges):
        ka, kb = inst.keypoints[a], inst.keypoints[b]
        if ka.labeled and kb.labeled:
            color = (0, 200, 255) if (a, b) in LIMB_GRAPH.edges else (255, 200, 0)
            draw.line([(ka.x, ka.y), (kb.x, kb.y)], fill=color, width=2)
    for kp in inst.keypoints:
        if kp.labeled:
            color = (0, 255, 0) if kp.vis == Visibility.LABELED_VISIBLE else (255, 0, 0)
            draw.ellipse([kp.x - radius, kp.y - radius, kp.x + radius, kp.y + radius], fill=color)


def cmd_visualize(args) -> None:
    from PIL import Image, ImageDraw
    ds = load_annotations(args.ann)
    cfg = AugmentConfig(alpha=args.alpha, beta=args.beta, seed=args.seed, fill=VIS_FILL)
    out = _out_dir(args)
    images = Path(args.images)

    def work(im):
        img = _read_image(images / im.file_name)
        aug, _ = augment_image(img, ds.instances_for(im.id), cfg, image_id=im.id)
        canvas = Image.fromarray(aug).convert('RGB')
        draw = ImageDraw.Draw(canvas)
        for inst in ds.instances_for(im.id):
            _draw_skeleton(draw, inst)
        return im, np.asarray(canvas)

    for im, canvas in _map_ordered(work, ds.images, args.threads):
        dest = out / _png_name(im.file_name)
        dest.parent.mkdir(parents=True, exist_ok=True)
        _write_png(dest, canvas)
    _write_manifest(out, 'visualize', _config(args))


def cmd_encode(args) -> None:
    ds = load_annotations(args.ann)
    out = _out_dir(args)
    h, w = args.grid
    index = []
    for inst in ds.instances:
        if args.frame == 'bbox':
            affine = crop_affine(inst.bbox, (w * args.stride, h * args.stride))
            local = transform_instance(inst, affine)
        else:
            affine = np.array([[1.0, 0, 0], [0, 1.0, 0]])
            local = inst
        hm = encode(local, (h, w), args.sigma, args.stride)
        name = f'{inst.image_id}_{inst.id}.hms1'
        write_hms(out / name, hm)
        index.append({'file': name, 'image_id': inst.image_id, 'id': inst.id,
                      'affine': affine.tolist(),
                      'out_of_grid': [int(i) for i in np.flatnonzero(hm.out_of_grid)]})
    (out / 'index.jsonl').write_text(''.join(json.dumps(r) + '\n' for r in index))
    _write_manifest(out, 'encode', _config(args))


def _decode_record(hm: HeatmapStack, image_id, affine=None) -> dict:
    dec = decode(hm)
    xy = dec.coords
    if affine is not None:
        a = np.asarray(affine, dtype=float)
        xy = (xy - a[:, 2]) @ np.linalg.inv(a[:, :2]).T
    kps = np.concatenate([xy, dec.confidence[:, None]], axis=1)
    score = float(dec.confidence[~dec.missing].mean()) if (~dec.missing).any() else 0.0
    return {'image_id': image_id, 'score': score,
            'keypoints': [round(float(v), 6) for v in kps.ravel()],
            'missing': [int(i) for i in np.flatnonzero(dec.missing)]}


def cmd_decode(args) -> None:
    records = []
    if args.index:
        base = Path(args.index).parent
        with open(args.index) as f:
            for line in f:
                if line.strip():
                    ent = json.loads(line)
                    hm = read_hms(base / ent['file'])
                    records.append(_decode_record(hm, ent['image_id'], ent.get('affine')))
    for path in args.hms or []:
        records.append(_decode_record(read_hms(path), args.image_id))
    if not records:
        raise InputError('nothing to decode: pass --hms files or --index')
    text = ''.join(json.dumps(r) + '\n' for r in records)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        _write_manifest(Path(args.out).parent, 'decode', _config(args))
    else:
        sys.stdout.write(text)


def cmd_loss(args) -> None:
    pred, gt = read_hms(args.pred), read_hms(args.gt)
    if pred.shape != gt.shape:
        raise InputError(f'pred shape {pred.shape} != gt shape {gt.shape}')
    if args.mask_all:
        mask = np.ones(gt.shape[0], dtype=bool)
    else:
        # an all-zero target channel means the joint was not labeled
        mask = np.abs(gt.data).reshape(gt.shape[0], -1).max(axis=1) > 0
    b = dsl_loss(pred, gt, LIMB_GRAPH, args.lam, mask)
    doc = b.to_json()
    print(json.dumps(doc, sort_keys=True))
    if args.grad:
        g = dsl_gradient(pred, gt, LIMB_GRAPH, args.lam, mask)
        write_hms(args.grad, HeatmapStack(g, sigma=pred.sigma, stride=pred.stride))
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2) + '\n')


def cmd_schedule(args) -> None:
    spec = ScheduleSpec(args.scheme, args.lambda_max, args.total_epochs, args.step_epoch,
                        args.rate)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['epoch', 'lambda'])
    for epoch, lam in schedule_table(spec):
        writer.writerow([epoch, repr(lam)])
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(buf.getvalue())
        _write_manifest(out.parent, 'schedule', _config(args))
    else:
        sys.stdout.write(buf.getvalue())


def cmd_eval(args) -> None:
    gts = load_annotations(args.ann)
    with open(args.preds) as f:
        preds = parse_predictions(f)
    report = evaluate(preds, gts, args.thresholds)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(['metric', 'value'])
        w.writerows((k, '' if v is None else v) for k, v in report.csv_rows())
        text = buf.getvalue()
    else:
        text = json.dumps(report.to_json(), indent=2, sort_keys=True) + '\n'
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_manifest(out.parent, 'eval', _config(args))
    else:
        sys.stdout.write(text)


def _suite(args):
    return toyfit.make_suite(args.n, args.seed, radius=args.grid, sigma=args.sigma)


def cmd_toyfit(args) -> None:
    out = _out_dir(args)
    summary = {'protocol': toyfit.PROTOCOL_NOTE, 'mode': args.mode}
    if args.mode == 'sweep':
        rows = []
        for i, inst in enumerate(_suite(args)):
            res = toyfit.shift_sweep(inst, LIMB_GRAPH, args.lam)
            with open(out / f'sweep_{i:03d}.csv', 'w', newline='') as f:
                w = csv.writer(f, lineterminator='\n')
                w.writerow(['dx', 'dy', 'valid', 'l_mse', 'l_lsl', 'l_dsl'])
                for s, (dx, dy) in enumerate(res.shifts):
                    w.writerow([int(dx), int(dy), int(res.valid[s]),
                                repr(float(res.l_mse[s])), repr(float(res.l_lsl[s])),
                                repr(float(res.l_dsl[s]))])
            rows.append({'instance': i, 'occluded': inst.occluded,
                         'argmin': {k: list(v) for k, v in res.argmin.items()}})
        summary['instances'] = rows
        summary['lsl_argmin_at_origin'] = sum(r['argmin']['l_lsl'] == [0, 0] for r in rows)
    elif args.mode == 'optimize':
        rows = []
        w_rows = []
        for i, inst in enumerate(_suite(args)):
            shift = args.init_shift or toyfit.random_init_shift(
                inst, np.random.default_rng([args.seed, i]))
            tr = toyfit.optimize_occluded_channel(inst, LIMB_GRAPH, args.lam, args.steps,
                                                  args.rate, args.supervision, shift)
            rows.append({'instance': i, 'occluded': inst.occluded, 'init_shift': list(shift),
                         'init_distance_px': tr.init_distance,
                         'final_distance_px': tr.final_distance,
                         'diverged': tr.diverged, 'steps_run': tr.steps_run})
            for s, (pos, loss) in enumerate(zip(tr.positions, tr.losses)):
                w_rows.append([i, s, repr(float(pos[0])), repr(float(pos[1])), repr(float(loss))])
        with open(out / 'trajectory.csv', 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['instance', 'step', 'x', 'y', 'loss'])
            w.writerows(w_rows)
        summary['instances'] = rows
    else:
        table = toyfit.loss_comparison(_suite(args), toyfit.VARIANTS, args.lam, args.steps,
                                       args.rate, args.seed)
        with open(out / 'distances.csv', 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['instance', *table.variants])
            for i in range(args.n):
                w.writerow([i, *(repr(float(table.distances[v][i])) for v in table.variants)])
        summary.update(table.to_json())
    (out / 'summary.json').write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n')
    _write_manifest(out, 'toyfit', _config(args))


def cmd_rerun(args) -> None:
    try:
        doc = json.loads(Path(args.manifest).read_text())
        command, config = doc['command'], doc['config']
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f'unreadable manifest {args.manifest}: {e}') from None
    if doc.get('version') != __version__:
        logger.warning('manifest written by version %s, running %s', doc.get('version'), __version__)
    ns = argparse.Namespace(**config)
    ns.threads, ns.log_level = args.threads, args.log_level
    ns.out = args.out
    if command not in COMMANDS:
        raise InputError(f'unknown command {command!r} in manifest')
    # --out is a directory or a file, whichever the replayed command expects
    ns.func = COMMANDS[command]
    ns.func(ns)


COMMANDS = {
    'augment': cmd_augment, 'visualize': cmd_visualize, 'encode': cmd_encode,
    'decode': cmd_decode, 'loss': cmd_loss, 'schedule': cmd_schedule, 'eval': cmd_eval,
    'toyfit': cmd_toyfit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--threads', type=int, default=_default_threads(),
                        help=f'worker threads (default ${THREADS_ENV} or 1)')
    common.add_argument('--log-level', default='WARNING')

    parser = _Parser(prog='limbpose',
                     description='Limb occlusion augmentation, structure loss and OKS tools.')
    parser.add_argument('--version', action='version', version=__version__)
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    for name, func, help in (('augment', cmd_augment, 'occlude visible limb joints'),
                             ('visualize', cmd_visualize, 'draw blocks (fill 169) and skeletons')):
        p = add(name, func, help)
        p.add_argument('--ann', required=True)
        p.add_argument('--images', required=True)
        p.add_argument('--alpha', type=float, default=0.15)
        p.add_argument('--beta', type=float, default=0.20)
        if name == 'augment':
            p.add_argument('--fill', type=_fill, default=None, help="'random' or 0-255")
        p.add_argument('--out', required=True)

    p = add('encode', cmd_encode, 'write Gaussian target heatmaps (HMS1)')
    p.add_argument('--ann', required=True)
    p.add_argument('--grid', type=int, nargs=2, default=list(DEFAULT_GRID), metavar=('H', 'W'))
    p.add_argument('--sigma', type=float, default=DEFAULT_SIGMA)
    p.add_argument('--stride', type=float, default=DEFAULT_STRIDE)
    p.add_argument('--frame', choices=('bbox', 'image'), default='bbox')
    p.add_argument('--out', required=True)

    p = add('decode', cmd_decode, 'heatmaps to keypoint JSON lines')
    p.add_argument('--hms', nargs='*')
    p.add_argument('--index', help='index.jsonl from encode; maps back to image pixels')
    p.add_argument('--image-id', type=int, default=0)
    p.add_argument('--out')

    p = add('loss', cmd_loss, 'MSE / structure / combined loss between two HMS1 files')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--lambda', dest='lam', type=float, default=1e-4)
    p.add_argument('--mask-all', action='store_true',
                   help='supervise every channel, including all-zero targets')
    p.add_argument('--grad')
    p.add_argument('--out')

    p = add('schedule', cmd_schedule, 'lambda-per-epoch table as CSV')
    p.add_argument('--scheme', choices=SCHEMES, default='step')
    p.add_argument('--lambda-max', type=float, default=1e-4)
    p.add_argument('--total-epochs', type=int, default=210)
    p.add_argument('--step-epoch', type=int, default=139)
    p.add_argument('--rate', type=float, default=5.0)
    p.add_argument('--out')

    p = add('eval', cmd_eval, 'OKS AP/AR of predictions')
    p.add_argument('--ann', required=True)
    p.add_argument('--preds', required=True)
    p.add_argument('--thresholds', type=float, nargs='+', default=list(DEFAULT_THRESHOLDS))
    p.add_argument('--csv', action='store_true')
    p.add_argument('--out')

    p = add('toyfit', cmd_toyfit, 'synthetic loss sweeps and heatmap-space optimization')
    p.add_argument('mode', choices=('sweep', 'optimize', 'compare'))
    p.add_argument('--lambda', dest='lam', type=float, default=1e-4)
    p.add_argument('--grid', type=int, default=10, help='shift radius in cells')
    p.add_argument('--sigma', type=float, default=2.0)
    p.add_argument('--steps', type=int, default=210)
    p.add_argument('--rate', type=float, default=None)
    p.add_argument('--n', type=int, default=None, help='number of synthetic instances')
    p.add_argument('--supervision', choices=('full', 'structure_only'), default='structure_only')
    p.add_argument('--init-shift', type=int, nargs=2, default=None, metavar=('DX', 'DY'))
    p.add_argument('--out', required=True)

    p = sub.add_parser('rerun', parents=[common], help='replay a run.json manifest')
    p.add_argument('manifest')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format='%(levelname)s %(name)s: %(message)s')
    if getattr(args, 'command', None) == 'toyfit' and args.n is None:
        args.n = 100 if args.mode == 'compare' else 1
    try:
        args.func(args)
    except (InputError, ValueError, OSError) as e:
        print(f'limbpose: error: {e}', file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        logger.exception('internal error')
        print(f'limbpose: internal error: {e}', file=sys.stderr)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
