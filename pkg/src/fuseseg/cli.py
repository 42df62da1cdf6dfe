"""Command-line interface.

Subcommands: gen-data, train, eval, predict, inspect-attention, diff-mask,
crop-bench, gradcheck.  Every failure exits nonzero with a single
machine-parsable line on stderr: ``error: <code>: <detail>``.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import data as D
from . import metrics as M
from .checkpoint import load_checkpoint, restore_model
from .config import (ConfigError, RunConfig, apply_overrides, child_rng,
                     child_seed, load_config)
from .losses import LossError
from .metrics import MetricError
from .model import build_model
from .netpbm import NetpbmError, read_pgm, read_ppm, write_pgm
from .tensor import NonFiniteError, ShapeError
from .training import LOG_HEADER, TrainingError, evaluate, predict, train
from .ytc import ContainerError, write_tensors

_ERROR_CODES = (
    (ConfigError, "config"),
    (LossError, "loss"),
    (D.DataError, "data"),
    (MetricError, "metric"),
    (NetpbmError, "io"),
    (ContainerError, "io"),
    (ShapeError, "shape"),
    (NonFiniteError, "numeric"),
    (TrainingError, "train"),
    (FileNotFoundError, "io"),
    (OSError, "io"),
)


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    cfg.validate()
    return cfg


def _checkpoint_model(path):
    ckpt = load_checkpoint(path)
    model = build_model(ckpt.config)
    restore_model(model, ckpt)
    model.eval()
    return model, ckpt


def _read_image(path):
    image = read_ppm(path)
    return image.transpose(2, 0, 1).astype(np.float32) / 255.0


def cmd_gen_data(args):
    cfg = _load_cfg(args)
    samples = []
    for i in range(cfg.num_images):
        samples.append(D.gen_shapes(child_seed(cfg.seed, "gen", i),
                                    size=cfg.image_size,
                                    num_classes=cfg.num_classes,
                                    shapes_per_image=cfg.shapes_per_image,
                                    rarity_decay=cfg.rarity_decay))
    freq = D.class_frequencies((lab for _, lab in samples), cfg.num_classes)
    D.write_dataset(args.out, samples, frequencies=freq)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    dataset = D.load_dataset(args.data)
    print(LOG_HEADER)
    train(cfg, dataset, checkpoint_path=args.out, resume=args.resume,
          log=lambda entry: print(entry.tsv()))
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_eval(args):
    model, ckpt = _checkpoint_model(args.checkpoint)
    cfg = ckpt.config
    dataset = D.load_dataset(args.data)
    thicknesses = tuple(int(t) for t in args.thicknesses.split(",")) \
        if args.thicknesses else cfg.thicknesses
    result = evaluate(model, dataset, cfg.num_classes, thicknesses,
                      include_background=not args.no_background)
    names = [f"class{c}" for c in range(cfg.num_classes)]
    report = M.format_report(names, result.per_class_iou, result.boundary)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    else:
        sys.stdout.write(report)
    return 0


def cmd_predict(args):
    model, ckpt = _checkpoint_model(args.checkpoint)
    image = _read_image(args.image)
    out = predict(model, image)
    pred = out.final.data.argmax(axis=1)[0].astype(np.uint8)
    write_pgm(args.out, pred)
    dumps = {}
    if args.dump_css:
        dumps["css"] = out.coarse.data[0]
        if out.refined is not None:
            dumps["css_prime"] = out.refined.data[0]
    if args.dump_sb and out.boundary is not None:
        dumps["sb"] = out.boundary.data[0]
    if args.dump_attention and out.attention is not None:
        dumps["a_map"] = out.attention.data[0]
    if args.dump_fedges and out.edge_features is not None:
        dumps["f_edges"] = out.edge_features.data[0]
    if dumps:
        write_tensors(args.out + ".ytc",
                      {k: v.astype(np.float32) for k, v in dumps.items()})
    return 0


def cmd_inspect_attention(args):
    model, ckpt = _checkpoint_model(args.checkpoint)
    if ckpt.config.model_mode != "full":
        raise ConfigError("checkpoint has no fusion gate (model_mode is not 'full')")
    image = _read_image(args.image)
    out = predict(model, image)
    amap = out.attention.data[0]
    heat = amap[args.class_index] if args.class_index is not None else amap.max(axis=0)
    lo, hi = float(heat.min()), float(heat.max())
    scale = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
    write_pgm(args.out, np.clip(scale * 255.0 + 0.5, 0, 255).astype(np.uint8))
    with open(args.out + ".minmax.txt", "w", encoding="utf-8") as fh:
        fh.write(f"min\t{lo!r}\nmax\t{hi!r}\n")
    return 0


def cmd_diff_mask(args):
    pred = read_pgm(args.pred)
    gt = read_pgm(args.gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"diff-mask: shapes {pred.shape} vs {gt.shape} differ")
    diff = ((pred != gt) & (gt != D.IGNORE)).astype(np.uint8) * 255
    write_pgm(args.out, diff)
    return 0


def cmd_crop_bench(args):
    cfg = _load_cfg(args)
    dataset = D.load_dataset(args.data)
    freq = D.class_frequencies((lab for _, lab in dataset), cfg.num_classes)
    rarest = int(np.argmin(np.where(freq > 0, freq, np.iinfo(np.int64).max)))
    modes = args.modes.split(",")
    lines = ["#mode\t" + "\t".join(f"share{c}" for c in range(cfg.num_classes))
             + "\trarest_share"]
    for mode in modes:
        if mode not in ("random", "uniform", "integral"):
            raise D.DataError(f"unknown crop mode {mode!r}")
        shares = np.zeros(cfg.num_classes)
        for draw in range(args.draws):
            idx = int(child_rng(cfg.seed, "bench", mode, draw).integers(len(dataset)))
            image, labels = dataset[idx]
            _, cropped = D.augment(image, labels, mode, cfg.crop_size, cfg.crop_size,
                                   child_seed(cfg.seed, "bench-aug", mode, draw),
                                   freq=freq, flip=cfg.aug_flip,
                                   scale_range=(cfg.scale_min, cfg.scale_max))
            valid = cropped[cropped != D.IGNORE]
            if valid.size:
                shares += np.bincount(valid.ravel(), minlength=cfg.num_classes)[
                    :cfg.num_classes] / valid.size
        shares /= args.draws
        lines.append(mode + "\t" + "\t".join(f"{s:.6f}" for s in shares)
                     + f"\t{shares[rarest]:.6f}")
    report = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    else:
        sys.stdout.write(report)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    rows = run_suite()
    failed = False
    for name, err, tol in rows:
        status = "ok" if err < tol else "FAIL"
        failed = failed or err >= tol
        print(f"{name}\t{err:.3e}\t{tol:g}\t{status}")
    if failed:
        raise TrainingError("gradient check failed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fuseseg",
                                     description="Boundary-aware two-stream segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("-c", "--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thicknesses", help="comma-separated boundary thicknesses")
    p.add_argument("--no-background", action="store_true",
                   help="exclude class 0 from the IoU mean")
    p.add_argument("--out", help="write the TSV report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output label map (PGM)")
    p.add_argument("--dump-css", action="store_true")
    p.add_argument("--dump-sb", action="store_true")
    p.add_argument("--dump-attention", action="store_true")
    p.add_argument("--dump-fedges", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-attention", help="render the fusion attention map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="heat map path (PGM)")
    p.add_argument("--class-index", type=int)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("diff-mask", help="255 where prediction and truth differ")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff_mask)

    p = sub.add_parser("crop-bench", help="compare crop strategies")
    add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--modes", default="random,uniform,integral")
    p.add_argument("--draws", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_crop_bench)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _ERROR_CODES) as exc:
        for cls, code in _ERROR_CODES:
            if isinstance(exc, cls):
                print(f"error: {code}: {exc}", file=sys.stderr)
                return 1
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
