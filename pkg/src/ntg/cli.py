"""Command-line surface.

Subcommands: extract | match | swap | synthesize | train | eval | gen-data |
gradcheck. Exit codes: 0 success, 1 usage error, 2 data/format error,
3 numeric failure. Every subcommand is deterministic given --seed and
--threads 1.
"""

import argparse
import os
import sys

import numpy as np

from . import backend, featnet, generator, gradcheck, grid, matchswap, metrics, trainer
from .errors import FormatError, NtgError, NumericError, ShapeError, UsageError
from .formats import read_ntx1, read_pgm, write_ntx1, write_pgm


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="kernel threads (default: NTG_THREADS env, else all cores)",
    )
    common.add_argument("--config", default=None, help="flat key=value config file")

    p = _Parser(prog="ntg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", parents=[common], help="materialize the toy corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--train-count", type=int, default=64)
    sp.add_argument("--val-count", type=int, default=16)

    sp = sub.add_parser("extract", parents=[common], help="feature pyramid to NTX1")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", default=None, help="NTX1 with feat.* sections")
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--plan", default="16,32,64")

    sp = sub.add_parser("match", parents=[common], help="similarity maps at one level")
    sp.add_argument("--input", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", default=None)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--plan", default="16,32,64")
    sp.add_argument("--level", type=int, default=1)
    sp.add_argument("--patch-size", type=int, default=3)
    sp.add_argument("--full-scores", action="store_true", help="also write the raw stack")

    sp = sub.add_parser("swap", parents=[common], help="swapped texture maps to NTX1")
    sp.add_argument("--input", required=True)
    sp.add_argument("--ref", action="append", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", default=None)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--plan", default="16,32,64")
    sp.add_argument("--mode", choices=("full", "single"), default="full")
    sp.add_argument("--patch-size", type=int, default=3)

    sp = sub.add_parser("synthesize", parents=[common], help="translate one image")
    sp.add_argument("--input", required=True)
    sp.add_argument("--ref", action="append", default=[])
    sp.add_argument("--weights", required=True)
    sp.add_argument("--mode", choices=("full", "single", "none"), default="full")
    sp.add_argument("--scale", type=int, choices=(1, 2), default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--target", default=None, help="print an eval CSV row against this")
    sp.add_argument("--direction", choices=("xy", "yx"), default="xy")
    sp.add_argument("--patch-size", type=int, default=3)

    sp = sub.add_parser("train", parents=[common], help="cycle-consistent training")
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", default=None, help="corpus directory from gen-data")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--mode", choices=trainer.MODES, default=None)

    sp = sub.add_parser("eval", parents=[common], help="metric report for pairs")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--out", default=None, help="CSV path (default: stdout)")

    sp = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit")
    sp.add_argument("--size", type=int, default=8)
    return p


# ---------------------------------------------------------------------------


def _seed(args):
    return 0 if args.seed is None else args.seed


def _extractor_from_args(args):
    if args.weights:
        return featnet.from_arrays(read_ntx1(args.weights))
    plan = tuple(int(c) for c in args.plan.replace(",", " ").split())
    return featnet.build_extractor(_seed(args), args.levels, plan)


def _blur_pyramid(feat, image):
    return featnet.extract_pyramid(feat, grid.blur_downup(image))


def _cmd_gen_data(args):
    spec = trainer.ToyDomainSpec(args.size, args.train_count, args.val_count, _seed(args))
    corpus = trainer.make_toy_corpus(spec)
    root = args.out
    manifest = ["role,domain,index,path"]
    layout = (
        ("train", "x", corpus.train_x, os.path.join("X", "train"), "img_{:03d}.pgm"),
        ("train", "y", corpus.train_y, os.path.join("Y", "train"), "img_{:03d}.pgm"),
        ("val", "x", corpus.val_x, os.path.join("pairs", "val"), "x_{:03d}.pgm"),
        ("val", "y", corpus.val_y, os.path.join("pairs", "val"), "y_{:03d}.pgm"),
    )
    for role, domain, images, rel, pattern in layout:
        os.makedirs(os.path.join(root, rel), exist_ok=True)
        for i, img in enumerate(images):
            name = pattern.format(i)
            write_pgm(img, os.path.join(root, rel, name))
            manifest.append(f"{role},{domain},{i},{os.path.join(rel, name)}")
    with open(os.path.join(root, "manifest.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(manifest) + "\n")
    with open(os.path.join(root, "corpus.cfg"), "w", encoding="utf-8") as fh:
        fh.write(
            f"image_size = {spec.image_size}\n"
            f"train_per_domain = {spec.train_per_domain}\n"
            f"val_pairs = {spec.val_pairs}\n"
            f"seed = {spec.seed}\n"
        )
    print(f"wrote corpus ({spec.train_per_domain} per domain, {spec.val_pairs} val pairs) to {root}")
    return 0


def _cmd_extract(args):
    feat = _extractor_from_args(args)
    pyr = featnet.extract_pyramid(feat, read_pgm(args.input))
    out = {f"level{i + 1}": g for i, g in enumerate(pyr.levels)}
    write_ntx1(out, args.out)
    dims = ", ".join("x".join(map(str, g.shape)) for g in pyr.levels)
    print(f"extracted {len(pyr)} levels ({dims}) to {args.out}")
    return 0


def _cmd_match(args):
    feat = _extractor_from_args(args)
    pyr_in = featnet.extract_pyramid(feat, read_pgm(args.input))
    pyr_blur = _blur_pyramid(feat, read_pgm(args.ref))
    lvl = args.level
    if not 1 <= lvl <= len(pyr_in):
        raise UsageError(f"--level {lvl} outside pyramid 1..{len(pyr_in)}")
    patches = matchswap.extract_patches(pyr_blur[lvl - 1], args.patch_size)
    smaps = matchswap.similarity_maps(pyr_in[lvl - 1], patches)
    best_idx = np.argmax(smaps, axis=0)
    grid_y, grid_x = np.indices(best_idx.shape)
    out = {
        "best_score": smaps[best_idx, grid_y, grid_x],
        "best_index": best_idx.astype(np.float64),
    }
    if args.full_scores:
        out["scores"] = smaps
    write_ntx1(out, args.out)
    print(f"matched {patches.patches.shape[0]} patches at level {lvl} -> {args.out}")
    return 0


def _swaps_for_images(feat, image, ref_images, mode, patch_size):
    levels = range(1, feat.levels + 1) if mode == "full" else (1,)
    pyr_in = featnet.extract_pyramid(feat, image)
    raws = [featnet.extract_pyramid(feat, r) for r in ref_images]
    blurs = [_blur_pyramid(feat, r) for r in ref_images]
    swaps = []
    for lvl in levels:
        pairs = [(raw[lvl - 1], blur[lvl - 1]) for raw, blur in zip(raws, blurs)]
        swaps.append(
            matchswap.swap_features_pooled(pyr_in[lvl - 1], pairs, patch_size, lvl)
        )
    return swaps


def _cmd_swap(args):
    feat = _extractor_from_args(args)
    refs = [read_pgm(r) for r in args.ref]
    swaps = _swaps_for_images(feat, read_pgm(args.input), refs, args.mode, args.patch_size)
    out = {}
    for s in swaps:
        out[f"T_l{s.level}"] = s.swapped
        out[f"weight_l{s.level}"] = s.weight_map
        out[f"index_l{s.level}"] = s.index_map.astype(np.float64)
    write_ntx1(out, args.out)
    print(f"swapped levels {[s.level for s in swaps]} -> {args.out}")
    return 0


def _cmd_synthesize(args):
    arrays = read_ntx1(args.weights)
    feat = featnet.from_arrays(arrays)
    prefix = "gxy" if args.direction == "xy" else "gyx"
    net = generator.from_arrays(arrays, prefix)
    if args.scale is not None and args.scale != net.scale_factor:
        raise ShapeError(
            f"--scale {args.scale} but the weights were built for "
            f"scale_factor {net.scale_factor}"
        )
    if args.mode != "none" and not args.ref:
        raise UsageError(f"--mode {args.mode} needs at least one --ref")
    image = read_pgm(args.input)
    if args.mode == "none":
        out = generator.generate_without_texture(net, image)
    else:
        refs = [read_pgm(r) for r in args.ref]
        swaps = _swaps_for_images(feat, image, refs, args.mode, args.patch_size)
        out = generator.generate(net, image, swaps)
    write_pgm(out, args.out)
    if args.target is not None:
        row = metrics.evaluate_pair(out, read_pgm(args.target))
        print(
            ",".join(
                [os.path.basename(args.out)]
                + [metrics.fmt(row[c]) for c in metrics.METRIC_COLUMNS]
            )
        )
    return 0


def _load_corpus_dir(root):
    spec_map = trainer.parse_config_text(
        open(os.path.join(root, "corpus.cfg"), encoding="utf-8").read()
    )
    spec = trainer.ToyDomainSpec(
        int(spec_map["image_size"]),
        int(spec_map["train_per_domain"]),
        int(spec_map["val_pairs"]),
        int(spec_map["seed"]),
    )

    def load(rel, pattern, count):
        return [
            read_pgm(os.path.join(root, rel, pattern.format(i))) for i in range(count)
        ]

    return trainer.Corpus(
        spec,
        load(os.path.join("X", "train"), "img_{:03d}.pgm", spec.train_per_domain),
        load(os.path.join("Y", "train"), "img_{:03d}.pgm", spec.train_per_domain),
        load(os.path.join("pairs", "val"), "x_{:03d}.pgm", spec.val_pairs),
        load(os.path.join("pairs", "val"), "y_{:03d}.pgm", spec.val_pairs),
    )


def _cmd_train(args):
    cfg = trainer.TrainConfig()
    if args.config:
        cfg = trainer.load_config(args.config, cfg)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    if args.data:
        corpus = _load_corpus_dir(args.data)
        if corpus.spec.image_size != cfg.image_size:
            raise ShapeError(
                f"corpus images are {corpus.spec.image_size}px, config expects "
                f"{cfg.image_size}px"
            )
    else:
        corpus = trainer.make_toy_corpus(
            trainer.ToyDomainSpec(
                cfg.image_size, cfg.train_per_domain, cfg.val_pairs, cfg.seed
            )
        )
    rows = trainer.run_training(cfg, corpus, args.out)
    if rows:
        last = rows[-1]
        print(
            f"trained {cfg.epochs} epochs (mode={cfg.mode}): "
            f"val_psnr={metrics.fmt(last['val_psnr'])} "
            f"val_ssim={metrics.fmt(last['val_ssim'])}"
        )
    else:
        print("trained 0 epochs (initial checkpoint only)")
    return 0


def _pgm_pairs(pred, target):
    if os.path.isdir(pred) != os.path.isdir(target):
        raise UsageError("--pred and --target must both be files or both be directories")
    if not os.path.isdir(pred):
        return [(os.path.basename(pred), pred, target)]
    names = sorted(
        set(n for n in os.listdir(pred) if n.endswith(".pgm"))
        & set(n for n in os.listdir(target) if n.endswith(".pgm"))
    )
    if not names:
        raise UsageError("no common .pgm names between --pred and --target")
    return [(n, os.path.join(pred, n), os.path.join(target, n)) for n in names]


def _cmd_eval(args):
    rows = []
    for name, ppath, tpath in _pgm_pairs(args.pred, args.target):
        row = {"id": name}
        row.update(metrics.evaluate_pair(read_pgm(ppath), read_pgm(tpath)))
        rows.append(row)
    text = "\n".join(metrics.report_lines(rows)) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gradcheck(args):
    results = gradcheck.run_gradcheck(size=args.size, seed=_seed(args))
    failures = []
    for term, err, _ in results:
        status = "PASS" if err < gradcheck.TOLERANCE else "FAIL"
        if status == "FAIL":
            failures.append(term)
        print(f"term {term}: max_rel_err {err:.3e} {status}")
    if failures:
        raise NumericError(f"gradient check failed for: {', '.join(failures)}")
    print(f"all {len(results)} terms within {gradcheck.TOLERANCE:g}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "extract": _cmd_extract,
    "match": _cmd_match,
    "swap": _cmd_swap,
    "synthesize": _cmd_synthesize,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        backend.set_threads(args.threads if args.threads else backend.thread_default())
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ShapeError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except NtgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
