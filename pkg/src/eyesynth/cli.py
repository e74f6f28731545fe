"""Command-line surface.

Subcommands: render, dataset, augment, eval, split, inspect, preview,
assets.  Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
Asset root and thread count can also come from EYESYNTH_ASSET_ROOT and
EYESYNTH_THREADS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise CliValidationError(message)


def _add_globals(parser, suppress=False):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int,
                        default=d, help="override the master seed")
    parser.add_argument(
        "--threads", type=int,
        default=(argparse.SUPPRESS if suppress
                 else int(os.environ.get("EYESYNTH_THREADS", "1"))),
        help="render worker processes")
    parser.add_argument("--config", type=str, default=d,
                        help="configuration file for subcommands that "
                             "take one")


def _build_parser() -> _Parser:
    p = _Parser(prog="eyesynth",
                description="Synthetic near-eye image renderer and "
                            "dataset engine")
    # global flags are accepted both before and after the subcommand
    _add_globals(p)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("render", help="render one image from a scene spec")
    sp.add_argument("--scene", required=True, help="scene spec JSON")
    sp.add_argument("--out", required=True, help="output image PNG")
    sp.add_argument("--mask", default=None)
    sp.add_argument("--mask-noskin", dest="mask_noskin", default=None)
    sp.add_argument("--meta", default=None)
    sp.add_argument("--assets", default=None, help="asset pack directory")

    sp = sub.add_parser("dataset", help="generate a dataset from a recipe")
    sp.add_argument("--out", required=True)
    sp.add_argument("--recipe", default=None,
                    help="standard recipe name (s-nvgaze/s-openeds/s-general)")
    sp.add_argument("--assets", default=None)

    sp = sub.add_parser("augment", help="augment a rendered dataset")
    sp.add_argument("--in", dest="input_dir", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="evaluate predicted masks against truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--report", default=None)

    sp = sub.add_parser("split", help="stratified train/validation split")
    sp.add_argument("--meta", required=True,
                    help="metadata.jsonl or dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--train-fraction", type=float, default=0.8)
    sp.add_argument("--bins", type=int, nargs=2, default=(8, 8))

    sp = sub.add_parser("inspect", help="dump metadata or manifest")
    sp.add_argument("path")

    sp = sub.add_parser("preview", help="contact sheet of sampled images")
    sp.add_argument("--out", required=True)
    sp.add_argument("--recipe", default=None)
    sp.add_argument("--count", type=int, default=6)
    sp.add_argument("--thumb", type=int, default=96)
    sp.add_argument("--assets", default=None)

    sp = sub.add_parser("assets", help="write the procedural asset pack")
    sp.add_argument("--out", required=True)

    for sp in sub.choices.values():
        _add_globals(sp, suppress=True)
    return p


def _load_pack(path_arg):
    from .assets import AssetPack
    root = path_arg or os.environ.get("EYESYNTH_ASSET_ROOT")
    if root is None:
        return AssetPack()
    root = Path(root)
    if not root.exists():
        raise CliValidationError(f"asset pack not found: {root}")
    return AssetPack(root)


def _load_recipe(args):
    from .recipes import DatasetRecipe, standard_recipe
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliValidationError(f"recipe file not found: {path}")
        recipe = DatasetRecipe.from_dict(json.loads(path.read_text()))
    elif getattr(args, "recipe", None):
        recipe = standard_recipe(args.recipe)
    else:
        raise CliValidationError("provide --config RECIPE.json or --recipe NAME")
    if args.seed is not None:
        from dataclasses import replace
        recipe = replace(recipe, master_seed=args.seed)
    return recipe


def _cmd_render(args) -> int:
    from . import io as eio
    from .recipes import DatasetRecipe, SampledImageSpec, scene_for_spec
    from .render import RenderConfig, render
    scene_path = Path(args.scene)
    if not scene_path.exists():
        raise CliValidationError(f"scene spec not found: {scene_path}")
    doc = json.loads(scene_path.read_text())
    eio.check_schema_version(doc, scene_path)
    pack = _load_pack(args.assets)
    spec_fields = dict(doc["spec"])
    spec_fields["env_rotation"] = tuple(spec_fields.get("env_rotation",
                                                        (0.0, 0.0, 0.0)))
    spec = SampledImageSpec(**spec_fields)
    recipe = DatasetRecipe(
        name="custom", total_images=1, open_count=1, partial_count=0,
        closed_count=0, width=doc.get("width", 640),
        height=doc.get("height", 480),
        pose_sampler=spec.pose_sampler,
        samples_per_pixel=doc.get("samples_per_pixel", 32),
        channels=doc.get("channels", 1),
        master_seed=args.seed if args.seed is not None else spec.seed)
    scene, cfg = scene_for_spec(spec, recipe, pack)
    if doc.get("exposure") is not None:
        from dataclasses import replace
        cfg = replace(cfg, exposure=float(doc["exposure"]))
    result = render(scene, cfg, workers=args.threads, head_id=spec.head_id)
    eio.write_png(args.out, result.image)
    if args.mask:
        eio.write_mask_png(args.mask, result.mask_with_skin)
    if args.mask_noskin:
        eio.write_mask_png(args.mask_noskin, result.mask_without_skin)
    if args.meta:
        eio.write_json(args.meta, result.metadata.to_dict())
    print(f"rendered {args.out}")
    return 0


def _cmd_dataset(args) -> int:
    from .recipes import generate_dataset
    recipe = _load_recipe(args)
    pack = _load_pack(getattr(args, "assets", None))
    manifest = generate_dataset(recipe, args.out, pack=pack,
                                workers=args.threads)
    n_fail = len(manifest["failed"])
    n_ok = sum(1 for e in manifest["entries"] if e["status"] == "ok")
    print(f"dataset {args.out}: {n_ok} images, {n_fail} failures")
    return 2 if n_fail else 0


def _cmd_augment(args) -> int:
    from .augment import augment_dataset
    src = Path(args.input_dir)
    if not (src / "images").exists():
        raise CliValidationError(f"no images/ under {src}")
    log = augment_dataset(src, args.out, seed=args.seed or 0)
    print(f"augmented {len(log)} images -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .io import read_mask_png, write_json
    from .metrics import dataset_miou
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.exists():
            raise CliValidationError(f"directory not found: {d}")
    names = sorted(p.name for p in gt_dir.glob("*.png"))
    if not names:
        raise CliValidationError(f"no ground-truth masks in {gt_dir}")
    pairs = []
    for name in names:
        pp = pred_dir / name
        if not pp.exists():
            raise CliValidationError(f"missing prediction: {pp}")
        pairs.append((read_mask_png(pp), read_mask_png(gt_dir / name)))
    report = dataset_miou(pairs)
    print(f"overall mIoU {100.0 * report.mean_miou:.2f} "
          f"(std {100.0 * report.std_miou:.2f}) over {len(pairs)} images")
    if args.report:
        write_json(args.report, report.to_dict())
    return 0


def _cmd_split(args) -> int:
    from .recipes import stratified_split
    meta_path = Path(args.meta)
    if meta_path.is_dir():
        meta_path = meta_path / "metadata.jsonl"
    if not meta_path.exists():
        raise CliValidationError(f"metadata not found: {meta_path}")
    records = [json.loads(line) for line in meta_path.read_text().splitlines()
               if line.strip()]
    if not records:
        raise CliValidationError(f"no metadata records in {meta_path}")
    train, val = stratified_split(records,
                                  train_fraction=args.train_fraction,
                                  bin_grid=tuple(args.bins),
                                  seed=args.seed or 0)
    from .io import write_json
    write_json(args.out, {"schema_version": "1.0", "train": train,
                          "validation": val})
    print(f"split {len(train)} train / {len(val)} validation -> {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    from .io import check_schema_version
    path = Path(args.path)
    if not path.exists():
        raise CliValidationError(f"path not found: {path}")
    if path.is_dir():
        path = path / "manifest.json"
        if not path.exists():
            raise CliValidationError(f"no manifest.json under {args.path}")
    doc = json.loads(path.read_text())
    check_schema_version(doc, path)
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_preview(args) -> int:
    from . import io as eio
    from .recipes import plan_dataset, scene_for_spec
    from .render import render_linear, quantize, calibrate_exposure
    recipe = _load_recipe(args)
    pack = _load_pack(args.assets)
    specs = plan_dataset(recipe, pack)[:args.count]
    if not specs:
        raise CliValidationError("recipe plans zero images")
    thumbs = []
    from dataclasses import replace
    for spec in specs:
        scene, cfg = scene_for_spec(spec, replace(recipe, width=args.thumb,
                                                  height=args.thumb), pack)
        cfg = replace(cfg, samples_per_pixel=min(16, cfg.samples_per_pixel),
                      exposure=None)
        exposure = calibrate_exposure(scene, cfg)
        thumbs.append(quantize(render_linear(scene, cfg), exposure))
    cols = min(3, len(thumbs))
    rows = (len(thumbs) + cols - 1) // cols
    sheet = np.zeros((rows * args.thumb, cols * args.thumb), dtype=np.uint8)
    for i, th in enumerate(thumbs):
        r, c = divmod(i, cols)
        sheet[r * args.thumb:(r + 1) * args.thumb,
              c * args.thumb:(c + 1) * args.thumb] = th
    eio.write_png(args.out, sheet)
    print(f"wrote contact sheet {args.out} ({len(thumbs)} thumbnails)")
    return 0


def _cmd_assets(args) -> int:
    from .assets import write_asset_pack
    mpath = write_asset_pack(args.out)
    print(f"asset pack written: {mpath}")
    return 0


_COMMANDS = {
    "render": _cmd_render,
    "dataset": _cmd_dataset,
    "augment": _cmd_augment,
    "eval": _cmd_eval,
    "split": _cmd_split,
    "inspect": _cmd_inspect,
    "preview": _cmd_preview,
    "assets": _cmd_assets,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliValidationError as exc:
        print(f"eyesynth: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError,) as exc:
        print(f"eyesynth: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return 0 if code in (0, None) else 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"eyesynth: runtime error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
