"""Command-line entry point: ``docseg {segment,extract,compare,synth,tune,bench}``.

Exit codes: 0 success, 2 bad input (missing/unreadable/malformed files),
3 bad configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import evaluation as ev
from .config import Config, load_config, run_pipeline
from .errors import ConfigError, FormatError, GeometryError
from .extract import export_regions, extract_regions, text_mask
from .imaging import (BlockLabel, LabelMap, LumaImage, atomic_write_text,
                      load_image, render_overlay, save_image, to_luminance)

log = logging.getLogger("docseg")

EXIT_INPUT = 2
EXIT_CONFIG = 3


class InputError(Exception):
    pass


def _dump(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_from_args(args) -> Config:
    overrides = {"seed": getattr(args, "seed", None)}
    if getattr(args, "refine", False):
        overrides["ac.refine"] = True
    if getattr(args, "include_graphics", False):
        overrides["extract.include_graphics"] = True
    if getattr(args, "block_size", None) is not None:
        overrides["hist.block_size"] = args.block_size
    return load_config(args.config, overrides, args.set or [])


def _check_block_size(args) -> None:
    if getattr(args, "block_size", None) is not None and getattr(args, "pipeline", "hist") == "ac":
        if args.block_size != 8:
            raise ConfigError("the AC pipeline works on 8x8 blocks only")


def _read_luma(path) -> tuple:
    try:
        img = load_image(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (OSError, FormatError) as e:
        raise InputError(str(e)) from None
    return img, to_luminance(img)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_segment(args) -> int:
    _check_block_size(args)
    cfg = _config_from_args(args)
    _, luma = _read_luma(args.input)
    res = run_pipeline(args.pipeline, luma, cfg)
    out = _out_dir(args)
    _dump(out / "labels.json", res.label_map.to_dict())
    _dump(out / "result.json", res.to_dict())
    _dump(out / "config.json", cfg.snapshot())
    if args.overlay:
        save_image(out / "overlay.png", render_overlay(luma, res.label_map))
    counts = res.label_map.counts()
    print(json.dumps({"pipeline": args.pipeline, "blocks": counts,
                      "seconds": round(res.wall_time, 6)}))
    return 0


def _load_label_map(path) -> LabelMap:
    try:
        with open(path) as fh:
            return LabelMap.from_dict(json.load(fh))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (OSError, json.JSONDecodeError, FormatError, GeometryError, TypeError) as e:
        raise InputError(f"{path}: {e}") from None


def cmd_extract(args) -> int:
    _check_block_size(args)
    cfg = _config_from_args(args)
    img, luma = _read_luma(args.input)
    if args.labels:
        lmap = _load_label_map(args.labels)
        if (lmap.width, lmap.height) != (luma.width, luma.height):
            raise InputError("label map does not match the image size")
    else:
        lmap = run_pipeline(args.pipeline, luma, cfg).label_map
    include = cfg["extract.include_graphics"]
    out = _out_dir(args)
    regions = extract_regions(lmap, include)
    paths = export_regions(img, regions, out, fmt=args.format)
    mask = text_mask(lmap, include)
    save_image(out / "mask.pgm", LumaImage(mask.bits.astype(np.uint8) * 255))
    _dump(out / "config.json", cfg.snapshot())
    print(json.dumps({"regions": len(regions), "files": [p.name for p in paths]}))
    return 0


def downsample_majority(lmap: LabelMap, factor: int) -> np.ndarray:
    """Merge ``factor x factor`` groups of blocks by majority (ties -> lowest code)."""
    rows, cols = -(-lmap.rows // factor), -(-lmap.cols // factor)
    counts = np.zeros((rows, cols, 4), dtype=np.int64)
    for code in range(4):
        m = np.zeros((rows * factor, cols * factor), dtype=np.int64)
        m[: lmap.rows, : lmap.cols] = lmap.labels == code
        counts[..., code] = m.reshape(rows, factor, cols, factor).sum(axis=(1, 3))
    return np.argmax(counts, axis=2).astype(np.uint8)


def compare_maps(ac_map: LabelMap, hist_map: LabelMap, include_graphics: bool = False) -> float:
    """Percent of histogram-grid blocks on which the two pipelines agree.

    Graphics in the histogram map is read as Text or Picture according to
    the text-extraction policy, since the AC pipeline never emits it.
    """
    if hist_map.block_size % ac_map.block_size:
        raise ConfigError("histogram block size must be a multiple of the AC block size")
    coarse = downsample_majority(ac_map, hist_map.block_size // ac_map.block_size)
    if coarse.shape != hist_map.labels.shape:
        raise GeometryError("label maps cover different pages")
    h = hist_map.labels.copy()
    h[h == BlockLabel.GRAPHICS] = BlockLabel.TEXT if include_graphics else BlockLabel.PICTURE
    return 100.0 * float(np.count_nonzero(coarse == h)) / h.size


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    _, luma = _read_luma(args.input)
    ac = run_pipeline("ac", luma, cfg)
    hist = run_pipeline("hist", luma, cfg)
    report = {
        "input": str(args.input),
        "agreement": compare_maps(ac.label_map, hist.label_map, cfg["extract.include_graphics"]),
        "ac": {"label_map": ac.label_map.to_dict(), "seconds": ac.wall_time,
               "blocks": ac.label_map.counts()},
        "hist": {"label_map": hist.label_map.to_dict(), "seconds": hist.wall_time,
                 "blocks": hist.label_map.counts()},
        "config": cfg.snapshot(),
    }
    out = _out_dir(args)
    _dump(out / "compare.json", report)
    _dump(out / "config.json", cfg.snapshot())
    print(json.dumps({"agreement": report["agreement"], "ac_seconds": ac.wall_time,
                      "hist_seconds": hist.wall_time}))
    return 0


def _synth_corpus(args) -> List[ev.CorpusPage]:
    if args.pages is None:
        return ev.standard_corpus(args.seed, width=args.width, height=args.height)
    rng = np.random.default_rng(args.seed)
    pages = []
    for i in range(args.pages):
        spec = ev.SyntheticSpec(layout=args.layout, with_figures=args.figures,
                                width=args.width, height=args.height,
                                seed=int(rng.integers(2**31)))
        img, truth = ev.generate_synthetic(spec)
        pages.append(ev.CorpusPage(i, spec, img, truth))
    return pages


def cmd_synth(args) -> int:
    corpus = _synth_corpus(args)
    out = _out_dir(args)
    manifest = ev.corpus_manifest(corpus)
    for page, entry in zip(corpus, manifest["pages"]):
        save_image(out / entry["image"], page.image)
        save_image(out / entry["truth"], LumaImage(page.truth.pixels))
    manifest["seed"] = args.seed
    _dump(out / "manifest.json", manifest)
    print(json.dumps({"pages": len(corpus), "out_dir": str(out)}))
    return 0


def load_corpus(directory) -> List[ev.CorpusPage]:
    root = Path(directory)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
        pages = []
        for entry in manifest["pages"]:
            spec = ev.SyntheticSpec(**entry["spec"])
            img = load_image(root / entry["image"])
            truth = load_image(root / entry["truth"]).data
            pages.append(ev.CorpusPage(entry["id"], spec, img, ev.GroundTruth(truth)))
    except (OSError, KeyError, TypeError, json.JSONDecodeError, FormatError) as e:
        raise InputError(f"cannot load corpus from {root}: {e}") from None
    return pages


def _corpus_for(args) -> List[ev.CorpusPage]:
    if args.corpus:
        return load_corpus(args.corpus)
    return ev.standard_corpus(args.seed if args.seed is not None else 0)


DEFAULT_GRIDS = {
    "ac": {"ac.t1": [20.0, 50.0], "ac.t2": [70.0, 200.0]},
    "hist": {"hist.mode_t": [0.03, 0.05], "hist.a_window": [2, 4]},
}


def _grid_arg(text: Optional[str], pipeline: str) -> dict:
    if not text:
        return DEFAULT_GRIDS[pipeline]
    try:
        if Path(text).is_file():
            text = Path(text).read_text()
        grid = json.loads(text)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"bad --grid: {e}") from None
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigError("--grid must map config keys to non-empty lists")
    return grid


def cmd_tune(args) -> int:
    cfg = _config_from_args(args)
    grid = _grid_arg(args.grid, args.pipeline)
    corpus = _corpus_for(args)
    pairs = [(p.image, p.truth) for p in corpus]
    res = ev.kfold_tune(pairs, grid, k=args.k, pipeline=args.pipeline, base=cfg,
                        seed=cfg["seed"], include_graphics=cfg["extract.include_graphics"])
    out = _out_dir(args)
    report = res.to_dict()
    report["categories"] = ev.category_summary(corpus, res.oof_accuracy, [0.0] * len(corpus))
    _dump(out / "tune.json", report)
    _dump(out / "config.json", cfg.with_values(res.best).snapshot())
    print(json.dumps({"best": res.best, "cv_mean": res.cv_mean, "cv_std": res.cv_std}))
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    corpus = _corpus_for(args)
    report = ev.benchmark([p.image for p in corpus], cfg, repetitions=args.repetitions)
    summary = {}
    for name in ("ac", "hist"):
        accs = []
        times = report["pipelines"][name]["per_page_median_seconds"]
        for p in corpus:
            accs.append(ev.score(run_pipeline(name, p.luma, cfg), p.truth,
                                 cfg["extract.include_graphics"]).accuracy)
        summary[name] = ev.category_summary(corpus, accs, times)
    report["categories"] = summary
    table = ev.table1_report(summary)
    report["table"] = table
    out = _out_dir(args)
    _dump(out / "bench.json", report)
    atomic_write_text(out / "table1.txt", table + "\n")
    _dump(out / "config.json", cfg.snapshot())
    print(table)
    print(report.get("note", ""))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docseg", description="Block-based document image segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, pipeline=True):
        sp.add_argument("--config", help="JSON config file (nested or dotted keys)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key; repeatable")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default=".")
        if pipeline:
            sp.add_argument("--pipeline", choices=("ac", "hist"), default="hist")
            sp.add_argument("--refine", action="store_true", help="SMAP refinement (AC)")
            sp.add_argument("--block-size", type=int, help="histogram block size")
        sp.add_argument("--include-graphics", action="store_true",
                        help="treat Graphics blocks as text")

    s = sub.add_parser("segment", help="label the blocks of one page")
    s.add_argument("input")
    s.add_argument("--overlay", action="store_true", help="also write overlay.png")
    common(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("extract", help="write text-region crops and regions.json")
    s.add_argument("input")
    s.add_argument("--labels", help="use this label-map JSON instead of segmenting")
    s.add_argument("--format", choices=("pgm", "png"), default="pgm")
    common(s)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("compare", help="run both pipelines on one page")
    s.add_argument("input")
    common(s, pipeline=False)
    s.add_argument("--refine", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", help="generate a synthetic ground-truthed corpus")
    s.add_argument("--out-dir", default="corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pages", type=int, help="number of pages (default: standard 100-page corpus)")
    s.add_argument("--layout", choices=("single_column", "double_column"), default="single_column")
    s.add_argument("--figures", action="store_true")
    s.add_argument("--width", type=int, default=288)
    s.add_argument("--height", type=int, default=384)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("tune", help="k-fold threshold search")
    s.add_argument("--corpus", help="directory written by 'synth' (default: standard corpus)")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--grid", help="JSON object or file: {config key: [values]}")
    common(s)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("bench", help="time both pipelines and print a comparison table")
    s.add_argument("--corpus")
    s.add_argument("--repetitions", type=int, default=3)
    common(s, pipeline=False)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"docseg: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FormatError, GeometryError) as e:
        print(f"docseg: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"docseg: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
