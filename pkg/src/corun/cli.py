"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 partial failure (some items
failed), 3 label-pool corruption.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .asm import compose, synthesize_pair
from .colabator import LabelPool, PoolIntegrityError, verify_pool
from .config import ConfigError, load_config
from .image import ImageFormatError, load_pfm, load_png, partition, save_pfm, save_png
from .iqa import MIN_QUALITY_PATCH, image_density, quality_score
from .objectives import coherence_loss
from .scenes import write_scene_dir
from .solver import SolverParams, dehaze
from .tuner import Sample, finetune, pretrain, sweep_stages, write_trace_csv

log = logging.getLogger("corun")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_POOL = 0, 1, 2, 3


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg, override=None):
    out = override or cfg.path("output", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _require(cfg, key, override=None):
    value = override or cfg.path(key)
    if not value:
        raise ConfigError(f"paths.{key} is not set")
    if not os.path.isdir(value):
        raise ConfigError(f"paths.{key}: {value} is not a directory")
    return value


def _png_stems(directory):
    return sorted(f[:-4] for f in os.listdir(directory) if f.endswith(".png"))


def load_synthetic_corpus(directory):
    """Read a corpus written by ``synthesize`` into ``Sample`` triples."""
    man_path = os.path.join(directory, "manifest.json")
    if os.path.exists(man_path):
        with open(man_path) as fh:
            ids = json.load(fh)["items"]
    else:
        ids = sorted(d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d)))
    out = []
    for image_id in ids:
        sub = os.path.join(directory, image_id)
        out.append(
            Sample(
                image_id,
                load_png(os.path.join(sub, "hazy.png")),
                load_png(os.path.join(sub, "clear.png")),
                load_pfm(os.path.join(sub, "trans.pfm")),
            )
        )
    return out


def load_real_corpus(directory):
    return [Sample(stem, load_png(os.path.join(directory, stem + ".png"))) for stem in _png_stems(directory)]


def _load_params(cfg, override=None):
    path = override or cfg.path("params")
    if path:
        try:
            return SolverParams.load(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read solver params {path}: {exc}") from exc
    return cfg.solver


# -- commands -----------------------------------------------------------
def cmd_synthesize(cfg, input_dir=None, output=None):
    """Haze every ``<id>.png`` scene using ``<id>.depth.pfm``."""
    src = _require(cfg, "input", input_dir)
    out = _out_dir(cfg, output)
    items, errors = [], {}
    for index, stem in enumerate(_png_stems(src)):
        try:
            scene = load_png(os.path.join(src, stem + ".png"))
            depth_path = os.path.join(src, stem + ".depth.pfm")
            if not os.path.exists(depth_path):
                raise FileNotFoundError(f"missing depth map {stem}.depth.pfm")
            depth = load_pfm(depth_path)
            if scene.shape[2] != 3:
                scene = np.repeat(scene, 3, axis=2)
            hazy, t, airlight, beta = synthesize_pair(scene, depth, cfg.synthesis, index)
            residual = float(np.max(np.abs(compose(scene, t, airlight) - hazy)))
            sub = os.path.join(out, stem)
            os.makedirs(sub, exist_ok=True)
            save_png(hazy, os.path.join(sub, "hazy.png"))
            save_png(scene, os.path.join(sub, "clear.png"))
            save_pfm(t, os.path.join(sub, "trans.pfm"))
            _write_json(
                os.path.join(sub, "meta.json"),
                {
                    "beta": beta,
                    "airlight": list(airlight.a),
                    "seed": cfg.synthesis.seed,
                    "index": index,
                    "depth_max": float(np.max(depth)),
                    "recomposition_residual": residual,
                },
            )
            items.append(stem)
        except (OSError, ValueError) as exc:
            errors[stem] = str(exc)
            log.warning("synthesize %s: %s", stem, exc)
    _write_json(os.path.join(out, "manifest.json"), {"items": items, "errors": errors, "config": cfg.to_dict()})
    log.info("synthesized %d items (%d errors)", len(items), len(errors))
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_pretrain(cfg, corpus_dir=None, output=None):
    corpus = load_synthetic_corpus(_require(cfg, "synthetic", corpus_dir))
    out = _out_dir(cfg, output)
    init = _load_params(cfg)
    if not corpus:
        init.save(os.path.join(out, "params.json"))
        _write_json(os.path.join(out, "report.json"), {"loss_trace": [], "config": cfg.to_dict()})
        return EXIT_OK
    report = pretrain(corpus, init, cfg.objective, cfg.tuner, cfg.augment)
    report.best_params.save(os.path.join(out, "params.json"))
    _write_json(os.path.join(out, "report.json"), {**report.to_dict(), "config": cfg.to_dict()})
    write_trace_csv(os.path.join(out, "trace.csv"), report.terms or report.loss_trace)
    return EXIT_OK


def cmd_finetune(cfg, real_dir=None, synthetic_dir=None, output=None):
    real = load_real_corpus(_require(cfg, "real", real_dir))
    syn_dir = synthetic_dir or cfg.path("synthetic")
    synthetic = load_synthetic_corpus(syn_dir) if syn_dir else []
    out = _out_dir(cfg, output)
    pool_dir = cfg.path("pool") or os.path.join(out, "pool")
    init = _load_params(cfg)
    try:
        pool = LabelPool.open(pool_dir)
    except PoolIntegrityError as exc:
        log.error("%s", exc)
        return EXIT_POOL
    if not os.path.exists(os.path.join(pool_dir, "manifest.json")):
        pool = LabelPool(pool_dir, cfg.n_patches, cfg.accept_mode, cfg.weight_combine)
        pool.write_manifest()
    # pool scoring needs patches of at least MIN_QUALITY_PATCH pixels per side
    min_side = MIN_QUALITY_PATCH * cfg.n_patches
    errors = {s.image_id: f"smaller than {min_side}x{min_side}" for s in real if min(s.lq.shape[:2]) < min_side}
    for image_id, msg in errors.items():
        log.warning("finetune %s: %s", image_id, msg)
    real = [s for s in real if s.image_id not in errors]
    if not real:
        init.save(os.path.join(out, "params.json"))
        _write_json(os.path.join(out, "report.json"), {"rounds": [], "errors": errors, "config": cfg.to_dict()})
        return EXIT_PARTIAL if errors else EXIT_OK
    res = finetune(real, synthetic, init, pool, cfg.objective, cfg.tuner, cfg.augment, cfg.rounds, cfg.eta)
    res.teacher.save(os.path.join(out, "params.json"))
    res.student.save(os.path.join(out, "student.json"))
    _write_json(os.path.join(out, "report.json"), {**res.to_dict(), "errors": errors, "config": cfg.to_dict()})
    rows = [{"round": r, **t} for r, rep in enumerate(res.reports) for t in rep.terms]
    write_trace_csv(os.path.join(out, "trace.csv"), rows)
    return EXIT_PARTIAL if errors else EXIT_OK


def _dehaze_one(args):
    src, out, params = args
    stem = os.path.splitext(os.path.basename(src))[0]
    p = load_png(src)
    if p.shape[2] == 1:
        p = np.repeat(p, 3, axis=2)
    j, t = dehaze(p, params)
    save_png(j, os.path.join(out, stem + ".png"))
    save_pfm(t, os.path.join(out, stem + ".trans.pfm"))
    return stem


def cmd_dehaze(cfg, inputs, output=None, params_path=None, jobs=1):
    params = _load_params(cfg, params_path)
    out = _out_dir(cfg, output)
    files = []
    for item in inputs:
        if os.path.isdir(item):
            files += [os.path.join(item, s + ".png") for s in _png_stems(item)]
        else:
            files.append(item)
    items, errors = [], {}

    def safe(args):
        try:
            return _dehaze_one(args), None
        except (OSError, ValueError, ImageFormatError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        results = list(ex.map(safe, [(f, out, params) for f in files]))
    for f, (stem, err) in zip(files, results):
        if err is None:
            items.append(stem)
        else:
            errors[f] = err
            log.warning("dehaze %s: %s", f, err)
    _write_json(os.path.join(out, "manifest.json"), {"items": items, "errors": errors, "params": params.to_dict()})
    return EXIT_PARTIAL if errors else EXIT_OK


def _mean_quality(img, n):
    try:
        layout = partition(img, n)
        return float(np.mean([quality_score(p) for _, _, p in layout.patches(img)]))
    except ValueError:
        return quality_score(img)


def cmd_evaluate(cfg, directory, lq_dir=None, output=None):
    """Score every PNG in ``directory``; with ``lq_dir`` also the recomposition residual."""
    out = _out_dir(cfg, output)
    rows, errors = [], {}
    for stem in _png_stems(directory):
        try:
            img = load_png(os.path.join(directory, stem + ".png"))
            row = {"image": stem, "density": image_density(img), "quality": _mean_quality(img, cfg.n_patches)}
            t_path = os.path.join(directory, stem + ".trans.pfm")
            lq_path = os.path.join(lq_dir, stem + ".png") if lq_dir else None
            if lq_path and os.path.exists(lq_path) and os.path.exists(t_path):
                row["coherence"] = coherence_loss(load_png(lq_path), img, load_pfm(t_path))
            rows.append(row)
        except (OSError, ValueError) as exc:
            errors[stem] = str(exc)
    summary = {}
    for key in ("density", "quality", "coherence"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            summary["mean_" + key] = float(np.mean(vals))
    fields = ["image", "density", "quality", "coherence"]
    with open(os.path.join(out, "report.csv"), "w") as fh:
        fh.write(",".join(fields) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(k, "")) for k in fields) + "\n")
    _write_json(os.path.join(out, "report.json"), {"images": rows, "summary": summary, "errors": errors})
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_pool(cfg, action, image_id=None, pool_dir=None, stream=None):
    stream = stream or sys.stdout
    pool_dir = pool_dir or cfg.path("pool") or os.path.join(cfg.path("output", "out"), "pool")
    if action == "verify":
        problems = verify_pool(pool_dir)
        for p in problems:
            print(p, file=stream)
        print("pool OK" if not problems else f"{len(problems)} problem(s)", file=stream)
        return EXIT_POOL if problems else EXIT_OK
    try:
        with open(os.path.join(pool_dir, "manifest.json")) as fh:
            man = json.load(fh)
    except (OSError, ValueError) as exc:
        print(f"cannot read pool manifest: {exc}", file=stream)
        return EXIT_POOL
    entries = man.get("entries", {})
    if action == "list":
        for key, item in sorted(entries.items()):
            print(f"{key}\tround={item['round']}\tmean_d={item['mean_d']:.6f}\tmean_q={item['mean_q']:.6f}", file=stream)
        return EXIT_OK
    if image_id not in entries:
        print(f"no pool entry {image_id!r}", file=stream)
        return EXIT_CONFIG
    print(json.dumps(entries[image_id], indent=2, sort_keys=True), file=stream)
    return EXIT_OK


def cmd_sweep(cfg, corpus_dir=None, output=None):
    corpus = load_synthetic_corpus(_require(cfg, "synthetic", corpus_dir))
    out = _out_dir(cfg, output)
    rows = sweep_stages(corpus, cfg.stage_counts, _load_params(cfg), cfg.objective, cfg.tuner, cfg.augment) if corpus else []
    write_trace_csv(os.path.join(out, "sweep.csv"), rows)
    _write_json(os.path.join(out, "sweep.json"), {"rows": rows, "config": cfg.to_dict()})
    return EXIT_OK


# -- argument parsing -------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog="corun", description=__doc__.splitlines()[0])
    parser.add_argument("-c", "--config", help="JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scenes", help="write a procedural desk-scale corpus")
    p.add_argument("output")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--real", action="store_true", help="write stand-in real hazy images instead of scene+depth pairs")

    p = sub.add_parser("synthesize", help="haze clear scenes using their depth maps")
    p.add_argument("--input")
    p.add_argument("-o", "--output")

    p = sub.add_parser("pretrain", help="tune solver parameters on a synthetic corpus")
    p.add_argument("--synthetic")
    p.add_argument("-o", "--output")

    p = sub.add_parser("finetune", help="Colabator fine-tuning on real images")
    p.add_argument("--real")
    p.add_argument("--synthetic")
    p.add_argument("-o", "--output")

    p = sub.add_parser("dehaze", help="dehaze images or directories")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output")
    p.add_argument("--params")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("evaluate", help="no-reference scores for a directory of images")
    p.add_argument("directory")
    p.add_argument("--lq", help="directory of hazy inputs, for the recomposition residual")
    p.add_argument("-o", "--output")

    p = sub.add_parser("pool", help="inspect the label pool")
    p.add_argument("action", choices=("list", "show", "verify"))
    p.add_argument("image_id", nargs="?")
    p.add_argument("--pool")

    p = sub.add_parser("sweep", help="pre-train for several stage counts and tabulate")
    p.add_argument("--synthetic")
    p.add_argument("-o", "--output")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "make-scenes":
            write_scene_dir(args.output, args.count, cfg.seed, args.size, args.real)
            return EXIT_OK
        if args.command == "synthesize":
            return cmd_synthesize(cfg, args.input, args.output)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.synthetic, args.output)
        if args.command == "finetune":
            return cmd_finetune(cfg, args.real, args.synthetic, args.output)
        if args.command == "dehaze":
            return cmd_dehaze(cfg, args.inputs, args.output, args.params, args.jobs)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.directory, args.lq, args.output)
        if args.command == "pool":
            return cmd_pool(cfg, args.action, args.image_id, args.pool)
        return cmd_sweep(cfg, args.synthetic, args.output)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (OSError, ImageFormatError) as exc:
        log.error("input error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
