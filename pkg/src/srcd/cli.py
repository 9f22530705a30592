"""Command-line entry point: ``srcd <subcommand> [flags]``.

Exit codes: 0 on success, 1 on domain errors (bad image, failed check),
2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import SrcdError
from .glcm import GlcmConfig, PatchPolicy, compute_glcm, glcm_entropy
from .gradcheck import check_gsr, check_lsr
from .gsr import MemoryPool, build_global_graph
from .image_core import load_png, save_png, to_grayscale
from .lsr import AttributeWeights, build_local_graph, ema_update, estimate_attribute_weights, fuse_local
from .tbsa import AugMode, augment, augment_pair
from .trainer import TrainConfig, train

DEFAULT_SEED = 0
GRADCHECK_TOLERANCE = 1e-4

log = logging.getLogger("srcd")


class DomainFailure(SrcdError):
    """A command ran but its result is a failure (e.g. a gradient check)."""


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ----------------------------------------------------------------------------
# subcommands

def _glcm_config(args) -> GlcmConfig:
    try:
        return GlcmConfig(levels=args.levels, d=args.d, theta=args.theta)
    except ValueError as exc:
        raise SrcdError(str(exc)) from exc


def cmd_glcm(args):
    cfg = _glcm_config(args)
    g = compute_glcm(to_grayscale(load_png(args.image)), cfg)
    if args.csv:
        np.savetxt(args.csv, g.matrix, delimiter=",", fmt="%.17g")
    dump_json({
        "image": str(args.image),
        "levels": cfg.levels,
        "d": cfg.d,
        "theta": cfg.theta,
        "pair_count": g.pair_count,
        "entropy": glcm_entropy(g),
    })


def _augment_one(task):
    index, path, out_dir, mode, policy, cfg, seed_seq = task
    img = load_png(path)
    rng = np.random.default_rng(seed_seq)
    stem = path.stem
    if mode == "pair":
        (weak, strong), records = augment_pair(img, policy, cfg, rng)
        outputs = [(f"{stem}_weak.png", weak), (f"{stem}_strong.png", strong)]
    else:
        out, rec = augment(img, AugMode(mode), policy, cfg, rng)
        outputs, records = [(f"{stem}_{mode}.png", out)], (rec,)
    views = []
    for (name, view), rec in zip(outputs, records):
        save_png(view, out_dir / name)
        views.append({"output": name, **rec.to_json()})
    sidecar = {"source": path.name, "index": index, "mode": mode, "views": views}
    dump_json(sidecar, out_dir / f"{stem}.json")
    return path.name


def cmd_augment(args):
    in_dir, out_dir = Path(args.input), Path(args.output)
    if not in_dir.is_dir():
        raise SrcdError(f"input directory {in_dir} does not exist")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _glcm_config(args)
    try:
        policy = PatchPolicy(args.min_frac, args.max_frac, args.retries)
    except ValueError as exc:
        raise SrcdError(str(exc)) from exc
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".png")
    # one child seed per image, assigned in sorted filename order
    seeds = np.random.SeedSequence(args.seed).spawn(len(paths))
    tasks = [(i, p, out_dir, args.mode, policy, cfg, s) for i, (p, s) in enumerate(zip(paths, seeds))]
    workers = int(os.environ.get("SRCD_THREADS", "0")) or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for name in pool.map(_augment_one, tasks):
            log.info("augmented %s", name)
    log.info("wrote %d images to %s", len(paths), out_dir)


def cmd_graph(args):
    data = json.loads(Path(args.features).read_text())
    vectors = np.asarray(data["vectors"], dtype=np.float64)
    labels = np.asarray(data["labels"], dtype=np.int64)
    domains = np.asarray(data["domains"], dtype=np.int64)
    if not (len(vectors) == len(labels) == len(domains)):
        raise SrcdError("vectors, labels and domains must have equal length")
    if not np.isin(domains, (1, 2)).all():
        raise SrcdError("domains must be 1 or 2")
    weights = AttributeWeights(args.k, args.gamma)
    if args.estimate_weights:
        weights = ema_update(weights, estimate_attribute_weights(vectors, labels, args.k))
    order = np.concatenate([np.flatnonzero(domains == 1), np.flatnonzero(domains == 2)])
    first, second = order[domains[order] == 1], order[domains[order] == 2]
    graph = build_local_graph(vectors[first], labels[first], vectors[second], labels[second], weights)
    fused = fuse_local(graph.adjacency, vectors[order], row_normalize=args.row_normalize)
    dump_json({
        "k": args.k,
        "m": graph.m,
        "n": graph.n,
        "node_order": order.tolist(),
        "attribute_weights": {str(q): w.tolist() for q, w in sorted(weights.weights.items())},
        "row_normalized": args.row_normalize,
        "adjacency": graph.adjacency.tolist(),
        "fused": fused.tolist(),
    }, args.output)


def cmd_gsr_dump(args):
    try:
        pool = MemoryPool.from_json(json.loads(Path(args.state).read_text()))
        graph = build_global_graph(pool)
    except (KeyError, ValueError) as exc:
        raise SrcdError(f"invalid pool state: {exc}") from exc
    dump_json({
        "pool": pool.to_json(),
        "nodes": [
            {"set": int(s), "age": int(a), "class": int(q)}
            for s, a, q in zip(graph.set_index, graph.ages, graph.labels)
        ],
        "adjacency": graph.adjacency.tolist(),
    }, args.output)


def cmd_demo(args):
    cfg = TrainConfig(
        k=args.k, Z=args.z, lam=args.lam, beta=args.beta, lr=args.lr, gamma=args.gamma,
        iterations=args.iters, seed=args.seed, num_classes=args.classes, feature_dim=args.dim,
    )
    report, pool = train(cfg)
    dump_json(report.to_json(), args.report)
    if args.state:
        dump_json(pool.to_json(), args.state)
    log.info("source_acc %.4f shifted_acc %.4f", report.source_acc, report.shifted_acc)


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    lsr = [check_lsr(rng, args.step) for _ in range(args.instances)]
    gsr = [check_gsr(rng, args.step, depth=args.depth) for _ in range(args.instances)]
    result = {
        "instances": args.instances,
        "step": args.step,
        "tolerance": GRADCHECK_TOLERANCE,
        "lsr_max_rel_error": max(lsr),
        "gsr_max_rel_error": max(gsr),
    }
    result["passed"] = max(lsr + gsr) < GRADCHECK_TOLERANCE
    dump_json(result)
    if not result["passed"]:
        raise DomainFailure("gradient check exceeded tolerance")


# ----------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    glcm_flags = argparse.ArgumentParser(add_help=False)
    glcm_flags.add_argument("--levels", type=int, default=32)
    glcm_flags.add_argument("--d", type=int, default=1)
    glcm_flags.add_argument("--theta", type=int, default=0, choices=[0, 45, 90, 135])

    parser = argparse.ArgumentParser(
        prog="srcd", description="Texture self-augmentation and semantic reasoning kernels.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("augment", parents=[common, glcm_flags], help="augment a PNG directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", required=True, choices=["weak", "strong", "pair"])
    p.add_argument("--min-frac", type=float, default=0.125)
    p.add_argument("--max-frac", type=float, default=0.25)
    p.add_argument("--retries", type=int, default=10)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("glcm", parents=[common, glcm_flags], help="GLCM entropy of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--csv", help="also write the matrix to this CSV file")
    p.set_defaults(func=cmd_glcm)

    p = sub.add_parser("graph", parents=[common], help="local relation graph of a feature batch")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--estimate-weights", action="store_true",
                   help="update attribute weights from this batch before building the graph")
    p.add_argument("--row-normalize", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("gsr-dump", parents=[common], help="dump a memory pool and its global graph")
    p.add_argument("--state", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_gsr_dump)

    p = sub.add_parser("demo", parents=[common], help="train on synthetic features")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--z", type=int, default=10)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--report", help="write the report here instead of stdout")
    p.add_argument("--state", help="also write the final memory pool here")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of both losses")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--depth", type=int, default=3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (SrcdError, FloatingPointError, OSError) as exc:
        print(f"srcd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
