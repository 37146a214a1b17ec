"""Command line entry point: ``supertoken <subcommand> [flags]``.

Exit codes: 0 success, 2 parse/config/input error, 3 numerical degeneracy,
4 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import classifier, io
from .bench import parse_size, run_bench
from .config import PipelineConfig, format_config, load_config
from .errors import CheckpointError, ConfigError, SupertokenError
from .metrics import confusion, scores, write_report
from .pipeline import predict_map, run_cluster, supervision, train_toy
from .synthetic import separable_cube

log = logging.getLogger("supertoken")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _manifest(path, cfg: PipelineConfig, extra: dict) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
        for k, v in extra.items():
            fh.write(f"{k}={v}\n")


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ConfigError(name, f"--{name} is required for this subcommand")


def cmd_cluster(args) -> int:
    _need(args, "cube")
    cfg = _config(args)
    cube = io.read_cube(args.cube)
    res = run_cluster(cube, cfg, threads=args.threads)
    out = _out(args)
    io.write_labels(os.path.join(out, "token_map.hsil"), res.token_map(), cfg.m2)
    io.write_matrix(os.path.join(out, "tokens.hsic"), res.tokens.features)
    _manifest(os.path.join(out, "manifest.txt"), cfg, {
        "threads": args.threads,
        "tokens": res.tokens.count,
        "kept_indices": ",".join(map(str, res.filtered.kept_indices.tolist())),
        "separation": repr(res.filtered.separation),
        "separation_loss": repr(res.filtered.loss),
    })
    log.info("wrote %d tokens to %s", res.tokens.count, out)
    return 0


def cmd_filter(args) -> int:
    _need(args, "cube")
    cfg = _config(args)
    res = run_cluster(io.read_cube(args.cube), cfg, threads=args.threads)
    f = res.filtered
    doc = {
        "kept_indices": f.kept_indices.tolist(),
        "kept_coords": res.first_centers.coords[f.kept_indices].tolist(),
        "scores": f.scores.tolist(),
        "density": f.density.tolist(),
        "isolation": f.isolation.tolist(),
        "separation": f.separation,
        "separation_loss": f.loss,
    }
    with open(os.path.join(_out(args), "filter.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_softlabel(args) -> int:
    _need(args, "cube", "labels")
    cfg = _config(args)
    labels = io.read_labels(args.labels)
    res = run_cluster(io.read_cube(args.cube), cfg, threads=args.threads)
    counts, soft = supervision(res, labels)
    doc = {"counts": counts.tolist(), "soft_labels": soft.values.tolist(),
           "valid": soft.valid.tolist()}
    with open(os.path.join(_out(args), "softlabels.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_train_toy(args) -> int:
    cfg = _config(args)
    if args.cube:
        _need(args, "labels")
        cube, labels = io.read_cube(args.cube), io.read_labels(args.labels)
    else:
        cube, labels = separable_cube(seed=cfg.seed)
    res = train_toy(cfg, cube, labels, steps=args.steps, lr=args.lr, threads=args.threads)
    out = _out(args)
    io.write_checkpoint(os.path.join(out, "checkpoint.hsck"), res.params)
    with open(os.path.join(out, "trace.txt"), "w") as fh:
        fh.writelines(f"{i}\t{v!r}\n" for i, v in enumerate(res.trace))
    io.write_labels(os.path.join(out, "class_map.hsil"), res.class_map, labels.class_count)
    write_report(res.metrics, os.path.join(out, "metrics.txt"), os.path.join(out, "metrics.json"))
    _manifest(os.path.join(out, "manifest.txt"), cfg, {
        "steps": args.steps, "lr": args.lr, "threads": args.threads,
        "initial_loss": repr(res.trace[0]), "final_loss": repr(res.trace[-1]),
    })
    return 0


def _load_model(args, cfg: PipelineConfig) -> dict:
    params = io.read_checkpoint(args.checkpoint)
    try:
        n_classes = params["head.W"].shape[1]
    except KeyError:
        raise CheckpointError("checkpoint has no head.W tensor") from None
    expected = classifier.param_shapes(cfg.channels, n_classes, cfg.blocks)
    got = [(n, v.shape) for n, v in params.items()]
    if got != [(n, tuple(s)) for n, s in expected]:
        raise CheckpointError(f"checkpoint tensors {got} do not match config {expected}")
    return params


def _classify(args):
    _need(args, "cube", "checkpoint")
    cfg = _config(args)
    params = _load_model(args, cfg)
    res = run_cluster(io.read_cube(args.cube), cfg, threads=args.threads)
    with threadpool_limits(limits=args.threads):
        _, cmap = predict_map(res, params)
    n_classes = params["head.W"].shape[1]
    io.write_labels(os.path.join(_out(args), "class_map.hsil"), cmap, n_classes)
    return cmap, n_classes


def cmd_classify(args) -> int:
    _classify(args)
    return 0


def cmd_eval(args) -> int:
    _need(args, "labels")
    labels = io.read_labels(args.labels)
    cmap, n_classes = _classify(args)
    if labels.labels.shape != cmap.shape:
        raise ConfigError("labels", "label map and cube sizes differ")
    result = scores(confusion(labels.labels, cmap, max(n_classes, labels.class_count)))
    write_report(result, os.path.join(args.out, "metrics.txt"), os.path.join(args.out, "metrics.json"))
    print(f"OA={result['OA']:.4f} AA={result['AA']:.4f} CF1={result['CF1']:.4f} "
          f"kappa={result['kappa']:.4f} mIoU={result['mIoU']:.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    sizes = [parse_size(s) for s in args.sizes.split(",")]
    report = run_bench(cfg, sizes, repetitions=args.repetitions, threads=args.threads,
                       seed=cfg.seed, iterations=args.iterations)
    with open(os.path.join(_out(args), "bench.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    for row in report["results"]:
        print(f"{row['size']}: global {row['global']['median_s']:.4f}s  "
              f"patch x{row['baseline_iterations']} {row['baseline']['median_s']:.4f}s  "
              f"patch x1 {row['baseline_single_pass']['median_s']:.4f}s")
    return 0


COMMANDS = {
    "cluster": cmd_cluster,
    "filter": cmd_filter,
    "softlabel": cmd_softlabel,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "train-toy": cmd_train_toy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supertoken", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--cube")
        p.add_argument("--labels")
        p.add_argument("--config")
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--checkpoint")
        if name == "train-toy":
            p.add_argument("--steps", type=int, default=200)
            p.add_argument("--lr", type=float, default=0.5)
        if name == "bench":
            p.add_argument("--sizes", default="256x256x32")
            p.add_argument("--repetitions", type=int, default=5)
            p.add_argument("--iterations", type=int, default=3)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except SupertokenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
