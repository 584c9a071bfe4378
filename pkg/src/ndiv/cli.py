"""Command line: ``ndiv train | eval | verify | plot``.

Exit codes: 0 ok, 1 verification failure, 2 usage or config error,
3 numerical abort, 4 I/O error or corrupt artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

from ndiv import loss as L
from ndiv import plot
from ndiv import synthdata as sd
from ndiv.config import load_config
from ndiv.nn import CheckpointError
from ndiv.trainer import (EVAL_STREAM, EXPORT_STREAM, ConfigError, ExperimentConfig, _stream,
                          evaluate, generate, load_checkpoint, make_data, run_experiment)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _err(msg: str) -> None:
    print(f"ndiv: {msg}", file=sys.stderr)


def cmd_train(args) -> int:
    try:
        cfg, digest = load_config(args.config)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_USAGE
    except OSError as e:
        _err(f"cannot read config: {e}")
        return EXIT_IO
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg, out)
    except OSError as e:
        _err(f"cannot write outputs: {e}")
        return EXIT_IO
    artifacts = {
        "metrics": "metrics.jsonl",
        "report": "report.json",
        "checkpoints": [f"checkpoints/seed{r.seed}.ckpt" for r in result.runs if r.error is None],
    }
    first = next((r for r in result.runs if r.state is not None and r.error is None), None)
    if first is not None and cfg.target != "toy_pose":
        pts = generate(first.state, min(cfg.eval_samples, 2000), _stream(first.seed, EXPORT_STREAM))
        sd.write_csv(out / "samples.csv", pts, ["x", "y"])
        donut = cfg.donut() if cfg.target == "donut" else None
        centers = None if donut else first.state.data["target"].centers
        (out / "samples.svg").write_text(plot.scatter_svg(pts, donut, centers), encoding="utf-8")
        artifacts.update(samples_csv="samples.csv", samples_svg="samples.svg")
    manifest = {
        "config": str(args.config),
        "config_sha256": digest,
        "artifacts": artifacts,
        "failed_seeds": result.failed_seeds,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "version": version(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    print(json.dumps(result.report_dict(), sort_keys=True))
    if result.failed_seeds:
        _err(f"numerical abort in seed(s) {result.failed_seeds}; see metrics.jsonl")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        _err(str(e))
        return EXIT_IO
    if args.target and args.target != state.config.target:
        if "toy_pose" in (args.target, state.config.target):
            _err("cannot evaluate a conditional checkpoint against an unconditional target")
            return EXIT_USAGE
        cfg = ExperimentConfig.from_dict({**state.config.to_dict(), "target": args.target})
        state.config = cfg
        state.data = make_data(cfg, state.seed)
    rng = _stream(state.seed if args.seed is None else args.seed, EVAL_STREAM, state.iteration)
    report = evaluate(state, args.n, rng)
    d = report.to_dict()
    d["iter"] = state.iteration
    print(json.dumps(d, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    from ndiv.verify import run_all
    t0 = time.perf_counter()
    results = run_all(args.only)
    width = max((len(r[0]) for r in results), default=10)
    for pid, ok, detail, secs in results:
        print(f"{'PASS' if ok else 'FAIL'}  {pid:<{width}}  {secs:6.2f}s  {detail}")
    failed = [r[0] for r in results if not r[1]]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def _read_jsonl(path) -> list:
    recs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                recs.append(json.loads(line))
    return recs


CURVE_METRICS = ("modes", "cover_rate", "sample_std", "fail_rate", "loss_ndiv")


def _plot_svg(args) -> str:
    path = Path(args.input)
    if args.kind == "curve":
        recs = [r for r in _read_jsonl(path) if "error" not in r]
        metric = args.metric or next((m for m in CURVE_METRICS if recs and m in recs[0]), None)
        series = {}
        for r in recs:
            if metric in r:
                xs, ys = series.setdefault(f"seed {r['seed']}", ([], []))
                xs.append(r["iter"])
                ys.append(r[metric])
        return plot.curve_svg(series)
    pts, _ = sd.read_csv(path)
    if args.kind == "heatmap":
        pts = pts[:args.limit]
        if len(pts) < 2:
            raise ValueError("heatmap needs at least two samples")
        return plot.heatmap_svg(L.normdist(pts).D.value)
    donut = sd.DonutSpec() if args.target == "donut" else None
    centers = sd.make_target(args.target).centers if args.target in ("ring8", "grid25") else None
    return plot.scatter_svg(pts[:, :2], donut, centers)


def cmd_plot(args) -> int:
    try:
        svg = _plot_svg(args)
    except (ValueError, KeyError) as e:
        _err(f"plot: {e}")
        return EXIT_USAGE
    except OSError as e:
        _err(f"plot: {e}")
        return EXIT_IO
    try:
        Path(args.out).write_text(svg, encoding="utf-8")
    except OSError as e:
        _err(f"cannot write {args.out}: {e}")
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndiv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=version())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, report JSON on stdout")
    e.add_argument("checkpoint")
    e.add_argument("--target", choices=sd.TARGET_KINDS)
    e.add_argument("--n", type=int, default=10000)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--only", nargs="*", help="property id prefixes")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("plot", help="render an SVG figure")
    g.add_argument("input", help="metrics JSONL (curve) or samples CSV (scatter, heatmap)")
    g.add_argument("--kind", choices=("scatter", "curve", "heatmap"), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--metric", help="JSONL field for curves")
    g.add_argument("--target", choices=("ring8", "grid25", "donut"), help="overlay for scatter")
    g.add_argument("--limit", type=int, default=64, help="max samples in a heatmap")
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", 1) is not None and getattr(args, "n", 1) < 1:
        _err("--n must be >= 1")
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
