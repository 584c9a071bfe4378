"""Cached runs of the long acceptance experiments.

A run lives in ``runs/acceptance/<config name>-<key>/`` where the key hashes
the config file bytes together with the code of every module the training
result depends on (parsed, docstrings dropped). Editing a config or the
numerics starts a fresh run; editing prose does not.

Run ``python3 tests/acceptance_cache.py [name ...]`` to fill the cache ahead
of ``pytest``.
"""
from __future__ import annotations

import ast
import hashlib
import json
import sys
import time
from pathlib import Path

import ndiv
from ndiv.config import load_config
from ndiv.trainer import run_experiment

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
CACHE = ROOT / "runs" / "acceptance"
MODULES = ("autodiff", "nn", "loss", "adversarial", "synthdata", "metrics", "trainer", "config")

ACCEPTANCE_RUNS = ("ring8_ndiv", "ring8_gan", "ring8_nomax", "grid25_ndiv",
                   "donut_ndiv", "donut_gan", "toy_ndiv", "toy_baseline")


def _strip_docstrings(tree: ast.AST) -> ast.AST:
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
            body = node.body
            if body and isinstance(body[0], ast.Expr) and isinstance(getattr(body[0], "value", None), ast.Constant) \
                    and isinstance(body[0].value.value, str):
                node.body = body[1:] or [ast.Pass()]
    return tree


def code_fingerprint() -> str:
    h = hashlib.sha256()
    pkg = Path(ndiv.__file__).parent
    for name in MODULES:
        tree = _strip_docstrings(ast.parse((pkg / f"{name}.py").read_text(encoding="utf-8")))
        h.update(name.encode())
        h.update(ast.dump(tree).encode())
    return h.hexdigest()


def run_dir(name: str) -> Path:
    raw = (CONFIGS / f"{name}.toml").read_bytes()
    key = hashlib.sha256(raw + code_fingerprint().encode()).hexdigest()[:16]
    return CACHE / f"{name}-{key}"


def cached_experiment(name: str, verbose: bool = False) -> dict:
    """``{"report", "records", "seconds_per_seed", "dir", "cached"}`` for a config."""
    cfg, _ = load_config(CONFIGS / f"{name}.toml")
    d = run_dir(name)
    timing = d / "timing.json"
    cached = timing.exists()
    if not cached:
        if verbose:
            print(f"running {name} -> {d}", flush=True)
        t0 = time.perf_counter()
        res = run_experiment(cfg, d)
        per_seed = (time.perf_counter() - t0) / len(cfg.seeds)
        # written last: its presence marks a complete run
        timing.write_text(json.dumps({"seconds_per_seed": per_seed, "failed_seeds": res.failed_seeds},
                                     sort_keys=True) + "\n", encoding="utf-8")
    report = json.loads((d / "report.json").read_text(encoding="utf-8"))
    records = [json.loads(line) for line in (d / "metrics.jsonl").read_text(encoding="utf-8").splitlines()]
    return {"report": report, "records": records, "dir": d, "cached": cached,
            "seconds_per_seed": json.loads(timing.read_text())["seconds_per_seed"]}


def final_per_seed(run: dict) -> dict:
    """Last evaluation of every seed, keyed by seed."""
    out = {}
    for rec in run["records"]:
        if "error" not in rec:
            out[rec["seed"]] = rec
    return out


if __name__ == "__main__":
    for name in sys.argv[1:] or ACCEPTANCE_RUNS:
        r = cached_experiment(name, verbose=True)
        print(name, json.dumps({k: v for k, v in r["report"].items() if k != "per_seed"}, sort_keys=True),
              f"{r['seconds_per_seed']:.0f}s/seed", flush=True)
