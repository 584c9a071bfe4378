"""Evaluation protocol: mode counting, donut coverage, conditional dispersion."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ndiv.synthdata import DonutSpec, TargetSpec


@dataclass
class MetricsReport:
    modes: Optional[float] = None
    fail_rate: Optional[float] = None
    cover_rate: Optional[float] = None
    outlier_rate: Optional[float] = None
    data_sparsity: Optional[float] = None
    sample_std: Optional[float] = None
    visible_error: Optional[float] = None
    seeds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def mean_of(cls, reports: list, seeds: list) -> "MetricsReport":
        out = cls(seeds=list(seeds))
        for name in ("modes", "fail_rate", "cover_rate", "outlier_rate", "data_sparsity",
                     "sample_std", "visible_error"):
            vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
            if vals:
                setattr(out, name, float(np.mean(vals)))
        return out


def mode_stats(samples: np.ndarray, spec: TargetSpec, threshold: float = 3.0) -> tuple:
    """``(modes captured, fail rate %)``.

    A sample is high quality when within ``threshold * std`` of its nearest
    center; a mode is captured when at least one high-quality sample has it
    as nearest center.
    """
    if spec.kind not in ("ring8", "grid25"):
        raise ValueError(f"mode_stats needs a ring8/grid25 target, got {spec.kind!r}")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(samples) == 0:
        raise ValueError("mode_stats needs at least one sample")
    d2 = ((samples[:, None, :] - spec.centers[None, :, :]) ** 2).sum(-1)
    nearest = d2.argmin(axis=1)
    good = np.sqrt(d2[np.arange(len(samples)), nearest]) <= threshold * spec.std
    modes = len(np.unique(nearest[good]))
    fail = 100.0 * (1.0 - good.mean())
    return float(modes), float(fail)


def donut_cells(donut: DonutSpec) -> tuple:
    """Grid over the bounding box: ``(lower corner, cells per side, in-region mask)``."""
    lo = np.array(donut.center, dtype=np.float64) - donut.outer
    n = int(round(2 * donut.outer / donut.cell))
    mid = lo[0] + donut.cell * (np.arange(n) + 0.5), lo[1] + donut.cell * (np.arange(n) + 0.5)
    cx, cy = np.meshgrid(*mid, indexing="ij")
    region = donut.contains(np.stack([cx.ravel(), cy.ravel()], axis=1)).reshape(n, n)
    return lo, n, region


def cover_rate(samples: np.ndarray, donut: DonutSpec) -> float:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    lo, n, region = donut_cells(donut)
    if len(samples) == 0:
        return 0.0
    idx = np.floor((samples - lo) / donut.cell).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < n), axis=1)
    hit = np.zeros((n, n), dtype=bool)
    hit[idx[ok, 0], idx[ok, 1]] = True
    return float(100.0 * (hit & region).sum() / region.sum())


def cover_outlier(samples: np.ndarray, donut: DonutSpec, trainset: np.ndarray) -> tuple:
    """``(cover rate %, outlier rate %, data sparsity %)``."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    outlier = 0.0 if len(samples) == 0 else float(100.0 * (~donut.contains(samples)).mean())
    return cover_rate(samples, donut), outlier, cover_rate(trainset, donut)


def _joints(V: np.ndarray, joint_dim: int) -> tuple:
    """Column indices of fully visible and fully occluded joints."""
    V = np.asarray(V).reshape(-1, joint_dim)
    cols = np.arange(V.size).reshape(-1, joint_dim)
    return cols[V.all(axis=1)], cols[~V.any(axis=1)]


def conditional_dispersion(sample_fn: Callable, x: np.ndarray, y_ref: np.ndarray, V,
                           m: int, rng: np.random.Generator, joint_dim: int = 2) -> tuple:
    """``(visible error, occluded stddev)`` from ``m`` draws per input.

    ``sample_fn(x, rng)`` returns one pose per row of ``x``. Visible error is
    the mean Euclidean distance of visible joints to ``y_ref``. The occluded
    spread of a joint is ``sqrt(sum of per-coordinate variances)`` over the
    ``m`` draws (population variance), averaged over occluded joints and inputs.
    Moments are accumulated online, one draw at a time.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    vis, occ = _joints(V, joint_dim)
    y_ref = np.asarray(y_ref, dtype=np.float64)
    mean = np.zeros_like(y_ref)
    m2 = np.zeros_like(y_ref)
    vis_err = 0.0
    for k in range(1, m + 1):
        y = np.asarray(sample_fn(x, rng), dtype=np.float64)
        delta = y - mean
        mean += delta / k
        m2 += delta * (y - mean)
        if len(vis):
            vis_err += np.linalg.norm(y[:, vis] - y_ref[:, vis], axis=-1).mean()
    var = m2 / m
    occ_std = float(np.sqrt(var[:, occ].sum(axis=-1)).mean()) if len(occ) else 0.0
    return float(vis_err / m) if len(vis) else 0.0, occ_std


def table1_csv(rows: dict) -> str:
    """CSV with Table-1 style columns; ``rows`` maps method to a dict of results."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["ring_modes", "ring_fail", "grid_modes", "grid_fail"]
    w.writerow(["method"] + cols)
    for method, r in rows.items():
        w.writerow([method] + ["" if r.get(c) is None else f"{r[c]:.1f}" for c in cols])
    return buf.getvalue()
