"""Seeded samplers for the synthetic targets, the latent prior, and the toy pose task."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TARGET_KINDS = ("ring8", "grid25", "donut", "toy_pose")


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    centers: np.ndarray = field(default=None, compare=False)
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target {self.kind!r}; expected one of {TARGET_KINDS}")
        if self.kind in ("ring8", "grid25") and self.std <= 0:
            raise ValueError("std must be positive")

    @property
    def n_modes(self) -> int:
        return 0 if self.centers is None else len(self.centers)


def ring8(radius: float = 2.0, std: float = 0.05) -> TargetSpec:
    ang = 2 * np.pi * np.arange(8) / 8
    return TargetSpec("ring8", np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1), std)


def grid25(spacing: float = 2.0, std: float = 0.1) -> TargetSpec:
    ticks = spacing * np.arange(-2, 3)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return TargetSpec("grid25", np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64), std)


@dataclass(frozen=True)
class DonutSpec:
    inner: float = 1.0
    outer: float = 2.0
    center: tuple = (0.0, 0.0)
    train_size: int = 100
    cell: float = 0.1

    def __post_init__(self):
        if not 0 < self.inner < self.outer:
            raise ValueError(f"need 0 < inner < outer, got {self.inner}, {self.outer}")
        if self.train_size < 1 or self.cell <= 0:
            raise ValueError("train_size and cell must be positive")

    def contains(self, p) -> np.ndarray:
        """Membership test: ``inner <= |p - center| <= outer``."""
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        r = np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1])
        return (r >= self.inner) & (r <= self.outer)


def make_target(kind: str) -> TargetSpec:
    if kind == "ring8":
        return ring8()
    if kind == "grid25":
        return grid25()
    return TargetSpec(kind)


def sample_target(spec: TargetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from an equal-weight isotropic Gaussian mixture."""
    if spec.kind not in ("ring8", "grid25"):
        raise ValueError(f"sample_target handles ring8/grid25, got {spec.kind!r}; "
                         "use donut_trainset or toy_pose_dataset")
    if n < 1:
        raise ValueError("n must be >= 1")
    k = rng.integers(0, spec.n_modes, size=n)
    return spec.centers[k] + spec.std * rng.standard_normal((n, 2))


def sample_latent(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, dim))


def sample_annulus(spec: DonutSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform points in the annulus."""
    u = rng.random(n)
    r = np.sqrt(u * (spec.outer ** 2 - spec.inner ** 2) + spec.inner ** 2)
    t = 2 * np.pi * rng.random(n)
    return np.stack([spec.center[0] + r * np.cos(t), spec.center[1] + r * np.sin(t)], axis=1)


def donut_trainset(spec: DonutSpec, rng: np.random.Generator) -> np.ndarray:
    """The fixed sparse training set; membership is ``spec.contains``."""
    return sample_annulus(spec, spec.train_size, rng)


# -- conditional toy pose ----------------------------------------------------
#
# x is the visible joint's position; the occluded joint sits at unit distance
# from it, rotated by +theta or -theta from u = (1, 0).

TOY_THETA = np.pi / 4
TOY_VISIBILITY = np.array([1.0, 1.0, 0.0, 0.0])
TOY_X_RANGE = (-1.0, 1.0)


def toy_pose_modes(x: np.ndarray, theta: float = TOY_THETA) -> np.ndarray:
    """Both valid occluded-joint positions, shape ``(n, 2, 2)``."""
    x = np.atleast_2d(x)
    off = np.array([[np.cos(theta), np.sin(theta)], [np.cos(theta), -np.sin(theta)]])
    return x[:, None, :] + off[None, :, :]


@dataclass
class ToyPoseData:
    x: np.ndarray      # (n, 2)
    y: np.ndarray      # (n, 4) annotated pose: visible joint then occluded joint
    V: np.ndarray      # (4,)
    mode: np.ndarray   # (n,) 0 for +theta, 1 for -theta

    def __len__(self):
        return len(self.x)


def toy_pose_dataset(n: int, rng: np.random.Generator) -> ToyPoseData:
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = TOY_X_RANGE
    x = rng.uniform(lo, hi, size=(n, 2))
    mode = rng.integers(0, 2, size=n)
    p2 = toy_pose_modes(x)[np.arange(n), mode]
    return ToyPoseData(x, np.concatenate([x, p2], axis=1), TOY_VISIBILITY.copy(), mode)


def write_csv(path, rows: np.ndarray, names) -> None:
    rows = np.atleast_2d(rows)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(names)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_csv(path) -> tuple:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        names = next(r, None)
        rows = [[float(v) for v in row] for row in r if row]
    if names is None:
        raise ValueError(f"{path}: empty CSV")
    return np.array(rows, dtype=np.float64).reshape(-1, len(names)), names
