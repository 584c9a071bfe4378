"""Training loop for generators with the normalized diversity loss.

One iteration samples a latent batch and a real batch, updates the
discriminator on detached fakes, then updates the generator on
``adversarial + lam * ndiv``. ``ndiv_repeat`` repeats the two updates on the
same batch. Conditional runs (target ``toy_pose``) add an encoder, the
visible-joint loss, and per-input diversity over groups of latent draws.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ndiv import autodiff as ad
from ndiv import adversarial as adv
from ndiv import loss as L
from ndiv import metrics as M
from ndiv import synthdata as sd
from ndiv.nn import (AdamState, MlpSpec, adam_step, as_leaves, forward_mlp, init_params,
                     load_tensors, predict, save_tensors)

log = logging.getLogger(__name__)

VARIANTS = ("ndiv", "gan_only", "ndiv_unnorm", "ndiv_nomax", "ndiv_nofreeze", "ndiv_only")
H_Y = ("identity", "gate", "embed_disc")


class ConfigError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    """A loss or gradient went non-finite; ``diagnostics`` holds the dump."""

    def __init__(self, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__("non-finite training state: " + json.dumps(diagnostics, sort_keys=True))


@dataclass
class ExperimentConfig:
    target: str = "ring8"
    latent_dim: int = 2
    batch_size: int = 128
    alpha: float = 0.5
    lam: float = 1.0
    max_iters: int = 5000
    ndiv_repeat: int = 3
    eval_interval: int = 1000
    eval_samples: int = 10000
    seeds: tuple = (0,)
    lr: float = 1e-4
    lr_d: Optional[float] = None
    beta1: float = 0.5
    beta2: float = 0.999
    variant: str = "ndiv"
    h_y: str = "identity"
    hidden: int = 128
    threshold: float = 3.0
    # donut
    donut_inner: float = 1.0
    donut_outer: float = 2.0
    donut_train_size: int = 100
    donut_cell: float = 0.1
    # conditional toy
    cond_dataset_size: int = 2000
    cond_group: int = 8
    cond_code_dim: int = 16
    cond_eval_inputs: int = 200
    cond_eval_draws: int = 20

    def __post_init__(self):
        self._check_types()
        self.seeds = tuple(int(s) for s in np.atleast_1d(self.seeds))
        self.validate()

    def _check_types(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type == "Optional[float]" and v is None:
                continue
            if f.type in ("float", "Optional[float]"):
                if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                    raise ConfigError(f"{f.name} must be a number, got {v!r}")
                setattr(self, f.name, float(v))
            elif f.type == "int":
                if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                    raise ConfigError(f"{f.name} must be an integer, got {v!r}")
                setattr(self, f.name, int(v))
            elif f.type == "str" and not isinstance(v, str):
                raise ConfigError(f"{f.name} must be a string, got {v!r}")
        if not all(isinstance(s, (int, np.integer)) and not isinstance(s, bool)
                   for s in np.atleast_1d(self.seeds).tolist()):
            raise ConfigError(f"seeds must be integers, got {self.seeds!r}")

    def validate(self):
        if self.target not in sd.TARGET_KINDS:
            raise ConfigError(f"target must be one of {sd.TARGET_KINDS}, got {self.target!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.h_y not in H_Y:
            raise ConfigError(f"h_y must be one of {H_Y}, got {self.h_y!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.max_iters < 1 or self.eval_interval < 1 or self.ndiv_repeat < 1:
            raise ConfigError("max_iters, eval_interval and ndiv_repeat must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.latent_dim < 0 or (self.latent_dim == 0 and self.target != "toy_pose"):
            raise ConfigError("latent_dim must be >= 1 (0 only for the conditional baseline)")
        if self.latent_dim == 0 and self.uses_ndiv:
            raise ConfigError("a diversity variant needs latent_dim >= 1")
        if self.h_y == "embed_disc" and not self.uses_disc:
            raise ConfigError("h_y = embed_disc needs a discriminator")
        if self.target == "toy_pose" and self.cond_group < 2 and self.uses_ndiv:
            raise ConfigError("cond_group must be >= 2")

    @property
    def uses_disc(self) -> bool:
        return self.variant != "ndiv_only"

    @property
    def uses_ndiv(self) -> bool:
        return self.variant != "gan_only" and self.lam != 0

    @property
    def disc_lr(self) -> float:
        return self.lr if self.lr_d is None else self.lr_d

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    def donut(self) -> sd.DonutSpec:
        return sd.DonutSpec(self.donut_inner, self.donut_outer, (0.0, 0.0),
                            self.donut_train_size, self.donut_cell)


# -- networks ----------------------------------------------------------------

@dataclass
class Net:
    spec: MlpSpec
    params: dict
    opt: AdamState

    def __call__(self, x, trainable: bool = True, return_hidden: bool = False):
        leaves = as_leaves(self.params, trainable)
        return forward_mlp(self.spec, leaves, x, return_hidden), leaves

    def step(self, leaves: dict):
        adam_step(self.params, {k: n.grad for k, n in leaves.items()}, self.opt)


def _net(widths, rng, lr, cfg: ExperimentConfig) -> Net:
    spec = MlpSpec(tuple(widths), "relu", "identity")
    return Net(spec, init_params(spec, rng), AdamState(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2))


def network_specs(cfg: ExperimentConfig) -> dict:
    h = cfg.hidden
    if cfg.target == "toy_pose":
        c = cfg.cond_code_dim
        return {"enc": (2, 64, c), "gen": (c + cfg.latent_dim, h, h, 4), "disc": (6, h, h, 1)}
    return {"gen": (cfg.latent_dim, h, h, 2), "disc": (2, h, h, 1)}


# -- state -------------------------------------------------------------------

@dataclass
class TrainState:
    config: ExperimentConfig
    seed: int
    iteration: int
    nets: dict
    rng: np.random.Generator
    data: dict = field(default_factory=dict)
    last: dict = field(default_factory=dict)


def _stream(seed: int, *tag) -> np.random.Generator:
    return np.random.default_rng([seed, *tag])


PARAM_STREAM, DATA_STREAM, TRAIN_STREAM, EVAL_STREAM, EXPORT_STREAM = 0, 1, 2, 3, 4


def make_data(cfg: ExperimentConfig, seed: int) -> dict:
    rng = _stream(seed, DATA_STREAM)
    if cfg.target in ("ring8", "grid25"):
        return {"target": sd.make_target(cfg.target)}
    if cfg.target == "donut":
        return {"trainset": sd.donut_trainset(cfg.donut(), rng)}
    ds = sd.toy_pose_dataset(cfg.cond_dataset_size, rng)
    held = sd.toy_pose_dataset(cfg.cond_eval_inputs, rng)
    return {"pose": ds, "pose_eval": held}


def init_state(cfg: ExperimentConfig, seed: int) -> TrainState:
    rng = _stream(seed, PARAM_STREAM)
    nets = {}
    for name, widths in network_specs(cfg).items():
        lr = cfg.disc_lr if name == "disc" else cfg.lr
        nets[name] = _net(widths, rng, lr, cfg)
    return TrainState(cfg, seed, 0, nets, _stream(seed, TRAIN_STREAM), make_data(cfg, seed))


def _check_finite(state: TrainState, terms: dict, leaves_by_net: dict):
    bad = [k for k, v in terms.items() if not np.isfinite(v)]
    norms = {}
    for net, leaves in leaves_by_net.items():
        sq = float(np.sum([np.sum(n.grad ** 2) for n in leaves.values()]))
        norms[net] = float(np.sqrt(sq)) if np.isfinite(sq) else float("inf")
        if not np.isfinite(sq):
            bad.append(f"grad:{net}")
    if bad:
        raise NumericalAbort({"iteration": state.iteration, "seed": state.seed,
                              "loss_terms": {k: float(v) for k, v in terms.items()},
                              "grad_norms": norms, "non_finite": bad})


# -- unconditional step ------------------------------------------------------

def _critic(net: Net):
    """Discriminator with frozen parameters, as a callable on nodes."""
    leaves = as_leaves(net.params, trainable=False)
    return lambda x: forward_mlp(net.spec, leaves, x)


def metric_transform(cfg: ExperimentConfig, state: TrainState) -> L.MetricTransform:
    if cfg.h_y == "gate":
        return L.gate(sd.TOY_VISIBILITY if cfg.target == "toy_pose" else np.zeros(2))
    if cfg.h_y == "embed_disc":
        disc = state.nets["disc"]
        leaves = as_leaves(disc.params, trainable=False)
        return L.MetricTransform("embed", network=lambda y: forward_mlp(disc.spec, leaves, y, True)[1])
    return L.IDENTITY


def latent_distances(cfg: ExperimentConfig, z):
    """Latent-side distance matrix for the configured variant (no gradient path)."""
    if cfg.variant == "ndiv_unnorm":
        return L.pairwise_distance(z)
    return L.normdist(z, L.IDENTITY, freeze=cfg.variant != "ndiv_nofreeze")


def diversity_term(cfg: ExperimentConfig, z, y: ad.Node, h: L.MetricTransform,
                   Dz=None) -> ad.Node:
    """The configured diversity loss between latent batch ``z`` and outputs ``y``."""
    Dz = latent_distances(cfg, z) if Dz is None else Dz
    if cfg.variant == "ndiv_unnorm":
        return adv.unnorm_loss(Dz, L.pairwise_distance(y, h), cfg.alpha)
    Dy = L.normdist(y, h, freeze=cfg.variant != "ndiv_nofreeze")
    if cfg.variant == "ndiv_nomax":
        return adv.nomax_loss(Dz, Dy, cfg.alpha)
    return L.ndiv_loss(Dz, Dy, cfg.alpha)


def _disc_update(state: TrainState, real: np.ndarray, fake: np.ndarray) -> float:
    disc = state.nets["disc"]
    leaves = as_leaves(disc.params)
    D = lambda x: forward_mlp(disc.spec, leaves, x)  # noqa: E731
    loss = adv.discriminator_loss(D, real, fake)
    ad.backward(loss)
    _check_finite(state, {"loss_disc": float(loss.value)}, {"disc": leaves})
    disc.step(leaves)
    return float(loss.value)


def _real_batch(state: TrainState, n: int) -> np.ndarray:
    cfg = state.config
    if cfg.target == "donut":
        ts = state.data["trainset"]
        return ts[state.rng.integers(0, len(ts), size=n)]
    return sd.sample_target(state.data["target"], n, state.rng)


def train_step(state: TrainState) -> TrainState:
    cfg = state.config
    if cfg.target == "toy_pose":
        return train_conditional_step(state)
    n = cfg.batch_size
    z = sd.sample_latent(cfg.latent_dim, n, state.rng)
    real = _real_batch(state, n)
    gen = state.nets["gen"]
    Dz = latent_distances(cfg, z) if cfg.uses_ndiv else None
    terms = {}
    for _ in range(cfg.ndiv_repeat):
        if cfg.uses_disc:
            fake = predict(gen.spec, gen.params, z)
            terms["loss_disc"] = _disc_update(state, real, fake)
        y, leaves = gen(z)
        g_loss = adv.generator_adv_loss(_critic(state.nets["disc"]), y) if cfg.uses_disc else None
        div = diversity_term(cfg, z, y, metric_transform(cfg, state), Dz) if cfg.uses_ndiv else None
        if g_loss is None:
            total = L.total_loss(ad.constant(0.0), div, cfg.lam)
        else:
            total = L.total_loss(g_loss, div, cfg.lam) if div is not None else g_loss
        ad.backward(total)
        terms["loss_gen"] = 0.0 if g_loss is None else float(g_loss.value)
        terms["loss_ndiv"] = 0.0 if div is None else float(div.value)
        terms["loss_total"] = float(total.value)
        _check_finite(state, terms, {"gen": leaves})
        gen.step(leaves)
    state.iteration += 1
    state.last = terms
    return state


# -- conditional step --------------------------------------------------------

def conditional_forward(state: TrainState, x: np.ndarray, z: Optional[np.ndarray],
                        trainable: bool = True):
    """Encode ``x`` and decode with ``z``; ``z`` has shape ``(B, m, latent)``.

    Returns the pose node of shape ``(B * m, 4)`` plus the encoder and
    generator leaves.
    """
    enc, gen = state.nets["enc"], state.nets["gen"]
    code, enc_leaves = enc(x, trainable)
    B = x.shape[0]
    m = 1 if z is None else z.shape[1]
    c = ad.reshape(ad.matmul(ad.constant(np.repeat(np.eye(B), m, axis=0)), code),
                   (B * m, code.shape[1]))
    inp = c if z is None else ad.concat([c, ad.constant(z.reshape(B * m, -1))])
    y, gen_leaves = gen(inp, trainable)
    return y, enc_leaves, gen_leaves


def sample_poses(state: TrainState, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One pose per input row, for evaluation."""
    cfg = state.config
    enc, gen = state.nets["enc"], state.nets["gen"]
    code = predict(enc.spec, enc.params, x)
    if cfg.latent_dim:
        code = np.concatenate([code, sd.sample_latent(cfg.latent_dim, len(x), rng)], axis=1)
    return predict(gen.spec, gen.params, code)


def train_conditional_step(state: TrainState) -> TrainState:
    cfg = state.config
    ds: sd.ToyPoseData = state.data["pose"]
    B = max(1, cfg.batch_size // max(cfg.cond_group, 1))
    m = cfg.cond_group if cfg.latent_dim else 1
    idx = state.rng.integers(0, len(ds), size=B)
    ridx = state.rng.integers(0, len(ds), size=B * m)
    x, y_ref = ds.x[idx], ds.y[idx]
    z = sd.sample_latent(cfg.latent_dim, B * m, state.rng).reshape(B, m, -1) if cfg.latent_dim else None
    x_rep = np.repeat(x, m, axis=0)
    y_ref_rep = np.repeat(y_ref, m, axis=0)
    real = np.concatenate([ds.x[ridx], ds.y[ridx]], axis=1)
    h = L.gate(ds.V)
    Dz = latent_distances(cfg, z) if cfg.uses_ndiv else None
    terms = {}
    for _ in range(cfg.ndiv_repeat):
        if cfg.uses_disc:
            fake_y, _, _ = conditional_forward(state, x, z, trainable=False)
            fake = np.concatenate([x_rep, fake_y.value], axis=1)
            terms["loss_disc"] = _disc_update(state, real, fake)
        y, enc_leaves, gen_leaves = conditional_forward(state, x, z)
        parts = adv.f_vis_loss(y, y_ref_rep, ds.V)
        terms["loss_vis"] = float(parts.value)
        if cfg.uses_disc:
            critic = _critic(state.nets["disc"])
            g_adv = adv.generator_adv_loss(critic, ad.concat([ad.constant(x_rep), y]))
            terms["loss_gen"] = float(g_adv.value)
            parts = ad.add(parts, g_adv)
        total = parts
        terms["loss_ndiv"] = 0.0
        if cfg.uses_ndiv:
            yg = ad.reshape(y, (B, m, y.shape[1]))
            div = diversity_term(cfg, z, yg, h, Dz)
            terms["loss_ndiv"] = float(div.value)
            total = L.total_loss(parts, div, cfg.lam)
        terms["loss_total"] = float(total.value)
        ad.backward(total)
        _check_finite(state, terms, {"gen": gen_leaves, "enc": enc_leaves})
        state.nets["gen"].step(gen_leaves)
        state.nets["enc"].step(enc_leaves)
    state.iteration += 1
    state.last = terms
    return state


# -- evaluation --------------------------------------------------------------

def generate(state: TrainState, n: int, rng: np.random.Generator) -> np.ndarray:
    gen = state.nets["gen"]
    return predict(gen.spec, gen.params, sd.sample_latent(state.config.latent_dim, n, rng))


def evaluate(state: TrainState, n: Optional[int] = None,
             rng: Optional[np.random.Generator] = None) -> M.MetricsReport:
    cfg = state.config
    n = cfg.eval_samples if n is None else n
    rng = _stream(state.seed, EVAL_STREAM, state.iteration) if rng is None else rng
    if cfg.target == "toy_pose":
        held: sd.ToyPoseData = state.data["pose_eval"]
        fn = lambda x, r: sample_poses(state, x, r)  # noqa: E731
        vis, std = M.conditional_dispersion(fn, held.x, held.y, held.V, cfg.cond_eval_draws, rng)
        return M.MetricsReport(sample_std=std, visible_error=vis, seeds=[state.seed])
    samples = generate(state, n, rng)
    if cfg.target == "donut":
        cover, outlier, sparsity = M.cover_outlier(samples, cfg.donut(), state.data["trainset"])
        return M.MetricsReport(cover_rate=cover, outlier_rate=outlier, data_sparsity=sparsity,
                               seeds=[state.seed])
    modes, fail = M.mode_stats(samples, state.data["target"], cfg.threshold)
    return M.MetricsReport(modes=modes, fail_rate=fail, seeds=[state.seed])


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    tensors = {}
    for name, net in state.nets.items():
        tensors.update({f"{name}.{k}": v for k, v in net.params.items()})
        tensors.update(net.opt.tensors(f"{name}.adam"))
    meta = {
        "iteration": state.iteration,
        "seed": state.seed,
        "config": state.config.to_dict(),
        "rng_state": state.rng.bit_generator.state,
        "adam_steps": {name: net.opt.step for name, net in state.nets.items()},
        "last": state.last,
    }
    save_tensors(path, tensors, meta)


def load_checkpoint(path) -> TrainState:
    tensors, meta = load_tensors(path)
    try:
        cfg = ExperimentConfig.from_dict(meta["config"])
        state = init_state(cfg, int(meta["seed"]))
        state.iteration = int(meta["iteration"])
        state.rng.bit_generator.state = meta["rng_state"]
        state.last = dict(meta.get("last", {}))
        for name, net in state.nets.items():
            for k in net.params:
                net.params[k] = tensors[f"{name}.{k}"].copy()
                mk, vk = f"{name}.adam.m.{k}", f"{name}.adam.v.{k}"
                if mk in tensors:
                    net.opt.m[k] = tensors[mk].copy()
                    net.opt.v[k] = tensors[vk].copy()
            net.opt.step = int(meta["adam_steps"][name])
    except (KeyError, TypeError, ValueError) as e:
        from ndiv.nn import CheckpointError
        raise CheckpointError(f"{path}: inconsistent checkpoint ({e})") from e
    return state


# -- experiments -------------------------------------------------------------

@dataclass
class SeedRun:
    seed: int
    records: list
    report: Optional[M.MetricsReport]
    state: Optional[TrainState]
    error: Optional[dict] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list
    report: M.MetricsReport

    @property
    def records(self) -> list:
        return [r for run in self.runs for r in run.records]

    @property
    def failed_seeds(self) -> list:
        return [run.seed for run in self.runs if run.error is not None]

    def report_dict(self) -> dict:
        d = self.report.to_dict()
        d["failed_seeds"] = self.failed_seeds
        d["per_seed"] = {str(run.seed): run.report.to_dict() for run in self.runs
                         if run.report is not None}
        return d

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _record(state: TrainState, report: M.MetricsReport) -> dict:
    rec = {"iter": state.iteration, "seed": state.seed}
    rec.update({k: float(v) for k, v in state.last.items()})
    rec.update({k: v for k, v in report.to_dict().items() if k != "seeds"})
    return rec


def run_seed(cfg: ExperimentConfig, seed: int, checkpoint_dir=None) -> SeedRun:
    state = init_state(cfg, seed)
    records, report = [], None
    try:
        while state.iteration < cfg.max_iters:
            train_step(state)
            if state.iteration % cfg.eval_interval == 0 or state.iteration == cfg.max_iters:
                report = evaluate(state)
                records.append(_record(state, report))
                log.debug("seed %d iter %d %s", seed, state.iteration, records[-1])
    except NumericalAbort as e:
        log.warning("seed %d aborted: %s", seed, e)
        records.append({"iter": state.iteration, "seed": seed, "error": e.diagnostics})
        return SeedRun(seed, records, None, state, e.diagnostics)
    if checkpoint_dir is not None:
        save_checkpoint(state, Path(checkpoint_dir) / f"seed{seed}.ckpt")
    return SeedRun(seed, records, report, state)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NDIV_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> ExperimentResult:
    """Train every seed, evaluating every ``eval_interval`` iterations.

    With ``out_dir``, writes ``metrics.jsonl``, ``report.json`` and one
    checkpoint per seed. Seeds run in parallel threads (``NDIV_THREADS``) and
    are merged in seed order.
    """
    ckdir = None
    if out_dir is not None:
        ckdir = Path(out_dir) / "checkpoints"
        ckdir.mkdir(parents=True, exist_ok=True)
    threads = worker_count() if threads is None else threads
    if threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda s: run_seed(cfg, s, ckdir), cfg.seeds))
    else:
        runs = [run_seed(cfg, s, ckdir) for s in cfg.seeds]
    ok = [r for r in runs if r.report is not None]
    report = M.MetricsReport.mean_of([r.report for r in ok], [r.seed for r in ok])
    result = ExperimentResult(cfg, runs, report)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "metrics.jsonl").write_text(result.jsonl(), encoding="utf-8")
        (out / "report.json").write_text(json.dumps(result.report_dict(), sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    return result
