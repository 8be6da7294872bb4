"""Lifelong-learning strategies and the per-stage training loop.

Covers fine-tune (lower bound), joint training (upper bound), supervised
replay with three samplers, EWC, and GEM.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .buffer import MemoryBuffer
from .data import ReplayDataset, TaskDataset, merge_replay
from .errors import NumericError, UsageError
from .metrics import McdReport, mcd, stage_eval
from .model import (
    AdamState,
    Head,
    ParameterSet,
    adam_step,
    forward,
    init_params,
    loss_and_grad,
)
from .samplers import (
    Batch,
    Provenance,
    build_weight_table,
    draw_balanced,
    draw_dual,
    draw_random,
    draw_weighted,
)


class StrategyKind(enum.Enum):
    FINE_TUNE = "fine_tune"
    JOINT = "joint"
    REPLAY_RANDOM = "replay_random"
    REPLAY_WEIGHTED = "replay_weighted"
    REPLAY_DUAL = "replay_dual"
    EWC = "ewc"
    GEM = "gem"


REPLAY_KINDS = {
    StrategyKind.REPLAY_RANDOM,
    StrategyKind.REPLAY_WEIGHTED,
    StrategyKind.REPLAY_DUAL,
    StrategyKind.GEM,
}


@dataclass
class StrategyConfig:
    kind: StrategyKind
    gamma: float = 0.5
    beta: float = 1.0
    ewc_lambda: float = 100.0
    gem_memory_batch: int = 32
    # test/diagnostic knob: replace the balanced LBS draw with a uniform one
    force_lbs_random: bool = False

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise UsageError("gamma and beta must be >= 0")


@dataclass
class StageConfig:
    epochs: int = 100
    batch_size: int = 84
    lr: float = 0.001
    lr_decay_epoch_fraction: float = 0.6


@dataclass
class FisherState:
    fisher_diag: np.ndarray
    anchor: ParameterSet


@dataclass
class GemState:
    reference_grads: np.ndarray  # one row per past language
    languages: list


@dataclass
class StageResult:
    final_params: ParameterSet
    dev_curves: dict  # language_id -> per-epoch dev MCD
    wall_seconds: float


@dataclass
class ExperimentResult:
    strategy: str
    task_order: list
    reports: list  # one McdReport per stage
    stage_curves: list  # one dev_curves dict per stage


def dual_loss(l_lbs, l_rrs, gamma: float, beta: float) -> float:
    """Total dual-sampler loss gamma * L_lbs + beta * L_rrs."""
    if gamma < 0 or beta < 0:
        raise UsageError("gamma and beta must be >= 0")
    return gamma * l_lbs.total + beta * l_rrs.total


def ewc_consolidate(
    params: ParameterSet,
    ds: TaskDataset,
    n_samples: int,
    rng,
    prior: FisherState | None = None,
) -> FisherState:
    """Diagonal Fisher estimate from single-sample LBS gradients.

    Accumulates additively onto any prior state (running sum across
    tasks); the anchor is always the most recent parameter vector.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    replace = n_samples > len(ds.train)
    idx = rng.choice(len(ds.train), size=n_samples, replace=replace)
    fisher = np.zeros_like(params.values)
    for i in idx:
        _, grad = loss_and_grad(params, Batch([ds.train[i]], Provenance.LBS), Head.LBS)
        fisher += grad**2
    fisher /= n_samples
    if prior is not None:
        fisher += prior.fisher_diag
    return FisherState(fisher, params.copy())


def ewc_penalty(params: ParameterSet, fstate: FisherState, lam: float):
    """(lam/2) * sum_i F_i (theta_i - anchor_i)^2 and its exact gradient."""
    diff = params.values - fstate.anchor.values
    penalty = 0.5 * lam * float(np.sum(fstate.fisher_diag * diff**2))
    grad = lam * fstate.fisher_diag * diff
    return penalty, grad


def gem_reference_grads(
    params: ParameterSet, buffer: MemoryBuffer, batch_size: int, rng
) -> GemState:
    """One LBS-loss gradient per past language, on up to batch_size
    buffered samples."""
    if buffer.total() == 0:
        raise UsageError("buffer is empty")
    rows = []
    langs = []
    for lang in buffer.languages():
        pool = buffer.slots[lang]
        n = min(batch_size, len(pool))
        idx = rng.choice(len(pool), size=n, replace=False)
        batch = Batch([pool[i] for i in idx], Provenance.LBS)
        _, grad = loss_and_grad(params, batch, Head.LBS)
        rows.append(grad)
        langs.append(lang)
    return GemState(np.stack(rows), langs)


def gem_project(g: np.ndarray, gstate: GemState, tol: float = 1e-9) -> np.ndarray:
    """Project g to the nearest point with nonnegative inner products
    against every reference gradient.

    Solves the dual QP min_v 0.5 v'GG'v + (Gg)'v, v >= 0 by projected
    coordinate descent; the projected gradient is g + G'v.
    """
    g_mat = gstate.reference_grads
    dots = g_mat @ g
    if np.all(dots >= -tol):
        return g.copy()
    k = g_mat.shape[0]
    h = g_mat @ g_mat.T
    v = np.zeros(k)
    # ill-conditioned constraint sets need far more sweeps than the typical
    # handful; sweeps are O(k^2) so a generous cap stays cheap for k <= 9
    max_iters = max(1000 * k * k, 1000)
    for _ in range(max_iters):
        delta = 0.0
        for i in range(k):
            if h[i, i] <= 0:
                continue
            new_vi = max(0.0, v[i] - (h[i] @ v + dots[i]) / h[i, i])
            delta = max(delta, abs(new_vi - v[i]))
            v[i] = new_vi
        if delta < tol * 1e-3:
            break
    projected = g + g_mat.T @ v
    residual = float(np.min(g_mat @ projected))
    scale = max(1.0, float(np.max(np.abs(dots))))
    if residual < -tol * scale * 10:
        raise NumericError(f"GEM dual solver did not converge; residual {residual:.3e}")
    return projected


def lr_for_epoch(base_lr: float, epoch: int, epochs: int, decay_fraction: float) -> float:
    """Halved from the 0-based epoch ceil(decay_fraction * epochs) onward."""
    decay_epoch = math.ceil(decay_fraction * epochs)
    return base_lr * 0.5 if epoch >= decay_epoch else base_lr


def _dev_mcd(params: ParameterSet, ds: TaskDataset) -> float:
    batch = Batch(ds.dev, Provenance.LBS)
    _, post = forward(params, batch, Head.LBS)
    vals = [mcd(s.target_frames, out) for s, out in zip(ds.dev, post)]
    return float(np.mean(vals))


def train_stage(
    strategy: StrategyConfig,
    params: ParameterSet,
    ds_k: TaskDataset,
    buffer: MemoryBuffer | None,
    fstate: FisherState | None,
    cfg: StageConfig,
    rng,
    seen_tasks: list | None = None,
) -> StageResult:
    """One task's training phase; returns final parameters and dev curves.

    `seen_tasks` lists every task seen so far (current included); their
    dev splits feed the per-epoch MCD curves. For JOINT it also defines
    the training pool.
    """
    kind = strategy.kind
    seen_tasks = seen_tasks if seen_tasks is not None else [ds_k]

    if kind is StrategyKind.JOINT:
        pool = ReplayDataset([s for t in seen_tasks for s in t.train])
    elif kind in (StrategyKind.FINE_TUNE, StrategyKind.EWC, StrategyKind.GEM):
        pool = ReplayDataset(list(ds_k.train))
    else:
        pool = merge_replay(ds_k, buffer if buffer and buffer.total() else None)

    weight_table = None
    if kind is StrategyKind.REPLAY_WEIGHTED:
        weight_table = build_weight_table(pool)

    use_gem = kind is StrategyKind.GEM and buffer is not None and buffer.total() > 0

    opt = AdamState.fresh(len(params.values), lr=cfg.lr)
    params = params.copy()
    steps_per_epoch = max(1, len(pool) // cfg.batch_size)
    curves: dict[int, list] = {t.language_id: [] for t in seen_tasks}
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        opt.lr = lr_for_epoch(cfg.lr, epoch, cfg.epochs, cfg.lr_decay_epoch_fraction)
        for step in range(steps_per_epoch):
            if kind is StrategyKind.REPLAY_DUAL:
                grad = np.zeros_like(params.values)
                loss_total = 0.0
                # a zero-weight branch is skipped entirely, keeping the rng
                # stream identical to the single-sampler strategies
                if strategy.gamma > 0:
                    if strategy.force_lbs_random:
                        b_lbs = draw_random(pool, cfg.batch_size, rng, Provenance.LBS)
                    else:
                        b_lbs = draw_balanced(pool, cfg.batch_size, rng)
                    l_lbs, g_lbs = loss_and_grad(params, b_lbs, Head.LBS)
                    grad += strategy.gamma * g_lbs
                    loss_total += strategy.gamma * l_lbs.total
                if strategy.beta > 0:
                    b_rrs = draw_random(pool, cfg.batch_size, rng, Provenance.RRS)
                    l_rrs, g_rrs = loss_and_grad(params, b_rrs, Head.RRS)
                    grad += strategy.beta * g_rrs
                    loss_total += strategy.beta * l_rrs.total
            else:
                if kind is StrategyKind.REPLAY_WEIGHTED:
                    batch = draw_weighted(weight_table, pool, cfg.batch_size, rng)
                else:
                    batch = draw_random(pool, cfg.batch_size, rng)
                loss, grad = loss_and_grad(params, batch, Head.LBS)
                loss_total = loss.total
                if kind is StrategyKind.EWC and fstate is not None:
                    penalty, pgrad = ewc_penalty(params, fstate, strategy.ewc_lambda)
                    loss_total += penalty
                    grad = grad + pgrad
                if use_gem:
                    gstate = gem_reference_grads(
                        params, buffer, strategy.gem_memory_batch, rng
                    )
                    grad = gem_project(grad, gstate)
            if not np.isfinite(loss_total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}: {loss_total}"
                )
            opt, params = adam_step(opt, params, grad)
        for task in seen_tasks:
            curves[task.language_id].append(_dev_mcd(params, task))
    return StageResult(params, curves, time.perf_counter() - started)


def run_sequence(config, checkpoint_hook=None, start_state=None) -> ExperimentResult:
    """Sequential training over the configured task order.

    `config` is an ExperimentConfig. `checkpoint_hook(stage_idx, state)`
    is called after each stage with a resumable state dict;
    `start_state` resumes from such a dict at a stage boundary.
    """
    tasks = [None] * len(config.task_specs)
    from .data import generate_task

    for i, spec in enumerate(config.task_specs):
        tasks[i] = generate_task(spec)

    strategy = config.strategy
    stage_cfg = StageConfig(
        epochs=config.epochs_per_stage,
        batch_size=config.batch_size,
        lr=config.lr,
        lr_decay_epoch_fraction=config.lr_decay_epoch_fraction,
    )

    if start_state is not None:
        first_stage = start_state["stage"] + 1
        params = start_state["params"]
        buffer = start_state["buffer"]
        fstate = start_state["fstate"]
        reports = list(start_state["reports"])
        stage_curves = list(start_state["stage_curves"])
    else:
        first_stage = 0
        params = init_params(config.topology, config.seed)
        buffer = MemoryBuffer(config.buffer_capacity, rng_seed=hash_seed(config.seed, 0xB0F))
        fstate = None
        reports = []
        stage_curves = []

    for k in range(first_stage, len(tasks)):
        task = tasks[k]
        seen = tasks[: k + 1]
        rng = np.random.default_rng([config.seed, k, 0x7EA1])
        if strategy.kind is StrategyKind.JOINT:
            stage_params = init_params(config.topology, hash_seed(config.seed, k))
        else:
            stage_params = params
        result = train_stage(
            strategy, stage_params, task, buffer, fstate, stage_cfg, rng, seen_tasks=seen
        )
        params = result.final_params
        reports.append(stage_eval(params, seen))
        stage_curves.append(result.dev_curves)
        if strategy.kind in REPLAY_KINDS:
            buffer.integrate_task(task)
        if strategy.kind is StrategyKind.EWC:
            crng = np.random.default_rng([config.seed, k, 0xF15E])
            fstate = ewc_consolidate(
                params, task, min(100, len(task.train)), crng, prior=fstate
            )
        if checkpoint_hook is not None:
            checkpoint_hook(
                k,
                {
                    "stage": k,
                    "params": params,
                    "buffer": buffer,
                    "fstate": fstate,
                    "reports": reports,
                    "stage_curves": stage_curves,
                },
            )
    task_order = [spec.language_id for spec in config.task_specs]
    return ExperimentResult(strategy.kind.name, task_order, reports, stage_curves)


def hash_seed(*parts) -> int:
    """Small deterministic seed derivation for independent rng streams."""
    out = 0
    for p in parts:
        out = (out * 1000003 + int(p)) % (2**31 - 1)
    return out
