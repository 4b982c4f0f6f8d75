"""Simulated multi-worker data-parallel training.

Workers are sequential in-process training passes over disjoint shards;
synchronization is blockwise model-update filtering (block momentum over
the averaged-model delta) followed by an EMA model update that never feeds
back into training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .am import ModelParams, forward_sequence
from .trainer import (AlignedUtterance, TrainConfig, batch_gradient,
                      ce_loss, clip_gradients, epoch_order, sgd_step)


class DistError(ValueError):
    pass


@dataclass(frozen=True)
class BmufConfig:
    num_workers: int = 4
    block_size: int = 10  # utterances per worker per block
    block_learning_rate: float = 1.0
    block_momentum: float = 0.9
    ema_decay: float = 0.99

    def __post_init__(self):
        if self.num_workers < 1:
            raise DistError("num_workers must be >= 1")
        if self.block_size < 1:
            raise DistError("block_size must be >= 1")
        if self.block_learning_rate <= 0:
            raise DistError("block_learning_rate must be > 0")
        if not (0 <= self.block_momentum < 1):
            raise DistError("block_momentum must be in [0, 1)")
        if not (0 <= self.ema_decay <= 1):
            raise DistError("ema_decay must be in [0, 1]")


@dataclass
class BmufState:
    global_params: ModelParams
    delta: ModelParams

    @classmethod
    def fresh(cls, params: ModelParams) -> "BmufState":
        return cls(params.copy(), params.zeros_like())


@dataclass
class EmaState:
    params: ModelParams
    decay: float


@dataclass
class BlockLogRow:
    block_index: int
    probe_loss_global: float
    probe_loss_ema: float
    wall_seconds: float


@dataclass
class DistResult:
    global_params: ModelParams
    ema_params: ModelParams
    block_log: list[BlockLogRow]


def split_shards(dataset: list, num_workers: int, seed: int) -> list[list]:
    """Balanced disjoint shards; each shard keeps the dataset's original
    order (so one worker degenerates to the sequential trainer)."""
    n = len(dataset)
    if num_workers > n:
        raise DistError("more workers than utterances")
    order = np.random.default_rng(seed).permutation(n)
    return [[dataset[i] for i in np.sort(order[w::num_workers])]
            for w in range(num_workers)]


def mesh_allreduce_mean(worker_params: list[ModelParams]) -> ModelParams:
    """Element-wise mean, reduced in worker-index order."""
    if not worker_params:
        raise DistError("no worker models")
    total = worker_params[0].zeros_like()
    for wp in worker_params:
        for name in total.names():
            if wp[name].shape != total[name].shape:
                raise DistError("worker model shape mismatch")
            total.arrays[name] += wp[name]
    for name in total.names():
        total.arrays[name] /= len(worker_params)
    return total


def bmuf_sync(state: BmufState, worker_params: list[ModelParams],
              cfg: BmufConfig) -> BmufState:
    """G = mean(workers) - W; delta = eta*delta + zeta*G; W += delta."""
    mean = mesh_allreduce_mean(worker_params)
    new_delta = state.delta.copy()
    new_global = state.global_params.copy()
    for name in mean.names():
        g = mean[name] - state.global_params[name]
        new_delta.arrays[name] = (cfg.block_momentum * state.delta[name]
                                  + cfg.block_learning_rate * g)
        if cfg.block_momentum == 0.0 and cfg.block_learning_rate == 1.0:
            # W + (mean - W) reassociates in floating point; assign the
            # algebraically identical mean so plain averaging is exact
            new_global.arrays[name] = mean[name].copy()
        else:
            new_global.arrays[name] = (state.global_params[name]
                                       + new_delta.arrays[name])
    return BmufState(new_global, new_delta)


def ema_update(state: EmaState, model: ModelParams) -> EmaState:
    """ema = decay * ema + (1 - decay) * model; never fed back."""
    new = state.params.copy()
    for name in new.names():
        if model[name].shape != new.arrays[name].shape:
            raise DistError("model shape mismatch")
        new.arrays[name] = (state.decay * state.params[name]
                            + (1.0 - state.decay) * model[name])
    return EmaState(new, state.decay)


def probe_loss(params: ModelParams, probe_set: list[AlignedUtterance]
               ) -> float:
    total, frames = 0.0, 0
    for u in probe_set:
        posts = forward_sequence(params, u.features)
        total += ce_loss(posts, u.labels)
        frames += len(u.labels)
    return total / max(frames, 1)


def _train_block(params: ModelParams, utts: list[AlignedUtterance],
                 velocity: ModelParams, cfg: TrainConfig) -> ModelParams:
    params = params.copy()
    for start in range(0, len(utts), cfg.batch_size_utts):
        batch = utts[start:start + cfg.batch_size_utts]
        grads, _, _ = batch_gradient(params, batch)
        clip_gradients(grads)
        sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum)
    return params


def train_distributed(params: ModelParams, dataset: list[AlignedUtterance],
                      train_cfg: TrainConfig, bmuf_cfg: BmufConfig,
                      probe_set: list[AlignedUtterance] | None = None
                      ) -> DistResult:
    """BMUF + EMA training over simulated workers.

    Shards and per-epoch visit order are seeded; with one worker, zero
    block momentum, and unit block learning rate the result is identical
    to the sequential trainer on the same dataset.
    """
    if not dataset:
        raise DistError("empty dataset")
    shards = split_shards(dataset, bmuf_cfg.num_workers, train_cfg.seed)
    state = BmufState.fresh(params)
    ema = EmaState(params.copy(), bmuf_cfg.ema_decay)
    velocities = [params.zeros_like() for _ in range(bmuf_cfg.num_workers)]
    block_log: list[BlockLogRow] = []
    block_index = 0
    for epoch in range(train_cfg.epochs):
        orders = [epoch_order(train_cfg.seed, epoch, len(shard))
                  for shard in shards]
        max_blocks = max((len(o) + bmuf_cfg.block_size - 1)
                         // bmuf_cfg.block_size for o in orders)
        for b in range(max_blocks):
            t0 = time.perf_counter()
            lo = b * bmuf_cfg.block_size
            worker_models = []
            for w, shard in enumerate(shards):
                utts = [shard[i] for i in orders[w][lo:lo +
                                                    bmuf_cfg.block_size]]
                if utts:
                    worker_models.append(_train_block(
                        state.global_params, utts, velocities[w], train_cfg))
                else:
                    worker_models.append(state.global_params.copy())
            state = bmuf_sync(state, worker_models, bmuf_cfg)
            ema = ema_update(ema, state.global_params)
            wall = time.perf_counter() - t0
            if probe_set:
                block_log.append(BlockLogRow(
                    block_index, probe_loss(state.global_params, probe_set),
                    probe_loss(ema.params, probe_set), wall))
            else:
                block_log.append(BlockLogRow(block_index, np.nan, np.nan,
                                             wall))
            block_index += 1
    return DistResult(state.global_params, ema.params, block_log)
