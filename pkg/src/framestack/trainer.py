"""Frame-level cross-entropy training with mini-batch SGD + momentum.

Also estimates the state priors and HMM self-loop probabilities from the
training alignments; both feed the hybrid emission scaling in the decoder.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .am import ModelParams, backward
from .stacking import StackConfig, middle_label, stack

POSTERIOR_FLOOR = 1e-12
GRAD_CLIP_NORM = 5.0


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size_utts: int = 1
    epochs: int = 6
    seed: int = 0
    fs: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be > 0")
        if not (0 <= self.momentum < 1):
            raise TrainError("momentum must be in [0, 1)")


@dataclass
class AlignedUtterance:
    utt_id: int
    features: np.ndarray  # (T, d)
    labels: np.ndarray    # (T,) state ids
    transcript: np.ndarray  # word ids

    def __post_init__(self):
        if len(self.labels) != len(self.features):
            raise TrainError("labels length != feature rows")


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    frames_processed: list[int]
    epoch_seconds: list[float]
    skipped_steps: int = 0


def ce_loss(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """-sum_t log posterior[t, label_t], with a 1e-12 floor on posteriors."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(posteriors) != len(labels):
        raise TrainError("shape mismatch")
    picked = posteriors[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, POSTERIOR_FLOOR)).sum())


def sgd_step(params: ModelParams, grads: ModelParams, velocity: ModelParams,
             learning_rate: float, momentum: float) -> bool:
    """Classical momentum update in place: v = m*v - lr*g; w += v.

    Returns False (and leaves params untouched) if any gradient is
    non-finite.
    """
    sqnorm = 0.0
    for name in grads.names():
        flat = grads[name].ravel()
        sqnorm += float(np.dot(flat, flat))
    if not np.isfinite(sqnorm):
        # a non-finite squared norm means non-finite (or overflowing)
        # gradients; confirm element-wise before refusing the update
        if any(not np.all(np.isfinite(grads[name]))
               for name in grads.names()):
            return False
    for name in params.names():
        v = velocity.arrays[name]
        v *= momentum
        v -= learning_rate * grads[name]
        params.arrays[name] += v
    return True


def clip_gradients(grads: ModelParams, max_norm: float = GRAD_CLIP_NORM):
    total = 0.0
    for name in grads.names():
        flat = grads[name].ravel()
        total += float(np.dot(flat, flat))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads.names():
            grads.arrays[name] *= scale


def prepare_dataset(utts: list[AlignedUtterance], fs: int
                    ) -> list[AlignedUtterance]:
    """Stack features and reduce labels to middle labels when fs > 1."""
    if fs == 1:
        return utts
    cfg = StackConfig(fs=fs)
    out = []
    for u in utts:
        s = stack(u.features, cfg, labels=u.labels)
        out.append(AlignedUtterance(u.utt_id, s.super_frames, s.labels,
                                    u.transcript))
    return out


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Utterance visit order for one epoch, shared with the distributed
    trainer so degenerate configurations stay bit-identical."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_gradient(params: ModelParams, batch: list[AlignedUtterance]
                   ) -> tuple[ModelParams, float, int]:
    """Summed-then-frame-averaged gradient over a batch of utterances.

    Utterances are reduced in list order so results do not depend on
    scheduling. Returns (gradient, total CE loss, total frames).
    """
    total = params.zeros_like()
    loss = 0.0
    frames = 0
    for u in batch:
        _, l = backward(params, u.features, u.labels, out=total)
        loss += l
        frames += len(u.labels)
    if frames > 0:
        for name in total.names():
            total.arrays[name] /= frames
    return total, loss, frames


def train_ce(params: ModelParams, dataset: list[AlignedUtterance],
             cfg: TrainConfig,
             velocity: ModelParams | None = None) -> TrainResult:
    """CE training over a (pre-stacked) dataset; deterministic given seed."""
    if not dataset:
        raise TrainError("empty dataset")
    params = params.copy()
    velocity = params.zeros_like() if velocity is None else velocity
    epoch_losses, frames_per_epoch, epoch_secs = [], [], []
    skipped = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = epoch_order(cfg.seed, epoch, len(dataset))
        total_loss, total_frames = 0.0, 0
        for start in range(0, len(order), cfg.batch_size_utts):
            batch = [dataset[i] for i in order[start:start +
                                               cfg.batch_size_utts]]
            grads, loss, frames = batch_gradient(params, batch)
            clip_gradients(grads)
            if not sgd_step(params, grads, velocity, cfg.learning_rate,
                            cfg.momentum):
                skipped += 1
            total_loss += loss
            total_frames += frames
        epoch_losses.append(total_loss / max(total_frames, 1))
        frames_per_epoch.append(total_frames)
        epoch_secs.append(time.perf_counter() - t0)
    return TrainResult(params, epoch_losses, frames_per_epoch, epoch_secs,
                       skipped)


def count_priors(datasets_labels, num_states: int, fs: int = 1
                 ) -> np.ndarray:
    """Add-one-smoothed state priors over the labels actually trained on.

    `datasets_labels` is an iterable of per-frame label arrays (original
    frame rate); middle labels are counted when fs > 1.
    """
    counts = np.zeros(num_states)
    total = 0
    cfg = StackConfig(fs=fs) if fs > 1 else None
    for labels in datasets_labels:
        labels = np.asarray(labels)
        if len(labels) == 0:
            continue
        if cfg is not None:
            labels = middle_label(labels, cfg)
        counts += np.bincount(labels, minlength=num_states)
        total += len(labels)
    if total == 0:
        raise TrainError("no alignment frames to count priors from")
    return (counts + 1.0) / (total + num_states)


def count_self_loop_probs(datasets_labels, num_states: int) -> np.ndarray:
    """Per-state self-loop probability from alignments, add-one over the
    two topology arcs (stay, leave). The final frame of an utterance
    counts as leaving its state."""
    stay = np.zeros(num_states)
    leave = np.zeros(num_states)
    for labels in datasets_labels:
        labels = np.asarray(labels)
        for t in range(len(labels)):
            s = labels[t]
            if t + 1 < len(labels) and labels[t + 1] == s:
                stay[s] += 1
            else:
                leave[s] += 1
    return (stay + 1.0) / (stay + leave + 2.0)
