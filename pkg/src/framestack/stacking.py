"""Frame stacking: re-segment a frame sequence into super frames.

Non-overlapping stacking (step == fs) shrinks the sequence by a factor of
about fs; each super frame gets the label of its middle original frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StackingError(ValueError):
    pass


@dataclass(frozen=True)
class StackConfig:
    fs: int
    step: int | None = None  # defaults to fs (non-overlapping)

    def __post_init__(self):
        step = self.fs if self.step is None else self.step
        if not (1 <= step <= self.fs):
            raise StackingError(f"require 1 <= step <= fs, got fs={self.fs} "
                                f"step={step}")
        object.__setattr__(self, "step", step)


@dataclass
class StackedSequence:
    super_frames: np.ndarray  # (M, fs * d)
    labels: np.ndarray | None
    source_len: int
    cfg: StackConfig

    def __len__(self):
        return self.super_frames.shape[0]


def num_super_frames(t: int, cfg: StackConfig) -> int:
    if t < 1:
        return 0
    return (max(t - cfg.fs, 0) + cfg.step - 1) // cfg.step + 1


def stack(feats: np.ndarray, cfg: StackConfig,
          labels: np.ndarray | None = None) -> StackedSequence:
    """Concatenate windows of fs frames into super frames.

    Windows start every `step` frames; positions past the end repeat the
    last frame. Labels, when given, are reduced with middle_label.
    """
    feats = np.asarray(feats, dtype=np.float64)
    t, d = feats.shape
    if labels is not None and len(labels) != t:
        raise StackingError("labels length != number of frames")
    m = num_super_frames(t, cfg)
    if m == 0:
        return StackedSequence(np.zeros((0, cfg.fs * d)), None, 0, cfg)
    starts = cfg.step * np.arange(m)
    idx = np.minimum(starts[:, None] + np.arange(cfg.fs)[None, :], t - 1)
    stacked = feats[idx].reshape(m, cfg.fs * d)
    out_labels = None if labels is None else middle_label(labels, cfg)
    return StackedSequence(stacked, out_labels, t, cfg)


def middle_label(labels: np.ndarray, cfg: StackConfig) -> np.ndarray:
    """Label of super frame j = label of original frame at the window middle.

    Middle index is floor((fs - 1) / 2): exact middle for odd fs, left of
    the two middles for even fs. Indices are clamped to the last frame.
    """
    labels = np.asarray(labels)
    t = len(labels)
    if t == 0:
        return labels
    m = num_super_frames(t, cfg)
    mid = cfg.step * np.arange(m) + (cfg.fs - 1) // 2
    return labels[np.minimum(mid, t - 1)]
