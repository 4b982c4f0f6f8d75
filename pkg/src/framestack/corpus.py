"""Synthetic aligned corpus: uniform bigram over words, left-to-right HMM
states with shifted-geometric durations, Gaussian emissions per state.

Every utterance carries its ground-truth frame alignment, so no external
alignment system is needed. Generation is per-utterance seeded and
bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .trainer import AlignedUtterance

CORPUS_MAGIC = b"SDCO"
CORPUS_VERSION = 1


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    num_words: int = 10
    states_per_word: int = 3
    feature_dim: int = 12
    mean_separation: float = 2.5
    self_loop_prob: float = 0.55
    min_state_frames: int = 2
    min_words: int = 5
    max_words: int = 10
    num_utterances: int = 250
    seed: int = 17

    def __post_init__(self):
        if self.num_words < 2:
            raise CorpusError("num_words must be >= 2")
        if self.feature_dim < 1:
            raise CorpusError("feature_dim must be >= 1")
        if not (0 <= self.self_loop_prob < 1):
            raise CorpusError("self_loop_prob must be in [0, 1)")
        if self.min_state_frames < 1:
            raise CorpusError("min_state_frames must be >= 1")
        if not (1 <= self.min_words <= self.max_words):
            raise CorpusError("bad utterance length range")

    @property
    def num_states(self) -> int:
        return self.num_words * self.states_per_word


@dataclass
class Corpus:
    utterances: list[AlignedUtterance]
    num_words: int
    states_per_word: int
    feature_dim: int

    @property
    def num_states(self) -> int:
        return self.num_words * self.states_per_word

    def lexicon(self) -> dict[int, list[int]]:
        """word id -> its left-to-right state id sequence."""
        spw = self.states_per_word
        return {w: list(range(w * spw, (w + 1) * spw))
                for w in range(self.num_words)}

    def all_labels(self):
        return [u.labels for u in self.utterances]

    def transcripts(self):
        return [u.transcript for u in self.utterances]


def state_means(cfg: GenConfig) -> np.ndarray:
    """Per-state emission means, (num_states, d); spread controlled by
    mean_separation (0 makes all classes indistinguishable)."""
    rng = np.random.default_rng([cfg.seed, 0xC1A55])
    return cfg.mean_separation * rng.standard_normal(
        (cfg.num_states, cfg.feature_dim))


def _generate_utterance(cfg: GenConfig, means: np.ndarray, utt_id: int
                        ) -> AlignedUtterance:
    rng = np.random.default_rng([cfg.seed, utt_id])
    n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    # uniform bigram: every successor equally likely
    words = rng.integers(0, cfg.num_words, size=n_words)
    labels = []
    for w in words:
        for j in range(cfg.states_per_word):
            state = w * cfg.states_per_word + j
            # shifted-geometric duration: a guaranteed minimum dwell plus
            # a geometric tail controlled by the self-loop probability
            labels.extend([state] * cfg.min_state_frames)
            while rng.random() < cfg.self_loop_prob:
                labels.append(state)
    labels = np.array(labels, dtype=np.int64)
    feats = means[labels] + rng.standard_normal((len(labels),
                                                 cfg.feature_dim))
    return AlignedUtterance(utt_id, feats, labels,
                            np.asarray(words, dtype=np.int64))


def generate(cfg: GenConfig) -> Corpus:
    means = state_means(cfg)
    utts = [_generate_utterance(cfg, means, i)
            for i in range(cfg.num_utterances)]
    return Corpus(utts, cfg.num_words, cfg.states_per_word, cfg.feature_dim)


def split(corpus: Corpus, train_frac: float, seed: int
          ) -> tuple[Corpus, Corpus]:
    """Disjoint covering utterance-level split, deterministic by seed."""
    if not (0.0 < train_frac < 1.0):
        raise CorpusError("train_frac must be in (0, 1)")
    n = len(corpus.utterances)
    n_train = int(round(n * train_frac))
    if n_train == 0 or n_train == n:
        raise CorpusError("split would leave an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    mk = lambda idx: Corpus([corpus.utterances[i] for i in idx],
                            corpus.num_words, corpus.states_per_word,
                            corpus.feature_dim)
    return mk(train_idx), mk(test_idx)


def save_corpus(corpus: Corpus, path):
    with open(path, "wb") as f:
        f.write(CORPUS_MAGIC)
        f.write(struct.pack("<5I", CORPUS_VERSION, len(corpus.utterances),
                            corpus.num_words, corpus.states_per_word,
                            corpus.feature_dim))
        for u in corpus.utterances:
            f.write(struct.pack("<3I", u.utt_id, len(u.transcript),
                                len(u.labels)))
            f.write(np.ascontiguousarray(u.transcript,
                                         dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(u.labels, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(u.features, dtype="<f8").tobytes())


def load_corpus(path) -> Corpus:
    with open(path, "rb") as f:
        if f.read(4) != CORPUS_MAGIC:
            raise CorpusError(f"{path}: not a corpus file")
        version, n_utts, num_words, spw, d = struct.unpack("<5I", f.read(20))
        if version != CORPUS_VERSION:
            raise CorpusError(f"unsupported corpus version {version}")
        utts = []
        for _ in range(n_utts):
            utt_id, n_words, t_len = struct.unpack("<3I", f.read(12))
            transcript = np.frombuffer(f.read(4 * n_words),
                                       dtype="<u4").astype(np.int64)
            labels = np.frombuffer(f.read(4 * t_len),
                                   dtype="<u4").astype(np.int64)
            feats = np.frombuffer(f.read(8 * t_len * d),
                                  dtype="<f8").reshape(t_len, d).copy()
            utts.append(AlignedUtterance(utt_id, feats, labels, transcript))
    return Corpus(utts, num_words, spw, d)


def save_sidecar(cfg: GenConfig, path):
    with open(path, "w") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_sidecar(path) -> GenConfig:
    with open(path) as f:
        return GenConfig(**json.load(f))
