"""Session-scoped fixtures for the end-to-end acceptance suite.

Builds the default synthetic corpus once, plus trained models for the
stacking factors the acceptance checks exercise. Kept here so the
expensive training work is shared across test modules.
"""

import pytest

from framestack import corpus as corpus_mod
from framestack.am import ModelConfig, ModelParams
from framestack.cli import (DEFAULT_FC_DIM, DEFAULT_HIDDEN_DIM,
                            build_graph_from_corpus)
from framestack.trainer import (TrainConfig, count_priors, prepare_dataset,
                                train_ce)

PIPELINE_SEED = 17
TRAIN_SEED = 0


@pytest.fixture(scope="session")
def default_corpus():
    cfg = corpus_mod.GenConfig(seed=PIPELINE_SEED)
    full = corpus_mod.generate(cfg)
    train, test = corpus_mod.split(full, 0.8, cfg.seed + 1)
    return train, test


@pytest.fixture(scope="session")
def default_graph(default_corpus):
    train, _ = default_corpus
    return build_graph_from_corpus(train)


def train_model(train_corpus, fs, seed=TRAIN_SEED, epochs=None):
    """One CE training run at a given stacking factor; returns
    (train result, priors)."""
    cfg_kw = {"fs": fs, "seed": seed}
    if epochs is not None:
        cfg_kw["epochs"] = epochs
    train_cfg = TrainConfig(**cfg_kw)
    dataset = prepare_dataset(train_corpus.utterances, fs)
    model_cfg = ModelConfig(input_dim=fs * train_corpus.feature_dim,
                            hidden_dim=DEFAULT_HIDDEN_DIM,
                            fc_dim=DEFAULT_FC_DIM,
                            num_states=train_corpus.num_states)
    result = train_ce(ModelParams.init(model_cfg, train_cfg.seed),
                      dataset, train_cfg)
    priors = count_priors(train_corpus.all_labels(),
                          train_corpus.num_states, fs=fs)
    return result, priors


@pytest.fixture(scope="session")
def trained_models(default_corpus):
    """Fully trained models for fs=1 and fs=3 at the default settings."""
    train, _ = default_corpus
    return {fs: train_model(train, fs) for fs in (1, 3)}
