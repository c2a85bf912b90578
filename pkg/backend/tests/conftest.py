# backend/tests/conftest.py

import logging

import numpy as np
import pytest

from models import FeatureConfig, FeatureSet, MixSpec, TrainingConfig
from services.corpus import synth_corpus, build_corpus
from services.mixture import create_dmoe


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers a CLI test bound to a captured stream"""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """16 kHz framing small enough for fast tests"""
    return FeatureConfig(sample_rate=16000, frame_len=128, hop=64, num_filters=10, num_ceps=6, context=1)


@pytest.fixture
def tiny_dmoe():
    """Expert input 10, gate input 6, one hidden layer of 8, 5 bins, two experts"""
    return create_dmoe(10, 6, 5, num_experts=2, hidden_sizes=(8,), seed=3, symmetric_gate=False)


@pytest.fixture
def tiny_batch(rng):
    return FeatureSet(
        expert_inputs=rng.standard_normal((4, 10)),
        gate_inputs=rng.standard_normal((4, 6)),
        labels=(rng.random((4, 5)) > 0.5).astype(float),
    )


@pytest.fixture
def synthetic_utterances(small_config):
    return synth_corpus(4, seed=11, feature_config=small_config)


@pytest.fixture
def synthetic_features(synthetic_utterances, small_config):
    return build_corpus(synthetic_utterances, MixSpec(5.0, 'white', 7), small_config, threads=1)


@pytest.fixture
def small_training_config():
    return TrainingConfig(num_experts=2, hidden_sizes=(16,), epochs=8, batch_size=32, dropout=0.0,
                          learning_rate=1e-3, seed=5, em_iterations=3, inner_epochs=2)
