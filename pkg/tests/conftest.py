"""
Shared fixtures: a seeded 2-layer, 4-head, d=32, d_ff=64 toy model and a random probe set.
"""

import numpy as np
import pytest

from vecedit.config import TestingConfig
from vecedit.services.editor_service import EditHyperparams, EditorService
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import ModelConfig, ModelWeights
from vecedit.services.steering_service import ProbeDataset, SteeringService
from vecedit.services.tokenizer_service import END_ID


@pytest.fixture(scope='session')
def toy_config():
    return ModelConfig(d_model=32, n_layers=2, n_heads=4, d_head=8, d_ff=64,
                       vocab_size=64, max_seq_len=32)


@pytest.fixture(scope='session')
def toy_weights(toy_config):
    return ModelService.init_weights(toy_config, seed=3, scale=0.02)


@pytest.fixture(scope='session')
def probe_data():
    rng = np.random.default_rng(11)

    def pair():
        prompt = rng.integers(2, 64, size=int(rng.integers(2, 7))).tolist()
        response = rng.integers(2, 64, size=int(rng.integers(1, 5))).tolist()
        return prompt, response

    return ProbeDataset.from_pairs([pair() for _ in range(6)], [pair() for _ in range(6)])


@pytest.fixture(scope='session')
def extracted(toy_weights, probe_data):
    """(vectors, pooled trace) for the toy model."""
    pos, neg = SteeringService.collect_traces(toy_weights, probe_data)
    vecs = SteeringService.vectors_from_traces(pos, neg, toy_weights.config.n_layers)
    return vecs, pos.merged(neg)


@pytest.fixture(scope='session')
def dense_plan(toy_weights, extracted):
    """alpha = 0 keeps every component with g != 0."""
    vecs, trace = extracted
    return EditorService.build_edit_plan(toy_weights, vecs, trace,
                                         EditHyperparams(rho_attn=0.05, rho_mlp=0.05, alpha=0.0))


@pytest.fixture
def small_pipeline(tmp_path):
    """Keyword arguments for a quick PipelineConfig on the planted-behavior model."""
    return {
        'grid': {k: list(v) for k, v in TestingConfig.COARSE_GRID.items()},
        'gamma_grid': list(TestingConfig.GAMMA_GRID),
        'veto': dict(TestingConfig.VETO),
        'bench': {'n_trigger': 6, 'n_neutral': 6},
        'out': str(tmp_path / 'out'),
        'seed': 0,
        'threads': 1,
    }


@pytest.fixture(scope='session')
def constant_weights():
    """Every embedding is all-ones, every block writes zero and only END_ID gets a nonzero logit."""
    cfg = ModelConfig(d_model=4, n_layers=1, n_heads=2, d_head=2, d_ff=3, vocab_size=6, max_seq_len=8)
    tensors = {}
    for name, shape in cfg.tensor_shapes():
        tensors[name] = np.ones(shape) if name.endswith('norm_gain') else np.zeros(shape)
    tensors['token_embedding'] = np.ones((cfg.vocab_size, cfg.d_model))
    tensors['unembedding'][END_ID] = 1.0
    return ModelWeights.from_tensors(cfg, tensors)
