"""
Tests for the forward pass, component slicing and greedy decoding
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from vecedit.exceptions import ConfigError, ShapeError, TokenError
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import CAPTURE_ALL, ComponentId, ModelConfig
from vecedit.services.tokenizer_service import END_ID, ByteTokenizer

TOKENS = [5, 17, 2, 40, 33, 8]


def test_forward_shapes(toy_config, toy_weights):
    logits, trace = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    T = len(TOKENS)
    assert logits.shape == (T, toy_config.vocab_size)
    assert trace.embed.shape == (T, toy_config.d_model)
    for layer in range(toy_config.n_layers):
        assert trace.head_inputs[layer].shape == (T, toy_config.n_heads, toy_config.d_head)
        assert trace.neuron_inputs[layer].shape == (T, toy_config.d_ff)
        assert trace.attn_out[layer].shape == (T, toy_config.d_model)


def test_forward_without_capture_returns_no_trace(toy_weights):
    logits, trace = ModelService.forward(toy_weights, TOKENS)
    assert trace is None
    logits_again, _ = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    assert_array_equal(logits, logits_again)


def test_residual_stream_is_sum_of_block_writes(toy_config, toy_weights):
    _, trace = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    total = trace.embed.copy()
    for layer in range(toy_config.n_layers):
        total = total + trace.attn_out[layer]
        assert_allclose(total, trace.resid_attn[layer], atol=1e-12)
        total = total + trace.mlp_out[layer]
        assert_allclose(total, trace.resid_mlp[layer], atol=1e-12)


def test_head_and_neuron_contributions_sum_to_block_output(toy_config, toy_weights):
    _, trace = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    for layer in range(toy_config.n_layers):
        heads = ModelService.head_contributions(toy_weights, trace, layer)
        neurons = ModelService.neuron_contributions(toy_weights, trace, layer)
        assert heads.shape == (toy_config.n_heads, len(TOKENS), toy_config.d_model)
        assert_allclose(heads.sum(axis=0), trace.attn_out[layer], atol=1e-12)
        assert_allclose(neurons.sum(axis=0), trace.mlp_out[layer], atol=1e-12)


def test_component_write_matches_weight_times_input(toy_weights):
    _, trace = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    head = ComponentId(1, 'attn', 2)
    heads = ModelService.head_contributions(toy_weights, trace, 1)
    W = ModelService.component_weight(toy_weights, head)
    assert_allclose(trace.component_inputs(head) @ W.T, heads[2], atol=1e-14)

    neuron = ComponentId(0, 'mlp', 13)
    neurons = ModelService.neuron_contributions(toy_weights, trace, 0)
    W = ModelService.component_weight(toy_weights, neuron)
    assert W.shape == (toy_weights.config.d_model, 1)
    assert_allclose(trace.component_inputs(neuron) @ W.T, neurons[13], atol=1e-14)


@pytest.mark.parametrize('kinds', [
    {'norm_kind': 'layernorm'},
    {'mlp_kind': 'gelu'},
    {'pos_kind': 'none'},
    {'norm_kind': 'layernorm', 'mlp_kind': 'gelu', 'pos_kind': 'none'},
])
def test_model_variants_keep_the_decomposition(kinds):
    cfg = ModelConfig(d_model=16, n_layers=2, n_heads=2, d_head=4, d_ff=12,
                      vocab_size=32, max_seq_len=16, **kinds)
    w = ModelService.init_weights(cfg, seed=1, scale=0.1)
    logits, trace = ModelService.forward(w, [3, 4, 5, 9], capture=CAPTURE_ALL)
    assert np.all(np.isfinite(logits))
    heads = ModelService.head_contributions(w, trace, 1)
    assert_allclose(heads.sum(axis=0), trace.attn_out[1], atol=1e-12)


def test_causal_prefix_is_unaffected_by_later_tokens(toy_weights):
    short, _ = ModelService.forward(toy_weights, TOKENS[:3])
    full, _ = ModelService.forward(toy_weights, TOKENS)
    assert_allclose(full[:3], short, atol=1e-12)


def test_hook_shift_reaches_block_output(toy_weights):
    shift = np.linspace(-1.0, 1.0, toy_weights.config.d_model)

    def hook(layer, block, delta):
        return delta + shift if (layer, block) == (0, 'mlp') else delta

    _, plain = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    _, hooked = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL, hooks=[hook])
    assert_allclose(hooked.mlp_out[0], plain.mlp_out[0] + shift, atol=1e-12)
    assert_array_equal(hooked.attn_out[0], plain.attn_out[0])


def test_set_component_weight_returns_new_weights(toy_weights):
    cid = ComponentId(0, 'attn', 1)
    old = ModelService.component_weight(toy_weights, cid)
    replacement = np.full(old.shape, 0.5)
    edited = ModelService.set_component_weight(toy_weights, cid, replacement)

    assert_array_equal(ModelService.component_weight(edited, cid), replacement)
    assert_array_equal(ModelService.component_weight(toy_weights, cid), old)
    # neighbouring heads untouched
    for other in (0, 2, 3):
        neighbour = ComponentId(0, 'attn', other)
        assert_array_equal(ModelService.component_weight(edited, neighbour),
                           ModelService.component_weight(toy_weights, neighbour))


def test_apply_component_updates_adds(toy_weights):
    cid = ComponentId(1, 'mlp', 5)
    delta = np.ones((toy_weights.config.d_model, 1))
    edited = ModelService.apply_component_updates(toy_weights, {cid: delta})
    assert_allclose(ModelService.component_weight(edited, cid),
                    ModelService.component_weight(toy_weights, cid) + 1.0)


def test_weights_are_read_only(toy_weights):
    with pytest.raises(ValueError):
        toy_weights.layers[0].Wo[0, 0] = 1.0


@pytest.mark.parametrize('cid', [
    ComponentId(2, 'attn', 0),
    ComponentId(0, 'attn', 4),
    ComponentId(0, 'mlp', 64),
    ComponentId(0, 'ffn', 0),
])
def test_component_out_of_range(toy_weights, cid):
    with pytest.raises(ShapeError):
        ModelService.component_weight(toy_weights, cid)


def test_component_update_shape_checked(toy_weights):
    with pytest.raises(ShapeError):
        ModelService.apply_component_updates(toy_weights, {ComponentId(0, 'attn', 0): np.ones((32, 1))})


@pytest.mark.parametrize('tokens', [[], [64], [-1], list(range(2, 35))])
def test_invalid_tokens(toy_weights, tokens):
    with pytest.raises(TokenError):
        ModelService.forward(toy_weights, tokens)


@pytest.mark.parametrize('overrides', [
    {'d_model': 0},
    {'norm_kind': 'batchnorm'},
    {'pos_kind': 'rotary', 'd_head': 3},
    {'vocab_size': 2},
])
def test_invalid_config(overrides):
    base = dict(d_model=8, n_layers=1, n_heads=2, d_head=4, d_ff=8, vocab_size=16, max_seq_len=8)
    base.update(overrides)
    with pytest.raises(ConfigError):
        ModelConfig(**base)


def test_config_dict_rejects_unknown_keys(toy_config):
    data = toy_config.to_dict()
    assert ModelConfig.from_dict(data) == toy_config
    with pytest.raises(ConfigError, match='unknown'):
        ModelConfig.from_dict(dict(data, n_experts=4))


def test_generate_stops_at_end_token(constant_weights):
    w = constant_weights
    out = ModelService.generate(w, [3, 4], max_new=5)
    assert_array_equal(out, [3, 4, END_ID])


def test_generate_without_end_token_runs_to_max_new(constant_weights):
    w = constant_weights
    out, step_logits = ModelService.generate(w, [3, 4], max_new=4, end_token=None, return_logits=True)
    assert_array_equal(out, [3, 4] + [END_ID] * 4)
    assert len(step_logits) == 4


def test_generate_respects_context_length(constant_weights):
    w = constant_weights
    out = ModelService.generate(w, [2, 3, 4, 5, 2, 3], max_new=10, end_token=None)
    assert len(out) == w.config.max_seq_len


def test_generate_is_deterministic(toy_weights):
    a = ModelService.generate(toy_weights, [5, 6, 7], max_new=6)
    b = ModelService.generate(toy_weights, [5, 6, 7], max_new=6)
    assert_array_equal(a, b)
    assert_array_equal(ModelService.generate(toy_weights, [5, 6, 7], max_new=0), [5, 6, 7])


def test_final_hidden_matches_traced_residual(toy_weights):
    logits, resid = ModelService.final_hidden(toy_weights, TOKENS)
    full_logits, trace = ModelService.forward(toy_weights, TOKENS, capture=CAPTURE_ALL)
    assert_array_equal(logits, full_logits)
    assert_array_equal(resid, trace.resid_mlp[1])


def test_byte_tokenizer_reserves_pad_and_end():
    tok = ByteTokenizer(64)
    ids = tok.encode('hi', add_end=True)
    assert ids[-1] == END_ID
    assert all(i >= 2 for i in ids[:-1])
    assert ByteTokenizer(258).decode(ByteTokenizer(258).encode('hello')) == 'hello'
