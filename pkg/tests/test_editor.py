"""
Tests for the closed-form rank-1 edit rule, its variants and plan files
"""

import csv

import numpy as np
import pytest
from hypothesis import given, seed
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from vecedit.exceptions import (
    ConvergenceError, DegenerateSteeringVectorError, InsensitiveComponentError, ParameterError,
    TraceCoverageError
)
from vecedit.services.editor_service import (
    INF, EditHyperparams, EditorService, Variant, decode_rho, encode_rho
)
from vecedit.services.linalg_service import LinalgService
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import ActivationTrace, ComponentId, SequenceTrace
from vecedit.services.steering_service import SteeringVectorSet
from vecedit.services.weights_service import WeightsService

DENSE = EditHyperparams(rho_attn=0.05, rho_mlp=0.05, alpha=0.0)
HEAD = ComponentId(0, 'attn', 0)


def head_trace(rows):
    """Single-head, single-layer trace whose response positions carry the given inputs."""
    rows = np.asarray(rows, dtype=np.float64)
    inputs = np.vstack([np.full((1, rows.shape[1]), 50.0), rows])[:, None, :]
    mask = [False] + [True] * rows.shape[0]
    seq = SequenceTrace(tokens=list(range(2, 2 + len(mask))), response_mask=mask,
                        head_inputs={0: inputs})
    return ActivationTrace([seq])


# ================== closed-form pieces ==================

@pytest.mark.parametrize('rows, expected', [
    ([[1.0, 2.0]], [1.0, 2.0]),
    ([[0.0, 0.0], [2.0, 4.0]], [1.0, 2.0]),
    ([[2.0, 4.0], [0.0, 0.0]], [1.0, 2.0]),
])
def test_component_mean_input(rows, expected):
    assert_array_equal(EditorService.component_mean_input(head_trace(rows), HEAD), expected)


def test_component_mean_input_without_masked_positions():
    seq = SequenceTrace(tokens=[2, 3], response_mask=[False, False], head_inputs={0: np.ones((2, 1, 2))})
    with pytest.raises(TraceCoverageError):
        EditorService.component_mean_input(ActivationTrace([seq]), HEAD)


@pytest.mark.parametrize('v, expected', [
    ([3.0, 4.0], [0.6, 0.8]),
    ([0.0, 1.0], [0.0, 1.0]),
    ([-2.0, 0.0], [-1.0, 0.0]),
])
def test_output_direction(v, expected):
    assert_allclose(EditorService.output_direction(v), expected, atol=1e-15)


def test_output_direction_zero():
    with pytest.raises(DegenerateSteeringVectorError, match='degenerate steering vector'):
        EditorService.output_direction([0.0, 0.0])


@pytest.mark.parametrize('W, v, expected', [
    (np.eye(2), [0.0, 1.0], [0.0, 1.0]),
    ([[1.0, 0.0], [0.0, 2.0]], [0.0, 1.0], [0.0, 1.0]),
    ([[0.5], [-2.0]], [1.0, 1.0], [-1.0]),
    ([[0.5], [2.0]], [1.0, 1.0], [1.0]),
])
def test_input_direction(W, v, expected):
    assert_allclose(EditorService.input_direction(W, v), expected, atol=1e-15)


def test_input_direction_insensitive():
    with pytest.raises(InsensitiveComponentError):
        EditorService.input_direction([[1.0, 0.0], [0.0, 0.0]], [0.0, 1.0])


@pytest.mark.parametrize('mu, v, expected', [
    ([1.0, 0.0], [1.0, 0.0], 1.0),
    ([0.0, 1.0], [1.0, 0.0], 0.0),
    ([1.0, 1.0], [1.0, 0.0], 0.70710678118654752),
    ([0.0, 0.0], [1.0, 0.0], 0.0),
])
def test_importance_score(mu, v, expected):
    assert EditorService.importance_score(np.eye(2), mu, v) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize('g, rho, alpha, expected', [
    (0.1, 0.5, 0.4, 0.0),
    (-0.3, 0.4, 0.5, -0.5),
    (0.70710678, 0.5, 0.2, 1.51776695),
    (0.0, 0.3, 0.0, 0.0),
    (0.9, INF, 0.5, 0.0),
])
def test_edit_magnitude(g, rho, alpha, expected):
    assert EditorService.edit_magnitude(g, rho, alpha) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize('rho, alpha', [(0.5, 1.0), (0.5, -0.1), (0.0, 0.5), (-1.0, 0.2)])
def test_edit_magnitude_rejects_bad_parameters(rho, alpha):
    with pytest.raises(ParameterError):
        EditorService.edit_magnitude(0.5, rho, alpha)


def test_dead_zone_exactness():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        g = rng.uniform(-1.0, 1.0)
        rho = rng.uniform(0.01, 2.0)
        alpha = rng.uniform(0.0, 0.99)
        lam = EditorService.edit_magnitude(g, rho, alpha)
        assert (lam == 0.0) == (abs(g) <= rho * alpha)
        if lam != 0.0:
            assert np.sign(lam) == np.sign(g)


@seed(17)
@given(g=st.floats(-1.0, 1.0), rho=st.floats(0.01, 2.0), alpha=st.floats(0.0, 0.99))
def test_magnitude_maximizes_objective(g, rho, alpha):
    lam = EditorService.edit_magnitude(g, rho, alpha)

    def objective(x):
        return g * x - rho * (alpha * abs(x) + 0.5 * (1.0 - alpha) * x * x)

    best = objective(lam)
    for step in (1e-3, -1e-3, 0.1, -0.1):
        assert objective(lam + step) <= best + 1e-9 * (1.0 + abs(best))


# ================== power iteration ==================

def test_singular_vector_dominant_axis():
    x = EditorService.top_right_singular_vector(np.diag([3.0, 1.0]))
    assert abs(x[0]) == pytest.approx(1.0, abs=1e-9)
    assert x[1] == pytest.approx(0.0, abs=1e-5)


def test_singular_vector_degenerate_spectrum_returns_start():
    assert_allclose(EditorService.top_right_singular_vector(2.5 * np.eye(3)), np.ones(3) / np.sqrt(3))


def test_singular_vector_falls_back_to_basis_start():
    # all-ones lies in the null space of W^T W
    W = np.array([[1.0, -1.0]])
    x = EditorService.top_right_singular_vector(W)
    assert_allclose(np.abs(x), [1.0 / np.sqrt(2.0)] * 2, atol=1e-9)


def test_singular_vector_matches_svd():
    rng = np.random.default_rng(8)
    W = rng.standard_normal((8, 4))
    x = EditorService.top_right_singular_vector(W)
    sigma = np.linalg.svd(W, compute_uv=False)[0]
    assert np.linalg.norm(W @ x) == pytest.approx(sigma, rel=1e-9)
    probes = rng.standard_normal((100_000, 4))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    assert np.linalg.norm(W @ x) >= np.max(np.linalg.norm(probes @ W.T, axis=1)) - 1e-3


def test_singular_vector_errors():
    with pytest.raises(ParameterError):
        EditorService.top_right_singular_vector(np.zeros((3, 2)))
    W = np.random.default_rng(1).standard_normal((6, 5))
    with pytest.raises(ConvergenceError) as exc_info:
        EditorService.top_right_singular_vector(W, iters=1, tol=1e-15)
    assert exc_info.value.iterations == 1


# ================== hyperparameters ==================

@pytest.mark.parametrize('kwargs', [
    {'rho_attn': 0.0, 'rho_mlp': 1.0, 'alpha': 0.5},
    {'rho_attn': 1.0, 'rho_mlp': -1.0, 'alpha': 0.5},
    {'rho_attn': 1.0, 'rho_mlp': 1.0, 'alpha': 1.0},
    {'rho_attn': float('nan'), 'rho_mlp': 1.0, 'alpha': 0.5},
])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ParameterError):
        EditHyperparams(**kwargs)


def test_hyperparams_dict_encodes_infinity():
    hyper = EditHyperparams(rho_attn=0.5, rho_mlp=INF, alpha=0.3)
    assert hyper.to_dict() == {'rho_attn': 0.5, 'rho_mlp': 'inf', 'alpha': 0.3}
    assert EditHyperparams.from_dict(hyper.to_dict()) == hyper
    assert encode_rho(INF) == 'inf' and decode_rho('Infinity') == INF and decode_rho(2) == 2.0


@pytest.mark.parametrize('text, kind, top_k', [
    ('steer2edit', 'steer2edit', None),
    ('closed_form', 'steer2edit', None),
    ('l0', 'l0', None),
    ('l0:auto', 'l0', None),
    ('l0:3', 'l0', 3),
    ('l0_topk:5', 'l0', 5),
    ('l2_dense', 'l2', None),
    (' k_svd ', 'k_svd', None),
])
def test_variant_parse(text, kind, top_k):
    variant = Variant.parse(text)
    assert (variant.kind, variant.top_k) == (kind, top_k)


@pytest.mark.parametrize('text', ['l0:x', 'l0:-1', 'ridge'])
def test_variant_parse_rejects(text):
    with pytest.raises(ParameterError):
        Variant.parse(text)


# ================== plans ==================

def test_infinite_budgets_give_empty_plan(toy_weights, extracted):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(INF, INF, 0.5))
    assert plan.entries == {}
    assert plan.diagnostics == {}
    assert EditorService.apply_edit_plan(toy_weights, plan) is toy_weights


def test_entries_are_unit_rank_one(toy_weights, dense_plan):
    assert dense_plan.nonzero_count() > 0
    for cid, entry in dense_plan.entries.items():
        assert np.linalg.norm(entry.u_hat) == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.norm(entry.k_hat) == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.matrix_rank(entry.delta()) == 1
        assert entry.delta().shape == ModelService.component_weight(toy_weights, cid).shape


def test_plan_matches_steer2edit(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    for cid in (ComponentId(0, 'attn', 2), ComponentId(1, 'mlp', 40)):
        W = ModelService.component_weight(toy_weights, cid)
        v = vecs.get(cid.layer, cid.block)
        mu = EditorService.component_mean_input(trace, cid)
        g = EditorService.importance_score(W, mu, v)
        assert dense_plan.scores[cid] == pytest.approx(g, abs=1e-15)
        entry = dense_plan.entries[cid]
        assert entry.lam == pytest.approx(g / 0.05, rel=1e-12)
        assert_allclose(entry.u_hat, v / np.linalg.norm(v), atol=1e-15)
        assert_allclose(entry.k_hat, EditorService.input_direction(W, v), atol=1e-15)


def test_scores_bounded(dense_plan, toy_config):
    assert len(dense_plan.scores) == toy_config.n_layers * (toy_config.n_heads + toy_config.d_ff)
    assert all(-1.0 <= g <= 1.0 for g in dense_plan.scores.values())


def test_scale_invariance(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    scaled = EditorService.build_edit_plan(toy_weights, vecs.scaled(3.7), trace, DENSE)
    assert scaled.entries.keys() == dense_plan.entries.keys()
    for cid, entry in dense_plan.entries.items():
        other = scaled.entries[cid]
        assert other.g == pytest.approx(entry.g, abs=1e-10)
        assert other.lam == pytest.approx(entry.lam, abs=1e-10)
        assert_allclose(other.u_hat, entry.u_hat, atol=1e-10)
        assert_allclose(other.k_hat, entry.k_hat, atol=1e-10)


def test_dead_zone_in_plan(toy_weights, extracted):
    vecs, trace = extracted
    hyper = EditHyperparams(rho_attn=0.8, rho_mlp=0.8, alpha=0.2)
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, hyper)
    for cid, g in plan.scores.items():
        assert (cid in plan.entries) == (abs(g) > 0.8 * 0.2)


def test_monotone_sparsity(toy_weights, extracted):
    vecs, trace = extracted
    pairs = [(rho, alpha) for rho in (0.1, 0.2, 0.4, 0.8) for alpha in (0.1, 0.3, 0.5, 0.7, 0.9)]
    pairs.sort(key=lambda p: p[0] * p[1])
    counts = {'attn': [], 'mlp': []}
    for rho, alpha in pairs:
        plan = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(rho, rho, alpha))
        for block in counts:
            counts[block].append(plan.nonzero_count(block))
    for block, series in counts.items():
        assert all(a >= b for a, b in zip(series, series[1:])), block


def test_pearson_optimality_realized(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    checked = 0
    for cid, entry in sorted(dense_plan.entries.items())[:20]:
        stats = EditorService.component_stats(toy_weights, vecs, trace, cid)
        if np.ptp(stats.s_samples) == 0.0:
            continue
        h = trace.masked_component_inputs(cid)
        delta_s = entry.lam * np.linalg.norm(stats.v) * (h @ entry.k_hat)
        assert LinalgService.pearson(delta_s, stats.s_samples) == pytest.approx(np.sign(entry.lam), abs=1e-9)
        checked += 1
    assert checked > 0


def test_semantic_invariance_of_entries(dense_plan):
    rng = np.random.default_rng(5)
    for entry in dense_plan.entries.values():
        delta = entry.delta()
        for _ in range(5):
            z = rng.standard_normal(entry.u_hat.size)
            z -= (z @ entry.u_hat) * entry.u_hat
            h = rng.standard_normal(entry.k_hat.size)
            scale = np.linalg.norm(z) * np.linalg.norm(delta) * np.linalg.norm(h)
            assert abs(z @ delta @ h) <= 1e-10 * scale


def test_degenerate_vector_with_budget(toy_weights, extracted):
    vecs, trace = extracted
    zeroed = dict(vecs.vectors)
    zeroed[(1, 'mlp')] = np.zeros(vecs.d_model)
    broken = SteeringVectorSet(zeroed, vecs.n_layers, vecs.d_model)
    with pytest.raises(DegenerateSteeringVectorError, match='layer 1 mlp'):
        EditorService.build_edit_plan(toy_weights, broken, trace, DENSE)
    # a disabled class tolerates it
    plan = EditorService.build_edit_plan(toy_weights, broken, trace, EditHyperparams(0.05, INF, 0.0))
    assert plan.nonzero_count('mlp') == 0
    assert plan.nonzero_count('attn') > 0


def test_zero_component_is_skipped_with_diagnostic(toy_weights, extracted):
    vecs, trace = extracted
    silenced = ModelService.set_component_weight(toy_weights, HEAD, np.zeros((32, 8)))
    plan = EditorService.build_edit_plan(silenced, vecs, trace, DENSE)
    assert HEAD not in plan.entries
    assert plan.diagnostics[HEAD] == 'W mu = 0'
    assert plan.scores[HEAD] == 0.0


def test_disabled_class_records_no_diagnostics(toy_weights, extracted):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(0.05, INF, 0.0))
    assert all(cid.block == 'attn' for cid in plan.entries)
    assert all(cid.block == 'attn' for cid in plan.diagnostics)
    assert any(cid.block == 'mlp' for cid in plan.scores)


def test_plan_independent_of_threads(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    threaded = EditorService.build_edit_plan(toy_weights, vecs, trace, DENSE, threads=8)
    assert threaded.scores == dense_plan.scores
    for cid, entry in dense_plan.entries.items():
        assert threaded.entries[cid].lam == entry.lam
        assert_array_equal(threaded.entries[cid].k_hat, entry.k_hat)


# ================== variants ==================

def test_l2_equals_steer2edit_without_sparsity(toy_weights, extracted):
    vecs, trace = extracted
    l2 = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(0.3, 0.6, 0.7), 'l2')
    ridge = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(0.3, 0.6, 0.0))
    assert l2.entries.keys() == ridge.entries.keys()
    for cid, entry in ridge.entries.items():
        assert l2.entries[cid].lam == pytest.approx(entry.lam, abs=1e-12)
        assert entry.lam == pytest.approx(entry.g / (0.3 if cid.block == 'attn' else 0.6), rel=1e-12)
        assert_allclose(l2.entries[cid].k_hat, entry.k_hat, atol=1e-12)


@pytest.mark.parametrize('K', [1, 3])
def test_l0_keeps_top_k_per_class(toy_weights, extracted, K):
    vecs, trace = extracted
    hyper = EditHyperparams(0.5, 0.25, 0.4)
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, hyper, f'l0:{K}')
    for block, rho in (('attn', 0.5), ('mlp', 0.25)):
        assert plan.nonzero_count(block) == K
        ranked = sorted((c for c in plan.scores if c.block == block),
                        key=lambda c: (-abs(plan.scores[c]), c))
        assert sorted(c for c in plan.entries if c.block == block) == sorted(ranked[:K])
        for cid in ranked[:K]:
            assert plan.entries[cid].lam == pytest.approx(plan.scores[cid] / (rho * 0.6), rel=1e-12)


def test_l0_with_disabled_class(toy_weights, extracted):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(0.5, INF, 0.4), 'l0:2')
    assert plan.nonzero_count('attn') == 2
    assert plan.nonzero_count('mlp') == 0


@pytest.mark.parametrize('hyper', [
    EditHyperparams(0.5, 0.25, 0.4),
    EditHyperparams(0.2, INF, 0.6),
    EditHyperparams(INF, 0.1, 0.3),
])
def test_l0_without_k_matches_steer2edit_sparsity(toy_weights, extracted, hyper):
    vecs, trace = extracted
    reference = EditorService.build_edit_plan(toy_weights, vecs, trace, hyper)
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, hyper, 'l0')
    assert str(plan.variant) == 'l0'
    for block in ('attn', 'mlp'):
        assert plan.nonzero_count(block) == reference.nonzero_count(block)
    assert plan.entries.keys() == reference.entries.keys()


def test_k_mean_changes_only_k(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, DENSE, 'k_mean')
    assert plan.entries.keys() == dense_plan.entries.keys()
    for cid, entry in dense_plan.entries.items():
        other = plan.entries[cid]
        assert (other.g, other.lam) == (entry.g, entry.lam)
        assert_array_equal(other.u_hat, entry.u_hat)
        mu = EditorService.component_mean_input(trace, cid)
        assert_allclose(other.k_hat, mu / np.linalg.norm(mu), atol=1e-15)


def test_k_svd_changes_only_k(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, DENSE, 'k_svd')
    assert plan.entries.keys() == dense_plan.entries.keys()
    for cid in [ComponentId(0, 'attn', 1), ComponentId(1, 'attn', 3)]:
        entry, other = dense_plan.entries[cid], plan.entries[cid]
        assert (other.g, other.lam) == (entry.g, entry.lam)
        assert_array_equal(other.u_hat, entry.u_hat)
        W = ModelService.component_weight(toy_weights, cid)
        sigma = np.linalg.svd(W, compute_uv=False)[0]
        assert np.linalg.norm(W @ other.k_hat) == pytest.approx(sigma, rel=1e-6)


def test_g_dot_changes_only_g(toy_weights, extracted, dense_plan):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, DENSE, 'g_dot')
    for cid, entry in dense_plan.entries.items():
        W = ModelService.component_weight(toy_weights, cid)
        v = vecs.get(cid.layer, cid.block)
        mu = EditorService.component_mean_input(trace, cid)
        g_dot = (v / np.linalg.norm(v)) @ (W @ mu)
        assert plan.scores[cid] == pytest.approx(g_dot, rel=1e-12, abs=1e-18)
        if cid in plan.entries:
            other = plan.entries[cid]
            assert other.lam == pytest.approx(g_dot / 0.05, rel=1e-12)
            assert_array_equal(other.k_hat, entry.k_hat)
            assert_array_equal(other.u_hat, entry.u_hat)


@pytest.mark.parametrize('variant', ['steer2edit', 'k_mean', 'k_svd', 'g_dot', 'l0:4', 'l2'])
def test_every_variant_keeps_output_direction(toy_weights, extracted, variant):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, DENSE, variant)
    for cid, entry in plan.entries.items():
        v = vecs.get(cid.layer, cid.block)
        assert_allclose(entry.u_hat, v / np.linalg.norm(v), atol=1e-15)


# ================== applying ==================

def test_apply_touches_only_planned_slabs(toy_weights, dense_plan):
    edited = EditorService.apply_edit_plan(toy_weights, dense_plan)
    for cid, entry in list(dense_plan.entries.items())[:10]:
        assert_allclose(ModelService.component_weight(edited, cid),
                        ModelService.component_weight(toy_weights, cid) + entry.delta(), atol=1e-15)
    assert_array_equal(edited.layers[0].Wq, toy_weights.layers[0].Wq)
    assert_array_equal(edited.token_embedding, toy_weights.token_embedding)


def test_apply_then_negate_recovers_weights(toy_weights, dense_plan):
    edited = EditorService.apply_edit_plan(toy_weights, dense_plan)
    restored = EditorService.apply_edit_plan(edited, EditorService.negate_plan(dense_plan))
    for (_, a), (_, b) in zip(restored.named_tensors(), toy_weights.named_tensors()):
        assert_allclose(a, b, atol=1e-12)


def test_negation_survives_float32_storage(tmp_path, toy_weights, extracted):
    vecs, trace = extracted
    plan = EditorService.build_edit_plan(toy_weights, vecs, trace, EditHyperparams(5.0, 5.0, 0.0))
    edited = EditorService.apply_edit_plan(toy_weights, plan)
    stored = WeightsService.load_weights(WeightsService.save_weights(edited, tmp_path / 'e.s2e1'))
    restored = EditorService.apply_edit_plan(stored, EditorService.negate_plan(plan))
    for (_, a), (_, b) in zip(restored.named_tensors(), toy_weights.named_tensors()):
        assert_allclose(a, b, atol=1e-7)


def test_restricted_plan(dense_plan):
    cid = next(iter(sorted(dense_plan.entries)))
    single = dense_plan.restricted(cid)
    assert list(single.entries) == [cid]
    assert single.restricted(ComponentId(9, 'attn', 0)).entries == {}


# ================== files ==================

def test_plan_file_round_trip(tmp_path, dense_plan):
    path = EditorService.save_plan(dense_plan, tmp_path / 'plan.json')
    loaded = EditorService.load_plan(path)
    assert loaded.hyper == dense_plan.hyper
    assert loaded.variant == dense_plan.variant
    assert loaded.scores == dense_plan.scores
    assert loaded.entries.keys() == dense_plan.entries.keys()
    for cid, entry in dense_plan.entries.items():
        assert loaded.entries[cid].lam == entry.lam
        assert_allclose(loaded.entries[cid].k_hat, entry.k_hat, atol=1e-7)


def test_heatmap_csv(tmp_path, toy_config, dense_plan):
    path = EditorService.write_heatmap_csv(dense_plan, toy_config, tmp_path / 'heatmap.csv')
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == toy_config.n_layers * (toy_config.n_heads + toy_config.d_ff)
    keys = [(int(r['layer']), r['block'], int(r['index'])) for r in rows]
    assert keys == sorted(keys)
    assert sum(1 for r in rows if float(r['lambda']) != 0.0) == dense_plan.nonzero_count()
    for row in rows[:5]:
        cid = ComponentId(int(row['layer']), row['block'], int(row['index']))
        assert float(row['lambda']) == dense_plan.lam(cid)
        assert float(row['g']) == dense_plan.scores[cid]


def test_edit_distribution(toy_config, dense_plan):
    summary = EditorService.edit_distribution(dense_plan, toy_config)
    assert len(summary) == 2 * toy_config.n_layers
    assert sum(s['positive'] + s['negative'] for s in summary) == dense_plan.nonzero_count()
    for s in summary:
        width = toy_config.n_heads if s['block'] == 'attn' else toy_config.d_ff
        assert s['positive'] + s['negative'] + s['zero'] == width
