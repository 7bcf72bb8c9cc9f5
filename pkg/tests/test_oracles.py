"""
Tests for the brute-force oracles, and the edit rule checked against them
"""

import numpy as np
import pytest

from vecedit.config import Config
from vecedit.exceptions import DegenerateSampleError, ParameterError
from vecedit.services.editor_service import EditorService
from vecedit.services.model_types import ComponentId
from vecedit.services.oracle_service import OracleReport, OracleService

PROBE = [9, 4, 33, 18, 2, 51, 7]


def test_report_pass_flag():
    assert OracleReport('x', 3, 1e-12, 1e-10).passed
    assert not OracleReport('x', 3, 2e-10, 1e-10).passed
    assert OracleReport('x', 3, 0.5, 1.0).to_dict() == {
        'name': 'x', 'trials': 3, 'max_violation': 0.5, 'pass': True, 'tolerance': 1.0,
    }


# ================== Elastic-Net scalar ==================

@pytest.mark.parametrize('g, rho, alpha, expected, slack', [
    (0.1, 0.5, 0.4, 0.0, 2e-5),
    (-0.3, 0.4, 0.5, -0.5, 4e-5),
    (0.70710678, 0.5, 0.2, 1.51777, 4e-5),
])
def test_scalar_oracle_examples(g, rho, alpha, expected, slack):
    lam = OracleService.elastic_net_scalar_oracle(g, rho, alpha, grid_halfwidth=2.0, grid_points=100_000)
    assert lam == pytest.approx(expected, abs=slack)


def test_grid_has_exact_zero():
    grid = OracleService.elastic_net_grid(0.5, 1.0, 0.2, grid_points=1000)
    assert grid.size == 1001
    assert grid[500] == 0.0
    assert grid[0] == -grid[-1]


@pytest.mark.parametrize('rho, alpha, points', [(0.0, 0.1, 1000), (np.inf, 0.1, 1000), (1.0, 1.0, 1000), (1.0, 0.1, 999)])
def test_grid_parameter_errors(rho, alpha, points):
    with pytest.raises(ParameterError):
        OracleService.elastic_net_grid(0.5, rho, alpha, grid_points=points)


def test_magnitude_agrees_with_grid_argmax():
    report = OracleService.magnitude_agreement(n_triples=1000, grid_points=100_001)
    assert report.trials == 1000
    assert report.passed, report.max_violation


# ================== Pearson optimality ==================

def test_pearson_optimality_on_random_components():
    rng = np.random.default_rng(Config.ORACLE_SEED)
    for i in range(100):
        W, v, H = OracleService.random_instance(rng)
        assert H.shape[0] >= 16 and W.shape[0] <= 8 and W.shape[1] <= 8
        report = OracleService.pearson_optimality_oracle(W, v, H, n_probes=1000, seed=i)
        assert report.passed, (i, report.max_violation)


def test_input_direction_attains_unit_correlation():
    rng = np.random.default_rng(4)
    W, v, H = rng.standard_normal((6, 6)), rng.standard_normal(6), rng.standard_normal((40, 6))
    k_hat = EditorService.input_direction(W, v)
    assert OracleService.abs_pearson_for_direction(k_hat, W, v, H) == pytest.approx(1.0, abs=1e-9)
    other = rng.standard_normal(6)
    other -= (other @ k_hat) * k_hat
    assert OracleService.abs_pearson_for_direction(other, W, v, H) < 1.0 - 1e-6


def test_pearson_oracle_degenerate_sample():
    h = np.array([[1.0, 2.0]] * 20)
    with pytest.raises(DegenerateSampleError, match='degenerate sample'):
        OracleService.pearson_optimality_oracle(np.eye(2), np.array([1.0, 0.0]), h)


# ================== Semantic invariance ==================

def test_semantic_invariance_of_rank_one_edit():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(8)
    k = rng.standard_normal(5)
    delta = EditorService.edit_magnitude(0.7, 0.3, 0.2) * np.outer(v / np.linalg.norm(v), k / np.linalg.norm(k))
    report = OracleService.verify_semantic_invariance(delta, v)
    assert report.max_violation <= 1e-12


def test_semantic_invariance_negative_control():
    rng = np.random.default_rng(1)
    report = OracleService.verify_semantic_invariance(rng.standard_normal((4, 4)), rng.standard_normal(4))
    assert not report.passed
    assert report.max_violation > 1e-3


def test_semantic_invariance_zero_edit():
    report = OracleService.verify_semantic_invariance(np.zeros((4, 3)), np.ones(4))
    assert report.max_violation == 0.0


def test_every_plan_entry_is_semantically_invariant(extracted, dense_plan):
    vecs, _ = extracted
    for cid, entry in dense_plan.entries.items():
        report = OracleService.verify_semantic_invariance(entry.delta(), vecs.get(cid.layer, cid.block))
        assert report.passed, (cid, report.max_violation)


# ================== Forward-pass identities ==================

@pytest.mark.parametrize('block', ['attn', 'mlp'])
def test_component_shift_single_entry(toy_weights, dense_plan, block):
    chosen = [cid for cid in sorted(dense_plan.entries) if cid.block == block]
    top = max(chosen, key=lambda c: abs(dense_plan.entries[c].lam))
    report = OracleService.component_shift_oracle(toy_weights, dense_plan.restricted(top), PROBE)
    assert report.passed, report.max_violation
    assert report.trials == len(PROBE)


def test_component_shift_in_second_layer_keeps_first_layer(toy_weights, dense_plan):
    cid = next(c for c in sorted(dense_plan.entries) if c.layer == 1)
    report = OracleService.component_shift_oracle(toy_weights, dense_plan.restricted(cid), PROBE)
    assert np.isfinite(report.max_violation)
    assert report.passed


def test_component_shift_without_entries(toy_weights, dense_plan):
    missing = ComponentId(0, 'attn', 0)
    empty = dense_plan.restricted(missing)
    empty.entries.clear()
    report = OracleService.component_shift_oracle(toy_weights, empty, PROBE)
    assert report.max_violation == 0.0


def test_component_shift_rejects_multi_entry_plan(toy_weights, dense_plan):
    with pytest.raises(ParameterError):
        OracleService.component_shift_oracle(toy_weights, dense_plan, PROBE)


def test_decomposition_identities(toy_weights):
    report = OracleService.decomposition_oracle(toy_weights, n_passes=100)
    assert report.passed, report.max_violation


# ================== Suite ==================

def test_quick_suite_passes():
    reports = OracleService.run_suite(quick=True)
    assert [r.name for r in reports] == [
        'edit_magnitude_vs_grid', 'pearson_optimality', 'semantic_invariance',
        'component_shift', 'decomposition',
    ]
    for report in reports:
        assert report.passed, report.to_dict()
