"""
Application Configuration
"""

import os

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    value = os.environ.get(name)
    return int(value) if value not in (None, '') else default


class Config:
    """Base configuration."""
    # Runtime
    SEED = _env_int('VECEDIT_SEED', 0)
    THREADS = _env_int('VECEDIT_THREADS', 1)
    LOG_LEVEL = os.environ.get('VECEDIT_LOG_LEVEL', 'INFO')
    OUTPUT_FOLDER = os.environ.get(
        'VECEDIT_OUTPUT_FOLDER',
        os.path.join(os.path.dirname(os.path.dirname(__file__)), 'outputs')
    )

    # Toy model construction
    INIT_SCALE = 0.02
    NORM_EPS = 1e-6

    # Coarse search grid shared by every setting
    COARSE_GRID = {
        'rho_attn': [0.1, 0.3, 0.5, 0.7, 0.9],
        'rho_mlp': [0.1, 0.3, 0.5, 0.7, 0.9],
        'alpha': [0.1, 0.3, 0.5, 0.7, 0.9],
    }
    GAMMA_GRID = [0.0, 0.5, 1.0, 2.0, 4.0]

    # Stage-2 refinement: +/- one coarse step, this many points per axis
    REFINE_POINTS = 5
    TOP_K = 10

    # Sanity veto
    VETO = {
        'n_prompts': 20,
        'prompt_len': 4,
        'max_new': 24,
        'ngram': 4,
        'max_repeats': 5,
        'min_entropy': 0.05,
        'relative_to_base': False,
    }

    # Oracles
    ORACLE_SEED = 7919
    ORACLE_GRID_POINTS = 100_001
    ORACLE_TRIPLES = 1000
    ORACLE_INSTANCES = 100
    ORACLE_PROBES = 1000
    ORACLE_TRIALS = 100

    # Power iteration
    SVD_ITERS = 10_000
    SVD_TOL = 1e-10

    # Planted-behavior benchmark
    BENCH = {
        'd_model': 32,
        'n_layers': 2,
        'n_heads': 4,
        'd_head': 8,
        'd_ff': 64,
        'vocab_size': 64,
        'max_seq_len': 32,
        'planted_layer': 1,
        'planted_head': 2,
        'trigger_token': 7,
        'n_trigger': 16,
        'n_neutral': 16,
        'prompt_len': 8,
        'response_len': 4,
        'embedding_scale': 1.0,
        'readout_scale': 0.1,
        'value_gain': 1.0,
        'write_gain': 1.0,
        'edit_rho_attn': 1.0,
        'edit_rho_mlp': float('inf'),
        'edit_alpha': 0.5,
    }
    # veto defaults for planted-behavior runs: only degeneracy the base model lacks
    BENCH_VETO = {'relative_to_base': True}


class TestingConfig(Config):
    """Testing configuration."""
    DEBUG = True
    TESTING = True
    COARSE_GRID = {
        'rho_attn': [0.5, 1.0],
        'rho_mlp': [float('inf')],
        'alpha': [0.3, 0.5],
    }
    GAMMA_GRID = [0.0, 1.0]
    VETO = dict(Config.VETO, n_prompts=4, max_new=20, relative_to_base=True)

