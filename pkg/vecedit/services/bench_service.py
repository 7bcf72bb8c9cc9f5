"""
Bench Service - toy model with a planted, trigger-activated behavior

Construction:
    * Gaussian weights at scale 0.02, then a copy-last-token backbone: token
      embedding entries N(0, embedding_scale^2), unembedding tied to the
      embedding times readout_scale. The trigger row is sqrt(d) * e_f, and
      e_f is projected out of every other row, so only the trigger token
      carries the trigger feature f.
    * In the planted layer, value row 0 of the planted head reads e_f
      (times value_gain) and column 0 of its Wo slab writes write_gain * d_beh.
With near-uniform attention the planted head therefore writes along d_beh in
proportion to the share of trigger tokens in its context.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from vecedit.config import Config
from vecedit.exceptions import ConfigError
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import ComponentId, ModelConfig, ModelWeights
from vecedit.services.steering_service import ProbeDataset
from vecedit.services.tokenizer_service import END_ID, PAD_ID

logger = logging.getLogger(__name__)

TRIGGER_FEATURE = 0


@dataclass(frozen=True)
class SyntheticBenchSpec:
    """Where and how the behavior is planted, and how probe prompts are drawn."""
    model_config: ModelConfig
    planted: ComponentId
    behavior: np.ndarray
    trigger_token: int
    n_trigger: int = 16
    n_neutral: int = 16
    prompt_len: int = 8
    response_len: int = 4
    constants: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.planted.validate(self.model_config)
        if self.planted.block != 'attn':
            raise ConfigError("the planted component must be an attention head")
        if not 0 <= self.trigger_token < self.model_config.vocab_size or self.trigger_token in (PAD_ID, END_ID):
            raise ConfigError(f"trigger token {self.trigger_token} must be a non-reserved id")
        if self.prompt_len + self.response_len > self.model_config.max_seq_len:
            raise ConfigError("prompt_len + response_len exceeds max_seq_len")
        if min(self.n_trigger, self.n_neutral, self.prompt_len, self.response_len) < 1:
            raise ConfigError("prompt counts and lengths must be >= 1")

    @classmethod
    def from_config(cls, bench: Optional[Dict] = None, seed: int = 0) -> 'SyntheticBenchSpec':
        """
        Build a spec from BENCH constants (overridable) and a seed.

        The behavior direction is a seeded random unit vector orthogonal to
        the trigger feature.
        """
        bench = dict(Config.BENCH, **(bench or {}))
        unknown = set(bench) - set(Config.BENCH)
        if unknown:
            raise ConfigError(f"unknown bench keys: {sorted(unknown)}")
        model_config = ModelConfig(
            d_model=bench['d_model'], n_layers=bench['n_layers'], n_heads=bench['n_heads'],
            d_head=bench['d_head'], d_ff=bench['d_ff'], vocab_size=bench['vocab_size'],
            max_seq_len=bench['max_seq_len'], norm_eps=Config.NORM_EPS
        )
        rng = np.random.default_rng([seed, 1])
        behavior = rng.standard_normal(model_config.d_model)
        behavior[TRIGGER_FEATURE] = 0.0
        behavior /= np.linalg.norm(behavior)
        return cls(
            model_config=model_config,
            planted=ComponentId(bench['planted_layer'], 'attn', bench['planted_head']),
            behavior=behavior,
            trigger_token=bench['trigger_token'],
            n_trigger=bench['n_trigger'],
            n_neutral=bench['n_neutral'],
            prompt_len=bench['prompt_len'],
            response_len=bench['response_len'],
            constants=bench,
        )


class BenchService:
    """Service for the planted-behavior benchmark."""

    @classmethod
    def build_planted_model(cls, spec: SyntheticBenchSpec, seed: int = 0) -> ModelWeights:
        """
        Construct the planted-behavior model.

        Every tensor is rounded to float32 so the model survives a save/load
        cycle bit for bit.

        Args:
            spec: Benchmark spec
            seed: RNG seed

        Returns:
            ModelWeights
        """
        cfg = spec.model_config
        c = dict(Config.BENCH, **spec.constants)
        base = ModelService.init_weights(cfg, seed=seed, scale=Config.INIT_SCALE)
        tensors = dict(base.named_tensors())
        rng = np.random.default_rng([seed, 2])

        d = cfg.d_model
        e_trig = np.zeros(d)
        e_trig[TRIGGER_FEATURE] = 1.0
        emb = rng.normal(0.0, c['embedding_scale'], size=(cfg.vocab_size, d))
        emb[:, TRIGGER_FEATURE] = 0.0
        emb[spec.trigger_token] = np.sqrt(d) * e_trig
        tensors['token_embedding'] = emb
        tensors['unembedding'] = c['readout_scale'] * emb

        layer, head = spec.planted.layer, spec.planted.index
        value_row = head * cfg.d_head
        wv = np.array(tensors[f"layers.{layer}.Wv"])
        wv[value_row] = c['value_gain'] * e_trig
        tensors[f"layers.{layer}.Wv"] = wv
        wo = np.array(tensors[f"layers.{layer}.Wo"])
        wo[:, value_row] += c['write_gain'] * spec.behavior
        tensors[f"layers.{layer}.Wo"] = wo

        rounded = {name: np.asarray(t).astype(np.float32).astype(np.float64) for name, t in tensors.items()}
        logger.info("planted behavior in layer %d head %d (trigger token %d)", layer, head, spec.trigger_token)
        return ModelWeights.from_tensors(cfg, rounded)

    @classmethod
    def make_prompts(cls, spec: SyntheticBenchSpec, seed: int = 0) -> Tuple[List[List[int]], List[List[int]]]:
        """
        Draw trigger prompts (exactly one trigger token) and neutral prompts (none).

        Filler tokens never include pad, end or the trigger.

        Returns:
            Tuple of (trigger prompts, neutral prompts)
        """
        rng = np.random.default_rng([seed, 3])
        vocab = spec.model_config.vocab_size
        fillers = np.array([t for t in range(vocab) if t not in (PAD_ID, END_ID, spec.trigger_token)])

        def draw() -> List[int]:
            return [int(t) for t in rng.choice(fillers, size=spec.prompt_len)]

        trigger = []
        for _ in range(spec.n_trigger):
            prompt = draw()
            prompt[int(rng.integers(0, spec.prompt_len))] = spec.trigger_token
            trigger.append(prompt)
        neutral = [draw() for _ in range(spec.n_neutral)]
        return trigger, neutral

    @classmethod
    def make_dataset(cls, w: ModelWeights, spec: SyntheticBenchSpec,
                     trigger: List[List[int]], neutral: List[List[int]]) -> ProbeDataset:
        """Greedy responses of the model: trigger prompts are positive, neutral prompts negative."""
        def respond(prompt: List[int]) -> Tuple[List[int], List[int]]:
            tokens = ModelService.generate(w, prompt, spec.response_len, end_token=None)
            return prompt, [int(t) for t in tokens[len(prompt):]]

        return ProbeDataset.from_pairs([respond(p) for p in trigger], [respond(p) for p in neutral])
