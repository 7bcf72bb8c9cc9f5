"""
Metric Service - attribute / utility metrics and the degenerate-output veto

An intervention is either a steering hook set on the base weights or a set of
edited weights; every metric sees both through the same ``Intervention``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from vecedit.config import Config
from vecedit.exceptions import ConfigError, DatasetError
from vecedit.services.linalg_service import LinalgService, Vector
from vecedit.services.model_service import BlockHook, ModelService
from vecedit.services.model_types import ModelWeights
from vecedit.services.tokenizer_service import END_ID, RESERVED

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Intervention:
    """Weights to run plus block hooks applied on every forward pass."""
    weights: ModelWeights
    hooks: Tuple[BlockHook, ...] = ()


@dataclass(frozen=True)
class VetoResult:
    """Which degenerate-output criteria veto an intervention."""
    vetoed: bool
    reasons: Tuple[str, ...] = ()


@dataclass
class EvaluationContext:
    """
    Shared, read-only inputs for scoring interventions.

    Base-model quantities (top-1 predictions, veto prompts and the base
    model's own veto flags) are computed once up front so that concurrent
    evaluations only read from the context.
    """
    base: ModelWeights
    behavior: Vector
    attribute_prompts: List[List[int]]
    utility_prompts: List[List[int]]
    veto: Dict = field(default_factory=lambda: dict(Config.VETO))
    seed: int = 0
    attribute_metric: str = 'behavior_projection'
    utility_metric: str = 'top1_agreement'
    base_predictions: List[np.ndarray] = field(default_factory=list)
    veto_prompts: List[List[int]] = field(default_factory=list)
    base_flags: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.attribute_prompts or not self.utility_prompts:
            raise DatasetError("attribute and utility prompt sets must be non-empty")
        for metric_id in (self.attribute_metric, self.utility_metric):
            if metric_id not in METRICS:
                raise ConfigError(f"unknown metric {metric_id!r}; known: {sorted(METRICS)}")
        unknown = set(self.veto) - set(Config.VETO)
        if unknown:
            raise ConfigError(f"unknown veto keys: {sorted(unknown)}")
        self.veto = dict(Config.VETO, **self.veto)
        self.behavior = LinalgService.unit(LinalgService.as_vector(self.behavior, 'behavior direction'))
        self.base_predictions = [np.argmax(ModelService.forward(self.base, p)[0], axis=-1)
                                 for p in self.utility_prompts]
        rng = np.random.default_rng(self.seed)
        vocab = self.base.config.vocab_size
        self.veto_prompts = [rng.integers(RESERVED, vocab, size=self.veto['prompt_len']).tolist()
                             for _ in range(self.veto['n_prompts'])]
        if self.veto['relative_to_base']:
            self.base_flags = MetricService.degenerate_flags(self, Intervention(self.base))


# ================== Metrics ==================

def behavior_projection(ctx: EvaluationContext, intervention: Intervention) -> float:
    """Mean projection of the last layer's output residual (last position) onto the behavior direction."""
    values = []
    for prompt in ctx.attribute_prompts:
        _, resid = ModelService.final_hidden(intervention.weights, prompt, intervention.hooks)
        values.append(float(resid[-1] @ ctx.behavior))
    return float(np.mean(values))


def top1_agreement(ctx: EvaluationContext, intervention: Intervention) -> float:
    """Fraction of positions whose greedy next token matches the base model, averaged over prompts."""
    values = []
    for prompt, expected in zip(ctx.utility_prompts, ctx.base_predictions):
        logits, _ = ModelService.forward(intervention.weights, prompt, hooks=intervention.hooks)
        values.append(float(np.mean(np.argmax(logits, axis=-1) == expected)))
    return float(np.mean(values))


METRICS: Dict[str, Callable[[EvaluationContext, Intervention], float]] = {
    'behavior_projection': behavior_projection,
    'top1_agreement': top1_agreement,
}


class MetricService:
    """Service for scoring interventions."""

    @classmethod
    def metric(cls, metric_id: str) -> Callable[[EvaluationContext, Intervention], float]:
        try:
            return METRICS[metric_id]
        except KeyError:
            raise ConfigError(f"unknown metric {metric_id!r}; known: {sorted(METRICS)}")

    @classmethod
    def evaluate(cls, ctx: EvaluationContext, intervention: Intervention) -> Tuple[float, float]:
        """
        Score one intervention.

        Args:
            ctx: Evaluation context
            intervention: Weights and hooks to score

        Returns:
            Tuple of (attribute, utility)
        """
        attribute = cls.metric(ctx.attribute_metric)(ctx, intervention)
        utility = cls.metric(ctx.utility_metric)(ctx, intervention)
        return attribute, utility

    # ================== Sanity veto ==================

    @classmethod
    def longest_ngram_run(cls, tokens: Sequence[int], n: int) -> int:
        """Largest number of back-to-back repeats of any n-gram in tokens."""
        tokens = list(tokens)
        best = 0
        for start in range(len(tokens) - n + 1):
            gram = tokens[start:start + n]
            count = 1
            pos = start + n
            while tokens[pos:pos + n] == gram:
                count += 1
                pos += n
            best = max(best, count)
        return best

    @classmethod
    def mean_entropy(cls, step_logits: Sequence[np.ndarray]) -> float:
        """Mean softmax entropy in nats over decoding steps."""
        entropies = []
        for logits in step_logits:
            shifted = np.asarray(logits, dtype=np.float64) - np.max(logits)
            log_p = shifted - np.log(np.sum(np.exp(shifted)))
            entropies.append(float(-np.sum(np.exp(log_p) * log_p)))
        return float(np.mean(entropies)) if entropies else 0.0

    @classmethod
    def degenerate_flags(cls, ctx: EvaluationContext, intervention: Intervention) -> Dict[str, bool]:
        """
        Evaluate each degenerate-output criterion over the veto prompts.

        Args:
            ctx: Evaluation context (veto thresholds and prompts)
            intervention: Weights and hooks to decode with

        Returns:
            Mapping criterion -> triggered
        """
        veto = ctx.veto
        repetitive = False
        empty = False
        all_logits: List[np.ndarray] = []
        for prompt in ctx.veto_prompts:
            tokens, step_logits = ModelService.generate(
                intervention.weights, prompt, veto['max_new'], hooks=intervention.hooks,
                end_token=END_ID, return_logits=True
            )
            continuation = [int(t) for t in tokens[len(prompt):] if t != END_ID]
            empty = empty or not continuation
            if cls.longest_ngram_run(continuation, veto['ngram']) >= veto['max_repeats']:
                repetitive = True
            all_logits.extend(step_logits)
        return {
            'repetition': repetitive,
            'low_entropy': cls.mean_entropy(all_logits) < veto['min_entropy'],
            'empty_generation': empty,
        }

    @classmethod
    def sanity_veto(cls, ctx: EvaluationContext, intervention: Intervention) -> VetoResult:
        """
        Flag interventions that produce degenerate output.

        With ``relative_to_base`` a criterion only vetoes when the base model
        does not already trigger it on the same prompts.

        Args:
            ctx: Evaluation context
            intervention: Weights and hooks to check

        Returns:
            VetoResult
        """
        flags = cls.degenerate_flags(ctx, intervention)
        reasons = tuple(name for name, hit in flags.items()
                        if hit and not ctx.base_flags.get(name, False))
        if reasons:
            logger.debug("veto: %s", ', '.join(reasons))
        return VetoResult(vetoed=bool(reasons), reasons=reasons)
