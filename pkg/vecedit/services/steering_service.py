"""
Steering Service - mean-difference steering vectors and the activation-steering baseline

A steering vector for layer l and block b is the difference between the
positive and negative class means of that block's output, where each
response is first averaged over its own response tokens and the class mean
is then a uniform mean over responses.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from vecedit.exceptions import DatasetError, ParameterError, ShapeError
from vecedit.services.batch_service import BatchService
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import (
    BLOCKS, ActivationTrace, CaptureSpec, ModelWeights, SequenceTrace
)
from vecedit.services.tokenizer_service import ByteTokenizer
from vecedit.services.weights_service import WeightsService

logger = logging.getLogger(__name__)

Pair = Tuple[List[int], List[int]]
VectorKey = Tuple[int, str]


@dataclass(frozen=True)
class ProbeDataset:
    """Labeled (prompt, response) pairs."""
    positive: Tuple[Pair, ...]
    negative: Tuple[Pair, ...]

    def __post_init__(self):
        for label, pairs in (('positive', self.positive), ('negative', self.negative)):
            if not pairs:
                raise DatasetError(f"{label} set is empty")
            for prompt, response in pairs:
                if len(prompt) == 0:
                    raise DatasetError(f"{label} set has an empty prompt")
                if len(response) == 0:
                    raise DatasetError(f"{label} set has a zero-length response")

    @classmethod
    def from_pairs(cls, positive: Iterable[Pair], negative: Iterable[Pair]) -> 'ProbeDataset':
        norm = lambda pairs: tuple((list(map(int, p)), list(map(int, r))) for p, r in pairs)
        return cls(positive=norm(positive), negative=norm(negative))

    def swapped(self) -> 'ProbeDataset':
        return ProbeDataset(positive=self.negative, negative=self.positive)


@dataclass(frozen=True)
class SteeringVectorSet:
    """One vector of width d_model per (layer, block)."""
    vectors: Dict[VectorKey, np.ndarray]
    n_layers: int
    d_model: int

    def __post_init__(self):
        for layer in range(self.n_layers):
            for block in BLOCKS:
                vec = self.vectors.get((layer, block))
                if vec is None:
                    raise ShapeError(f"missing steering vector for layer {layer} block {block}")
                if vec.shape != (self.d_model,) or not np.all(np.isfinite(vec)):
                    raise ShapeError(f"steering vector ({layer}, {block}) must be finite with length {self.d_model}")

    def get(self, layer: int, block: str) -> np.ndarray:
        return self.vectors[(layer, block)]

    def keys(self) -> List[VectorKey]:
        return [(layer, block) for layer in range(self.n_layers) for block in BLOCKS]

    def norms(self) -> Dict[str, float]:
        return {f"{layer}.{block}": float(np.linalg.norm(self.get(layer, block)))
                for layer, block in self.keys()}

    def scaled(self, factor: float) -> 'SteeringVectorSet':
        return SteeringVectorSet({k: factor * v for k, v in self.vectors.items()},
                                 self.n_layers, self.d_model)

    def negated(self) -> 'SteeringVectorSet':
        return SteeringVectorSet({k: -v for k, v in self.vectors.items()},
                                 self.n_layers, self.d_model)

    def total_shift(self) -> np.ndarray:
        """Sum of every block vector: the mean pos-neg shift of the final residual."""
        return np.sum([self.get(layer, block) for layer, block in self.keys()], axis=0)


@dataclass
class SteeringHook:
    """
    Inference-time steering: delta <- delta + gamma * v[layer, block] for targeted blocks.

    ``positions`` optionally restricts the injection to a boolean mask over
    sequence positions; positions beyond the mask length are steered.
    """
    gamma: float
    vectors: SteeringVectorSet
    blocks: FrozenSet[str] = field(default_factory=lambda: frozenset(BLOCKS))
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.gamma >= 0.0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        self.blocks = frozenset(self.blocks)
        unknown = self.blocks - set(BLOCKS)
        if unknown:
            raise ParameterError(f"unknown steering blocks: {sorted(unknown)}")

    def __call__(self, layer: int, block: str, delta: np.ndarray) -> np.ndarray:
        if self.gamma == 0.0 or block not in self.blocks:
            return delta
        shift = self.gamma * self.vectors.get(layer, block)
        if self.positions is None:
            return delta + shift
        mask = np.ones(delta.shape[0], dtype=bool)
        n = min(len(self.positions), delta.shape[0])
        mask[:n] = np.asarray(self.positions[:n], dtype=bool)
        return delta + np.where(mask[:, None], shift[None, :], 0.0)


class SteeringService:
    """Service for steering-vector extraction and activation steering."""

    CAPTURE = CaptureSpec(layers=None, blocks=True, residual=False, components=True)

    # ================== Datasets ==================

    @classmethod
    def load_dataset(cls, path: Union[str, Path],
                     tokenizer: Optional[ByteTokenizer] = None) -> ProbeDataset:
        """
        Read a JSON-lines probe dataset.

        Each line is {"label": "pos"|"neg", "prompt": ..., "response": ...} where
        prompt and response are token id lists, or strings when a tokenizer is given.

        Args:
            path: Dataset file
            tokenizer: Encodes string fields

        Returns:
            ProbeDataset
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Dataset file not found: {path}")
        positive, negative = [], []
        for line_no, line in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                label = record['label']
                pair = (cls._ids(record['prompt'], tokenizer), cls._ids(record['response'], tokenizer))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetError(f"{path}:{line_no}: malformed record ({e})")
            if label == 'pos':
                positive.append(pair)
            elif label == 'neg':
                negative.append(pair)
            else:
                raise DatasetError(f"{path}:{line_no}: label must be 'pos' or 'neg', got {label!r}")
        return ProbeDataset.from_pairs(positive, negative)

    @classmethod
    def _ids(cls, field_value, tokenizer: Optional[ByteTokenizer]) -> List[int]:
        if isinstance(field_value, str):
            if tokenizer is None:
                raise TypeError("text field needs a tokenizer")
            return tokenizer.encode(field_value)
        return [int(t) for t in field_value]

    @classmethod
    def save_dataset(cls, data: ProbeDataset, path: Union[str, Path]) -> Path:
        """Write a dataset as JSON lines, positives first."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for label, pairs in (('pos', data.positive), ('neg', data.negative)):
            for prompt, response in pairs:
                lines.append(json.dumps({'label': label, 'prompt': prompt, 'response': response},
                                        sort_keys=True))
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        return path

    # ================== Extraction ==================

    @classmethod
    def trace_pair(cls, w: ModelWeights, pair: Pair) -> SequenceTrace:
        """Forward one (prompt, response) pair, marking response positions."""
        prompt, response = pair
        tokens = list(prompt) + list(response)
        mask = np.zeros(len(tokens), dtype=bool)
        mask[len(prompt):] = True
        _, trace = ModelService.forward(w, tokens, capture=cls.CAPTURE, response_mask=mask)
        return trace

    @classmethod
    def collect_traces(cls, w: ModelWeights, data: ProbeDataset,
                       threads: int = 1) -> Tuple[ActivationTrace, ActivationTrace]:
        """
        Capture block outputs and component inputs for every probe pair.

        Args:
            w: Model weights
            data: Probe dataset
            threads: Worker threads

        Returns:
            Tuple of (positive trace, negative trace)
        """
        batch = BatchService(max_workers=threads)
        pos = batch.map(lambda pair: cls.trace_pair(w, pair), data.positive, label='positive')
        neg = batch.map(lambda pair: cls.trace_pair(w, pair), data.negative, label='negative')
        return ActivationTrace(pos), ActivationTrace(neg)

    @classmethod
    def _class_mean(cls, trace: ActivationTrace, layer: int, block: str) -> np.ndarray:
        if len(trace) == 0:
            raise DatasetError("cannot average an empty class")
        per_response = []
        for seq in trace.sequences:
            rows = seq.block_output(layer, block)[seq.response_mask]
            if rows.shape[0] == 0:
                raise DatasetError("zero-length response in trace")
            per_response.append(rows.mean(axis=0))
        return np.mean(np.stack(per_response), axis=0)

    @classmethod
    def vectors_from_traces(cls, pos: ActivationTrace, neg: ActivationTrace,
                            n_layers: int) -> SteeringVectorSet:
        """
        Token-mean per response, uniform mean per class, then positive minus negative.

        Args:
            pos: Traces of positive responses
            neg: Traces of negative responses
            n_layers: Number of layers to read

        Returns:
            SteeringVectorSet
        """
        if len(pos) == 0 or len(neg) == 0:
            raise DatasetError("both positive and negative classes need at least one response")
        vectors = {}
        d_model = None
        for layer in range(n_layers):
            for block in BLOCKS:
                vec = cls._class_mean(pos, layer, block) - cls._class_mean(neg, layer, block)
                vectors[(layer, block)] = vec
                d_model = vec.shape[0]
        return SteeringVectorSet(vectors=vectors, n_layers=n_layers, d_model=d_model)

    @classmethod
    def extract_steering_vectors(cls, w: ModelWeights, data: ProbeDataset,
                                 threads: int = 1) -> SteeringVectorSet:
        """
        Mean-difference steering vectors for every layer and block.

        Args:
            w: Model weights
            data: Probe dataset
            threads: Worker threads

        Returns:
            SteeringVectorSet
        """
        pos, neg = cls.collect_traces(w, data, threads)
        vecs = cls.vectors_from_traces(pos, neg, w.config.n_layers)
        logger.info("extracted steering vectors for %d layers from %d/%d responses",
                    w.config.n_layers, len(pos), len(neg))
        return vecs

    # ================== Steering ==================

    @classmethod
    def steered_forward(cls, w: ModelWeights, tokens, hook: Union[SteeringHook, Sequence[SteeringHook]],
                        capture: Optional[CaptureSpec] = None):
        """
        Forward pass with steering hooks applied after each targeted block.

        Args:
            w: Model weights
            tokens: Token ids
            hook: One hook, or several applied in order
            capture: Optional capture spec

        Returns:
            Logits, or (logits, trace) when capture is given
        """
        hooks = [hook] if isinstance(hook, SteeringHook) else list(hook)
        logits, trace = ModelService.forward(w, tokens, capture=capture, hooks=hooks)
        return logits if capture is None else (logits, trace)

    # ================== Files ==================

    @classmethod
    def save_vectors(cls, vecs: SteeringVectorSet, path: Union[str, Path]) -> Path:
        """Write vectors as a JSON index {layer, block, offset, len} plus float32 payload."""
        blocks = [({'layer': layer, 'block': block}, vecs.get(layer, block))
                  for layer, block in vecs.keys()]
        meta = {'kind': 'steering_vectors', 'n_layers': vecs.n_layers, 'd_model': vecs.d_model}
        return WeightsService.write_blocks(path, meta, blocks)

    @classmethod
    def load_vectors(cls, path: Union[str, Path]) -> SteeringVectorSet:
        """Read vectors written by save_vectors (float32-rounded)."""
        meta, blocks = WeightsService.read_blocks(path)
        vectors = {(entry['layer'], entry['block']): array for entry, array in blocks}
        return SteeringVectorSet(vectors=vectors, n_layers=meta['n_layers'], d_model=meta['d_model'])
