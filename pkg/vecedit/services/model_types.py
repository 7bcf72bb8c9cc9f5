"""
Model Types - configuration, weights, component addresses and activation traces
"""

from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from vecedit.exceptions import ConfigError, ShapeError, TraceCoverageError

BLOCKS = ('attn', 'mlp')
NORM_KINDS = ('rms', 'layernorm')
MLP_KINDS = ('gated_silu', 'gelu')
POS_KINDS = ('rotary', 'none')

# Per-layer tensors in canonical file order.
LAYER_TENSORS = ('attn_norm_gain', 'Wq', 'Wk', 'Wv', 'Wo',
                 'mlp_norm_gain', 'W_gate', 'W_up', 'W_down')


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Dimensional configuration of a pre-norm transformer."""
    d_model: int
    n_layers: int
    n_heads: int
    d_head: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    norm_kind: str = 'rms'
    mlp_kind: str = 'gated_silu'
    pos_kind: str = 'rotary'
    norm_eps: float = 1e-6

    def __post_init__(self):
        for name in ('d_model', 'n_layers', 'n_heads', 'd_head', 'd_ff', 'vocab_size', 'max_seq_len'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"norm_kind must be one of {NORM_KINDS}, got {self.norm_kind!r}")
        if self.mlp_kind not in MLP_KINDS:
            raise ConfigError(f"mlp_kind must be one of {MLP_KINDS}, got {self.mlp_kind!r}")
        if self.pos_kind not in POS_KINDS:
            raise ConfigError(f"pos_kind must be one of {POS_KINDS}, got {self.pos_kind!r}")
        if self.pos_kind == 'rotary' and self.d_head % 2 != 0:
            raise ConfigError("rotary positions need an even d_head")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must leave room for pad, end and at least one byte id")
        if not self.norm_eps >= 0.0:
            raise ConfigError("norm_eps must be >= 0")

    @property
    def attn_width(self) -> int:
        return self.n_heads * self.d_head

    def to_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid model config: {e}")

    def tensor_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Canonical (name, shape) list, in file order."""
        d, a, f = self.d_model, self.attn_width, self.d_ff
        per_layer = {
            'attn_norm_gain': (d,),
            'Wq': (a, d), 'Wk': (a, d), 'Wv': (a, d),
            'Wo': (d, a),
            'mlp_norm_gain': (d,),
            'W_gate': (f, d), 'W_up': (f, d),
            'W_down': (d, f),
        }
        shapes = [('token_embedding', (self.vocab_size, d))]
        for layer in range(self.n_layers):
            shapes.extend((f"layers.{layer}.{name}", per_layer[name]) for name in LAYER_TENSORS)
        shapes.append(('final_norm_gain', (d,)))
        shapes.append(('unembedding', (self.vocab_size, d)))
        return shapes


@dataclass(frozen=True)
class LayerWeights:
    """Tensors of one transformer layer. Linear maps are stored (out, in)."""
    attn_norm_gain: np.ndarray
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    mlp_norm_gain: np.ndarray
    W_gate: np.ndarray
    W_up: np.ndarray
    W_down: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    """All parameters of a model plus its config. Arrays are read-only."""
    config: ModelConfig
    token_embedding: np.ndarray
    layers: Tuple[LayerWeights, ...]
    final_norm_gain: np.ndarray
    unembedding: np.ndarray

    def named_tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Yield (name, tensor) in canonical file order."""
        yield 'token_embedding', self.token_embedding
        for index, layer in enumerate(self.layers):
            for name in LAYER_TENSORS:
                yield f"layers.{index}.{name}", getattr(layer, name)
        yield 'final_norm_gain', self.final_norm_gain
        yield 'unembedding', self.unembedding

    @classmethod
    def from_tensors(cls, config: ModelConfig, tensors: Dict[str, np.ndarray]) -> 'ModelWeights':
        """
        Build validated, read-only weights from a name -> array mapping.

        Args:
            config: Model configuration
            tensors: Mapping with every canonical tensor name

        Returns:
            ModelWeights
        """
        checked = {}
        for name, shape in config.tensor_shapes():
            if name not in tensors:
                raise ShapeError(f"missing tensor '{name}'")
            array = np.asarray(tensors[name], dtype=np.float64)
            if array.shape != shape:
                raise ShapeError(f"tensor '{name}' has shape {array.shape}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise ShapeError(f"tensor '{name}' contains non-finite entries")
            checked[name] = _frozen(array)
        layers = tuple(
            LayerWeights(**{name: checked[f"layers.{i}.{name}"] for name in LAYER_TENSORS})
            for i in range(config.n_layers)
        )
        return cls(config=config,
                   token_embedding=checked['token_embedding'],
                   layers=layers,
                   final_norm_gain=checked['final_norm_gain'],
                   unembedding=checked['unembedding'])

    def with_layer_tensor(self, layer: int, name: str, value: np.ndarray) -> 'ModelWeights':
        """Return a copy with one per-layer tensor replaced."""
        new_layer = replace(self.layers[layer], **{name: _frozen(value)})
        layers = self.layers[:layer] + (new_layer,) + self.layers[layer + 1:]
        return replace(self, layers=layers)

    def equals(self, other: 'ModelWeights') -> bool:
        """Bitwise equality of config and every tensor."""
        if self.config != other.config:
            return False
        return all(np.array_equal(a, b) for (_, a), (_, b)
                   in zip(self.named_tensors(), other.named_tensors()))


@dataclass(frozen=True, order=True)
class ComponentId:
    """Address of an editable component: an attention head's Wo slab or an MLP down-projection column."""
    layer: int
    block: str
    index: int

    def validate(self, config: ModelConfig) -> 'ComponentId':
        if self.block not in BLOCKS:
            raise ShapeError(f"invalid block {self.block!r}")
        if not 0 <= self.layer < config.n_layers:
            raise ShapeError(f"layer {self.layer} out of range [0, {config.n_layers})")
        bound = config.n_heads if self.block == 'attn' else config.d_ff
        if not 0 <= self.index < bound:
            raise ShapeError(f"{self.block} index {self.index} out of range [0, {bound})")
        return self

    def to_dict(self) -> Dict:
        return {'layer': self.layer, 'block': self.block, 'index': self.index}


@dataclass(frozen=True)
class CaptureSpec:
    """What forward should record. ``layers=None`` means every layer."""
    layers: Optional[Tuple[int, ...]] = None
    blocks: bool = True
    residual: bool = True
    components: bool = True

    def wants(self, layer: int) -> bool:
        return self.layers is None or layer in self.layers


CAPTURE_ALL = CaptureSpec()


@dataclass
class SequenceTrace:
    """
    Activations of one sequence.

    ``attn_out`` / ``mlp_out`` hold the block outputs actually written into the
    residual stream (after any steering hook). ``head_inputs[l]`` has shape
    (T, n_heads, d_head); ``neuron_inputs[l]`` has shape (T, d_ff).
    """
    tokens: np.ndarray
    response_mask: np.ndarray
    embed: Optional[np.ndarray] = None
    attn_out: Dict[int, np.ndarray] = field(default_factory=dict)
    mlp_out: Dict[int, np.ndarray] = field(default_factory=dict)
    resid_attn: Dict[int, np.ndarray] = field(default_factory=dict)
    resid_mlp: Dict[int, np.ndarray] = field(default_factory=dict)
    head_inputs: Dict[int, np.ndarray] = field(default_factory=dict)
    neuron_inputs: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.response_mask = np.asarray(self.response_mask, dtype=bool)
        if self.response_mask.shape != self.tokens.shape:
            raise TraceCoverageError("response mask length must equal sequence length")
        idx = np.flatnonzero(self.response_mask)
        if idx.size and (idx[-1] != self.tokens.size - 1 or idx.size != idx[-1] - idx[0] + 1):
            raise TraceCoverageError("response positions must form a contiguous suffix")

    def block_output(self, layer: int, block: str) -> np.ndarray:
        store = self.attn_out if block == 'attn' else self.mlp_out
        if layer not in store:
            raise TraceCoverageError(f"trace has no {block} output for layer {layer}")
        return store[layer]

    def component_inputs(self, component: ComponentId) -> np.ndarray:
        """Per-position inputs h_i, shape (T, d_in)."""
        if component.block == 'attn':
            if component.layer not in self.head_inputs:
                raise TraceCoverageError(f"trace has no head inputs for layer {component.layer}")
            return self.head_inputs[component.layer][:, component.index, :]
        if component.layer not in self.neuron_inputs:
            raise TraceCoverageError(f"trace has no neuron inputs for layer {component.layer}")
        return self.neuron_inputs[component.layer][:, component.index:component.index + 1]


@dataclass
class ActivationTrace:
    """Traces of a batch of sequences."""
    sequences: List[SequenceTrace] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)

    def merged(self, other: 'ActivationTrace') -> 'ActivationTrace':
        return ActivationTrace(sequences=list(self.sequences) + list(other.sequences))

    def masked_component_inputs(self, component: ComponentId) -> np.ndarray:
        """Stack h_i over every masked position of every sequence, shape (N, d_in)."""
        rows = [seq.component_inputs(component)[seq.response_mask] for seq in self.sequences]
        rows = [r for r in rows if r.shape[0] > 0]
        if not rows:
            raise TraceCoverageError(f"no masked positions for component {component}")
        return np.concatenate(rows, axis=0)
