"""
Model Service - pre-norm transformer forward pass, per-component decomposition and greedy decoding
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from vecedit.exceptions import ShapeError, TokenError
from vecedit.services.linalg_service import LinalgService, Matrix
from vecedit.services.model_types import (
    CaptureSpec, ComponentId, ModelConfig, ModelWeights, SequenceTrace
)
from vecedit.services.tokenizer_service import END_ID

logger = logging.getLogger(__name__)

# hook(layer, block, delta) -> delta, applied to a block output before the residual write
BlockHook = Callable[[int, str, np.ndarray], np.ndarray]

ROPE_BASE = 10000.0


class ModelService:
    """Service for running and slicing toy transformer models."""

    # ================== Construction ==================

    @classmethod
    def init_weights(cls, config: ModelConfig, seed: int = 0, scale: float = 0.02) -> ModelWeights:
        """
        Draw seeded Gaussian weights; norm gains start at one.

        Values are rounded to float32 so that a save/load cycle reproduces the
        in-memory model exactly.

        Args:
            config: Model configuration
            seed: RNG seed
            scale: Standard deviation of every matrix entry

        Returns:
            ModelWeights
        """
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in config.tensor_shapes():
            if name.endswith('norm_gain'):
                tensors[name] = np.ones(shape)
            else:
                tensors[name] = rng.normal(0.0, scale, size=shape).astype(np.float32).astype(np.float64)
        return ModelWeights.from_tensors(config, tensors)

    # ================== Forward ==================

    @classmethod
    def check_tokens(cls, config: ModelConfig, tokens) -> np.ndarray:
        """Validate a token sequence against vocab size and context length."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise TokenError("token sequence must be a non-empty 1-D list")
        if tokens.size > config.max_seq_len:
            raise TokenError(f"sequence length {tokens.size} exceeds max_seq_len {config.max_seq_len}")
        bad = tokens[(tokens < 0) | (tokens >= config.vocab_size)]
        if bad.size:
            raise TokenError(f"token id {int(bad[0])} out of range [0, {config.vocab_size})")
        return tokens

    @classmethod
    def _norm(cls, config: ModelConfig, x: np.ndarray, gain: np.ndarray) -> np.ndarray:
        if config.norm_kind == 'rms':
            return LinalgService.rms_norm(x, gain, config.norm_eps)
        return LinalgService.layer_norm(x, gain, config.norm_eps)

    @classmethod
    def _rotary(cls, x: np.ndarray) -> np.ndarray:
        """Rotate (T, H, d_head) query/key vectors by their position (half-split pairing)."""
        seq_len, _, d_head = x.shape
        half = d_head // 2
        freqs = ROPE_BASE ** (-np.arange(half, dtype=np.float64) * 2.0 / d_head)
        angles = np.arange(seq_len, dtype=np.float64)[:, None] * freqs[None, :]
        cos = np.cos(angles)[:, None, :]
        sin = np.sin(angles)[:, None, :]
        x1, x2 = x[..., :half], x[..., half:]
        return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    @classmethod
    def _activation(cls, config: ModelConfig, layer, m_in: np.ndarray) -> np.ndarray:
        """Post-activation neuron values a_j, shape (T, d_ff)."""
        up = m_in @ layer.W_up.T
        if config.mlp_kind == 'gated_silu':
            gate = m_in @ layer.W_gate.T
            return gate / (1.0 + np.exp(-gate)) * up
        # tanh-approximated GELU; W_gate is carried in the file but unused
        return 0.5 * up * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (up + 0.044715 * up ** 3)))

    @classmethod
    def _apply_hooks(cls, hooks: Sequence[BlockHook], layer: int, block: str,
                     delta: np.ndarray) -> np.ndarray:
        for hook in hooks:
            delta = hook(layer, block, delta)
        return delta

    @classmethod
    def forward(cls, w: ModelWeights, tokens,
                capture: Optional[CaptureSpec] = None,
                hooks: Sequence[BlockHook] = (),
                response_mask=None) -> Tuple[np.ndarray, Optional[SequenceTrace]]:
        """
        Run the model over one sequence.

        Args:
            w: Model weights
            tokens: Token ids, length <= max_seq_len
            capture: What to record; None records nothing
            hooks: Block hooks applied to each block output before the residual write
            response_mask: Optional boolean mask of response positions (contiguous suffix)

        Returns:
            Tuple of (logits of shape (T, vocab_size), trace or None)
        """
        cfg = w.config
        tokens = cls.check_tokens(cfg, tokens)
        seq_len = tokens.size
        n_heads, d_head = cfg.n_heads, cfg.d_head

        trace = None
        if capture is not None:
            mask = np.zeros(seq_len, dtype=bool) if response_mask is None else response_mask
            trace = SequenceTrace(tokens=tokens, response_mask=mask)

        x = w.token_embedding[tokens]
        if trace is not None and capture.residual:
            trace.embed = x.copy()
        causal = np.tril(np.ones((seq_len, seq_len), dtype=bool))

        for index, layer in enumerate(w.layers):
            record = trace is not None and capture.wants(index)

            a_in = cls._norm(cfg, x, layer.attn_norm_gain)
            q = (a_in @ layer.Wq.T).reshape(seq_len, n_heads, d_head)
            k = (a_in @ layer.Wk.T).reshape(seq_len, n_heads, d_head)
            v = (a_in @ layer.Wv.T).reshape(seq_len, n_heads, d_head)
            if cfg.pos_kind == 'rotary':
                q = cls._rotary(q)
                k = cls._rotary(k)
            scores = np.einsum('thd,shd->hts', q, k) / np.sqrt(d_head)
            scores = np.where(causal[None, :, :], scores, -np.inf)
            scores = scores - scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs = probs / probs.sum(axis=-1, keepdims=True)
            z = np.einsum('hts,shd->thd', probs, v)

            delta_attn = z.reshape(seq_len, n_heads * d_head) @ layer.Wo.T
            delta_attn = cls._apply_hooks(hooks, index, 'attn', delta_attn)
            x = x + delta_attn
            if record:
                if capture.components:
                    trace.head_inputs[index] = z
                if capture.blocks:
                    trace.attn_out[index] = delta_attn
                if capture.residual:
                    trace.resid_attn[index] = x.copy()

            m_in = cls._norm(cfg, x, layer.mlp_norm_gain)
            act = cls._activation(cfg, layer, m_in)
            delta_mlp = act @ layer.W_down.T
            delta_mlp = cls._apply_hooks(hooks, index, 'mlp', delta_mlp)
            x = x + delta_mlp
            if record:
                if capture.components:
                    trace.neuron_inputs[index] = act
                if capture.blocks:
                    trace.mlp_out[index] = delta_mlp
                if capture.residual:
                    trace.resid_mlp[index] = x.copy()

        final = cls._norm(cfg, x, w.final_norm_gain)
        logits = final @ w.unembedding.T
        return logits, trace

    @classmethod
    def final_hidden(cls, w: ModelWeights, tokens,
                     hooks: Sequence[BlockHook] = ()) -> Tuple[np.ndarray, np.ndarray]:
        """
        Logits and the last layer's output residual, both per position.

        Returns:
            Tuple of (logits (T, vocab), residual (T, d_model))
        """
        last = w.config.n_layers - 1
        logits, trace = cls.forward(
            w, tokens,
            capture=CaptureSpec(layers=(last,), blocks=False, residual=True, components=False),
            hooks=hooks
        )
        return logits, trace.resid_mlp[last]

    # ================== Components ==================

    @classmethod
    def _slab(cls, config: ModelConfig, component: ComponentId) -> slice:
        if component.block == 'attn':
            start = component.index * config.d_head
            return slice(start, start + config.d_head)
        return slice(component.index, component.index + 1)

    @classmethod
    def _tensor_name(cls, component: ComponentId) -> str:
        return 'Wo' if component.block == 'attn' else 'W_down'

    @classmethod
    def component_weight(cls, w: ModelWeights, component: ComponentId) -> Matrix:
        """
        The residual-writing map of one component.

        Args:
            w: Model weights
            component: Component address

        Returns:
            (d_model, d_head) Wo slab for a head, (d_model, 1) W_down column for a neuron
        """
        component.validate(w.config)
        tensor = getattr(w.layers[component.layer], cls._tensor_name(component))
        return np.array(tensor[:, cls._slab(w.config, component)])

    @classmethod
    def set_component_weight(cls, w: ModelWeights, component: ComponentId, m) -> ModelWeights:
        """
        Return new weights with one component's slab replaced.

        Args:
            w: Model weights
            component: Component address
            m: Replacement matrix with the component's shape

        Returns:
            New ModelWeights; w is not modified
        """
        return cls.apply_component_updates(w, {component: m}, additive=False)

    @classmethod
    def apply_component_updates(cls, w: ModelWeights,
                                updates: Dict[ComponentId, np.ndarray],
                                additive: bool = True) -> ModelWeights:
        """
        Add (or assign) per-component matrices, touching each weight tensor once.

        Args:
            w: Model weights
            updates: Mapping component -> matrix of the component's shape
            additive: Add to the current slab when True, overwrite when False

        Returns:
            New ModelWeights
        """
        cfg = w.config
        grouped: Dict[Tuple[int, str], List[Tuple[ComponentId, np.ndarray]]] = {}
        for component, m in sorted(updates.items()):
            component.validate(cfg)
            m = np.asarray(m, dtype=np.float64)
            expected = (cfg.d_model, cfg.d_head if component.block == 'attn' else 1)
            if m.shape != expected:
                raise ShapeError(f"component {component} expects shape {expected}, got {m.shape}")
            grouped.setdefault((component.layer, cls._tensor_name(component)), []).append((component, m))

        result = w
        for (layer, name), items in grouped.items():
            tensor = np.array(getattr(result.layers[layer], name))
            for component, m in items:
                slab = cls._slab(cfg, component)
                tensor[:, slab] = tensor[:, slab] + m if additive else m
            result = result.with_layer_tensor(layer, name, tensor)
        return result

    @classmethod
    def head_contributions(cls, w: ModelWeights, trace: SequenceTrace, layer: int) -> np.ndarray:
        """Per-head writes Wo_h z_h, shape (n_heads, T, d_model)."""
        cfg = w.config
        z = trace.head_inputs[layer]
        wo = w.layers[layer].Wo
        return np.stack([
            z[:, h, :] @ wo[:, h * cfg.d_head:(h + 1) * cfg.d_head].T for h in range(cfg.n_heads)
        ])

    @classmethod
    def neuron_contributions(cls, w: ModelWeights, trace: SequenceTrace, layer: int) -> np.ndarray:
        """Per-neuron writes a_j w_down_j, shape (d_ff, T, d_model)."""
        act = trace.neuron_inputs[layer]
        w_down = w.layers[layer].W_down
        return act.T[:, :, None] * w_down.T[:, None, :]

    # ================== Decoding ==================

    @classmethod
    def generate(cls, w: ModelWeights, prompt, max_new: int,
                 hooks: Sequence[BlockHook] = (),
                 end_token: Optional[int] = END_ID,
                 return_logits: bool = False) -> Union[np.ndarray, Tuple[np.ndarray, List[np.ndarray]]]:
        """
        Greedy continuation of a prompt.

        Args:
            w: Model weights
            prompt: Non-empty prompt token ids
            max_new: Maximum number of new tokens
            hooks: Block hooks (e.g. a steering hook) applied at every step
            end_token: Decoding stops after emitting this id; None disables stopping
            return_logits: Also return the logits used for each emitted token

        Returns:
            Prompt plus continuation, optionally with the per-step logits
        """
        tokens = list(cls.check_tokens(w.config, prompt))
        if max_new < 0:
            raise ValueError("max_new must be >= 0")
        step_logits: List[np.ndarray] = []
        for _ in range(max_new):
            if len(tokens) >= w.config.max_seq_len:
                break
            logits, _ = cls.forward(w, tokens, hooks=hooks)
            last = logits[-1]
            next_token = int(np.argmax(last))
            tokens.append(next_token)
            step_logits.append(last)
            if end_token is not None and next_token == end_token:
                break
        out = np.asarray(tokens, dtype=np.int64)
        if return_logits:
            return out, step_logits
        return out
