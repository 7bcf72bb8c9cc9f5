"""
Editor Service - closed-form rank-1 component edits derived from steering vectors

Each editable component W_i (a head's Wo slab or a W_down column) receives

    dW_i = lambda_i * v_hat k_hat^T
    v_hat  = v / ||v||
    k_hat  = W_i^T v / ||W_i^T v||
    g_i    = cos(v, W_i mu_i)
    lambda = sign(g) * max(|g| - rho*alpha, 0) / (rho * (1 - alpha))

where v is the steering vector of the component's block and mu_i its mean
input. Ablation variants swap exactly one ingredient: k (k_mean, k_svd),
g (g_dot) or the magnitude rule (l0 top-K, l2 dense).
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from vecedit.exceptions import (
    ConvergenceError, DegenerateSteeringVectorError, InsensitiveComponentError, ParameterError,
    ShapeError
)
from vecedit.services.batch_service import BatchService
from vecedit.services.linalg_service import LinalgService, Matrix, Vector
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import (
    BLOCKS, ActivationTrace, ComponentId, ModelConfig, ModelWeights
)
from vecedit.services.steering_service import SteeringVectorSet
from vecedit.services.weights_service import WeightsService, format_float

logger = logging.getLogger(__name__)

INF = float('inf')
VARIANT_KINDS = ('steer2edit', 'k_mean', 'k_svd', 'g_dot', 'l0', 'l2')
VARIANT_ALIASES = {'closed_form': 'steer2edit', 'l2_dense': 'l2'}


def encode_rho(rho: float) -> Union[float, str]:
    return 'inf' if math.isinf(rho) else rho


def decode_rho(value) -> float:
    return INF if value in ('inf', 'Infinity', None) else float(value)


@dataclass(frozen=True)
class EditHyperparams:
    """Elastic-Net budgets per component class and the shared sparsity mix."""
    rho_attn: float
    rho_mlp: float
    alpha: float

    def __post_init__(self):
        for name in ('rho_attn', 'rho_mlp'):
            rho = getattr(self, name)
            if not (rho > 0.0):
                raise ParameterError(f"{name} must be > 0 (or inf), got {rho}")
        if not (0.0 <= self.alpha < 1.0):
            raise ParameterError(f"alpha must lie in [0, 1), got {self.alpha}")

    def rho(self, block: str) -> float:
        return self.rho_attn if block == 'attn' else self.rho_mlp

    def budgeted(self, block: str) -> bool:
        return not math.isinf(self.rho(block))

    def to_dict(self) -> Dict:
        return {'rho_attn': encode_rho(self.rho_attn), 'rho_mlp': encode_rho(self.rho_mlp),
                'alpha': self.alpha}

    @classmethod
    def from_dict(cls, data: Dict) -> 'EditHyperparams':
        return cls(rho_attn=decode_rho(data['rho_attn']), rho_mlp=decode_rho(data['rho_mlp']),
                   alpha=float(data['alpha']))


@dataclass(frozen=True)
class Variant:
    """
    Which edit rule to use.

    ``top_k`` is only meaningful for l0; None means K is taken per class from
    the nonzero count of the steer2edit plan with the same hyperparameters.
    """
    kind: str = 'steer2edit'
    top_k: Optional[int] = None

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ParameterError(f"unknown variant {self.kind!r}")
        if self.kind == 'l0' and self.top_k is not None and self.top_k < 0:
            raise ParameterError("l0 variant needs a non-negative K")

    @classmethod
    def parse(cls, text: Union[str, 'Variant']) -> 'Variant':
        """Accepts steer2edit, k_mean, k_svd, g_dot, l0, l0:<K>, l0:auto, l2 and their long aliases."""
        if isinstance(text, Variant):
            return text
        text = text.strip()
        if text in ('l0', 'l0_topk', 'l0:auto', 'l0_topk:auto'):
            return cls('l0')
        if text.startswith(('l0:', 'l0_topk:')):
            _, k = text.split(':', 1)
            try:
                return cls('l0', int(k))
            except ValueError:
                raise ParameterError(f"invalid K in variant {text!r}")
        return cls(VARIANT_ALIASES.get(text, text))

    def __str__(self) -> str:
        if self.kind == 'l0':
            return 'l0' if self.top_k is None else f"l0:{self.top_k}"
        return self.kind


@dataclass
class ComponentStats:
    """Per-component quantities feeding the edit rule."""
    id: ComponentId
    mu: Vector
    v: Vector
    Wv: Vector
    g: float
    s_samples: np.ndarray


@dataclass(frozen=True)
class EditEntry:
    """One rank-1 edit lam * u_hat k_hat^T."""
    g: float
    lam: float
    u_hat: Vector
    k_hat: Vector

    def delta(self) -> Matrix:
        return LinalgService.outer(self.u_hat, self.k_hat, self.lam)


@dataclass
class EditPlan:
    """
    Edits for every component with nonzero magnitude.

    ``scores`` keeps g for every editable component (zero-magnitude ones
    included) and ``diagnostics`` records why a component was skipped.
    """
    hyper: EditHyperparams
    variant: Variant
    entries: Dict[ComponentId, EditEntry] = field(default_factory=dict)
    scores: Dict[ComponentId, float] = field(default_factory=dict)
    diagnostics: Dict[ComponentId, str] = field(default_factory=dict)

    def nonzero_count(self, block: Optional[str] = None) -> int:
        return sum(1 for cid in self.entries if block is None or cid.block == block)

    def lam(self, component: ComponentId) -> float:
        entry = self.entries.get(component)
        return entry.lam if entry is not None else 0.0

    def negated(self) -> 'EditPlan':
        entries = {cid: EditEntry(e.g, -e.lam, e.u_hat, e.k_hat) for cid, e in self.entries.items()}
        return EditPlan(self.hyper, self.variant, entries, dict(self.scores), dict(self.diagnostics))

    def restricted(self, component: ComponentId) -> 'EditPlan':
        entries = {component: self.entries[component]} if component in self.entries else {}
        return EditPlan(self.hyper, self.variant, entries,
                        {component: self.scores.get(component, 0.0)}, {})


class EditorService:
    """Service for building and applying component-level rank-1 edits."""

    # ================== Closed-form pieces ==================

    @classmethod
    def iter_components(cls, config: ModelConfig, block: Optional[str] = None) -> Iterator[ComponentId]:
        """Every editable component in (layer, block, index) order."""
        for layer in range(config.n_layers):
            for b in BLOCKS:
                if block is not None and b != block:
                    continue
                count = config.n_heads if b == 'attn' else config.d_ff
                for index in range(count):
                    yield ComponentId(layer, b, index)

    @classmethod
    def component_mean_input(cls, trace: ActivationTrace, component: ComponentId) -> Vector:
        """
        Mean component input over all masked positions of all sequences.

        Args:
            trace: Activation trace with response masks
            component: Component address

        Returns:
            mu_i, length d_head for a head and 1 for a neuron
        """
        return trace.masked_component_inputs(component).mean(axis=0)

    @classmethod
    def output_direction(cls, v: Vector) -> Vector:
        """Unit steering direction v / ||v||."""
        v = LinalgService.as_vector(v, 'steering vector')
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DegenerateSteeringVectorError()
        return v / norm

    @classmethod
    def input_direction(cls, W: Matrix, v: Vector) -> Vector:
        """
        Unit input trigger direction along W^T v.

        Args:
            W: Component weight (d_model, d_in)
            v: Steering vector (d_model)

        Returns:
            Unit vector of length d_in
        """
        W = LinalgService.as_matrix(W, 'component weight')
        v = LinalgService.as_vector(v, 'steering vector')
        if W.shape[0] != v.shape[0]:
            raise ShapeError(f"input_direction shape mismatch: W {W.shape} vs v {v.shape}")
        wv = W.T @ v
        norm = np.linalg.norm(wv)
        if norm == 0.0:
            raise InsensitiveComponentError()
        return wv / norm

    @classmethod
    def importance_score(cls, W: Matrix, mu: Vector, v: Vector) -> float:
        """cos(v, W mu), zero when either side vanishes."""
        return LinalgService.cosine(v, LinalgService.matvec(W, mu))

    @classmethod
    def edit_magnitude(cls, g: float, rho: float, alpha: float) -> float:
        """
        Soft-threshold maximizer of g*lam - rho*(alpha*|lam| + (1-alpha)/2*lam^2).

        Args:
            g: Importance score
            rho: Budget (> 0, inf disables the edit)
            alpha: Sparsity mix in [0, 1)

        Returns:
            lambda*
        """
        if not (0.0 <= alpha < 1.0):
            raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
        if not (rho > 0.0):
            raise ParameterError(f"rho must be > 0, got {rho}")
        if math.isinf(rho):
            return 0.0
        shrunk = max(abs(g) - rho * alpha, 0.0)
        return float(np.sign(g)) * shrunk / (rho * (1.0 - alpha))

    @classmethod
    def top_right_singular_vector(cls, W: Matrix, iters: int = 10_000, tol: float = 1e-10) -> Vector:
        """
        Power iteration on W^T W from a fixed start.

        The start is the normalized all-ones vector, falling back to the first
        standard basis vector not annihilated by W.

        Args:
            W: Nonzero matrix
            iters: Iteration cap
            tol: Relative eigen-residual tolerance

        Returns:
            Unit right singular vector for the largest singular value
        """
        W = LinalgService.as_matrix(W, 'matrix')
        if not np.any(W):
            raise ParameterError("top_right_singular_vector needs a nonzero matrix")
        gram = W.T @ W
        n = gram.shape[0]
        starts = [np.ones(n) / np.sqrt(n)] + [np.eye(n)[j] for j in range(n)]
        x = next(s for s in starts if np.any(gram @ s))

        residual = INF
        for _ in range(iters):
            y = gram @ x
            x_new = y / np.linalg.norm(y)
            gx = gram @ x_new
            lam = float(x_new @ gx)
            residual = float(np.linalg.norm(gx - lam * x_new)) / lam
            x = x_new
            if residual <= tol:
                return x
        raise ConvergenceError(iters, residual)

    # ================== Plans ==================

    @classmethod
    def component_stats(cls, w: ModelWeights, vecs: SteeringVectorSet,
                        trace: ActivationTrace, component: ComponentId) -> ComponentStats:
        """
        Gather mu, v, W^T v, g and the per-sample alignment scores s(h) = v^T W h.

        Args:
            w: Model weights
            vecs: Steering vectors
            trace: Probe activations
            component: Component address

        Returns:
            ComponentStats
        """
        W = ModelService.component_weight(w, component)
        v = vecs.get(component.layer, component.block)
        inputs = trace.masked_component_inputs(component)
        mu = inputs.mean(axis=0)
        wv = W.T @ v
        return ComponentStats(id=component, mu=mu, v=v, Wv=wv,
                              g=cls.importance_score(W, mu, v), s_samples=inputs @ wv)

    @classmethod
    def _score(cls, w: ModelWeights, vecs: SteeringVectorSet, trace: ActivationTrace,
               component: ComponentId, variant: Variant, budgeted: bool,
               svd_iters: int, svd_tol: float) -> Tuple[float, Optional[Vector], Optional[str]]:
        """Return (g, k_hat or None, skip reason) for one component."""
        stats = cls.component_stats(w, vecs, trace, component)
        W = ModelService.component_weight(w, component)
        wmu = W @ stats.mu
        if variant.kind == 'g_dot':
            g = float(LinalgService.unit(stats.v) @ wmu)
        else:
            g = stats.g
        if not budgeted:
            return g, None, 'class disabled'
        if not np.any(wmu):
            return g, None, 'W mu = 0'

        if variant.kind == 'k_mean':
            norm = np.linalg.norm(stats.mu)
            if norm == 0.0:
                return g, None, 'zero mean input'
            return g, stats.mu / norm, None
        if variant.kind == 'k_svd':
            return g, cls.top_right_singular_vector(W, svd_iters, svd_tol), None
        try:
            return g, cls.input_direction(W, stats.v), None
        except InsensitiveComponentError:
            return g, None, 'W^T v = 0'

    @classmethod
    def build_edit_plan(cls, w: ModelWeights, vecs: SteeringVectorSet, trace: ActivationTrace,
                        hyper: EditHyperparams, variant: Union[str, Variant] = 'steer2edit',
                        threads: int = 1, svd_iters: int = 10_000,
                        svd_tol: float = 1e-10) -> EditPlan:
        """
        Compute (g, lambda, v_hat, k_hat) for every editable component.

        Args:
            w: Model weights
            vecs: Steering vectors from the same model config
            trace: Probe activations covering every component
            hyper: Budgets and sparsity
            variant: Edit rule
            threads: Worker threads for per-component scoring
            svd_iters: Power-iteration cap (k_svd)
            svd_tol: Power-iteration tolerance (k_svd)

        Returns:
            EditPlan
        """
        variant = Variant.parse(variant)
        cfg = w.config
        if vecs.n_layers != cfg.n_layers or vecs.d_model != cfg.d_model:
            raise ShapeError("steering vectors do not match the model config")
        for layer, block in vecs.keys():
            if hyper.budgeted(block) and not np.any(vecs.get(layer, block)):
                raise DegenerateSteeringVectorError(
                    f"degenerate steering vector at layer {layer} {block} with a finite budget"
                )

        components = list(cls.iter_components(cfg))
        scored = BatchService(max_workers=threads).map(
            lambda cid: cls._score(w, vecs, trace, cid, variant, hyper.budgeted(cid.block),
                                   svd_iters, svd_tol),
            components, label='component'
        )

        plan = EditPlan(hyper=hyper, variant=variant)
        candidates: Dict[str, List[Tuple[ComponentId, float, Vector]]] = {b: [] for b in BLOCKS}
        for cid, (g, k_hat, reason) in zip(components, scored):
            plan.scores[cid] = g
            if reason is not None:
                if reason != 'class disabled':
                    plan.diagnostics[cid] = reason
                continue
            candidates[cid.block].append((cid, g, k_hat))

        for block in BLOCKS:
            rho = hyper.rho(block)
            chosen = candidates[block]
            if variant.kind == 'l0':
                ranked = sorted((c for c in chosen if c[1] != 0.0), key=lambda c: (-abs(c[1]), c[0]))
                k = variant.top_k
                if k is None:
                    k = sum(1 for _, g, _ in chosen if cls.edit_magnitude(g, rho, hyper.alpha) != 0.0)
                chosen = ranked[:k]
            for cid, g, k_hat in chosen:
                if variant.kind == 'l0':
                    lam = g / (rho * (1.0 - hyper.alpha))
                elif variant.kind == 'l2':
                    lam = cls.edit_magnitude(g, rho, 0.0)
                else:
                    lam = cls.edit_magnitude(g, rho, hyper.alpha)
                if lam == 0.0:
                    continue
                u_hat = cls.output_direction(vecs.get(cid.layer, cid.block))
                plan.entries[cid] = EditEntry(g=g, lam=lam, u_hat=u_hat, k_hat=k_hat)

        logger.info("built %s plan: %d attn / %d mlp nonzero edits",
                    variant, plan.nonzero_count('attn'), plan.nonzero_count('mlp'))
        return plan

    @classmethod
    def apply_edit_plan(cls, w: ModelWeights, plan: EditPlan) -> ModelWeights:
        """
        Add lam * u_hat k_hat^T to each planned component.

        Args:
            w: Model weights
            plan: Edit plan built for w's config

        Returns:
            New ModelWeights; untouched tensors are shared unchanged
        """
        if not plan.entries:
            return w
        return ModelService.apply_component_updates(
            w, {cid: entry.delta() for cid, entry in plan.entries.items()}, additive=True
        )

    @classmethod
    def negate_plan(cls, plan: EditPlan) -> EditPlan:
        """Same directions with lambda -> -lambda."""
        return plan.negated()

    # ================== Reporting ==================

    @classmethod
    def heatmap_rows(cls, plan: EditPlan, config: ModelConfig) -> List[Tuple[int, str, int, float, float]]:
        """(layer, block, index, g, lambda) for every editable component, sorted."""
        return [(cid.layer, cid.block, cid.index, float(plan.scores.get(cid, 0.0)), plan.lam(cid))
                for cid in cls.iter_components(config)]

    @classmethod
    def write_heatmap_csv(cls, plan: EditPlan, config: ModelConfig, path: Union[str, Path]) -> Path:
        """Heatmap rows as CSV, floats printed with 17 significant digits."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['layer', 'block', 'index', 'g', 'lambda'])
            for layer, block, index, g, lam in cls.heatmap_rows(plan, config):
                writer.writerow([layer, block, index, format_float(g), format_float(lam)])
        return path

    @classmethod
    def edit_distribution(cls, plan: EditPlan, config: ModelConfig) -> List[Dict]:
        """Per layer and block: positive / negative / zero edit counts and total |lambda|."""
        summary = []
        for layer in range(config.n_layers):
            for block in BLOCKS:
                lams = [plan.lam(c) for c in cls.iter_components(config, block) if c.layer == layer]
                summary.append({
                    'layer': layer,
                    'block': block,
                    'positive': sum(1 for x in lams if x > 0),
                    'negative': sum(1 for x in lams if x < 0),
                    'zero': sum(1 for x in lams if x == 0),
                    'abs_lambda_sum': float(np.sum(np.abs(lams))),
                })
        return summary

    @classmethod
    def save_plan(cls, plan: EditPlan, path: Union[str, Path]) -> Path:
        """Write a plan as JSON (hyper, variant, entries) plus float32 u_hat/k_hat blocks."""
        entries = []
        blocks = []
        for cid in sorted(plan.entries):
            entry = plan.entries[cid]
            entries.append(dict(cid.to_dict(), g=entry.g, **{'lambda': entry.lam}))
            blocks.append((dict(cid.to_dict(), vector='u_hat'), entry.u_hat))
            blocks.append((dict(cid.to_dict(), vector='k_hat'), entry.k_hat))
        meta = {
            'kind': 'edit_plan',
            'hyper': plan.hyper.to_dict(),
            'variant': str(plan.variant),
            'entries': entries,
            'scores': [dict(cid.to_dict(), g=g) for cid, g in sorted(plan.scores.items())],
            'diagnostics': [dict(cid.to_dict(), reason=r) for cid, r in sorted(plan.diagnostics.items())],
        }
        return WeightsService.write_blocks(path, meta, blocks)

    @classmethod
    def load_plan(cls, path: Union[str, Path]) -> EditPlan:
        """Read a plan written by save_plan; directions come back float32-rounded."""
        meta, blocks = WeightsService.read_blocks(path)
        vectors = {}
        for entry, array in blocks:
            cid = ComponentId(entry['layer'], entry['block'], entry['index'])
            vectors[(cid, entry['vector'])] = array
        plan = EditPlan(hyper=EditHyperparams.from_dict(meta['hyper']),
                        variant=Variant.parse(meta['variant']))
        for item in meta['entries']:
            cid = ComponentId(item['layer'], item['block'], item['index'])
            plan.entries[cid] = EditEntry(g=item['g'], lam=item['lambda'],
                                          u_hat=vectors[(cid, 'u_hat')], k_hat=vectors[(cid, 'k_hat')])
        for item in meta['scores']:
            plan.scores[ComponentId(item['layer'], item['block'], item['index'])] = item['g']
        for item in meta['diagnostics']:
            plan.diagnostics[ComponentId(item['layer'], item['block'], item['index'])] = item['reason']
        return plan
