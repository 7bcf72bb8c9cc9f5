"""
Pipelines - config-driven extract / edit / steer / search / sweep / bench / report / verify

Every pipeline is a keyword-only function shared by the CLI and the tests.
Artifacts are written with canonical JSON and 17-digit CSV floats and carry
no timestamps, so identical configs give byte-identical output directories.
"""

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from vecedit.config import Config
from vecedit.exceptions import ConfigError, DatasetError, ParameterError
from vecedit.services.batch_service import BatchService
from vecedit.services.bench_service import BenchService, SyntheticBenchSpec
from vecedit.services.editor_service import (
    EditHyperparams, EditorService, Variant, decode_rho, encode_rho
)
from vecedit.services.linalg_service import LinalgService
from vecedit.services.metric_service import EvaluationContext, Intervention, MetricService
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import BLOCKS, ActivationTrace, ModelWeights
from vecedit.services.oracle_service import OracleService
from vecedit.services.steering_service import (
    ProbeDataset, SteeringHook, SteeringService, SteeringVectorSet
)
from vecedit.services.tokenizer_service import END_ID, ByteTokenizer
from vecedit.services.weights_service import WeightsService, dumps_canonical, format_float

logger = logging.getLogger(__name__)

INF = float('inf')
ORIENTATIONS = {'promote': 1.0, 'suppress': -1.0}
BLOCK_SETS = {'attn': ('attn',), 'mlp': ('mlp',), 'both': BLOCKS}
HYPER_AXES = ('rho_attn', 'rho_mlp', 'alpha')
TRADEOFF_HEADER = ['method', 'params', 'attribute', 'utility']

Progress = Optional[Callable[[float, str], None]]


# ================== Configuration ==================

def _decode_grid(name: str, values) -> List[float]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"grid '{name}' must be a non-empty list")
    decoded = [decode_rho(v) if name.startswith('rho') else float(v) for v in values]
    return sorted(set(decoded))


@dataclass
class PipelineConfig:
    """
    Settings shared by every pipeline.

    With no ``model`` file the pipelines run on the planted-behavior toy model
    built from ``bench`` (overrides of Config.BENCH) and ``seed``.
    """
    model: Optional[str] = None
    dataset: Optional[str] = None
    test_dataset: Optional[str] = None
    vectors: Optional[str] = None
    behavior: Optional[List[float]] = None
    variant: str = 'steer2edit'
    orientation: str = 'suppress'
    rho_attn: float = 1.0
    rho_mlp: float = INF
    alpha: float = 0.5
    grid: Dict[str, List] = field(default_factory=lambda: {k: list(v) for k, v in Config.COARSE_GRID.items()})
    refine: Optional[Dict[str, Optional[List[float]]]] = None
    refine_points: int = Config.REFINE_POINTS
    gamma_grid: List[float] = field(default_factory=lambda: list(Config.GAMMA_GRID))
    gamma: float = 1.0
    blocks: str = 'both'
    metrics: Dict[str, str] = field(default_factory=lambda: {
        'attribute': 'behavior_projection', 'utility': 'top1_agreement'})
    veto: Dict[str, Any] = field(default_factory=dict)
    top_k: int = Config.TOP_K
    max_new: int = 16
    bench: Dict[str, Any] = field(default_factory=dict)
    out: str = Config.OUTPUT_FOLDER
    seed: int = Config.SEED
    threads: int = Config.THREADS

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {sorted(ORIENTATIONS)}")
        if self.blocks not in BLOCK_SETS:
            raise ConfigError(f"blocks must be one of {sorted(BLOCK_SETS)}")
        Variant.parse(self.variant)
        self.rho_attn = decode_rho(self.rho_attn)
        self.rho_mlp = decode_rho(self.rho_mlp)
        missing = set(HYPER_AXES) - set(self.grid)
        if missing or set(self.grid) - set(HYPER_AXES):
            raise ConfigError(f"grid must define exactly {list(HYPER_AXES)}")
        self.grid = {name: _decode_grid(name, self.grid[name]) for name in HYPER_AXES}
        if not self.gamma_grid:
            raise ConfigError("gamma_grid must be non-empty")
        if self.refine is not None:
            unknown = set(self.refine) - set(HYPER_AXES)
            if unknown:
                raise ConfigError(f"unknown refine axes: {sorted(unknown)}")
        if set(self.metrics) != {'attribute', 'utility'}:
            raise ConfigError("metrics must name exactly 'attribute' and 'utility'")
        if self.threads < 1 or self.top_k < 1:
            raise ConfigError("threads and top_k must be >= 1")
        if self.refine_points < 2:
            raise ConfigError("refine_points must be >= 2")

    @property
    def orientation_sign(self) -> float:
        return ORIENTATIONS[self.orientation]

    @property
    def hyper(self) -> EditHyperparams:
        return EditHyperparams(self.rho_attn, self.rho_mlp, self.alpha)

    @classmethod
    def from_dict(cls, data: Dict) -> 'PipelineConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Optional[str] = None, **overrides) -> 'PipelineConfig':
        """
        Load a JSON config file, then apply non-None overrides (CLI flags win).

        Args:
            path: JSON config file, or None for defaults
            **overrides: Field values taking precedence over the file

        Returns:
            PipelineConfig
        """
        data = {}
        if path:
            path = Path(path)
            if not path.exists():
                raise FileNotFoundError(f"Config file not found: {path}")
            try:
                data = json.loads(path.read_text(encoding='utf-8'))
            except json.JSONDecodeError as e:
                raise ConfigError(f"unreadable config {path}: {e}")
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def header(self) -> Dict:
        """Settings recorded in reports (run-environment fields excluded)."""
        data = asdict(self)
        for key in ('out', 'threads'):
            data.pop(key)
        data['rho_attn'] = encode_rho(self.rho_attn)
        data['rho_mlp'] = encode_rho(self.rho_mlp)
        data['grid'] = {k: [encode_rho(v) for v in vals] for k, vals in self.grid.items()}
        data['bench'] = {k: encode_rho(v) if isinstance(v, float) else v
                         for k, v in dict(Config.BENCH, **self.bench).items()}
        return data


# ================== Trade-off points ==================

@dataclass(frozen=True)
class TradeoffPoint:
    """One evaluated intervention: steering(gamma, blocks) or edit(rho_attn, rho_mlp, alpha, variant)."""
    method: str
    params: Tuple[Tuple[str, Any], ...]
    attribute: float
    utility: float

    def __post_init__(self):
        if self.method not in ('steering', 'edit'):
            raise ParameterError(f"unknown method {self.method!r}")
        if not (math.isfinite(self.attribute) and math.isfinite(self.utility)):
            raise ParameterError("trade-off metrics must be finite")

    @classmethod
    def steering(cls, gamma: float, blocks: str, attribute: float, utility: float) -> 'TradeoffPoint':
        return cls('steering', (('gamma', float(gamma)), ('blocks', blocks)), attribute, utility)

    @classmethod
    def edit(cls, hyper: EditHyperparams, variant: Variant, attribute: float, utility: float) -> 'TradeoffPoint':
        params = (('rho_attn', hyper.rho_attn), ('rho_mlp', hyper.rho_mlp),
                  ('alpha', hyper.alpha), ('variant', str(variant)))
        return cls('edit', params, attribute, utility)

    @property
    def params_text(self) -> str:
        return ';'.join(f"{k}={format_float(v) if isinstance(v, float) else v}" for k, v in self.params)

    def sort_key(self) -> Tuple:
        return (self.method, tuple(v for _, v in self.params))

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'params': {k: encode_rho(v) if isinstance(v, float) else v for k, v in self.params},
            'attribute': self.attribute,
            'utility': self.utility,
        }


def emit_tradeoff_csv(points: Sequence[TradeoffPoint], path: Union[str, Path]) -> Path:
    """
    Write trade-off points as CSV sorted by (method, params).

    Args:
        points: Non-empty list of points
        path: Destination file

    Returns:
        Path written
    """
    if not points:
        raise ParameterError("no trade-off points to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRADEOFF_HEADER)
        for point in sorted(points, key=TradeoffPoint.sort_key):
            writer.writerow([point.method, point.params_text,
                             format_float(point.attribute), format_float(point.utility)])
    return path


def read_tradeoff_csv(path: Union[str, Path]) -> List[Dict]:
    """Rows of a trade-off CSV with attribute / utility parsed back to float."""
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != TRADEOFF_HEADER:
            raise DatasetError(f"{path} is not a trade-off CSV")
        return [{'method': m, 'params': p, 'attribute': float(a), 'utility': float(u)}
                for m, p, a, u in reader]


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(data) + '\n', encoding='utf-8')
    return path


# ================== Shared setup ==================

@dataclass
class Workspace:
    """Model, probe data and metric prompts for one pipeline run."""
    weights: ModelWeights
    dataset: ProbeDataset
    attribute_prompts: List[List[int]]
    utility_prompts: List[List[int]]
    test_prompts: Optional[Tuple[List[List[int]], List[List[int]]]] = None
    spec: Optional[SyntheticBenchSpec] = None


@dataclass
class Steering:
    """Raw (positive minus negative) vectors, oriented vectors and the pooled probe trace."""
    raw: SteeringVectorSet
    oriented: SteeringVectorSet
    trace: ActivationTrace
    behavior: np.ndarray


def prepare_workspace(cfg: PipelineConfig) -> Workspace:
    """Load the model and dataset named by cfg, or build the planted-behavior bench."""
    spec = None
    if cfg.model:
        weights = WeightsService.load_weights(cfg.model)
        if not cfg.dataset:
            raise ConfigError("a dataset is required when a model file is given")
        dataset = SteeringService.load_dataset(cfg.dataset, ByteTokenizer(weights.config.vocab_size))
    else:
        spec = SyntheticBenchSpec.from_config(cfg.bench, cfg.seed)
        weights = BenchService.build_planted_model(spec, cfg.seed)
        if cfg.dataset:
            dataset = SteeringService.load_dataset(cfg.dataset, ByteTokenizer(weights.config.vocab_size))
        else:
            trigger, neutral = BenchService.make_prompts(spec, cfg.seed)
            dataset = BenchService.make_dataset(weights, spec, trigger, neutral)

    test_prompts = None
    if cfg.test_dataset:
        test = SteeringService.load_dataset(cfg.test_dataset, ByteTokenizer(weights.config.vocab_size))
        test_prompts = ([p for p, _ in test.positive], [p for p, _ in test.negative])
    return Workspace(
        weights=weights,
        dataset=dataset,
        attribute_prompts=[p for p, _ in dataset.positive],
        utility_prompts=[p for p, _ in dataset.negative],
        test_prompts=test_prompts,
        spec=spec,
    )


def prepare_steering(cfg: PipelineConfig, ws: Workspace) -> Steering:
    """
    Trace the probe set, extract (or load) vectors and fix the behavior direction.

    The behavior direction is cfg.behavior, else the bench's planted direction,
    else the normalised sum of all raw block vectors.
    """
    pos, neg = SteeringService.collect_traces(ws.weights, ws.dataset, cfg.threads)
    if cfg.vectors:
        raw = SteeringService.load_vectors(cfg.vectors)
    else:
        raw = SteeringService.vectors_from_traces(pos, neg, ws.weights.config.n_layers)
    if cfg.behavior is not None:
        behavior = LinalgService.as_vector(cfg.behavior, 'behavior direction')
    elif ws.spec is not None:
        behavior = ws.spec.behavior
    else:
        behavior = raw.total_shift()
    if not np.any(behavior):
        raise DatasetError("behavior direction is zero")
    oriented = raw.negated() if cfg.orientation == 'suppress' else raw
    return Steering(raw=raw, oriented=oriented, trace=pos.merged(neg),
                    behavior=LinalgService.unit(behavior))


def make_context(cfg: PipelineConfig, ws: Workspace, steering: Steering,
                 prompts: Optional[Tuple[List[List[int]], List[List[int]]]] = None) -> EvaluationContext:
    attribute_prompts, utility_prompts = prompts or (ws.attribute_prompts, ws.utility_prompts)
    return EvaluationContext(
        base=ws.weights,
        behavior=steering.behavior,
        attribute_prompts=attribute_prompts,
        utility_prompts=utility_prompts,
        veto=dict(Config.BENCH_VETO, **cfg.veto) if ws.spec is not None else dict(cfg.veto),
        seed=cfg.seed,
        attribute_metric=cfg.metrics['attribute'],
        utility_metric=cfg.metrics['utility'],
    )


def _evaluate_edit(ws: Workspace, steering: Steering, ctx: EvaluationContext,
                   hyper: EditHyperparams, variant: Variant, veto: bool) -> Dict:
    plan = EditorService.build_edit_plan(ws.weights, steering.oriented, steering.trace, hyper, variant)
    intervention = Intervention(EditorService.apply_edit_plan(ws.weights, plan))
    attribute, utility = MetricService.evaluate(ctx, intervention)
    record = {
        'point': TradeoffPoint.edit(hyper, variant, attribute, utility),
        'nonzero': {'attn': plan.nonzero_count('attn'), 'mlp': plan.nonzero_count('mlp')},
        'vetoed': False,
        'veto_reasons': [],
    }
    if veto:
        result = MetricService.sanity_veto(ctx, intervention)
        record['vetoed'] = result.vetoed
        record['veto_reasons'] = list(result.reasons)
    return record


def _evaluate_steering(ws: Workspace, steering: Steering, ctx: EvaluationContext,
                       gamma: float, blocks: str) -> TradeoffPoint:
    hook = SteeringHook(gamma, steering.oriented, frozenset(BLOCK_SETS[blocks]))
    attribute, utility = MetricService.evaluate(ctx, Intervention(ws.weights, (hook,)))
    return TradeoffPoint.steering(gamma, blocks, attribute, utility)


def _record_dict(record: Dict) -> Dict:
    return dict(record['point'].to_dict(), nonzero=record['nonzero'],
                vetoed=record['vetoed'], veto_reasons=record['veto_reasons'])


# ================== Extract / edit / steer ==================

def run_extract_pipeline(*, cfg: PipelineConfig) -> Dict:
    """Extract steering vectors; write vectors, per-block norm summary and the probe trace."""
    ws = prepare_workspace(cfg)
    pos, neg = SteeringService.collect_traces(ws.weights, ws.dataset, cfg.threads)
    vecs = SteeringService.vectors_from_traces(pos, neg, ws.weights.config.n_layers)

    out = Path(cfg.out)
    vectors_path = SteeringService.save_vectors(vecs, out / 'vectors.json')
    trace_path = WeightsService.save_trace(pos.merged(neg), out / 'trace.json')
    summary = {
        'n_layers': vecs.n_layers,
        'd_model': vecs.d_model,
        'n_positive': len(pos),
        'n_negative': len(neg),
        'norms': vecs.norms(),
    }
    _write_json(out / 'summary.json', summary)
    logger.info("wrote steering vectors to %s", vectors_path)
    return dict(summary, vectors=str(vectors_path), trace=str(trace_path))


def run_edit_pipeline(*, cfg: PipelineConfig, hyper: Optional[EditHyperparams] = None,
                      variant: Optional[str] = None) -> Dict:
    """
    Build and apply one edit plan.

    Writes base.s2e1, edited.s2e1, plan.json (+ .bin), heatmap.csv and
    edit_distribution.json.
    """
    ws = prepare_workspace(cfg)
    steering = prepare_steering(cfg, ws)
    hyper = hyper or cfg.hyper
    variant = Variant.parse(variant or cfg.variant)
    plan = EditorService.build_edit_plan(ws.weights, steering.oriented, steering.trace, hyper,
                                         variant, threads=cfg.threads,
                                         svd_iters=Config.SVD_ITERS, svd_tol=Config.SVD_TOL)
    edited = EditorService.apply_edit_plan(ws.weights, plan)

    out = Path(cfg.out)
    cfg_model = ws.weights.config
    WeightsService.save_weights(ws.weights, out / 'base.s2e1')
    WeightsService.save_weights(edited, out / 'edited.s2e1')
    EditorService.save_plan(plan, out / 'plan.json')
    EditorService.write_heatmap_csv(plan, cfg_model, out / 'heatmap.csv')
    _write_json(out / 'edit_distribution.json', EditorService.edit_distribution(plan, cfg_model))
    return {
        'hyper': hyper.to_dict(),
        'variant': str(variant),
        'nonzero': {'attn': plan.nonzero_count('attn'), 'mlp': plan.nonzero_count('mlp')},
        'edited': str(out / 'edited.s2e1'),
    }


def run_steer_pipeline(*, cfg: PipelineConfig, gamma: Optional[float] = None,
                       blocks: Optional[str] = None) -> Dict:
    """Greedy generations under activation steering, plus attribute / utility of the hook."""
    ws = prepare_workspace(cfg)
    steering = prepare_steering(cfg, ws)
    gamma = cfg.gamma if gamma is None else gamma
    blocks = blocks or cfg.blocks
    if blocks not in BLOCK_SETS:
        raise ConfigError(f"blocks must be one of {sorted(BLOCK_SETS)}")
    hook = SteeringHook(gamma, steering.oriented, frozenset(BLOCK_SETS[blocks]))

    prompts = ws.attribute_prompts + ws.utility_prompts
    generations = BatchService(cfg.threads).map(
        lambda p: ModelService.generate(ws.weights, p, cfg.max_new, hooks=(hook,), end_token=END_ID),
        prompts, label='generation'
    )
    ctx = make_context(cfg, ws, steering)
    point = _evaluate_steering(ws, steering, ctx, gamma, blocks)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [dumps_canonical({'prompt': p, 'continuation': [int(t) for t in g[len(p):]]})
             for p, g in zip(prompts, generations)]
    (out / 'generations.jsonl').write_text('\n'.join(lines) + '\n', encoding='utf-8')
    summary = point.to_dict()
    _write_json(out / 'steer_summary.json', summary)
    return summary


# ================== Search ==================

def _axis_step(values: List[float], center: float) -> float:
    finite = [v for v in values if not math.isinf(v)]
    if math.isinf(center) or len(finite) < 2 or center not in finite:
        return 0.0
    i = finite.index(center)
    gaps = [finite[j + 1] - finite[j] for j in (i - 1, i) if 0 <= j < len(finite) - 1]
    return min(gaps)


def _admissible(axis: str, value: float) -> bool:
    if axis == 'alpha':
        return 0.0 <= value < 1.0
    return value > 0.0


def _explicit_axis(axis: str, rule) -> List[float]:
    if rule is None:
        if axis == 'alpha':
            raise ConfigError("alpha cannot be disabled in a refined grid")
        return [INF]
    if not isinstance(rule, (list, tuple)) or len(rule) != 3:
        raise ConfigError(f"refined grid for {axis} must be [lo, hi, step] or null")
    lo, hi, step = (float(x) for x in rule)
    if step <= 0.0 or hi < lo:
        raise ConfigError(f"refined grid for {axis} needs step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def refine_grid(cfg: PipelineConfig, centers: Sequence[EditHyperparams]) -> List[EditHyperparams]:
    """
    Stage-2 points around the given stage-1 survivors.

    Each axis is re-gridded over +/- one coarse step with cfg.refine_points
    uniform points, unless cfg.refine gives an explicit [lo, hi, step] grid
    (or null, meaning rho = inf) for that axis. Values are rounded to 12
    decimals, clipped to the admissible range and de-duplicated.

    Args:
        cfg: Pipeline config (coarse grid and refinement rules)
        centers: Survivors to refine around

    Returns:
        Sorted list of distinct hyperparameters
    """
    explicit = {axis: _explicit_axis(axis, rule) for axis, rule in (cfg.refine or {}).items()}
    points = set()
    for center in centers:
        axes = []
        for axis in HYPER_AXES:
            value = getattr(center, axis)
            if axis in explicit:
                axes.append(explicit[axis])
                continue
            step = _axis_step(cfg.grid[axis], value)
            if step == 0.0:
                axes.append([value])
                continue
            grid = np.linspace(value - step, value + step, cfg.refine_points)
            axes.append([round(float(v), 12) for v in grid if _admissible(axis, round(float(v), 12))])
        points.update(itertools.product(*axes))
    return [EditHyperparams(*p) for p in sorted(points)]


def _rank_key(cfg: PipelineConfig, record: Dict) -> Tuple:
    point = record['point']
    return (-cfg.orientation_sign * point.attribute, -point.utility,
            tuple(v for _, v in point.params))


def run_search_pipeline(*, cfg: PipelineConfig, progress_callback: Progress = None) -> Dict:
    """
    Two-stage grid search over edit hyperparameters with a sanity veto.

    Stage 1 evaluates the coarse grid; stage 2 refines around every
    survivor of the veto. Points are ranked by oriented attribute,
    then utility, then hyperparameters.

    Returns:
        The report written to search_report.json
    """
    ws = prepare_workspace(cfg)
    steering = prepare_steering(cfg, ws)
    ctx = make_context(cfg, ws, steering)
    variant = Variant.parse(cfg.variant)
    batch = BatchService(cfg.threads)

    def evaluate(hyper: EditHyperparams) -> Dict:
        return _evaluate_edit(ws, steering, ctx, hyper, variant, veto=True)

    coarse = [EditHyperparams(*p) for p in itertools.product(*(cfg.grid[a] for a in HYPER_AXES))]
    stage1 = batch.map(evaluate, coarse, progress_callback, label='stage 1')
    survivors = sorted((r for r in stage1 if not r['vetoed']), key=lambda r: _rank_key(cfg, r))

    seen = set(coarse)
    refined = [h for h in refine_grid(cfg, [_hyper_of(r) for r in survivors])
               if h not in seen]
    stage2 = batch.map(evaluate, refined, progress_callback, label='stage 2')

    viable = sorted((r for r in stage1 + stage2 if not r['vetoed']), key=lambda r: _rank_key(cfg, r))
    top = viable[:cfg.top_k]
    report = {
        'status': 'ok' if viable else 'no_viable_configuration',
        'config': cfg.header(),
        'stage1': [_record_dict(r) for r in stage1],
        'stage2': [_record_dict(r) for r in stage2],
        'ranking': [_record_dict(r) for r in top],
    }
    if ws.test_prompts is not None and top:
        test_ctx = make_context(cfg, ws, steering, ws.test_prompts)
        report['test'] = [_record_dict(_evaluate_edit(ws, steering, test_ctx, _hyper_of(r), variant,
                                                      veto=False)) for r in top]

    out = Path(cfg.out)
    _write_json(out / 'search_report.json', report)
    emit_tradeoff_csv([r['point'] for r in stage1 + stage2], out / 'search_tradeoff.csv')
    if not viable:
        logger.warning("search: every configuration was vetoed")
    return report


def _hyper_of(record: Dict) -> EditHyperparams:
    params = dict(record['point'].params)
    return EditHyperparams(params['rho_attn'], params['rho_mlp'], params['alpha'])


# ================== Sweep ==================

def run_budget_sweep_pipeline(*, cfg: PipelineConfig, varied: str,
                              progress_callback: Progress = None) -> List[TradeoffPoint]:
    """
    Vary one class's budget over its grid with the other class disabled (rho = inf).

    Writes sweep_<varied>.json and sweep_<varied>.csv.
    """
    if varied not in BLOCKS:
        raise ConfigError(f"varied class must be one of {BLOCKS}")
    ws = prepare_workspace(cfg)
    steering = prepare_steering(cfg, ws)
    ctx = make_context(cfg, ws, steering)
    variant = Variant.parse(cfg.variant)

    grid = cfg.grid[f"rho_{varied}"]
    hypers = [EditHyperparams(rho if varied == 'attn' else INF, rho if varied == 'mlp' else INF, cfg.alpha)
              for rho in grid]
    records = BatchService(cfg.threads).map(
        lambda h: _evaluate_edit(ws, steering, ctx, h, variant, veto=False),
        hypers, progress_callback, label=f"sweep {varied}"
    )
    out = Path(cfg.out)
    _write_json(out / f"sweep_{varied}.json",
                {'config': cfg.header(), 'varied': varied, 'points': [_record_dict(r) for r in records]})
    points = [r['point'] for r in records]
    emit_tradeoff_csv(points, out / f"sweep_{varied}.csv")
    return points


# ================== Synthetic bench ==================

def run_synthetic_bench_pipeline(*, cfg: PipelineConfig, progress_callback: Progress = None) -> Dict:
    """
    Planted-behavior benchmark for suppression.

    Reports the alignment of the extracted planted-layer attention vector
    with the planted direction, the planted head's rank by |g| and |lambda|,
    the headline edit's attribute / utility against the base model, and
    steering vs. edit trade-off points.

    Returns:
        The report written to bench_report.json
    """
    spec = SyntheticBenchSpec.from_config(cfg.bench, cfg.seed)
    constants = dict(Config.BENCH, **cfg.bench)
    w = BenchService.build_planted_model(spec, cfg.seed)
    trigger, neutral = BenchService.make_prompts(spec, cfg.seed)
    data = BenchService.make_dataset(w, spec, trigger, neutral)

    pos, neg = SteeringService.collect_traces(w, data, cfg.threads)
    raw = SteeringService.vectors_from_traces(pos, neg, w.config.n_layers)
    steering = Steering(raw=raw, oriented=raw.negated(), trace=pos.merged(neg), behavior=spec.behavior)
    ws = Workspace(weights=w, dataset=data, attribute_prompts=trigger, utility_prompts=neutral, spec=spec)
    planted = spec.planted
    alignment = LinalgService.cosine(raw.get(planted.layer, 'attn'), spec.behavior)

    hyper = EditHyperparams(decode_rho(constants['edit_rho_attn']), decode_rho(constants['edit_rho_mlp']),
                            constants['edit_alpha'])
    plan = EditorService.build_edit_plan(w, steering.oriented, steering.trace, hyper, 'steer2edit',
                                         threads=cfg.threads)
    heads = list(EditorService.iter_components(w.config, 'attn'))
    by_g = sorted(heads, key=lambda c: (-abs(plan.scores[c]), c))
    by_lam = sorted(EditorService.iter_components(w.config), key=lambda c: (-abs(plan.lam(c)), c))

    ctx = make_context(cfg, ws, steering)
    base_attr, base_util = MetricService.evaluate(ctx, Intervention(w))
    edit_attr, edit_util = MetricService.evaluate(ctx, Intervention(EditorService.apply_edit_plan(w, plan)))

    batch = BatchService(cfg.threads)
    steer_points = batch.map(lambda g: _evaluate_steering(ws, steering, ctx, g, cfg.blocks),
                             cfg.gamma_grid, progress_callback, label='steering')
    edit_hypers = [EditHyperparams(rho, hyper.rho_mlp, hyper.alpha) for rho in cfg.grid['rho_attn']]
    edit_records = batch.map(lambda h: _evaluate_edit(ws, steering, ctx, h, Variant(), veto=False),
                             edit_hypers, progress_callback, label='edit')
    points = list(steer_points) + [r['point'] for r in edit_records]

    report = {
        'config': cfg.header(),
        'planted': planted.to_dict(),
        'alignment_cosine': alignment,
        'planted_abs_g': abs(plan.scores[planted]),
        'planted_g_rank': by_g.index(planted) + 1,
        'planted_lambda_rank': by_lam.index(planted) + 1,
        'planted_lambda': plan.lam(planted),
        'nonzero': {'attn': plan.nonzero_count('attn'), 'mlp': plan.nonzero_count('mlp')},
        'base': {'attribute': base_attr, 'utility': base_util},
        'edited': {'attribute': edit_attr, 'utility': edit_util},
        'tradeoff': [p.to_dict() for p in sorted(points, key=TradeoffPoint.sort_key)],
    }
    out = Path(cfg.out)
    _write_json(out / 'bench_report.json', report)
    emit_tradeoff_csv(points, out / 'bench_tradeoff.csv')
    EditorService.save_plan(plan, out / 'plan.json')
    EditorService.write_heatmap_csv(plan, w.config, out / 'heatmap.csv')
    _write_json(out / 'edit_distribution.json', EditorService.edit_distribution(plan, w.config))
    logger.info("bench: alignment %.4f, planted |g| rank %d, attribute %.4f -> %.4f, utility %.4f",
                alignment, report['planted_g_rank'], base_attr, edit_attr, edit_util)
    return report


# ================== Report / verify ==================

def run_report_pipeline(*, out_dir: Union[str, Path], orientation: str = 'suppress') -> Dict:
    """
    Combine every trade-off CSV in out_dir into one scored report.

    Attributes are min-max normalised across all points (oriented so that 1
    is best) and multiplied by utility; the best point per method is listed.

    Returns:
        The report written to report.json
    """
    if orientation not in ORIENTATIONS:
        raise ConfigError(f"orientation must be one of {sorted(ORIENTATIONS)}")
    out_dir = Path(out_dir)
    rows = []
    for path in sorted(out_dir.glob('*.csv')):
        try:
            for row in read_tradeoff_csv(path):
                rows.append(dict(row, source=path.name))
        except DatasetError:
            continue
    if not rows:
        raise DatasetError(f"no trade-off CSV files in {out_dir}")

    attrs = np.array([r['attribute'] for r in rows])
    spread = float(attrs.max() - attrs.min())
    for row in rows:
        if spread == 0.0:
            normalised = 1.0
        elif orientation == 'promote':
            normalised = (row['attribute'] - attrs.min()) / spread
        else:
            normalised = (attrs.max() - row['attribute']) / spread
        row['score'] = float(normalised * row['utility'])

    best = {}
    for row in rows:
        current = best.get(row['method'])
        if current is None or (-row['score'], row['source'], row['params']) < \
                (-current['score'], current['source'], current['params']):
            best[row['method']] = row
    report = {'orientation': orientation, 'points': rows, 'best': best}
    _write_json(out_dir / 'report.json', report)
    return report


def run_verify_pipeline(*, cfg: PipelineConfig, quick: bool = False) -> List[Dict]:
    """Run the oracle suite and write one JSON line per report to oracles.jsonl."""
    reports = [r.to_dict() for r in OracleService.run_suite(seed=Config.ORACLE_SEED, quick=quick)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / 'oracles.jsonl').write_text(''.join(dumps_canonical(r) + '\n' for r in reports), encoding='utf-8')
    return reports
