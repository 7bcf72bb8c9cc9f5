"""
Oracle Service - brute-force checks of the edit rule's guarantees

Each oracle recomputes the quantity under test the slow, direct way, with its
own random stream, and reports the worst deviation it found.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from vecedit.config import Config
from vecedit.exceptions import DegenerateSampleError, ParameterError
from vecedit.services.editor_service import EditHyperparams, EditorService, EditPlan
from vecedit.services.linalg_service import LinalgService, Matrix, Vector
from vecedit.services.model_service import ModelService
from vecedit.services.model_types import BLOCKS, CAPTURE_ALL, ModelConfig, ModelWeights
from vecedit.services.steering_service import ProbeDataset, SteeringService

logger = logging.getLogger(__name__)

TOY_CONFIG = ModelConfig(d_model=32, n_layers=2, n_heads=4, d_head=8, d_ff=64,
                         vocab_size=64, max_seq_len=32)


@dataclass(frozen=True)
class OracleReport:
    """Outcome of one oracle run; passed <=> max_violation <= tolerance."""
    name: str
    trials: int
    max_violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'trials': self.trials,
            'max_violation': float(self.max_violation),
            'pass': self.passed,
            'tolerance': self.tolerance,
        }


class OracleService:
    """Service for independent verification of edits."""

    # ================== Semantic invariance ==================

    @classmethod
    def verify_semantic_invariance(cls, delta_w: Matrix, v: Vector, n_trials: int = 100,
                                   tol: float = 1e-10, seed: int = Config.ORACLE_SEED) -> OracleReport:
        """
        Directions orthogonal to v must see no change: z^T dW h = 0 for z _|_ v.

        Args:
            delta_w: Weight change (d_model, d_in)
            v: Steering vector (d_model)
            n_trials: Number of random (z, h) pairs
            tol: Relative tolerance
            seed: Oracle RNG seed

        Returns:
            OracleReport with max |z^T dW h| / (||z|| ||dW||_F ||h||)
        """
        delta_w = np.asarray(delta_w, dtype=np.float64)
        v = LinalgService.as_vector(v, 'steering vector')
        rng = np.random.default_rng(seed)
        v_hat = LinalgService.unit(v)
        frob = np.linalg.norm(delta_w)
        worst = 0.0
        for _ in range(n_trials):
            h = rng.standard_normal(delta_w.shape[1])
            z = rng.standard_normal(delta_w.shape[0])
            z = z - (z @ v_hat) * v_hat
            denom = np.linalg.norm(z) * frob * np.linalg.norm(h)
            if denom == 0.0:
                continue
            worst = max(worst, abs(z @ (delta_w @ h)) / denom)
        return OracleReport('semantic_invariance', n_trials, worst, tol)

    # ================== Pearson optimality ==================

    @classmethod
    def abs_pearson_for_direction(cls, k: Vector, W: Matrix, v: Vector, h_samples) -> float:
        """|pearson(k^T h, v^T W h)| over the samples; 0 when k^T h is constant."""
        H = np.asarray(h_samples, dtype=np.float64)
        s = H @ (np.asarray(W, dtype=np.float64).T @ v)
        ds = H @ np.asarray(k, dtype=np.float64)
        try:
            return abs(LinalgService.pearson(ds, s))
        except DegenerateSampleError:
            return 0.0

    @classmethod
    def pearson_optimality_oracle(cls, W: Matrix, v: Vector, h_samples: Sequence[Vector],
                                  n_probes: int = 1000, tol: float = 1e-9,
                                  seed: int = Config.ORACLE_SEED) -> OracleReport:
        """
        The input direction W^T v must attain |pearson| = 1 and beat every random probe.

        Args:
            W: Component weight (d_out, d_in)
            v: Steering vector (d_out)
            h_samples: Input samples, shape (n, d_in)
            n_probes: Random unit directions to compare against
            tol: Tolerance on both checks
            seed: Oracle RNG seed

        Returns:
            OracleReport; violation is max(1 - r*, max_probe - r*, 0)
        """
        W = LinalgService.as_matrix(W, 'component weight')
        v = LinalgService.as_vector(v, 'steering vector')
        H = np.asarray(h_samples, dtype=np.float64)
        s = H @ (W.T @ v)
        if s.size < 2 or np.ptp(s) == 0.0:
            raise DegenerateSampleError()

        k_hat = LinalgService.unit(W.T @ v)
        best = abs(LinalgService.pearson(H @ k_hat, s))
        rng = np.random.default_rng(seed)
        probe_max = 0.0
        for _ in range(n_probes):
            k = LinalgService.unit(rng.standard_normal(W.shape[1]))
            probe_max = max(probe_max, cls.abs_pearson_for_direction(k, W, v, H))
        violation = max(1.0 - best, probe_max - best, 0.0)
        return OracleReport('pearson_optimality', n_probes, violation, tol)

    # ================== Elastic-Net scalar ==================

    @classmethod
    def elastic_net_grid(cls, g: float, rho: float, alpha: float,
                         grid_halfwidth: Optional[float] = None,
                         grid_points: int = Config.ORACLE_GRID_POINTS) -> np.ndarray:
        """Symmetric grid with an exact zero at its centre (2 * (grid_points // 2) + 1 points)."""
        if not (0.0 < rho < np.inf):
            raise ParameterError(f"rho must be finite and > 0, got {rho}")
        if not (0.0 <= alpha < 1.0):
            raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
        if grid_points < 1000:
            raise ParameterError("grid_points must be >= 1000")
        if grid_halfwidth is None:
            grid_halfwidth = 2.0 * (abs(g) / (rho * (1.0 - alpha)) + 1.0)
        n = grid_points // 2
        return np.arange(-n, n + 1, dtype=np.float64) * (grid_halfwidth / n)

    @classmethod
    def elastic_net_scalar_oracle(cls, g: float, rho: float, alpha: float,
                                  grid_halfwidth: Optional[float] = None,
                                  grid_points: int = Config.ORACLE_GRID_POINTS) -> float:
        """
        Grid argmax of J(lam) = g*lam - rho*(alpha*|lam| + (1-alpha)/2 * lam^2).

        Args:
            g: Importance score
            rho: Budget (finite, > 0)
            alpha: Sparsity mix in [0, 1)
            grid_halfwidth: Grid spans [-halfwidth, halfwidth]; defaults to
                2 * (|g| / (rho * (1 - alpha)) + 1)
            grid_points: Approximate number of grid points (>= 1000)

        Returns:
            The maximizing grid value
        """
        grid = cls.elastic_net_grid(g, rho, alpha, grid_halfwidth, grid_points)
        objective = g * grid - rho * (alpha * np.abs(grid) + 0.5 * (1.0 - alpha) * grid * grid)
        return float(grid[int(np.argmax(objective))])

    @classmethod
    def magnitude_agreement(cls, n_triples: int = Config.ORACLE_TRIPLES,
                            grid_points: int = Config.ORACLE_GRID_POINTS,
                            seed: int = Config.ORACLE_SEED) -> OracleReport:
        """Closed-form magnitude vs grid argmax on random (g, rho, alpha); violation in grid steps."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_triples):
            g = rng.uniform(-1.0, 1.0)
            rho = 2.0 - rng.uniform(0.0, 2.0)  # (0, 2]
            alpha = rng.uniform(0.0, 0.99)
            grid = cls.elastic_net_grid(g, rho, alpha, grid_points=grid_points)
            step = grid[1] - grid[0]
            lam_grid = cls.elastic_net_scalar_oracle(g, rho, alpha, grid_points=grid_points)
            lam = EditorService.edit_magnitude(g, rho, alpha)
            worst = max(worst, abs(lam - lam_grid) / step)
        return OracleReport('edit_magnitude_vs_grid', n_triples, worst, 2.0)

    # ================== Forward-pass identities ==================

    @classmethod
    def component_shift_oracle(cls, w: ModelWeights, plan: EditPlan, tokens,
                               tol: float = 1e-9) -> OracleReport:
        """
        The edited block output must move by exactly lam * (k_hat^T h) * v_hat.

        Activations upstream of the edited block must be bitwise unchanged;
        any difference there is reported as an infinite violation.

        Args:
            w: Unedited weights
            plan: Plan with at most one entry
            tokens: Probe token ids
            tol: Absolute tolerance on the shift

        Returns:
            OracleReport over every position
        """
        if len(plan.entries) > 1:
            raise ParameterError("component_shift_oracle needs a plan with at most one entry")
        edited = EditorService.apply_edit_plan(w, plan)
        _, before = ModelService.forward(w, tokens, capture=CAPTURE_ALL)
        _, after = ModelService.forward(edited, tokens, capture=CAPTURE_ALL)
        n_pos = len(before.tokens)

        if not plan.entries:
            worst = max(float(np.max(np.abs(after.block_output(l, b) - before.block_output(l, b))))
                        for l in range(w.config.n_layers) for b in BLOCKS)
            return OracleReport('component_shift', n_pos, worst, tol)

        (cid, entry), = plan.entries.items()
        upstream = [(before.embed, after.embed)]
        for layer in range(cid.layer):
            for store in ('attn_out', 'mlp_out', 'resid_attn', 'resid_mlp', 'head_inputs', 'neuron_inputs'):
                upstream.append((getattr(before, store)[layer], getattr(after, store)[layer]))
        if cid.block == 'mlp':
            upstream.append((before.attn_out[cid.layer], after.attn_out[cid.layer]))
            upstream.append((before.resid_attn[cid.layer], after.resid_attn[cid.layer]))
        if not all(np.array_equal(a, b) for a, b in upstream):
            return OracleReport('component_shift', n_pos, float('inf'), tol)

        h = before.component_inputs(cid)
        expected = entry.lam * (h @ entry.k_hat)[:, None] * entry.u_hat[None, :]
        actual = after.block_output(cid.layer, cid.block) - before.block_output(cid.layer, cid.block)
        worst = float(np.max(np.abs(actual - expected)))
        return OracleReport('component_shift', n_pos, worst, tol)

    @classmethod
    def decomposition_oracle(cls, w: ModelWeights, n_passes: int = 100, tol: float = 1e-9,
                             seed: int = Config.ORACLE_SEED) -> OracleReport:
        """Per-head and per-neuron writes must sum to the block outputs."""
        rng = np.random.default_rng(seed)
        cfg = w.config
        worst = 0.0
        for _ in range(n_passes):
            length = int(rng.integers(1, cfg.max_seq_len + 1))
            tokens = rng.integers(0, cfg.vocab_size, size=length)
            _, trace = ModelService.forward(w, tokens, capture=CAPTURE_ALL)
            for layer in range(cfg.n_layers):
                heads = ModelService.head_contributions(w, trace, layer).sum(axis=0)
                neurons = ModelService.neuron_contributions(w, trace, layer).sum(axis=0)
                worst = max(worst,
                            float(np.max(np.abs(heads - trace.attn_out[layer]))),
                            float(np.max(np.abs(neurons - trace.mlp_out[layer]))))
        return OracleReport('decomposition', n_passes, worst, tol)

    # ================== Suite ==================

    @classmethod
    def toy_problem(cls, seed: int = Config.ORACLE_SEED, n_pairs: int = 8):
        """Random toy model plus a random probe dataset for plan-level checks."""
        rng = np.random.default_rng(seed)
        w = ModelService.init_weights(TOY_CONFIG, seed=seed, scale=Config.INIT_SCALE)

        def pair():
            prompt = rng.integers(2, TOY_CONFIG.vocab_size, size=int(rng.integers(2, 7))).tolist()
            response = rng.integers(2, TOY_CONFIG.vocab_size, size=int(rng.integers(1, 5))).tolist()
            return prompt, response

        data = ProbeDataset.from_pairs([pair() for _ in range(n_pairs)], [pair() for _ in range(n_pairs)])
        return w, data

    @classmethod
    def random_instance(cls, rng: np.random.Generator):
        """Random (W, v, samples) with d_out in 2..8, d_in in 1..8 and 16..32 samples."""
        d_out = int(rng.integers(2, 9))
        d_in = int(rng.integers(1, 9))
        n = int(rng.integers(16, 33))
        return (rng.standard_normal((d_out, d_in)), rng.standard_normal(d_out),
                rng.standard_normal((n, d_in)))

    @classmethod
    def run_suite(cls, seed: int = Config.ORACLE_SEED, quick: bool = False) -> List[OracleReport]:
        """
        Run every oracle once.

        Args:
            seed: Oracle RNG seed
            quick: Use reduced trial counts

        Returns:
            Reports in a fixed order
        """
        triples = 100 if quick else Config.ORACLE_TRIPLES
        instances = 20 if quick else Config.ORACLE_INSTANCES
        probes = 200 if quick else Config.ORACLE_PROBES
        passes = 10 if quick else 100

        reports = [cls.magnitude_agreement(triples, seed=seed)]

        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(instances):
            W, v, H = cls.random_instance(rng)
            worst = max(worst, cls.pearson_optimality_oracle(W, v, H, probes, seed=seed + i).max_violation)
        reports.append(OracleReport('pearson_optimality', instances, worst, 1e-9))

        w, data = cls.toy_problem(seed)
        pos, neg = SteeringService.collect_traces(w, data)
        vecs = SteeringService.vectors_from_traces(pos, neg, w.config.n_layers)
        trace = pos.merged(neg)
        hyper = EditHyperparams(rho_attn=0.05, rho_mlp=0.05, alpha=0.0)
        worst = 0.0
        checked = 0
        plans = {}
        for variant in ('steer2edit', 'k_mean', 'k_svd', 'g_dot', 'l0:3', 'l2'):
            plan = EditorService.build_edit_plan(w, vecs, trace, hyper, variant)
            plans[variant] = plan
            for cid, entry in plan.entries.items():
                report = cls.verify_semantic_invariance(entry.delta(), vecs.get(cid.layer, cid.block),
                                                        n_trials=100, seed=seed + checked)
                worst = max(worst, report.max_violation)
                checked += 1
        reports.append(OracleReport('semantic_invariance', checked, worst, 1e-10))

        probe = data.positive[0][0] + data.positive[0][1]
        base = plans['steer2edit']
        worst = 0.0
        for block in BLOCKS:
            chosen = [cid for cid in sorted(base.entries) if cid.block == block]
            if chosen:
                top = max(chosen, key=lambda c: abs(base.entries[c].lam))
                worst = max(worst, cls.component_shift_oracle(w, base.restricted(top), probe).max_violation)
        reports.append(OracleReport('component_shift', len(BLOCKS), worst, 1e-9))

        reports.append(cls.decomposition_oracle(w, passes, seed=seed))
        for report in reports:
            logger.info("oracle %s: max violation %.3e (tol %.1e) %s", report.name,
                        report.max_violation, report.tolerance, 'PASS' if report.passed else 'FAIL')
        return reports
