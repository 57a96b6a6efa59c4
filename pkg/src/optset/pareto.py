"""Pareto front extraction through the Fritz-John determinant criterion.

The score field s(x) = det(L^T L) vanishes exactly where the Fritz-John
necessary condition admits a nontrivial multiplier, i.e. on every candidate
Pareto point. A softmax classifier is trained on thresholded scores over a
dense grid, and the classified set is post-filtered by non-domination
(necessity is not sufficiency).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .approximator import TrainConfig, sample_domain, train_l2
from .functions import AnalyticFunction, FunctionSource
from .nets import DenseNet, NetConfig
from .oracle import non_dominated

DEFAULT_SCORE_EPS = 1e-3
_CHUNK = 1 << 17


@dataclass
class MooProblem:
    """Multi-objective problem: minimize all objectives s.t. q_j(x) <= 0 on a box."""

    objectives: list[FunctionSource]
    domain: list[tuple[float, float]]
    constraints: list[FunctionSource] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.domain = [(float(lo), float(hi)) for lo, hi in self.domain]
        if len(self.objectives) < 2:
            raise ValueError("need at least two objectives")
        n = len(self.domain)
        for fn in self.objectives + self.constraints:
            if fn.n_in != n:
                raise ValueError(f"function {fn.name!r} has dimension {fn.n_in}, domain has {n}")

    @property
    def n(self) -> int:
        return len(self.domain)

    @property
    def k(self) -> int:
        return len(self.objectives)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def objective_values(self, x: np.ndarray) -> np.ndarray:
        return np.stack([f(x) for f in self.objectives], axis=1)

    def feasible(self, x: np.ndarray) -> np.ndarray:
        mask = np.ones(len(x), dtype=bool)
        for q in self.constraints:
            mask &= q(x) <= 0.0
        return mask


def assemble_L(problem: MooProblem, x) -> np.ndarray:
    """The (n+m) x (k+m) Fritz-John block matrix [[∇F, ∇G], [0, diag(g)]] at one point."""
    x = np.asarray(x, dtype=np.float64).reshape(1, problem.n)
    n, k, m = problem.n, problem.k, problem.m
    L = np.zeros((n + m, k + m))
    for i, f in enumerate(problem.objectives):
        L[:n, i] = f.gradient(x)[0]
    for j, q in enumerate(problem.constraints):
        L[:n, k + j] = q.gradient(x)[0]
        L[n + j, k + j] = q(x)[0]
    return L


def fj_score(problem: MooProblem, x) -> float:
    """s(x) = det(L^T L); zero on Fritz-John candidate points."""
    L = assemble_L(problem, x)
    value, _ = ad.det_with_grad(L.T @ L)
    return value


def _batched_det(mats: np.ndarray) -> np.ndarray:
    """Determinants of a stack of small square matrices (closed forms to 4x4)."""
    s = mats.shape[1]
    if s == 1:
        return mats[:, 0, 0].copy()
    if s == 2:
        return mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    if s == 3:
        a = mats
        return (
            a[:, 0, 0] * (a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1])
            - a[:, 0, 1] * (a[:, 1, 0] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 0])
            + a[:, 0, 2] * (a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0])
        )
    if s == 4:
        out = np.zeros(mats.shape[0])
        cols = np.arange(4)
        for j in range(4):
            minor = mats[:, 1:, :][:, :, cols != j]
            out += ((-1.0) ** j) * mats[:, 0, j] * _batched_det(minor)
        return out
    return np.array([ad.lu_det(m) for m in mats])


def fj_scores_grid(problem: MooProblem, grid: np.ndarray) -> np.ndarray:
    """Vectorized s(x) over many points; agrees with fj_score pointwise."""
    grid = np.asarray(grid, dtype=np.float64)
    n, k, m = problem.n, problem.k, problem.m
    scores = np.empty(len(grid))
    for start in range(0, len(grid), _CHUNK):
        x = grid[start : start + _CHUNK]
        L = np.zeros((len(x), n + m, k + m))
        for i, f in enumerate(problem.objectives):
            L[:, :n, i] = f.gradient(x)
        for j, q in enumerate(problem.constraints):
            L[:, :n, k + j] = q.gradient(x)
            L[:, n + j, k + j] = q(x)
        gram = np.einsum("pij,pik->pjk", L, L)
        scores[start : start + _CHUNK] = _batched_det(gram)
    return scores


def score_scale(scores: np.ndarray) -> float:
    """Normalizer for thresholding: the grid's median |s| (falls back to max)."""
    med = float(np.median(np.abs(scores)))
    if med > 0:
        return med
    top = float(np.abs(scores).max())
    return top if top > 0 else 1.0


def pareto_labels(
    problem: MooProblem, grid: np.ndarray, eps: float = DEFAULT_SCORE_EPS
) -> tuple[np.ndarray, np.ndarray, float]:
    """Training labels: normalized |s| within eps AND all constraints satisfied."""
    scores = fj_scores_grid(problem, grid)
    scale = score_scale(scores)
    labels = (np.abs(scores) <= eps * scale) & problem.feasible(grid)
    return labels, scores, scale


def train_pareto_classifier(
    problem: MooProblem,
    grid: np.ndarray,
    eps: float = DEFAULT_SCORE_EPS,
    net_cfg: NetConfig | None = None,
    train_cfg: TrainConfig | None = None,
    labels: np.ndarray | None = None,
) -> tuple[DenseNet, np.ndarray]:
    """Two-logit softmax classifier of Pareto candidates, trained by L2.

    The positive set is a thin band around the score zero set, so batches are
    stratified half/half between classes; otherwise a plain random batch would
    almost never contain a positive at (1000, 1000) grid density.
    """
    if labels is None:
        labels, _, _ = pareto_labels(problem, grid, eps)
    if labels.all():
        raise ValueError("every grid point is labeled Pareto-candidate; decrease eps")
    if not labels.any():
        raise ValueError("no grid point is labeled Pareto-candidate; increase eps")
    if net_cfg is None:
        net_cfg = NetConfig(n_in=problem.n, width=8, depth=4, n_out=2,
                            output_activation="softmax")
    else:
        if net_cfg.n_out != 2 or net_cfg.output_activation != "softmax":
            raise ValueError("classifier net needs a two-logit softmax head")
    if train_cfg is None:
        train_cfg = TrainConfig()

    pos_idx = np.nonzero(labels)[0]
    neg_idx = np.nonzero(~labels)[0]
    targets = np.zeros((len(grid), 2))
    targets[labels, 1] = 1.0
    targets[~labels, 0] = 1.0
    half = train_cfg.batch_size // 2

    def batch_fn(rng):
        pick_pos = pos_idx[rng.integers(0, len(pos_idx), size=half)]
        pick_neg = neg_idx[rng.integers(0, len(neg_idx), size=train_cfg.batch_size - half)]
        idx = np.concatenate([pick_pos, pick_neg])
        return grid[idx], targets[idx]

    eval_rng = ad.make_rng(train_cfg.seed + 1)
    eval_idx = np.concatenate([
        pos_idx[eval_rng.integers(0, len(pos_idx), size=1024)],
        neg_idx[eval_rng.integers(0, len(neg_idx), size=1024)],
    ])
    eval_x, eval_t = grid[eval_idx], targets[eval_idx]

    def eval_fn(model):
        return float(np.mean((model.forward(eval_x) - eval_t) ** 2))

    net = DenseNet(NetConfig(
        n_in=net_cfg.n_in, width=net_cfg.width, depth=net_cfg.depth, n_out=2,
        hidden_activation=net_cfg.hidden_activation, output_activation="softmax",
        use_biases=net_cfg.use_biases, seed=train_cfg.seed,
    ))
    record = train_l2(net, batch_fn, eval_fn, train_cfg)
    return net, record.loss_trace


@dataclass
class FrontResult:
    grid: np.ndarray
    scores: np.ndarray
    scores_scale: float
    labels: np.ndarray
    probs: np.ndarray  # positive-class probability per grid point
    front_x: np.ndarray  # (n_front, n)
    front_f: np.ndarray  # (n_front, k)
    eps: float
    domination_filter: bool
    status: str


def extract_front(
    classifier: DenseNet,
    problem: MooProblem,
    grid: np.ndarray,
    eps: float = DEFAULT_SCORE_EPS,
    apply_domination_filter: bool = True,
    scores: np.ndarray | None = None,
) -> FrontResult:
    """Classified Pareto candidates, optionally reduced to an antichain.

    A point enters the candidate set when its positive-class probability
    exceeds 0.5, it is feasible, and its normalized score is within eps (the
    invariant the result promises). The domination filter then removes any
    candidate dominated inside the set.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if scores is None:
        scores = fj_scores_grid(problem, grid)
    scale = score_scale(scores)
    labels = (np.abs(scores) <= eps * scale) & problem.feasible(grid)

    probs = np.empty(len(grid))
    for start in range(0, len(grid), _CHUNK):
        probs[start : start + _CHUNK] = classifier.forward(grid[start : start + _CHUNK])[:, 1]

    candidates = (probs > 0.5) & labels
    front_x = grid[candidates]
    front_f = problem.objective_values(front_x) if len(front_x) else np.zeros((0, problem.k))
    if apply_domination_filter and len(front_x):
        keep = non_dominated(front_f)
        front_x, front_f = front_x[keep], front_f[keep]
    status = "ok"
    if len(front_x) == 0:
        warnings.warn("extracted front is empty; consider adjusting eps")
        status = "empty"
    return FrontResult(
        grid=grid,
        scores=scores,
        scores_scale=scale,
        labels=labels,
        probs=probs,
        front_x=front_x,
        front_f=front_f,
        eps=eps,
        domination_filter=apply_domination_filter,
        status=status,
    )


def analytic_front_case1(f2) -> np.ndarray:
    """Closed-form front of the symmetric two-exponential benchmark.

    f1 = 1 + (f2 - 1) * exp(-4 + 4 sqrt(-log(1 - f2))), valid on 0 <= f2 <= 0.982.
    """
    f2 = np.asarray(f2, dtype=np.float64)
    if (f2 < 0).any() or (f2 > 0.982).any():
        raise ValueError("closed form is valid for 0 <= f2 <= 0.982")
    return 1.0 + (f2 - 1.0) * np.exp(-4.0 + 4.0 * np.sqrt(-np.log(1.0 - f2)))


class ParetoFrontDetector(BaseEstimator):
    """Estimator facade: label a grid by Fritz-John scores, train, extract."""

    def __init__(
        self,
        width: int = 8,
        depth: int = 4,
        eps: float = DEFAULT_SCORE_EPS,
        learning_rate: float = 0.001,
        steps_per_epoch: int = 2000,
        epochs: int = 10,
        batch_size: int = 128,
        domination_filter: bool = True,
        seed: int = 0,
    ):
        self.width = width
        self.depth = depth
        self.eps = eps
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.epochs = epochs
        self.batch_size = batch_size
        self.domination_filter = domination_filter
        self.seed = seed

    def fit(self, problem: MooProblem, grid_resolution=(1000, 1000)):
        grid = sample_domain(problem.domain, resolution=grid_resolution, mode="grid")
        labels, scores, scale = pareto_labels(problem, grid, self.eps)
        net_cfg = NetConfig(n_in=problem.n, width=self.width, depth=self.depth,
                            n_out=2, output_activation="softmax")
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate,
            steps_per_epoch=self.steps_per_epoch,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.problem_ = problem
        self.grid_ = grid
        self.labels_ = labels
        self.scores_ = scores
        self.scores_scale_ = scale
        self.classifier_, self.loss_trace_ = train_pareto_classifier(
            problem, grid, self.eps, net_cfg, train_cfg, labels=labels
        )
        return self

    def predict_proba(self, x) -> np.ndarray:
        return self.classifier_.forward(np.asarray(x, dtype=np.float64))

    def extract(self, apply_domination_filter: bool | None = None) -> FrontResult:
        flag = self.domination_filter if apply_domination_filter is None else apply_domination_filter
        return extract_front(
            self.classifier_, self.problem_, self.grid_, self.eps,
            apply_domination_filter=flag, scores=self.scores_,
        )


# ---------------------------------------------------------------------------
# built-in benchmark problems
# ---------------------------------------------------------------------------


def _gobbi1() -> MooProblem:
    a = 1.0 / math.sqrt(2.0)

    def make_objective(sign: float, name: str) -> AnalyticFunction:
        center = np.array([sign * a, sign * a])

        def fn(x):
            return 1.0 - np.exp(-((x - center) ** 2).sum(axis=1))

        def grad(x):
            d = x - center
            return 2.0 * d * np.exp(-(d**2).sum(axis=1))[:, None]

        return AnalyticFunction(2, fn, grad_fn=grad, name=name)

    return MooProblem(
        objectives=[make_objective(1.0, "f1"), make_objective(-1.0, "f2")],
        domain=[(-a, a), (-a, a)],
        name="gobbi1",
    )


def _ghane2() -> MooProblem:
    f1 = AnalyticFunction(
        2, lambda x: x[:, 0],
        grad_fn=lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], axis=1),
        name="f1",
    )

    def f2_fn(x):
        return 1.0 + x[:, 1] ** 2 - x[:, 0] - 0.1 * np.sin(3.0 * np.pi * x[:, 0])

    def f2_grad(x):
        return np.stack(
            [-1.0 - 0.3 * np.pi * np.cos(3.0 * np.pi * x[:, 0]), 2.0 * x[:, 1]], axis=1
        )

    f2 = AnalyticFunction(2, f2_fn, grad_fn=f2_grad, name="f2")
    return MooProblem(objectives=[f1, f2], domain=[(0.0, 1.0), (-2.0, 2.0)], name="ghane2")


def _ghane3() -> MooProblem:
    f1 = AnalyticFunction(
        2, lambda x: x[:, 0],
        grad_fn=lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], axis=1),
        name="f1",
    )
    f2 = AnalyticFunction(
        2, lambda x: x[:, 1],
        grad_fn=lambda x: np.stack([np.zeros(len(x)), np.ones(len(x))], axis=1),
        name="f2",
    )

    def q1_fn(x):
        return (x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2 - 0.5

    q1 = AnalyticFunction(2, q1_fn, grad_fn=lambda x: 2.0 * (x - 0.5), name="q1")

    # ring constraint: x1^2 + x2^2 - 1 - 0.1 cos(16 arctan(x1/x2)) >= 0, negated
    # into the q <= 0 convention; the two-argument arctan keeps x2 = 0 defined.
    def theta(x):
        return np.arctan2(x[:, 0], x[:, 1])

    def q2_fn(x):
        return -(x[:, 0] ** 2 + x[:, 1] ** 2 - 1.0 - 0.1 * np.cos(16.0 * theta(x)))

    def q2_grad(x):
        r2 = np.maximum(x[:, 0] ** 2 + x[:, 1] ** 2, 1e-300)
        s = 1.6 * np.sin(16.0 * theta(x))
        return np.stack(
            [-2.0 * x[:, 0] - s * x[:, 1] / r2, -2.0 * x[:, 1] + s * x[:, 0] / r2], axis=1
        )

    q2 = AnalyticFunction(2, q2_fn, grad_fn=q2_grad, name="q2")
    return MooProblem(
        objectives=[f1, f2],
        domain=[(0.0, math.pi), (0.0, math.pi)],
        constraints=[q1, q2],
        name="ghane3",
    )


_BUILTINS = {"gobbi1": _gobbi1, "ghane2": _ghane2, "ghane3": _ghane3}


def builtin_problem(name: str) -> MooProblem:
    """The three benchmark fronts with analytic gradients: gobbi1, ghane2, ghane3."""
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown built-in problem {name!r}") from None
