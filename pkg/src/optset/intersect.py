"""Representation-driven block: train h-tilde over the domain, extract its zero set.

The trained net approximates the composite h (for intersections, f - g) over
the whole box; constraints never enter the loss. They are applied as masks at
extraction time, so one trained net serves both the unconstrained and any
constrained variant of the same problem.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .approximator import TrainConfig, TrainRecord, sample_domain, train_l2
from .functions import AnalyticFunction, FunctionSource, difference, squared_difference
from .nets import DenseNet, NetConfig

DEFAULT_EXTRACT_TOL = 1e-2


@dataclass
class ProblemSpec:
    """Objectives plus constraints over a bounded box.

    Inequalities use the q(x) <= 0 convention; equality constraints are
    treated as |p(x)| <= tol at extraction time.
    """

    objectives: list[FunctionSource]
    domain: list[tuple[float, float]]
    eq_constraints: list[FunctionSource] = field(default_factory=list)
    ineq_constraints: list[FunctionSource] = field(default_factory=list)

    def __post_init__(self):
        self.domain = [(float(lo), float(hi)) for lo, hi in self.domain]
        n = len(self.domain)
        for lo, hi in self.domain:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"domain must be a bounded box, got ({lo}, {hi})")
        for fn in self.objectives + self.eq_constraints + self.ineq_constraints:
            if fn.n_in != n:
                raise ValueError(
                    f"function {fn.name!r} has dimension {fn.n_in}, domain has {n}"
                )

    @property
    def n(self) -> int:
        return len(self.domain)


@dataclass
class ManifoldResult:
    """Extraction output: the indicator point set plus everything needed to audit it."""

    net: DenseNet
    grid: np.ndarray  # (n_grid, n)
    h_grid: np.ndarray  # h-tilde on the grid (the exported manifold)
    h_true_grid: np.ndarray  # h from the sources, for modeler-side comparison
    points: np.ndarray  # (n_kept, n) indicator set
    point_h: np.ndarray  # h-tilde at the kept points
    residuals: np.ndarray  # |h| recomputed from the sources at the kept points
    tolerance: float
    closeness_factor: float  # ||h(X~) - h~(X~)||^2 / tolerance, reported not enforced
    max_train_error: float  # max |h~ - h| over the grid
    status: str  # "ok" or "empty"


def build_h(f: FunctionSource, g: FunctionSource, form: str = "difference") -> FunctionSource:
    """Compose the target manifold function from two sources.

    ``difference`` (f - g) suits intersections, where sign changes localize
    the zero set; ``squared-difference`` is the minimization form.
    """
    if form == "difference":
        return difference(f, g)
    if form in ("squared-difference", "squared"):
        return squared_difference(f, g)
    raise ValueError(f"unknown form {form!r}")


def train_manifold(
    h: FunctionSource,
    spec: ProblemSpec,
    net_cfg: NetConfig,
    train_cfg: TrainConfig | None = None,
) -> tuple[DenseNet, TrainRecord]:
    """Fit h-tilde to h by L2 over the whole domain box.

    Batches are drawn uniformly from the box each step (seeded); the early
    stop checks the MSE on a fixed evaluation sample at every epoch end.
    """
    if h.n_in != spec.n:
        raise ValueError(f"h has dimension {h.n_in}, domain has {spec.n}")
    if net_cfg.n_in != spec.n or net_cfg.n_out != 1:
        raise ValueError(f"net must map R^{spec.n} -> R, got config {net_cfg}")
    if train_cfg is None:
        train_cfg = TrainConfig()
    net = DenseNet(net_cfg)
    lo = np.array([b[0] for b in spec.domain])
    hi = np.array([b[1] for b in spec.domain])

    def batch_fn(rng):
        xb = rng.uniform(lo, hi, size=(train_cfg.batch_size, spec.n))
        return xb, h(xb).reshape(-1, 1)

    eval_x = sample_domain(spec.domain, count=4096, mode="random", seed=train_cfg.seed + 1)
    eval_y = h(eval_x).reshape(-1, 1)

    def eval_fn(model):
        return float(np.mean((model.forward(eval_x) - eval_y) ** 2))

    record = train_l2(net, batch_fn, eval_fn, train_cfg)
    return net, record


def extract_indicator(
    net: DenseNet,
    spec: ProblemSpec,
    h: FunctionSource,
    resolution,
    tolerance: float = DEFAULT_EXTRACT_TOL,
) -> ManifoldResult:
    """Evaluate h-tilde on the grid and keep the masked zero set.

    A point survives iff |h~| <= tolerance, every inequality constraint holds,
    and every equality constraint is within tolerance. An empty result is a
    warning, not an error: constraints can legitimately exclude all roots.
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    grid = sample_domain(spec.domain, resolution=resolution, mode="grid")
    h_grid = net.forward(grid)[:, 0]
    h_true = h(grid)

    mask = np.abs(h_grid) <= tolerance
    for q in spec.ineq_constraints:
        mask &= q(grid) <= 0.0
    for p in spec.eq_constraints:
        mask &= np.abs(p(grid)) <= tolerance

    points = grid[mask]
    point_h = h_grid[mask]
    residuals = np.abs(h(points)) if len(points) else np.zeros(0)
    deviation = float(((h(points) - point_h) ** 2).sum()) if len(points) else 0.0
    status = "ok"
    if len(points) == 0:
        warnings.warn("indicator set is empty; constraints may exclude all roots")
        status = "empty"
    return ManifoldResult(
        net=net,
        grid=grid,
        h_grid=h_grid,
        h_true_grid=h_true,
        points=points,
        point_h=point_h,
        residuals=residuals,
        tolerance=tolerance,
        closeness_factor=deviation / tolerance,
        max_train_error=float(np.abs(h_grid - h_true).max()),
        status=status,
    )


def cluster_points(points, radius: float) -> np.ndarray:
    """Single-linkage clustering; returns one centroid per cluster.

    Clusters are connected components of the "within radius" graph, ordered
    by their first member's index so the output is deterministic.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    n = points.shape[0]
    if n == 0:
        return points.reshape(0, points.shape[1] if points.ndim == 2 else 1)

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    for i, j in pairs:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    roots: list[int] = []
    members: dict[int, list[int]] = {}
    for i in range(n):
        r = find(i)
        if r not in members:
            members[r] = []
            roots.append(r)
        members[r].append(i)
    return np.array([points[members[r]].mean(axis=0) for r in roots])


class ManifoldDetector(BaseEstimator):
    """Estimator facade: fit h-tilde on a problem, then extract indicator sets.

    ``fit`` trains the net; ``predict`` evaluates h-tilde; ``extract`` applies
    the tolerance and constraint masks on a fresh grid. Multiple ``extract``
    calls (e.g. with different constraint sets via ``extra_inequalities``)
    reuse the same trained net.
    """

    def __init__(
        self,
        width: int = 4,
        depth: int = 4,
        hidden_activation: str = "tanh",
        form: str = "difference",
        learning_rate: float = 0.001,
        steps_per_epoch: int = 2000,
        epochs: int = 10,
        batch_size: int = 128,
        train_tolerance: float = 1e-3,
        seed: int = 0,
    ):
        self.width = width
        self.depth = depth
        self.hidden_activation = hidden_activation
        self.form = form
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.epochs = epochs
        self.batch_size = batch_size
        self.train_tolerance = train_tolerance
        self.seed = seed

    def fit(self, problem: ProblemSpec, h: FunctionSource | None = None):
        if h is None:
            if len(problem.objectives) < 2:
                raise ValueError("need two objectives (f, g) or an explicit h")
            h = build_h(problem.objectives[0], problem.objectives[1], self.form)
        net_cfg = NetConfig(
            n_in=problem.n,
            width=self.width,
            depth=self.depth,
            n_out=1,
            hidden_activation=self.hidden_activation,
            seed=self.seed,
        )
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate,
            steps_per_epoch=self.steps_per_epoch,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            loss_tolerance=self.train_tolerance,
        )
        self.problem_ = problem
        self.h_ = h
        self.net_, self.record_ = train_manifold(h, problem, net_cfg, train_cfg)
        return self

    def predict(self, x) -> np.ndarray:
        return self.net_.forward(np.asarray(x, dtype=np.float64))[:, 0]

    def extract(
        self,
        resolution,
        tolerance: float = DEFAULT_EXTRACT_TOL,
        extra_inequalities: list[FunctionSource] | None = None,
    ) -> ManifoldResult:
        spec = self.problem_
        if extra_inequalities:
            spec = ProblemSpec(
                objectives=spec.objectives,
                domain=spec.domain,
                eq_constraints=list(spec.eq_constraints),
                ineq_constraints=list(spec.ineq_constraints) + list(extra_inequalities),
            )
        return extract_indicator(self.net_, spec, self.h_, resolution, tolerance)


# ---------------------------------------------------------------------------
# built-in intersection problems
# ---------------------------------------------------------------------------


def _sphere(center, radius: float, name: str) -> AnalyticFunction:
    center = np.asarray(center, dtype=np.float64)

    def fn(x):
        return ((x - center) ** 2).sum(axis=1) - radius**2

    return AnalyticFunction(3, fn, grad_fn=lambda x: 2.0 * (x - center), name=name)


def _cylinder_z(cx: float, cy: float, radius: float, name: str) -> AnalyticFunction:
    def fn(x):
        return (x[:, 0] - cx) ** 2 + (x[:, 1] - cy) ** 2 - radius**2

    def grad(x):
        g = np.zeros_like(x)
        g[:, 0] = 2.0 * (x[:, 0] - cx)
        g[:, 1] = 2.0 * (x[:, 1] - cy)
        return g

    return AnalyticFunction(3, fn, grad_fn=grad, name=name)


def builtin_problem(name: str) -> ProblemSpec:
    """Named problems from the worked cases.

    1-D root finding: ``parabola-line`` and ``parabola-cosh`` on [-2, 2].
    3-D intersections: ``spheres`` (tangent pair) and ``sphere-cylinder``;
    both carry the surface equations as equality constraints so extraction
    localizes the intersection rather than the whole h = 0 set.
    """
    if name == "parabola-line":
        f = AnalyticFunction(1, lambda x: x[:, 0] ** 2,
                             grad_fn=lambda x: 2.0 * x, name="x^2")
        g = AnalyticFunction(1, lambda x: x[:, 0] + 0.5,
                             grad_fn=lambda x: np.ones_like(x), name="x+0.5")
        return ProblemSpec(objectives=[f, g], domain=[(-2.0, 2.0)])
    if name == "parabola-cosh":
        f = AnalyticFunction(1, lambda x: x[:, 0] ** 2,
                             grad_fn=lambda x: 2.0 * x, name="x^2")
        g = AnalyticFunction(1, lambda x: np.cosh(x[:, 0]),
                             grad_fn=lambda x: np.sinh(x), name="cosh(x)")
        return ProblemSpec(objectives=[f, g], domain=[(-2.0, 2.0)])
    if name == "spheres":
        f = _sphere([0.0, 0.0, 0.0], 2.0, "sphere_r2")
        g = _sphere([1.0, 0.0, 0.0], 1.0, "sphere_r1")
        return ProblemSpec(
            objectives=[f, g],
            domain=[(-2.5, 2.5)] * 3,
            eq_constraints=[f, g],
        )
    if name == "sphere-cylinder":
        f = _sphere([0.0, 0.0, 0.0], 2.0, "sphere_r2")
        g = _cylinder_z(1.0, 0.0, 1.0, "cylinder_r1")
        return ProblemSpec(
            objectives=[f, g],
            domain=[(-2.5, 2.5)] * 3,
            eq_constraints=[f, g],
        )
    raise ValueError(f"unknown built-in problem {name!r}")
