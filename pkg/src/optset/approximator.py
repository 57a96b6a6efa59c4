"""Data-driven block: fit scalar functions from (X, Y) samples by L2 regression.

Also home to the shared AdaMax training loop and domain sampling used by the
other solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .functions import FittedFunction
from .nets import DenseNet, NetConfig


@dataclass
class TrainConfig:
    """AdaMax schedule: 2000 steps per epoch for 10 epochs unless told otherwise."""

    learning_rate: float = 0.001
    steps_per_epoch: int = 2000
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    loss_tolerance: float = 1e-3

    def validate(self) -> None:
        if min(self.steps_per_epoch, self.epochs, self.batch_size) < 1:
            raise ValueError(f"counts must be positive: {self}")
        if self.loss_tolerance < 0:
            raise ValueError(f"loss tolerance must be >= 0, got {self.loss_tolerance}")


@dataclass
class TrainRecord:
    loss_trace: np.ndarray  # per-step batch MSE
    eval_trace: np.ndarray  # per-epoch MSE on the evaluation set
    stopped_early: bool
    steps_run: int


def train_l2(net: DenseNet, batch_fn, eval_fn, cfg: TrainConfig) -> TrainRecord:
    """Minimize mean((net(X) - Y)^2) with AdaMax over seeded batches.

    ``batch_fn(rng)`` yields one (X, Y) batch per step; ``eval_fn(net)`` is
    checked at every epoch end and training stops once it drops to the
    configured loss tolerance.
    """
    cfg.validate()
    rng = ad.make_rng(cfg.seed)
    opt = ad.AdaMax(net.parameters(), learning_rate=cfg.learning_rate)
    trace: list[float] = []
    eval_trace: list[float] = []
    stopped = False
    step = 0
    for _ in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            xb, yb = batch_fn(rng)
            tape = ad.Tape()
            params = [tape.leaf(p) for p in net.parameters()]
            out = net.forward_var(tape, xb, params)
            loss = (out - tape.constant(yb)).square().mean()
            loss_val = float(loss.value[0, 0])
            if not np.isfinite(loss_val):
                raise RuntimeError(f"training loss diverged (NaN/Inf) at step {step}")
            trace.append(loss_val)
            tape.backward(loss)
            net.set_parameters(opt.step([p.value for p in params], [p.grad for p in params]))
            step += 1
        epoch_mse = float(eval_fn(net))
        eval_trace.append(epoch_mse)
        if epoch_mse <= cfg.loss_tolerance:
            stopped = True
            break
    return TrainRecord(
        loss_trace=np.asarray(trace),
        eval_trace=np.asarray(eval_trace),
        stopped_early=stopped,
        steps_run=step,
    )


def sample_domain(
    bounds,
    resolution=None,
    count: int | None = None,
    mode: str = "grid",
    seed: int = 0,
) -> np.ndarray:
    """Sample a box domain either as a full grid or uniformly at random.

    Grid mode returns exactly prod(resolution) rows in row-major order with
    both endpoints included per dimension; random mode returns ``count``
    seeded points.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    for lo, hi in bounds:
        if not lo < hi:
            raise ValueError(f"domain bounds need lower < upper, got ({lo}, {hi})")
    n = len(bounds)
    if mode == "grid":
        if resolution is None:
            raise ValueError("grid mode needs a resolution")
        if np.isscalar(resolution):
            resolution = [int(resolution)] * n
        resolution = [int(r) for r in resolution]
        if len(resolution) != n:
            raise ValueError(f"need one resolution per dimension, got {resolution}")
        if min(resolution) < 1:
            raise ValueError(f"resolutions must be >= 1, got {resolution}")
        axes = [
            np.linspace(lo, hi, r) if r > 1 else np.array([lo])
            for (lo, hi), r in zip(bounds, resolution)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)
    if mode == "random":
        if count is None or count < 1:
            raise ValueError(f"random mode needs a positive count, got {count}")
        rng = ad.make_rng(seed)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        return rng.uniform(lo, hi, size=(count, n))
    raise ValueError(f"unknown sampling mode {mode!r}")


def _check_samples(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"sample count mismatch: X has {x.shape[0]} rows, Y has {y.shape[0]}")
    if x.shape[0] == 0:
        raise ValueError("need at least one sample")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("samples contain NaN or Inf")
    return x, y


def fit_function(
    samples_x,
    samples_y,
    net_cfg: NetConfig,
    train_cfg: TrainConfig | None = None,
) -> FittedFunction:
    """Fit a net to sample tuples and wrap it as a FunctionSource.

    Every 10th sample is held out for the sup-norm report; training runs on
    the rest, with batches drawn with replacement, and stops early once the
    training-set MSE reaches the configured tolerance.
    """
    x, y = _check_samples(samples_x, samples_y)
    if train_cfg is None:
        train_cfg = TrainConfig()
    net = DenseNet(net_cfg)

    heldout = np.zeros(x.shape[0], dtype=bool)
    heldout[9::10] = True
    if heldout.all():
        heldout[:] = False
    x_train, y_train = x[~heldout], y[~heldout]

    def batch_fn(rng):
        idx = rng.integers(0, x_train.shape[0], size=train_cfg.batch_size)
        return x_train[idx], y_train[idx]

    def eval_fn(model):
        return float(np.mean((model.forward(x_train) - y_train) ** 2))

    record = train_l2(net, batch_fn, eval_fn, train_cfg)
    final_mse = eval_fn(net)
    if heldout.any():
        heldout_max = float(np.abs(net.forward(x[heldout]) - y[heldout]).max())
    else:
        heldout_max = None
    return FittedFunction(net, final_mse, record.loss_trace, heldout_max_err=heldout_max)


class FunctionApproximator(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper around ``fit_function``.

    Parameters mirror NetConfig and TrainConfig; after ``fit`` the trained
    net is available as ``net_`` and the run as ``source_`` / ``loss_trace_``.
    """

    def __init__(
        self,
        width: int = 4,
        depth: int = 4,
        hidden_activation: str = "tanh",
        learning_rate: float = 0.001,
        steps_per_epoch: int = 2000,
        epochs: int = 10,
        batch_size: int = 128,
        loss_tolerance: float = 1e-3,
        seed: int = 0,
    ):
        self.width = width
        self.depth = depth
        self.hidden_activation = hidden_activation
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss_tolerance = loss_tolerance
        self.seed = seed

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n_out = 1 if y.ndim == 1 else y.shape[1]
        net_cfg = NetConfig(
            n_in=X.shape[1],
            width=self.width,
            depth=self.depth,
            n_out=n_out,
            hidden_activation=self.hidden_activation,
            seed=self.seed,
        )
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate,
            steps_per_epoch=self.steps_per_epoch,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            loss_tolerance=self.loss_tolerance,
        )
        self.source_ = fit_function(X, y, net_cfg, train_cfg)
        self.net_ = self.source_.net
        self.loss_trace_ = self.source_.loss_trace
        self.final_mse_ = self.source_.final_mse
        self.heldout_max_err_ = self.source_.heldout_max_err
        self.n_features_in_ = X.shape[1]
        self._y_was_1d = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        out = self.net_.forward(X)
        return out[:, 0] if self._y_was_1d else out
