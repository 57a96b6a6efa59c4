"""Minimum-volume simplex autoencoder for linear-mixture unmixing.

Architecture: encoder relu + sum-to-one normalization (abundances on the unit
simplex by construction), decoder tanh, no biases anywhere, exactly 2*K*F
parameters. Loss = mean-per-pixel reconstruction error + volume_weight *
det(A^T A) on the decoder weights, which are projected non-negative after
every optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad

_DEAD_ROW_TOL = 1e-12


@dataclass
class HsiDataset:
    """Pixel spectra with optional ground truth for benchmarking.

    y: (n_pixels, n_bands) non-negative reflectances.
    a_true: (n_bands, K) end-member columns, if known.
    b_true: (K, n_pixels) abundance rows, if known.
    """

    y: np.ndarray
    a_true: np.ndarray | None = None
    b_true: np.ndarray | None = None
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 2:
            raise ValueError(f"Y must be (n_pixels, n_bands), got {self.y.shape}")
        if not np.isfinite(self.y).all():
            raise ValueError("Y contains NaN or Inf")
        if (self.y < 0).any():
            raise ValueError("reflectances must be non-negative")
        if self.a_true is not None:
            self.a_true = np.asarray(self.a_true, dtype=np.float64)
            if self.a_true.shape[0] != self.y.shape[1]:
                raise ValueError(
                    f"A_true has {self.a_true.shape[0]} bands, Y has {self.y.shape[1]}"
                )
        if self.b_true is not None:
            self.b_true = np.asarray(self.b_true, dtype=np.float64)

    @property
    def n_pixels(self) -> int:
        return self.y.shape[0]

    @property
    def n_bands(self) -> int:
        return self.y.shape[1]


def make_synthetic(
    n_endmembers: int, n_bands: int, n_pixels: int, seed: int, noise: float = 0.0
) -> HsiDataset:
    """Noise-optional LMM generator; doubles as the oracle for recovery tests."""
    rng = ad.make_rng(seed)
    a_true = rng.uniform(0.05, 0.95, size=(n_bands, n_endmembers))
    b = rng.dirichlet(np.ones(n_endmembers), size=n_pixels)  # simplex-uniform rows
    y = b @ a_true.T
    if noise > 0.0:
        y = np.maximum(y + noise * rng.standard_normal(y.shape), 0.0)
    return HsiDataset(y=y, a_true=a_true, b_true=b.T)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class UnmixModel:
    """Encoder/decoder weight pair working in the rescaled reflectance space."""

    def __init__(self, enc: np.ndarray, dec: np.ndarray, scale: float):
        self.enc = enc  # (F, K): abundances = rownorm(relu(Y_s @ enc))
        self.dec = dec  # (K, F): reconstruction = tanh(B @ dec)
        self.scale = float(scale)

    @property
    def n_endmembers(self) -> int:
        return self.enc.shape[1]

    @property
    def n_bands(self) -> int:
        return self.enc.shape[0]

    def param_count(self) -> int:
        return self.enc.size + self.dec.size

    def encode(self, y: np.ndarray) -> np.ndarray:
        """Abundances for original-scale spectra; rows land on the unit simplex."""
        s = np.maximum(np.asarray(y, dtype=np.float64) * self.scale @ self.enc, 0.0)
        sums = s.sum(axis=1, keepdims=True)
        dead = sums[:, 0] <= _DEAD_ROW_TOL
        b = s / np.where(dead[:, None], 1.0, sums)
        if dead.any():
            b[dead] = 1.0 / self.n_endmembers
        return b

    def reconstruct(self, y: np.ndarray) -> np.ndarray:
        return np.tanh(self.encode(y) @ self.dec) / self.scale

    def endmembers(self) -> np.ndarray:
        """(F, K) end-members in original scale: the decoder's pure-pixel response.

        tanh is the output activation, so the decoder's rows reach the data
        through it; reading the end-members off as tanh(dec) (rather than dec
        itself) undoes exactly that distortion.
        """
        return np.tanh(self.dec).T / self.scale

    def endmembers_raw(self) -> np.ndarray:
        """(F, K) raw decoder weights mapped back to original scale."""
        return self.dec.T / self.scale


@dataclass
class UnmixResult:
    a_hat: np.ndarray  # (F, K) original scale
    b_hat: np.ndarray  # (N, K) simplex rows
    loss_trace: np.ndarray  # (steps, 2): reconstruction term, volume term
    metrics: dict
    permutation: tuple[int, ...] | None
    model: UnmixModel


# ---------------------------------------------------------------------------
# volume + metrics
# ---------------------------------------------------------------------------


def volume_term(a: np.ndarray) -> float:
    """det(A^T A), the differentiable minimum-volume regularizer."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"need a tall (F, K) matrix, got {a.shape}")
    return ad.lu_det(a.T @ a)


def simplex_volume(a: np.ndarray) -> float:
    """|det|/K! volume of the end-member simplex (Gram form for tall A)."""
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[1]
    return math.sqrt(max(volume_term(a), 0.0)) / math.factorial(k)


def _column_angles(a_true: np.ndarray, a_hat: np.ndarray) -> np.ndarray:
    norms_t = np.linalg.norm(a_true, axis=0)
    norms_h = np.linalg.norm(a_hat, axis=0)
    if (norms_t == 0).any() or (norms_h == 0).any():
        raise ValueError("zero-norm end-member column in SAD")
    cos = (a_true * a_hat).sum(axis=0) / (norms_t * norms_h)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def align_endmembers(a_true: np.ndarray, a_hat: np.ndarray) -> tuple[int, ...]:
    """Column permutation of a_hat minimizing the total spectral angle.

    Exhaustive over K! permutations; apply as ``a_hat[:, perm]``.
    """
    a_true = np.asarray(a_true, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_true.shape != a_hat.shape:
        raise ValueError(f"shape mismatch: {a_true.shape} vs {a_hat.shape}")
    k = a_true.shape[1]
    if k > 6:
        raise ValueError(f"exhaustive alignment supports K <= 6, got {k}")
    best_perm, best_cost = None, np.inf
    for perm in permutations(range(k)):
        cost = _column_angles(a_true, a_hat[:, perm]).sum()
        if cost < best_cost:
            best_perm, best_cost = perm, cost
    return best_perm


def mse_endmembers(a_true: np.ndarray, a_hat: np.ndarray) -> float:
    """Mean squared entrywise difference (mean over all F*K entries)."""
    a_true = np.asarray(a_true, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_true.shape != a_hat.shape:
        raise ValueError(f"shape mismatch: {a_true.shape} vs {a_hat.shape}")
    return float(((a_true - a_hat) ** 2).mean())


def sad_endmembers(a_true: np.ndarray, a_hat: np.ndarray) -> float:
    """arccos of the mean column cosine similarity, in radians."""
    a_true = np.asarray(a_true, dtype=np.float64)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_true.shape != a_hat.shape:
        raise ValueError(f"shape mismatch: {a_true.shape} vs {a_hat.shape}")
    norms_t = np.linalg.norm(a_true, axis=0)
    norms_h = np.linalg.norm(a_hat, axis=0)
    if (norms_t == 0).any() or (norms_h == 0).any():
        raise ValueError("zero-norm end-member column in SAD")
    cos = (a_true * a_hat).sum(axis=0) / (norms_t * norms_h)
    return float(np.arccos(np.clip(cos.mean(), -1.0, 1.0)))


def biorthogonality_report(model: UnmixModel) -> float:
    """Frobenius deviation of enc^T dec^T from I_K (diagnostic, not enforced)."""
    k = model.n_endmembers
    return float(np.linalg.norm(model.enc.T @ model.dec.T - np.eye(k)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class SimplexUnmixer(BaseEstimator, TransformerMixin):
    """sklearn-style unmixer: ``fit`` learns end-members, ``transform`` abundances.

    Fitted attributes: ``endmembers_`` (F, K, original scale),
    ``endmembers_raw_`` (raw decoder weights, original scale), ``model_``,
    ``loss_trace_`` and ``biorthogonality_``.
    """

    def __init__(
        self,
        n_endmembers: int = 3,
        volume_weight: float = 1e-3,
        learning_rate: float = 0.001,
        steps_per_epoch: int = 2000,
        epochs: int = 10,
        batch_size: int = 128,
        scale_max: float = 0.9,
        loss_tolerance: float = 0.0,
        seed: int = 0,
    ):
        self.n_endmembers = n_endmembers
        self.volume_weight = volume_weight
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.epochs = epochs
        self.batch_size = batch_size
        self.scale_max = scale_max
        self.loss_tolerance = loss_tolerance
        self.seed = seed

    def fit(self, X, y=None):
        Y = check_array(X, dtype=np.float64)
        n_pixels, n_bands = Y.shape
        k = self.n_endmembers
        if not 2 <= k <= n_bands:
            raise ValueError(f"need 2 <= K <= n_bands, got K={k}, n_bands={n_bands}")
        if (Y < 0).any():
            raise ValueError("reflectances must be non-negative")

        y_max = Y.max()
        scale = self.scale_max / y_max if y_max > 0 else 1.0
        ys = Y * scale

        rng = ad.make_rng(self.seed)
        limit = math.sqrt(6.0 / (n_bands + k))
        enc = rng.uniform(-limit, limit, size=(n_bands, k))
        dec = rng.uniform(0.0, limit, size=(k, n_bands))  # non-negative from the start

        opt = ad.AdaMax([enc, dec], learning_rate=self.learning_rate)
        trace = np.empty((self.steps_per_epoch * self.epochs, 2))
        step = 0
        stopped = False
        for _ in range(self.epochs):
            for _ in range(self.steps_per_epoch):
                idx = rng.integers(0, n_pixels, size=self.batch_size)
                tape = ad.Tape()
                enc_v = tape.leaf(enc)
                dec_v = tape.leaf(dec)
                yb = tape.constant(ys[idx])
                b = ad.row_normalize(ad.relu(yb @ enc_v))
                recon = ad.tanh(b @ dec_v)
                recon_err = (recon - yb).square().sum() * (1.0 / self.batch_size)
                vol = ad.det(dec_v @ dec_v.T)
                loss = recon_err + self.volume_weight * vol
                loss_val = float(loss.value[0, 0])
                if not np.isfinite(loss_val):
                    raise RuntimeError(f"unmixing loss diverged (NaN/Inf) at step {step}")
                trace[step, 0] = float(recon_err.value[0, 0])
                trace[step, 1] = float(vol.value[0, 0])
                tape.backward(loss)
                enc, dec = opt.step([enc, dec], [enc_v.grad, dec_v.grad])
                dec = np.maximum(dec, 0.0)  # LMM requires non-negative end-members
                step += 1
            if self.loss_tolerance > 0:
                model = UnmixModel(enc, dec, scale)
                full_err = float(np.mean(((model.reconstruct(Y) - Y) * scale) ** 2)) * n_bands
                if full_err <= self.loss_tolerance:
                    stopped = True
                    break

        self.model_ = UnmixModel(enc, dec, scale)
        self.scale_ = scale
        self.endmembers_ = self.model_.endmembers()
        self.endmembers_raw_ = self.model_.endmembers_raw()
        self.loss_trace_ = trace[:step]
        self.stopped_early_ = stopped
        self.biorthogonality_ = biorthogonality_report(self.model_)
        self.n_features_in_ = n_bands
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        Y = check_array(X, dtype=np.float64)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} bands, got {Y.shape[1]}")
        return self.model_.encode(Y)

    def inverse_transform(self, B) -> np.ndarray:
        check_is_fitted(self, "model_")
        B = check_array(B, dtype=np.float64)
        return np.tanh(B @ self.model_.dec) / self.scale_


def unmix_train(
    data: HsiDataset,
    n_endmembers: int,
    volume_weight: float = 1e-3,
    train_cfg=None,
    seed: int = 0,
) -> UnmixResult:
    """Fit the autoencoder on a dataset and score against ground truth if present.

    Metrics are reported on both the original reflectance scale and the
    rescaled training space.
    """
    kwargs = dict(n_endmembers=n_endmembers, volume_weight=volume_weight, seed=seed)
    if train_cfg is not None:
        kwargs.update(
            learning_rate=train_cfg.learning_rate,
            steps_per_epoch=train_cfg.steps_per_epoch,
            epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size,
            loss_tolerance=train_cfg.loss_tolerance,
        )
    est = SimplexUnmixer(**kwargs).fit(data.y)
    model = est.model_
    a_hat = est.endmembers_
    b_hat = est.transform(data.y)

    recon = model.reconstruct(data.y)
    metrics = {
        "reconstruction_mse": float(((recon - data.y) ** 2).mean()),
        "volume_det_gram": volume_term(a_hat),
        "simplex_volume": simplex_volume(a_hat),
        "biorthogonality_dev": est.biorthogonality_,
        "param_count": model.param_count(),
    }
    perm = None
    if data.a_true is not None and data.a_true.shape[1] == n_endmembers:
        perm = align_endmembers(data.a_true, a_hat)
        aligned = a_hat[:, perm]
        metrics["mse_a"] = mse_endmembers(data.a_true, aligned)
        metrics["sad_a"] = sad_endmembers(data.a_true, aligned)
        a_true_scaled = data.a_true * est.scale_
        aligned_scaled = np.tanh(model.dec).T[:, perm]
        metrics["mse_a_scaled"] = mse_endmembers(a_true_scaled, aligned_scaled)
        metrics["sad_a_scaled"] = sad_endmembers(a_true_scaled, aligned_scaled)
    return UnmixResult(
        a_hat=a_hat,
        b_hat=b_hat,
        loss_trace=est.loss_trace_,
        metrics=metrics,
        permutation=perm,
        model=model,
    )
