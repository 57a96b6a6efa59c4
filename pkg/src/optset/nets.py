"""Compact dense feed-forward networks sized by (width, depth).

No dropout, no batch normalization, no kernel regularization anywhere:
the networks stay small enough that plain L2 training is stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "relu", "softmax")

_ACT_CODES = {"identity": 0, "tanh": 1, "relu": 2, "softmax": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

_MAGIC = b"DNET"
_FORMAT_VERSION = 1


@dataclass
class NetConfig:
    """Architecture of one dense net: n_in -> [width x depth hidden] -> n_out."""

    n_in: int
    width: int
    depth: int
    n_out: int
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    use_biases: bool = True
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_in, self.width, self.depth, self.n_out) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    def param_count(self) -> int:
        w, d = self.width, self.depth
        count = self.n_in * w + (d - 1) * w * w + w * self.n_out
        if self.use_biases:
            count += d * w + self.n_out
        return count


def _apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return x
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "softmax":
        e = np.exp(x - x.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation {name!r}")


def _apply_activation_var(name: str, v: ad.Var) -> ad.Var:
    if name == "identity":
        return v
    if name == "tanh":
        return ad.tanh(v)
    if name == "relu":
        return ad.relu(v)
    if name == "softmax":
        return ad.softmax(v)
    raise ValueError(f"unknown activation {name!r}")


class DenseNet:
    """Plain MLP with seeded scaled-uniform weights and zero biases.

    ``forward`` is the fast numpy path used for inference and grid scans;
    ``forward_var`` builds the same computation on a tape for training.
    The two paths are asserted equal in the tests.
    """

    def __init__(self, config: NetConfig):
        config.validate()
        self.config = config
        rng = ad.make_rng(config.seed)
        dims = [config.n_in] + [config.width] * config.depth + [config.n_out]
        self.weights = [
            ad.glorot_uniform(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        ]
        if config.use_biases:
            self.biases = [np.zeros((1, dims[i + 1])) for i in range(len(dims) - 1)]
        else:
            self.biases = None

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        if self.biases is None:
            return list(self.weights)
        return list(self.weights) + list(self.biases)

    def set_parameters(self, params: list[np.ndarray]) -> None:
        n_w = len(self.weights)
        self.weights = [p for p in params[:n_w]]
        if self.biases is not None:
            self.biases = [p for p in params[n_w:]]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward passes -----------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.config.n_in == 1 else x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.config.n_in:
            raise ValueError(f"expected (n, {self.config.n_in}) input, got {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        cfg = self.config
        h = x
        for layer, w in enumerate(self.weights):
            h = h @ w
            if self.biases is not None:
                h = h + self.biases[layer]
            act = cfg.output_activation if layer == len(self.weights) - 1 else cfg.hidden_activation
            h = _apply_activation(act, h)
        return h

    def forward_var(self, tape: ad.Tape, x, params: list[ad.Var] | None = None) -> ad.Var:
        """Tape forward; ``params`` are the leaf Vars in parameters() order."""
        if params is None:
            params = [tape.leaf(p) for p in self.parameters()]
        cfg = self.config
        n_w = len(self.weights)
        h = x if isinstance(x, ad.Var) else tape.constant(self._check_input(x))
        for layer in range(n_w):
            h = h @ params[layer]
            if self.biases is not None:
                h = h + params[n_w + layer]
            act = cfg.output_activation if layer == n_w - 1 else cfg.hidden_activation
            h = _apply_activation_var(act, h)
        return h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    # -- persistence ----------------------------------------------------------
    # Flat binary: magic, u32 version, then the config as little-endian i64
    # (n_in, width, depth, n_out, hidden code, output code, use_biases, seed),
    # then every parameter matrix row-major float64 in parameters() order.

    def save(self, path) -> None:
        cfg = self.config
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _FORMAT_VERSION))
            fh.write(
                struct.pack(
                    "<8q",
                    cfg.n_in,
                    cfg.width,
                    cfg.depth,
                    cfg.n_out,
                    _ACT_CODES[cfg.hidden_activation],
                    _ACT_CODES[cfg.output_activation],
                    int(cfg.use_biases),
                    cfg.seed,
                )
            )
            for p in self.parameters():
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a net file (magic {magic!r})")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported net format version {version}")
            fields = struct.unpack("<8q", fh.read(64))
            cfg = NetConfig(
                n_in=fields[0],
                width=fields[1],
                depth=fields[2],
                n_out=fields[3],
                hidden_activation=_ACT_NAMES[fields[4]],
                output_activation=_ACT_NAMES[fields[5]],
                use_biases=bool(fields[6]),
                seed=fields[7],
            )
            net = cls(cfg)
            params = []
            for ref in net.parameters():
                raw = fh.read(ref.size * 8)
                if len(raw) != ref.size * 8:
                    raise ValueError(f"{path}: truncated weight data")
                params.append(np.frombuffer(raw, dtype="<f8").reshape(ref.shape).copy())
            net.set_parameters(params)
        return net


def mlp_new(config: NetConfig) -> DenseNet:
    """Build a dense net from its config (seeded, deterministic)."""
    return DenseNet(config)


def param_count(model) -> int:
    """Exact trainable-parameter count of a DenseNet or any model exposing one."""
    return model.param_count()
