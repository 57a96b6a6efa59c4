"""Reverse-mode autodiff tape, AdaMax updates, and small-matrix determinants.

Everything trains through this module: values are dense float64 matrices,
each operation appends a record to a :class:`Tape`, and ``Tape.backward``
walks the records in reverse creation order (creation order is already
topological because an op can only reference earlier nodes).

The op set is deliberately small: exactly what the four L2 losses of the
toolkit need, plus ``transpose`` and ``row_normalize`` which the
sum-to-one abundance head requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Seeded generator used everywhere; PCG64 gives the same stream on every
# platform for a given 64-bit seed.
RNG_ALGORITHM = "PCG64"

# Cofactor expansion stays cheap only for tiny matrices; every use in the
# toolkit has K <= 4 and k + m <= 8.
MAX_DET_SIZE = 8

_DEAD_ROW_TOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator (same stream on all platforms)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _as_matrix(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"tape values must be scalars or matrices, got ndim={a.ndim}")
    return np.ascontiguousarray(a)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce an output gradient back to an operand's (possibly broadcast) shape."""
    if grad.shape == shape:
        return grad
    if shape == (1, 1):
        return grad.sum().reshape(1, 1)
    if shape[0] == 1 and shape[1] == grad.shape[1]:
        return grad.sum(axis=0, keepdims=True)
    raise ValueError(f"cannot reduce gradient {grad.shape} to {shape}")


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    if a == b or a == (1, 1) or b == (1, 1):
        return True
    # row-wise bias: (n, k) op (1, k)
    return a[1] == b[1] and (a[0] == 1 or b[0] == 1)


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    aux: dict = field(default_factory=dict)


class Var:
    """Handle to one tape node; supports the usual arithmetic operators."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self) -> tuple[int, int]:
        return self.tape.nodes[self.idx].value.shape

    @property
    def grad(self) -> np.ndarray:
        g = self.tape.grads[self.idx]
        if g is None:
            return np.zeros_like(self.value)
        return g

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape._apply("add", self, self._coerce(other))

    def __radd__(self, other):
        return self.tape.constant(other).__add__(self)

    def __sub__(self, other):
        return self.tape._apply("sub", self, self._coerce(other))

    def __rsub__(self, other):
        return self.tape.constant(other).__sub__(self)

    def __mul__(self, other):
        return self.tape._apply("mul", self, self._coerce(other))

    def __rmul__(self, other):
        return self.tape.constant(other).__mul__(self)

    def __truediv__(self, other):
        return self.tape._apply("div", self, self._coerce(other))

    def __rtruediv__(self, other):
        return self.tape.constant(other).__truediv__(self)

    def __matmul__(self, other):
        return self.tape._apply("matmul", self, self._coerce(other))

    def __neg__(self):
        return self.tape.constant(-1.0) * self

    def sum(self):
        return self.tape._apply("sum", self)

    def mean(self):
        return self.tape._apply("mean", self)

    def max(self):
        return self.tape._apply("max", self)

    def square(self):
        return self.tape._apply("square", self)

    def fro_norm(self):
        return self.tape._apply("fro_norm", self)

    @property
    def T(self):
        return self.tape._apply("transpose", self)


class Tape:
    """Operation records plus the reverse sweep over them."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: list[np.ndarray | None] = []

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        self.grads.append(None)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Differentiable input (network weights, probe points)."""
        return self._push(Node("leaf", (), _as_matrix(value)))

    def constant(self, value) -> Var:
        """Input that participates in the forward pass only."""
        return self._push(Node("const", (), _as_matrix(value)))

    def _apply(self, op: str, *inputs: Var) -> Var:
        vals = [self.nodes[v.idx].value for v in inputs]
        value, aux = _FORWARD[op](*vals)
        return self._push(Node(op, tuple(v.idx for v in inputs), value, aux))

    def backward(self, output: Var) -> None:
        """Accumulate d(output)/d(node) for every node reachable from output."""
        out_node = self.nodes[output.idx]
        if out_node.value.size != 1:
            raise ValueError(
                f"backward needs a scalar output node, got shape {out_node.value.shape}"
            )
        self.grads = [None] * len(self.nodes)
        self.grads[output.idx] = np.ones((1, 1))
        for idx in range(output.idx, -1, -1):
            g = self.grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            if not node.parents:
                continue
            parent_vals = [self.nodes[p].value for p in node.parents]
            parent_grads = _BACKWARD[node.op](g, node.value, node.aux, *parent_vals)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if self.grads[p] is None:
                    self.grads[p] = pg.copy()
                else:
                    self.grads[p] += pg


# ---------------------------------------------------------------------------
# forward/backward rules
# ---------------------------------------------------------------------------


def _fwd_add(a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ValueError(f"add shapes {a.shape} vs {b.shape}")
    return a + b, {}


def _fwd_sub(a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ValueError(f"sub shapes {a.shape} vs {b.shape}")
    return a - b, {}


def _fwd_mul(a, b):
    if not (a.shape == b.shape or a.shape == (1, 1) or b.shape == (1, 1)):
        raise ValueError(f"mul shapes {a.shape} vs {b.shape}")
    return a * b, {}


def _fwd_div(a, b):
    if not (a.shape == b.shape or b.shape == (1, 1)):
        raise ValueError(f"div shapes {a.shape} vs {b.shape}")
    return a / b, {}


def _fwd_matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} vs {b.shape}")
    return a @ b, {}


def _fwd_softmax(a):
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p, {}


def _fwd_row_normalize(a):
    s = a.sum(axis=1, keepdims=True)
    dead = s[:, 0] <= _DEAD_ROW_TOL
    safe = np.where(dead[:, None], 1.0, s)
    out = a / safe
    if dead.any():
        out = out.copy()
        out[dead] = 1.0 / a.shape[1]
    return out, {"dead": dead, "sums": safe}


def _fwd_det(a):
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"det needs a square matrix, got {a.shape}")
    if a.shape[0] > MAX_DET_SIZE:
        raise ValueError(f"det supports size <= {MAX_DET_SIZE}, got {a.shape[0]}")
    value, grad = det_with_grad(a)
    return np.array([[value]]), {"cof": grad}


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "matmul": _fwd_matmul,
    "square": lambda a: (a * a, {}),
    "abs": lambda a: (np.abs(a), {}),
    "exp": lambda a: (np.exp(a), {}),
    "log": lambda a: (np.log(a), {}),
    "sqrt": lambda a: (np.sqrt(a), {}),
    "tanh": lambda a: (np.tanh(a), {}),
    "relu": lambda a: (np.maximum(a, 0.0), {}),
    "softmax": _fwd_softmax,
    "sum": lambda a: (a.sum().reshape(1, 1), {}),
    "mean": lambda a: (a.mean().reshape(1, 1), {}),
    "max": lambda a: (a.max().reshape(1, 1), {"argmax": int(a.argmax())}),
    "fro_norm": lambda a: (np.array([[np.sqrt((a * a).sum())]]), {}),
    "transpose": lambda a: (np.ascontiguousarray(a.T), {}),
    "row_normalize": _fwd_row_normalize,
    "det": _fwd_det,
}


def _bwd_mul(g, out, aux, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bwd_div(g, out, aux, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _bwd_softmax(g, out, aux, a):
    inner = (g * out).sum(axis=1, keepdims=True)
    return (out * (g - inner),)


def _bwd_max(g, out, aux, a):
    grad = np.zeros_like(a)
    grad.flat[aux["argmax"]] = g[0, 0]
    return (grad,)


def _bwd_fro_norm(g, out, aux, a):
    norm = max(out[0, 0], 1e-300)
    return (g[0, 0] * a / norm,)


def _bwd_row_normalize(g, out, aux, a):
    s = aux["sums"]
    grad = (g - (g * out).sum(axis=1, keepdims=True)) / s
    grad[aux["dead"]] = 0.0
    return (grad,)


_BACKWARD = {
    "add": lambda g, out, aux, a, b: (
        _unbroadcast(g, a.shape),
        _unbroadcast(g, b.shape),
    ),
    "sub": lambda g, out, aux, a, b: (
        _unbroadcast(g, a.shape),
        _unbroadcast(-g, b.shape),
    ),
    "mul": _bwd_mul,
    "div": _bwd_div,
    "matmul": lambda g, out, aux, a, b: (g @ b.T, a.T @ g),
    "square": lambda g, out, aux, a: (2.0 * a * g,),
    "abs": lambda g, out, aux, a: (np.sign(a) * g,),
    "exp": lambda g, out, aux, a: (out * g,),
    "log": lambda g, out, aux, a: (g / a,),
    "sqrt": lambda g, out, aux, a: (0.5 * g / out,),
    "tanh": lambda g, out, aux, a: ((1.0 - out * out) * g,),
    "relu": lambda g, out, aux, a: ((a > 0.0) * g,),
    "softmax": _bwd_softmax,
    "sum": lambda g, out, aux, a: (np.full_like(a, g[0, 0]),),
    "mean": lambda g, out, aux, a: (np.full_like(a, g[0, 0] / a.size),),
    "max": _bwd_max,
    "fro_norm": _bwd_fro_norm,
    "transpose": lambda g, out, aux, a: (np.ascontiguousarray(g.T),),
    "row_normalize": _bwd_row_normalize,
    "det": lambda g, out, aux, a: (g[0, 0] * aux["cof"],),
}


def tanh(v: Var) -> Var:
    return v.tape._apply("tanh", v)


def relu(v: Var) -> Var:
    return v.tape._apply("relu", v)


def exp(v: Var) -> Var:
    return v.tape._apply("exp", v)


def log(v: Var) -> Var:
    return v.tape._apply("log", v)


def sqrt(v: Var) -> Var:
    return v.tape._apply("sqrt", v)


def absolute(v: Var) -> Var:
    return v.tape._apply("abs", v)


def softmax(v: Var) -> Var:
    return v.tape._apply("softmax", v)


def row_normalize(v: Var) -> Var:
    """Divide each row by its sum; all-zero rows fall back to the uniform row."""
    return v.tape._apply("row_normalize", v)


def det(v: Var) -> Var:
    return v.tape._apply("det", v)


# ---------------------------------------------------------------------------
# determinants (own LU; numpy.linalg is used only as an oracle in the tests)
# ---------------------------------------------------------------------------


def _lu_decompose(m: np.ndarray):
    """Doolittle LU with partial pivoting. Returns (LU, row permutation, sign)."""
    n = m.shape[0]
    lu = m.astype(np.float64, copy=True)
    perm = np.arange(n)
    sign = 1.0
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(lu[col:, col])))
        if pivot != col:
            lu[[col, pivot]] = lu[[pivot, col]]
            perm[[col, pivot]] = perm[[pivot, col]]
            sign = -sign
        p = lu[col, col]
        if p == 0.0:
            continue
        for row in range(col + 1, n):
            factor = lu[row, col] / p
            lu[row, col] = factor
            lu[row, col + 1 :] -= factor * lu[col, col + 1 :]
    return lu, perm, sign


def lu_det(m: np.ndarray) -> float:
    """Determinant via LU with partial pivoting."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"determinant needs a square matrix, got {m.shape}")
    if m.shape[0] == 0:
        return 1.0
    lu, _, sign = _lu_decompose(m)
    return float(sign * np.prod(np.diag(lu)))


def _lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = lu.shape[0]
    x = rhs[perm].astype(np.float64, copy=True)
    for col in range(n):  # forward substitution, unit lower triangle
        x[col + 1 :] -= np.outer(lu[col + 1 :, col], x[col])
    for col in range(n - 1, -1, -1):  # back substitution
        x[col] /= lu[col, col]
        x[:col] -= np.outer(lu[:col, col], x[col])
    return x


def _cofactor_matrix(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    if n == 1:
        return np.ones((1, 1))
    cof = np.empty((n, n))
    rows = np.arange(n)
    for i in range(n):
        minor_rows = rows != i
        for j in range(n):
            minor = m[np.ix_(minor_rows, rows != j)]
            cof[i, j] = ((-1.0) ** (i + j)) * lu_det(minor)
    return cof


def det_with_grad(m: np.ndarray) -> tuple[float, np.ndarray]:
    """Determinant and its gradient d(det)/dM (the cofactor matrix).

    Invertible matrices use det(M) * inv(M)^T from the LU factors; singular
    or badly pivoted ones fall back to direct cofactor expansion, so the
    gradient is defined everywhere.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"determinant needs a square matrix, got {m.shape}")
    n = m.shape[0]
    if n > MAX_DET_SIZE:
        raise ValueError(f"determinant supports size <= {MAX_DET_SIZE}, got {n}")
    if n == 1:
        return float(m[0, 0]), np.ones((1, 1))
    lu, perm, sign = _lu_decompose(m)
    diag = np.diag(lu)
    value = float(sign * np.prod(diag))
    scale = np.abs(m).max()
    if scale == 0.0 or np.abs(diag).min() <= 1e-13 * scale:
        return value, _cofactor_matrix(m)
    inv = _lu_solve(lu, perm, np.eye(n))
    return value, value * inv.T


# ---------------------------------------------------------------------------
# AdaMax
# ---------------------------------------------------------------------------


@dataclass
class AdaMaxState:
    """Per-matrix optimizer state.

    The denominator uses max(u, epsilon_guard) rather than u alone: u is zero
    until the first nonzero gradient, and a floor (unlike an additive epsilon)
    leaves well-scaled updates bit-exact.
    """

    t: int
    m: np.ndarray
    u: np.ndarray
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_guard: float = 1e-8


def adamax_init(shape: tuple[int, ...], learning_rate: float = 0.001) -> AdaMaxState:
    return AdaMaxState(t=0, m=np.zeros(shape), u=np.zeros(shape), learning_rate=learning_rate)


def adamax_step(
    params: np.ndarray, grads: np.ndarray, state: AdaMaxState
) -> tuple[np.ndarray, AdaMaxState]:
    """One AdaMax update; returns the new parameters and state (inputs untouched)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    u = np.maximum(state.beta2 * state.u, np.abs(grads))
    scale = state.learning_rate / (1.0 - state.beta1**t)
    new_params = params - scale * m / np.maximum(u, state.epsilon_guard)
    return new_params, replace(state, t=t, m=m, u=u)


class AdaMax:
    """Convenience wrapper updating a list of parameter matrices in lockstep."""

    def __init__(self, params: list[np.ndarray], learning_rate: float = 0.001):
        self.states = [adamax_init(p.shape, learning_rate) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            new_p, self.states[i] = adamax_step(p, g, self.states[i])
            out.append(new_p)
        return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    ad_grad: np.ndarray
    fd_grad: np.ndarray
    rel_err: np.ndarray
    max_rel_err: float


def _eval_scalar(fn, point: np.ndarray) -> float:
    tape = Tape()
    out = fn(tape.leaf(point))
    if out.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    return float(out.value[0, 0])


def grad_check(fn, point, step: float = 1e-5) -> GradCheckReport:
    """Compare the tape gradient of ``fn`` against central finite differences.

    ``fn`` maps a leaf Var to a scalar Var; ``point`` is where to probe.
    Relative error per entry is |ad - fd| / max(1, |ad|, |fd|).
    """
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    point = _as_matrix(point)
    tape = Tape()
    x = tape.leaf(point)
    out = fn(x)
    if out.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    tape.backward(out)
    ad = x.grad.copy()

    fd = np.zeros_like(point)
    for i in range(point.shape[0]):
        for j in range(point.shape[1]):
            bumped = point.copy()
            bumped[i, j] += step
            hi = _eval_scalar(fn, bumped)
            bumped[i, j] -= 2.0 * step
            lo = _eval_scalar(fn, bumped)
            fd[i, j] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
    rel = np.abs(ad - fd) / denom
    return GradCheckReport(ad_grad=ad, fd_grad=fd, rel_err=rel, max_rel_err=float(rel.max()))


def _battery_specs(rng: np.random.Generator):
    """One scalar composite per tape op, probed away from non-smooth points."""
    m34 = rng.uniform(-1.0, 1.0, (3, 4))
    w42 = rng.uniform(-1.0, 1.0, (4, 2))
    smooth = lambda r: r.uniform(-2.0, 2.0, (3, 4))  # noqa: E731
    # keep |x| >= 0.2 so relu/abs kinks stay a safe distance from the probes
    kink_free = lambda r: (lambda x: np.sign(x) * (np.abs(x) + 0.2))(r.uniform(-2.0, 2.0, (3, 4)))  # noqa: E731
    return {
        "add": (smooth, lambda x: (x + x.tape.constant(m34)).square().sum()),
        "sub": (smooth, lambda x: (x - x.tape.constant(m34)).square().sum()),
        "mul": (smooth, lambda x: (x * x.tape.constant(m34)).square().sum()),
        "div": (smooth, lambda x: (x / (x.square() + 2.0)).sum()),
        "matmul": (smooth, lambda x: ((x @ x.tape.constant(w42)).square()).sum()),
        "square": (smooth, lambda x: x.square().sum()),
        "abs": (kink_free, lambda x: (absolute(x) * x.tape.constant(m34)).sum()),
        "exp": (smooth, lambda x: exp(x * 0.5).sum()),
        "log": (smooth, lambda x: log(x.square() + 0.5).sum()),
        "sqrt": (smooth, lambda x: sqrt(x.square() + 0.5).sum()),
        "tanh": (smooth, lambda x: (tanh(x) * x.tape.constant(m34)).sum()),
        "relu": (kink_free, lambda x: (relu(x) * x.tape.constant(m34)).sum()),
        "softmax": (smooth, lambda x: (softmax(x) * x.tape.constant(m34)).square().sum()),
        "sum": (smooth, lambda x: (x.sum() * x.sum())),
        "mean": (smooth, lambda x: x.square().mean()),
        "max": (smooth, lambda x: x.max() * x.max()),
        "fro_norm": (smooth, lambda x: x.fro_norm()),
        "transpose": (smooth, lambda x: (x.T * x.tape.constant(m34.T)).square().sum()),
        "row_normalize": (
            smooth,
            lambda x: (row_normalize(x.square() + 0.1) * x.tape.constant(m34)).square().sum(),
        ),
        "det": (lambda r: r.uniform(-2.0, 2.0, (3, 3)), lambda x: det(x)),
    }


def grad_check_battery(
    points_per_op: int = 6, seed: int = 0, step: float = 1e-5
) -> dict[str, float]:
    """Max grad_check relative error per tape op over seeded random probes."""
    rng = make_rng(seed)
    specs = _battery_specs(rng)
    report: dict[str, float] = {}
    for op, (draw, fn) in specs.items():
        worst = 0.0
        for _ in range(points_per_op):
            worst = max(worst, grad_check(fn, draw(rng), step).max_rel_err)
        report[op] = worst
    return report
