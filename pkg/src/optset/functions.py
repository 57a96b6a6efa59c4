"""Function sources: analytic expressions and fitted networks, interchangeably.

Every solver consumes a :class:`FunctionSource`: something that maps a batch
of points (n_points, n_in) to scalar values (n_points,) and optionally knows
its gradient. Analytic sources wrap vectorized callables; fitted sources wrap
a trained net. Downstream code never needs to know which one it got.
"""

from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

FD_STEP = 1e-5


def _as_points(x, n_in: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if n_in == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ValueError(f"expected points of dimension {n_in}, got shape {x.shape}")
    return x


class FunctionSource:
    """Scalar field over R^n with an optional gradient."""

    def __init__(self, n_in: int, name: str = "f"):
        self.n_in = n_in
        self.name = name

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def has_analytic_gradient(self) -> bool:
        return False

    def gradient(self, x) -> np.ndarray:
        """(n_points, n_in) gradient; central differences unless overridden."""
        x = _as_points(x, self.n_in)
        grad = np.empty_like(x)
        for j in range(self.n_in):
            hi = x.copy()
            hi[:, j] += FD_STEP
            lo = x.copy()
            lo[:, j] -= FD_STEP
            grad[:, j] = (self(hi) - self(lo)) / (2.0 * FD_STEP)
        return grad


class AnalyticFunction(FunctionSource):
    """Wraps a vectorized callable (n_points, n_in) -> (n_points,)."""

    def __init__(
        self,
        n_in: int,
        fn: Callable[[np.ndarray], np.ndarray],
        grad_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        name: str = "f",
    ):
        super().__init__(n_in, name)
        self._fn = fn
        self._grad_fn = grad_fn

    def __call__(self, x) -> np.ndarray:
        x = _as_points(x, self.n_in)
        out = np.asarray(self._fn(x), dtype=np.float64)
        return out.reshape(x.shape[0])

    def has_analytic_gradient(self) -> bool:
        return self._grad_fn is not None

    def gradient(self, x) -> np.ndarray:
        if self._grad_fn is None:
            return super().gradient(x)
        x = _as_points(x, self.n_in)
        g = np.asarray(self._grad_fn(x), dtype=np.float64)
        return g.reshape(x.shape[0], self.n_in)


class FittedFunction(FunctionSource):
    """A trained net posing as a function; records how well the fit went."""

    def __init__(self, net, final_mse: float, loss_trace, heldout_max_err: float | None = None,
                 name: str = "fitted"):
        super().__init__(net.config.n_in, name)
        self.net = net
        self.final_mse = float(final_mse)
        self.loss_trace = np.asarray(loss_trace, dtype=np.float64)
        self.heldout_max_err = heldout_max_err

    def __call__(self, x) -> np.ndarray:
        x = _as_points(x, self.n_in)
        out = self.net.forward(x)
        if out.shape[1] != 1:
            raise ValueError("FittedFunction needs a scalar-output net")
        return out[:, 0]


def difference(f: FunctionSource, g: FunctionSource, name: str = "h") -> FunctionSource:
    """h = f - g (signed; sign changes localize roots)."""
    if f.n_in != g.n_in:
        raise ValueError(f"dimension mismatch: f has {f.n_in}, g has {g.n_in}")

    out = AnalyticFunction(f.n_in, lambda x: f(x) - g(x), name=name)
    if f.has_analytic_gradient() and g.has_analytic_gradient():
        out._grad_fn = lambda x: f.gradient(x) - g.gradient(x)
    else:
        out.gradient = lambda x: f.gradient(x) - g.gradient(x)  # type: ignore[method-assign]
        out.has_analytic_gradient = lambda: f.has_analytic_gradient() and g.has_analytic_gradient()  # type: ignore[method-assign]
    return out


def squared_difference(f: FunctionSource, g: FunctionSource, name: str = "h") -> FunctionSource:
    """h = (f - g)^2, the single-objective minimization form."""
    if f.n_in != g.n_in:
        raise ValueError(f"dimension mismatch: f has {f.n_in}, g has {g.n_in}")
    return AnalyticFunction(f.n_in, lambda x: (f(x) - g(x)) ** 2, name=name)


# ---------------------------------------------------------------------------
# expression parsing (custom problem files, CLI constraints)
# ---------------------------------------------------------------------------

_ALLOWED_CALLS = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "cosh": np.cosh,
    "sinh": np.sinh,
    "arctan2": np.arctan2,
    "atan2": np.arctan2,
}

_ALLOWED_NAMES = {"pi": math.pi, "e": math.e}


def _compile_node(node: ast.AST, n_vars: int, source: str):
    if isinstance(node, ast.Expression):
        return _compile_node(node.body, n_vars, source)
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ValueError(f"bad constant {node.value!r} in {source!r}")
        value = float(node.value)
        return lambda x: value
    if isinstance(node, ast.Name):
        name = node.id
        if name in _ALLOWED_NAMES:
            value = _ALLOWED_NAMES[name]
            return lambda x: value
        if name == "x" and n_vars == 1:
            return lambda x: x[:, 0]
        if name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:]) - 1
            if not 0 <= idx < n_vars:
                raise ValueError(f"variable {name} out of range for arity {n_vars} in {source!r}")
            return lambda x: x[:, idx]
        raise ValueError(f"unknown name {name!r} in {source!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _compile_node(node.operand, n_vars, source)
        if isinstance(node.op, ast.USub):
            return lambda x: -inner(x)
        return inner
    if isinstance(node, ast.BinOp):
        lhs = _compile_node(node.left, n_vars, source)
        rhs = _compile_node(node.right, n_vars, source)
        ops = {
            ast.Add: lambda a, b: a + b,
            ast.Sub: lambda a, b: a - b,
            ast.Mult: lambda a, b: a * b,
            ast.Div: lambda a, b: a / b,
            ast.Pow: lambda a, b: a**b,
        }
        fn = ops.get(type(node.op))
        if fn is None:
            raise ValueError(f"operator {type(node.op).__name__} not allowed in {source!r}")
        return lambda x: fn(lhs(x), rhs(x))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise ValueError(f"bad call in {source!r}")
        fn = _ALLOWED_CALLS.get(node.func.id)
        if fn is None:
            raise ValueError(f"function {node.func.id!r} not allowed in {source!r}")
        args = [_compile_node(a, n_vars, source) for a in node.args]
        return lambda x: fn(*(a(x) for a in args))
    raise ValueError(f"unsupported syntax {type(node).__name__} in {source!r}")


def parse_expression(expr: str, n_vars: int, name: str = "f") -> AnalyticFunction:
    """Compile an infix expression over x1..xn into an AnalyticFunction.

    Allowed: + - * / **, exp, log, sin, cos, tan, sqrt, abs, tanh, cosh,
    sinh, arctan2, and the constants pi and e. For n_vars == 1 the bare
    name ``x`` is an alias for ``x1``.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc}") from exc
    fn = _compile_node(tree, n_vars, expr)
    return AnalyticFunction(n_vars, lambda x: np.broadcast_to(
        np.asarray(fn(x), dtype=np.float64), (x.shape[0],)
    ).copy(), name=name)


def parse_inequality(text: str, n_vars: int) -> AnalyticFunction:
    """Turn 'lhs <= rhs' or 'lhs >= rhs' into q(x) with the q(x) <= 0 convention."""
    for op in ("<=", ">="):
        if op in text:
            lhs_s, rhs_s = text.split(op, 1)
            lhs = parse_expression(lhs_s.strip(), n_vars)
            rhs = parse_expression(rhs_s.strip(), n_vars)
            if op == "<=":
                fn = lambda x: lhs(x) - rhs(x)  # noqa: E731
            else:
                fn = lambda x: rhs(x) - lhs(x)  # noqa: E731
            return AnalyticFunction(n_vars, fn, name=text.strip())
    raise ValueError(f"constraint {text!r} must contain '<=' or '>='")


def parse_function_file(path) -> list[tuple[str, int, AnalyticFunction]]:
    """Read a problem file: one 'name, arity, expression' line per function.

    Blank lines and '#' comments are skipped. The caller assigns roles by
    name prefix (f* objectives, p* equalities, q*/g* inequalities in the
    q(x) <= 0 convention).
    """
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",", 2)
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'name, arity, expression'")
            name = parts[0].strip()
            try:
                arity = int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad arity {parts[1]!r}") from exc
            fn = parse_expression(parts[2].strip(), arity, name=name)
            entries.append((name, arity, fn))
    if not entries:
        raise ValueError(f"{path}: no function definitions found")
    return entries
