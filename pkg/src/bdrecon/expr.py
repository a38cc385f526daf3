"""Small expression language for conductivity phantoms and boundary data.

Grammar: numbers, the names ``x1``, ``x2``, ``theta``, ``pi``, ``e``, the
binary operators ``+ - * / ^`` (``**`` is accepted as a synonym for ``^``),
unary minus, and the functions ``exp log sqrt sin cos tan tanh abs max min``.

Expressions are evaluated on numpy arrays together with first derivatives
(forward-mode, dual numbers), so a single parse provides both ``u`` and
``grad u``, or ``f(theta)`` and ``df/dtheta`` on the unit circle.

At a tie ``a == b`` inside ``max``/``min`` the derivative of smaller
magnitude is used.  For ``max(0, cos(theta))`` this gives a tangential
derivative of 0 at ``theta = +-pi/2``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np

__all__ = ["Expression", "ExpressionError", "parse", "TIE_TOL"]

TIE_TOL = 1e-12

ArrayLike = Union[float, np.ndarray]


class ExpressionError(ValueError):
    pass


class Dual:
    """Value plus a stack of directional derivatives (axis 0 = direction)."""

    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v
        self.d = d

    @staticmethod
    def const(c, template):
        return Dual(np.broadcast_to(np.float64(c), template.v.shape).copy(),
                    np.zeros_like(template.d))

    def __add__(self, o):
        return Dual(self.v + o.v, self.d + o.d)

    def __sub__(self, o):
        return Dual(self.v - o.v, self.d - o.d)

    def __mul__(self, o):
        return Dual(self.v * o.v, self.d * o.v + self.v * o.d)

    def __truediv__(self, o):
        return Dual(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __pow__(self, o):
        if not np.any(o.d):
            # constant exponent
            c = o.v
            v = self.v ** c
            with np.errstate(divide="ignore", invalid="ignore"):
                dv = np.where(c == 0, 0.0, c * self.v ** (c - 1))
            return Dual(v, self.d * dv)
        v = self.v ** o.v
        return Dual(v, v * (o.d * np.log(self.v) + o.v * self.d / self.v))


def _chain(x: Dual, f, df) -> Dual:
    return Dual(f(x.v), x.d * df(x.v))


def _select(a: Dual, b: Dual, take_a: np.ndarray) -> Dual:
    tie = np.abs(a.v - b.v) <= TIE_TOL * np.maximum(1.0, np.abs(a.v))
    v = np.where(take_a, a.v, b.v)
    d = np.where(take_a, a.d, b.d)
    smaller = np.where(np.abs(a.d) <= np.abs(b.d), a.d, b.d)
    d = np.where(tie, smaller, d)
    return Dual(v, d)


_UNARY = {
    "exp": lambda x: _chain(x, np.exp, np.exp),
    "log": lambda x: _chain(x, np.log, lambda v: 1.0 / v),
    "sqrt": lambda x: _chain(x, np.sqrt, lambda v: 0.5 / np.sqrt(v)),
    "sin": lambda x: _chain(x, np.sin, np.cos),
    "cos": lambda x: _chain(x, np.cos, lambda v: -np.sin(v)),
    "tan": lambda x: _chain(x, np.tan, lambda v: 1.0 / np.cos(v) ** 2),
    "tanh": lambda x: _chain(x, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2),
    "abs": lambda x: _chain(x, np.abs, np.sign),
}

_BINARY_FUNCS = {
    "max": lambda a, b: _select(a, b, a.v >= b.v),
    "min": lambda a, b: _select(a, b, a.v <= b.v),
}

_CONSTANTS = {"pi": np.pi, "e": np.e}
_VARIABLES = ("x1", "x2", "theta")


def _check(node: ast.AST, src: str) -> None:
    allowed = (
        ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant,
        ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Load,
    )
    for sub in ast.walk(node):
        if not isinstance(sub, allowed):
            raise ExpressionError(
                f"unsupported syntax {type(sub).__name__} in {src!r}"
            )
        if isinstance(sub, ast.Constant) and not isinstance(sub.value, (int, float)):
            raise ExpressionError(f"non-numeric constant {sub.value!r} in {src!r}")
        if isinstance(sub, ast.Call):
            if not isinstance(sub.func, ast.Name):
                raise ExpressionError(f"unsupported call in {src!r}")
            name = sub.func.id
            if name in _UNARY:
                if len(sub.args) != 1 or sub.keywords:
                    raise ExpressionError(f"{name} takes one argument in {src!r}")
            elif name in _BINARY_FUNCS:
                if len(sub.args) != 2 or sub.keywords:
                    raise ExpressionError(f"{name} takes two arguments in {src!r}")
            else:
                raise ExpressionError(f"unknown function {name!r} in {src!r}")
        if isinstance(sub, ast.Name):
            if (sub.id not in _VARIABLES and sub.id not in _CONSTANTS
                    and sub.id not in _UNARY and sub.id not in _BINARY_FUNCS):
                raise ExpressionError(f"unknown name {sub.id!r} in {src!r}")


def _eval(node: ast.AST, env: Dict[str, Dual], template: Dual) -> Dual:
    if isinstance(node, ast.Expression):
        return _eval(node.body, env, template)
    if isinstance(node, ast.Constant):
        return Dual.const(float(node.value), template)
    if isinstance(node, ast.Name):
        if node.id in _CONSTANTS:
            return Dual.const(_CONSTANTS[node.id], template)
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        x = _eval(node.operand, env, template)
        return -x if isinstance(node.op, ast.USub) else x
    if isinstance(node, ast.BinOp):
        a = _eval(node.left, env, template)
        b = _eval(node.right, env, template)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return a / b
        return a ** b
    if isinstance(node, ast.Call):
        name = node.func.id
        args = [_eval(a, env, template) for a in node.args]
        if name in _UNARY:
            return _UNARY[name](args[0])
        return _BINARY_FUNCS[name](*args)
    raise ExpressionError(f"cannot evaluate {ast.dump(node)}")  # pragma: no cover


@dataclass(frozen=True)
class Expression:
    """A parsed expression over ``x1``, ``x2`` and ``theta``."""

    source: str
    _tree: ast.Expression = field(repr=False, compare=False)

    @property
    def names(self) -> set:
        return {n.id for n in ast.walk(self._tree)
                if isinstance(n, ast.Name) and n.id in _VARIABLES}

    @property
    def is_constant(self) -> bool:
        return not self.names

    def _run(self, values: Dict[str, np.ndarray], tangents: Dict[str, np.ndarray]):
        shape = np.broadcast(*values.values()).shape
        k = next(iter(tangents.values())).shape[0]
        env = {}
        for name in _VARIABLES:
            v = np.broadcast_to(np.asarray(values[name], dtype=float), shape)
            t = np.broadcast_to(np.asarray(tangents[name], dtype=float).reshape(
                (k,) + (1,) * len(shape)), (k,) + shape)
            env[name] = Dual(v.copy(), t.copy())
        template = env["x1"]
        out = _eval(self._tree, env, template)
        return out.v, out.d

    def __call__(self, x1: ArrayLike, x2: ArrayLike, theta: ArrayLike = None) -> np.ndarray:
        """Value at points ``(x1, x2)``; ``theta`` defaults to ``atan2(x2, x1)``."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if theta is None:
            theta = np.arctan2(x2, x1)
        v, _ = self._run({"x1": x1, "x2": x2, "theta": np.asarray(theta, float)},
                         {"x1": np.zeros(1), "x2": np.zeros(1), "theta": np.zeros(1)})
        return v

    def value_and_grad(self, x1: ArrayLike, x2: ArrayLike):
        """Value and gradient ``(d/dx1, d/dx2)`` at points in the plane.

        ``theta`` is not allowed here since it has no gradient at the origin.
        """
        if "theta" in self.names:
            raise ExpressionError("gradient of an expression in theta is not supported")
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        v, d = self._run({"x1": x1, "x2": x2, "theta": np.zeros(np.broadcast(x1, x2).shape)},
                         {"x1": np.array([1.0, 0.0]), "x2": np.array([0.0, 1.0]),
                          "theta": np.zeros(2)})
        return v, d

    def on_circle(self, theta: ArrayLike):
        """Value and arc-length derivative ``d/dtheta`` on the unit circle."""
        theta = np.asarray(theta, dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        env = {"x1": c, "x2": s, "theta": theta}
        shape = theta.shape
        values = env
        tangents = {"x1": -s, "x2": c, "theta": np.ones_like(theta)}
        # tangents vary per point, so build the duals directly
        duals = {n: Dual(np.broadcast_to(values[n], shape).astype(float),
                         np.broadcast_to(tangents[n], shape).astype(float)[None, ...])
                 for n in _VARIABLES}
        out = _eval(self._tree, duals, duals["x1"])
        return out.v, out.d[0]


def parse(src: Union[str, float, int, "Expression"]) -> Expression:
    if isinstance(src, Expression):
        return src
    if isinstance(src, (int, float)):
        src = repr(float(src))
    text = str(src).replace("^", "**")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {src!r}: {exc.msg}") from None
    _check(tree, str(src))
    return Expression(str(src), tree)

