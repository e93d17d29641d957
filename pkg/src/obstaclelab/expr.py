"""A small arithmetic grammar for boundary data in config files.

Supported: numbers, ``pi``, ``e``, variables ``x1 x2 x3 t``, the operators
``+ - * / ^`` with the usual precedence (``**`` is a synonym of ``^``), unary
minus, and ``abs``, ``max``, ``min`` (elementwise, two or more arguments).
Anything else is rejected at parse time.
"""

from __future__ import annotations

import ast
import math

import numpy as np

__all__ = ["ExpressionError", "Expression", "parse"]

VARIABLES = ("x1", "x2", "x3", "t")
CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _check(node):
    if isinstance(node, ast.Expression):
        return _check(node.body)
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left)
        _check(node.right)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError("only unary + and - are allowed")
        _check(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in ("abs", "max", "min"):
            raise ExpressionError("only abs, max and min may be called")
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        want = 1 if node.func.id == "abs" else 2
        if (want == 1 and len(node.args) != 1) or len(node.args) < want:
            raise ExpressionError(f"wrong number of arguments to {node.func.id}")
        for a in node.args:
            _check(a)
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"bad constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in VARIABLES and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r}")
    else:
        raise ExpressionError(f"syntax {type(node).__name__} not allowed")


def _eval(node, env):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call):
        args = [_eval(a, env) for a in node.args]
        if node.func.id == "abs":
            return np.abs(args[0])
        fn = np.maximum if node.func.id == "max" else np.minimum
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    if isinstance(node, ast.Constant):
        return float(node.value)
    if node.id in CONSTANTS:
        return CONSTANTS[node.id]
    if node.id not in env:
        raise ExpressionError(f"variable {node.id!r} has no value here")
    return env[node.id]


class Expression:
    """Parsed expression; call with ``(*coords)`` or ``(t, *coords)``."""

    def __init__(self, text: str):
        self.text = text
        try:
            # ``^`` binds looser than ``*`` in Python; rewrite it as ``**``
            tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
        except SyntaxError as err:
            raise ExpressionError(f"cannot parse {text!r}: {err.msg}") from None
        _check(tree)
        self._tree = tree.body
        self.names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}

    @property
    def uses_time(self) -> bool:
        return "t" in self.names

    def evaluate(self, t=None, coords=()):
        env = {f"x{i + 1}": np.asarray(c, dtype=float) for i, c in enumerate(coords)}
        if t is not None:
            env["t"] = float(t)
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
        out = np.asarray(_eval(self._tree, env), dtype=float)
        return np.broadcast_to(out, shape).copy() if shape else out

    def spatial(self, t: float = 0.0):
        """Function of the coordinates only, with ``t`` frozen."""
        return lambda *x: self.evaluate(t, x)

    def schedule(self):
        """Function ``(t, *coords)`` for time-dependent boundary data."""
        return lambda t, *x: self.evaluate(t, x)

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse(text: str) -> Expression:
    return Expression(text)
