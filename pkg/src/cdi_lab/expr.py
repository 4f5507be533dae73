"""Tiny arithmetic expression language for user supplied densities.

Grammar: numbers, the variable ``x``, the binary operators ``+ - * / **``
(``^`` is accepted as a synonym for ``**``), unary minus, and the calls
``pow(a, b)``, ``exp(a)``, ``log(a)`` and ``sqrt(a)``.  Expressions are
parsed with :mod:`ast` and evaluated with numpy, so they vectorize.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: np.power,
}
_FUNCS = {
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "pow": (2, np.power),
}


class ExpressionError(ValueError):
    pass


def _check(node):
    if isinstance(node, ast.Expression):
        _check(node.body)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left)
        _check(node.right)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError("only unary +/- allowed")
        _check(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError("unknown function")
        if node.keywords or len(node.args) != _FUNCS[node.func.id][0]:
            raise ExpressionError(f"bad arguments to {node.func.id}")
        for arg in node.args:
            _check(arg)
    elif isinstance(node, ast.Name):
        if node.id != "x":
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError("only numeric constants allowed")
    else:
        raise ExpressionError(f"syntax {type(node).__name__} not allowed")


def _eval(node, x):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, x), _eval(node.right, x))
    if isinstance(node, ast.UnaryOp):
        value = _eval(node.operand, x)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id][1](*(_eval(a, x) for a in node.args))
    if isinstance(node, ast.Name):
        return x
    return float(node.value)


class Expression:
    """A compiled density expression, callable on floats or arrays."""

    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        _check(tree)
        self._body = tree.body

    def __call__(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _eval(self._body, np.asarray(x, dtype=float))
        out = np.asarray(out, dtype=float)
        if out.shape != np.shape(x):
            out = np.broadcast_to(out, np.shape(x)).copy()
        return out if out.ndim else float(out)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.source == self.source

    def __hash__(self):
        return hash(("Expression", self.source))
