"""Closed-form parameter expressions from config files.

Expressions are arithmetic over a fixed set of variable names, numeric
constants and ``pi``/``e``: ``+ - * / **``, unary minus and parentheses
(``^`` is read as ``**``). The text is checked by walking its syntax tree before sympy sees it, so
no arbitrary code is evaluated. Derivatives come from sympy.
"""
from __future__ import annotations

import ast

import numpy as np
import sympy as sp

__all__ = ["ExprError", "Expr", "parse_expr"]

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)
_CONSTS = {"pi": sp.pi, "e": sp.E}


class ExprError(ValueError):
    """Expression outside the supported mini-language."""


def _check(node, allowed):
    if isinstance(node, ast.Expression):
        return _check(node.body, allowed)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, allowed)
        _check(node.right, allowed)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
        _check(node.operand, allowed)
        return
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id in allowed or node.id in _CONSTS:
            return
        raise ExprError(f"unknown name {node.id!r}; allowed: {sorted(allowed)}")
    raise ExprError(f"unsupported syntax {type(node).__name__}")


class Expr:
    """A parsed expression in the variables ``names``.

    Calling it evaluates on broadcast numpy arrays and always returns an
    array of the broadcast shape (constants are expanded).
    """

    def __init__(self, text, names):
        self.text = str(text)
        self.names = tuple(names)
        try:
            tree = ast.parse(self.text.strip().replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse {self.text!r}: {exc.msg}") from exc
        _check(tree, set(self.names))
        self.symbols = sp.symbols(self.names)
        local = dict(zip(self.names, self.symbols))
        local.update(_CONSTS)
        self.sym = sp.sympify(self.text.replace("^", "**"), locals=local)
        self._f = sp.lambdify(self.symbols, self.sym, modules="numpy")

    def __call__(self, *args):
        args = [np.asarray(a, dtype=float) for a in args]
        val = np.asarray(self._f(*args), dtype=float)
        shape = np.broadcast_shapes(*(a.shape for a in args)) if args else ()
        return np.broadcast_to(val, shape).astype(float)

    def diff(self, name) -> "Expr":
        d = sp.diff(self.sym, sp.Symbol(name))
        return Expr(str(d), self.names)

    @property
    def is_zero(self) -> bool:
        return self.sym == 0

    def __repr__(self):
        return f"Expr({self.text!r}, {self.names})"


def parse_expr(text, names) -> Expr:
    """Parse numbers as well as strings (a number is a constant expression)."""
    if isinstance(text, bool):
        raise ExprError("booleans are not expressions")
    if isinstance(text, (int, float)):
        text = repr(float(text))
    return Expr(text, names)
