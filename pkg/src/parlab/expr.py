"""Tiny expression grammar for inline data in run configs.

Names: ``x1``, ``x2``, ``t``, ``r`` (= |x|), ``pi``. Functions: ``sin``,
``cos``, ``exp``, ``sqrt``, ``abs``. Operators: ``+ - * / ^ **``.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}
BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
          ast.Div: np.divide, ast.Pow: np.power}


def _check(node, names):
    if isinstance(node, ast.Expression):
        return _check(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return
    if isinstance(node, ast.Name):
        if node.id not in names:
            raise ConfigError(f"unknown name {node.id!r} in expression")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in BINOPS:
        _check(node.left, names)
        _check(node.right, names)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _check(node.operand, names)
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in FUNCS and len(node.args) == 1 and not node.keywords):
        return _check(node.args[0], names)
    raise ConfigError(f"unsupported syntax in expression: {ast.dump(node)[:60]}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    return FUNCS[node.func.id](_eval(node.args[0], env))


class Expr:
    """Compiled expression, callable as ``f(x, t)`` with ``x`` of shape (n, ...)."""

    def __init__(self, text, n):
        self.text = str(text)
        self.n = n
        names = {"t", "r", "pi"} | {f"x{i + 1}" for i in range(n)}
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
        _check(tree, names)
        self.tree = tree.body
        self.uses_t = any(isinstance(nd, ast.Name) and nd.id == "t" for nd in ast.walk(tree))
        # lets the stepper cache a source that does not depend on t
        self.time_independent = not self.uses_t

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        env = {"t": np.asarray(t, dtype=float), "pi": np.pi,
               "r": np.sqrt(np.sum(x * x, axis=0))}
        for i in range(self.n):
            env[f"x{i + 1}"] = x[i]
        with np.errstate(all="ignore"):
            out = _eval(self.tree, env)
        return np.broadcast_to(out, x.shape[1:]).astype(float)

    def __repr__(self):
        return f"Expr({self.text!r})"
