"""A small arithmetic expression language for fields given in configuration files.

Accepted: numbers, the named variables, ``pi``, ``+ - * /``, ``^`` or ``**``
for powers, unary minus, and calls to ``sin cos sinh exp atan``. Anything
else is rejected before evaluation.
"""
from __future__ import annotations

import ast
from typing import Sequence

import numpy as np

from bflow.errors import ConfigError

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "sinh": np.sinh, "exp": np.exp, "atan": np.arctan}
CONSTANTS = {"pi": np.pi}

_ALLOWED = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class Expr:
    """Compiled expression over named variables; evaluates elementwise on arrays."""

    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.variables = tuple(variables)
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ConfigError(f"unsupported syntax {type(node).__name__} in {text!r}")
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ConfigError(f"unsupported literal {node.value!r} in {text!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                    raise ConfigError(f"unknown function in {text!r}")
                if len(node.args) != 1 or node.keywords:
                    raise ConfigError(f"functions take exactly one argument in {text!r}")
            if isinstance(node, ast.Name) and not isinstance(getattr(node, "ctx", None), ast.Load):
                raise ConfigError(f"invalid name use in {text!r}")
        names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        unknown = names - set(FUNCTIONS) - set(CONSTANTS) - set(self.variables)
        if unknown:
            raise ConfigError(f"unknown names {sorted(unknown)} in {text!r}; variables are {list(self.variables)}")
        self._code = compile(tree, "<expr>", "eval")

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"expected {len(self.variables)} arguments")
        env = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS, **dict(zip(self.variables, args))}
        return eval(self._code, env)  # noqa: S307 -- the tree is whitelisted above

    def on_points(self, points) -> np.ndarray:
        """Evaluate on a point batch ``(N, d)`` whose columns are the variables in order."""
        p = np.atleast_2d(np.asarray(points))
        out = self(*[p[:, k] for k in range(len(self.variables))])
        return np.broadcast_to(np.asarray(out), (len(p),)).copy()

    def __repr__(self):
        return f"Expr({self.text!r})"


def coordinate_names(dim: int) -> tuple:
    if dim == 1:
        return ("x",)
    return tuple(f"x{k + 1}" for k in range(dim))
