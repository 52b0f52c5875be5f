"""Closed-form real functions of ``(x, [y,] t)`` given as expression strings."""

from __future__ import annotations

import numpy as np

__all__ = ["Expression", "transition", "NAMESPACE"]


def transition(t, s, t_c):
    """Smooth switch ``0.5 + 0.5 tanh(s (t - t_c))``; rises for ``s > 0``, decays for ``s < 0``."""
    return 0.5 + 0.5 * np.tanh(s * (np.asarray(t, dtype=float) - t_c))


NAMESPACE = {
    "pi": np.pi,
    "e": np.e,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "arctan": np.arctan,
    "arctan2": np.arctan2,
    "where": np.where,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "transition": transition,
}
_VARIABLES = ("x", "y", "t")


class Expression:
    """A numpy-evaluable expression such as ``"1 + 0.5*sin(pi*x)*transition(t, -10, 0.5)"``.

    Only the names in :data:`NAMESPACE` and the variables ``x``, ``y``, ``t``
    are visible; builtins are not.
    """

    def __init__(self, source: str | float | int):
        self.source = str(source).strip()
        self._code = compile(self.source, "<expression>", "eval")
        unknown = set(self._code.co_names) - set(NAMESPACE) - set(_VARIABLES)
        if unknown:
            raise ValueError(f"unknown names in expression {self.source!r}: {sorted(unknown)}")
        self.variables = frozenset(self._code.co_names) & frozenset(_VARIABLES)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def depends_on(self, name: str) -> bool:
        return name in self.variables

    def __call__(self, x=0.0, t=0.0, y=0.0):
        scope = {"x": x, "y": y, "t": t}
        val = eval(self._code, {"__builtins__": {}, **NAMESPACE}, scope)
        shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(t)).shape
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy() if shape else float(val)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.source == self.source

    def __hash__(self):
        return hash(self.source)
