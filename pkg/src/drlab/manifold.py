"""Finite sample spaces, strictly positive distributions, and the weighted
Hilbert-space primitives (expectations, inner products, density ratios,
mixtures) that everything else is built on.

All types are immutable after construction and all operations are pure, so
values can be shared freely across threads.
"""

from __future__ import annotations

from typing import Any, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "SpaceMismatchError",
    "InvalidDistributionError",
    "SampleSpace",
    "Distribution",
    "StateFunction",
    "expectation",
    "inner_product",
    "density_ratio",
    "mixture",
    "center",
    "norm",
]


class SpaceMismatchError(ValueError):
    """Operands live on different sample spaces."""


class InvalidDistributionError(ValueError):
    """Probability vector violates positivity or normalization."""


class SampleSpace:
    """An ordered, finite list of states, each a tuple of named variable values.

    Variable values must be real-valued (or castable to float); categorical
    levels are encoded by their numeric codes before construction.
    """

    __slots__ = ("variables", "states", "_columns", "_lookup")

    def __init__(self, variables: Sequence[str], states: Iterable[Sequence[Any]]):
        self.variables = tuple(variables)
        self.states = tuple(tuple(s) for s in states)
        if not self.states:
            raise ValueError("sample space must contain at least one state")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("variable names must be distinct")
        for s in self.states:
            if len(s) != len(self.variables):
                raise ValueError(f"state {s!r} does not match variables {self.variables}")
        if len(set(self.states)) != len(self.states):
            raise ValueError("states must be pairwise distinct")
        self._columns = {
            name: np.array([float(s[j]) for s in self.states])
            for j, name in enumerate(self.variables)
        }
        for arr in self._columns.values():
            arr.flags.writeable = False
        self._lookup = {s: i for i, s in enumerate(self.states)}

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, SampleSpace):
            return NotImplemented
        return self.variables == other.variables and self.states == other.states

    def __hash__(self) -> int:
        return hash((self.variables, self.states))

    def __repr__(self) -> str:
        return f"SampleSpace(variables={self.variables}, n_states={len(self)})"

    def column(self, name: str) -> np.ndarray:
        """Per-state values of one variable, as a read-only float vector."""
        return self._columns[name]

    def index_of(self, state: Sequence[Any]) -> int:
        return self._lookup[tuple(state)]

    def function(self, fn: Callable[..., float]) -> "StateFunction":
        """Tabulate ``fn(**variables)`` over all states."""
        values = [fn(**dict(zip(self.variables, s))) for s in self.states]
        return StateFunction(self, np.array(values, dtype=float))


def _check_same_space(a, b) -> None:
    if a.space != b.space:
        raise SpaceMismatchError(f"sample spaces differ: {a.space!r} vs {b.space!r}")


class Distribution:
    """A strictly positive probability vector over a sample space.

    Strict positivity is enforced at construction (all points of the manifold
    are mutually absolutely continuous, so density ratios and log-scores are
    always defined).  The vector must sum to 1 within ``sum_tol`` and is then
    renormalized exactly.
    """

    __slots__ = ("space", "probs")

    def __init__(
        self,
        space: SampleSpace,
        probs: Sequence[float] | np.ndarray,
        *,
        min_prob: float = 1e-8,
        sum_tol: float = 1e-12,
    ):
        p = np.asarray(probs, dtype=float).copy()
        if p.shape != (len(space),):
            raise InvalidDistributionError(
                f"expected {len(space)} probabilities, got shape {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise InvalidDistributionError("probabilities must be finite")
        if np.any(p < min_prob):
            raise InvalidDistributionError(
                f"probabilities must be >= {min_prob:g} (min found {p.min():g})"
            )
        total = p.sum()
        if abs(total - 1.0) > sum_tol:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")
        p /= total
        p.flags.writeable = False
        self.space = space
        self.probs = p

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=6)})"

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])

    def close_to(self, other: "Distribution", tol: float = 1e-12) -> bool:
        _check_same_space(self, other)
        return bool(np.max(np.abs(self.probs - other.probs)) <= tol)


class StateFunction:
    """A real-valued function on the states of a sample space.

    Supports pointwise arithmetic with scalars and with other functions on
    the same space, which keeps estimating-function formulas readable.
    """

    __slots__ = ("space", "values")

    def __init__(self, space: SampleSpace, values: Sequence[float] | np.ndarray):
        v = np.asarray(values, dtype=float).copy()
        if v.shape != (len(space),):
            raise ValueError(f"expected {len(space)} values, got shape {v.shape}")
        v.flags.writeable = False
        self.space = space
        self.values = v

    def __repr__(self) -> str:
        return f"StateFunction({np.array2string(self.values, precision=6)})"

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, StateFunction):
            _check_same_space(self, other)
            return other.values
        return np.asarray(other, dtype=float)

    def __add__(self, other):
        return StateFunction(self.space, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return StateFunction(self.space, self.values - self._coerce(other))

    def __rsub__(self, other):
        return StateFunction(self.space, self._coerce(other) - self.values)

    def __mul__(self, other):
        return StateFunction(self.space, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return StateFunction(self.space, self.values / self._coerce(other))

    def __neg__(self):
        return StateFunction(self.space, -self.values)


def expectation(f: StateFunction, P: Distribution) -> float:
    """Mean of ``f`` under ``P``: sum of P(x) f(x) over all states."""
    _check_same_space(f, P)
    return float(P.probs @ f.values)


def inner_product(f: StateFunction, g: StateFunction, P: Distribution) -> float:
    """P-weighted inner product, the Fisher metric on the finite simplex."""
    _check_same_space(f, g)
    _check_same_space(f, P)
    return float(np.sum(P.probs * f.values * g.values))


def norm(f: StateFunction, P: Distribution) -> float:
    """P-weighted L2 norm of ``f``."""
    return float(np.sqrt(max(inner_product(f, f, P), 0.0)))


def density_ratio(P: Distribution, Q: Distribution) -> StateFunction:
    """The pointwise ratio dQ/dP; its expectation under ``P`` is 1."""
    _check_same_space(P, Q)
    return StateFunction(P.space, Q.probs / P.probs)


def mixture(P: Distribution, Q: Distribution, t: float) -> Distribution:
    """The convex combination (1-t) P + t Q for t in [0, 1]."""
    _check_same_space(P, Q)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"mixture weight t={t!r} outside [0, 1]")
    # Endpoints and interior mixtures inherit positivity from the operands.
    return Distribution(P.space, (1.0 - t) * P.probs + t * Q.probs, min_prob=0.0)


def center(f: StateFunction, P: Distribution) -> StateFunction:
    """Subtract the P-mean, mapping ``f`` into the mean-zero space at ``P``."""
    return StateFunction(f.space, f.values - expectation(f, P))
