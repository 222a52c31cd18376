"""Exponential- and mixture-type parallel transports between points of the
finite simplex, their duality gap, and the two subspace diagnostics built on
the mixture transport (flatness and curvature-freeness residuals).

Both transports are globally defined point-to-point maps on the strictly
positive simplex, so no path data is needed and compositions are exact.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

from .manifold import (
    Distribution,
    StateFunction,
    center,
    density_ratio,
    expectation,
    inner_product,
)
from .tangent import Subspace, subspace_residual

__all__ = [
    "TransportReport",
    "e_transport",
    "m_transport",
    "duality_gap",
    "m_transport_subspace",
    "m_flatness_residual",
    "m_curvature_residual",
]

CENTERING_TOL = 1e-10


def _centered_input(D: StateFunction, P: Distribution, op: str) -> StateFunction:
    mean = expectation(D, P)
    if abs(mean) > CENTERING_TOL:
        warnings.warn(
            f"{op}: input has mean {mean:.3e} at the source point; centering first",
            stacklevel=3,
        )
        return center(D, P)
    return D


def e_transport(D: StateFunction, P: Distribution, Q: Distribution) -> StateFunction:
    """Recenter ``D`` at the destination: D minus its mean under ``Q``."""
    D = _centered_input(D, P, "e_transport")
    return D - expectation(D, Q)


def m_transport(D: StateFunction, P: Distribution, Q: Distribution) -> StateFunction:
    """Reweight ``D`` by the density ratio dP/dQ; mean-zero at ``Q``."""
    D = _centered_input(D, P, "m_transport")
    return density_ratio(Q, P) * D


def duality_gap(
    D1: StateFunction, D2: StateFunction, P: Distribution, Q: Distribution
) -> float:
    """|<D1, D2>_P - <e-transported D1, m-transported D2>_Q|.

    The two transports are metric-dual, so this is zero in exact arithmetic
    for mean-zero inputs.
    """
    lhs = inner_product(D1, D2, P)
    rhs = inner_product(e_transport(D1, P, Q), m_transport(D2, P, Q), Q)
    return abs(lhs - rhs)


def m_transport_subspace(S: Subspace, target: Distribution) -> Subspace:
    """Basis-wise mixture transport of a subspace to ``target``, re-pruned
    and re-orthonormalized there."""
    source = S.base
    return Subspace(target, [m_transport(b, source, target) for b in S.basis])


def m_flatness_residual(
    section_tangent_at_member: Subspace,
    section_tangent_at_base: Subspace,
    P: Distribution,
) -> float:
    """Containment defect of the transported member tangent space inside the
    base tangent space; zero certifies flatness at this pair of points."""
    moved = m_transport_subspace(section_tangent_at_member, P)
    return subspace_residual(moved, section_tangent_at_base)


def m_curvature_residual(
    eic: StateFunction,
    section_tangent_at_member: Subspace,
    P: Distribution,
) -> float:
    """Max pairing at ``P`` between the candidate efficient influence curve
    and the transported unit tangent directions of a member; zero certifies
    the curve stays orthogonal to the transported space."""
    source = section_tangent_at_member.base
    worst = 0.0
    for b in section_tangent_at_member.basis:
        worst = max(worst, abs(inner_product(eic, m_transport(b, source, P), P)))
    return worst


@dataclass(frozen=True)
class TransportReport:
    """Outcome of one transport diagnostic over a collection of probe pairs."""

    kind: str  # "duality" | "flatness" | "curvature-free"
    tolerance: float
    pairs: tuple[float, ...]
    config: dict = field(default_factory=dict)
    max_gap: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        worst = max(self.pairs) if self.pairs else 0.0
        object.__setattr__(self, "max_gap", worst)
        object.__setattr__(self, "passed", worst <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tolerance": self.tolerance,
            "max_gap": self.max_gap,
            "pass": self.passed,
            "pairs": list(self.pairs),
            "config": self.config,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)
