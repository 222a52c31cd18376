"""Tangent spaces, scores, weighted Hilbert projections, and influence-curve
machinery for finite statistical manifolds.

Differentiation policy: smooth one-parameter families are differentiated by
central differences with steps 1e-3 and 5e-4 plus one Richardson
extrapolation, which keeps truncation error near 1e-10 for the smooth
charts used here.  Mixture paths have closed-form scores and skip finite
differences entirely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .manifold import (
    Distribution,
    InvalidDistributionError,
    SpaceMismatchError,
    StateFunction,
    center,
    density_ratio,
    inner_product,
    norm,
)

__all__ = [
    "Path",
    "Chart",
    "Subspace",
    "InfluenceCurveReport",
    "mixture_path",
    "chart_path",
    "score_of_path",
    "convex_tangent_basis",
    "project",
    "orth_complement",
    "full_tangent_space",
    "pathwise_derivative",
    "verify_influence_curve",
    "eic_from_chart",
    "subspace_residual",
    "saturated_chart",
]

# Central-difference step pair; one Richardson level on top.
FD_STEP = 1e-3
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Path:
    """A one-parameter family of distributions, evaluable on [0, 1] and a
    small margin beyond (needed for endpoint derivatives)."""

    kind: str  # "mixture" or "chart"
    evaluate: Callable[[float], Distribution]
    start: Distribution
    end: Distribution | None = None


def mixture_path(P: Distribution, Q: Distribution) -> Path:
    """Affine path from ``P`` (t=0) to ``Q`` (t=1)."""
    if P.space != Q.space:
        raise SpaceMismatchError("mixture path endpoints on different spaces")
    p, q = P.probs, Q.probs

    def evaluate(t: float) -> Distribution:
        probs = (1.0 - t) * p + t * q
        if probs.min() <= 0.0:
            raise InvalidDistributionError(f"mixture path leaves the simplex at t={t!r}")
        return Distribution(P.space, probs, min_prob=0.0)

    return Path(kind="mixture", evaluate=evaluate, start=P, end=Q)


@dataclass(frozen=True)
class Chart:
    """A smooth local parameterization of a family of distributions.

    ``build`` must produce valid distributions on an open neighborhood of
    ``base``.  ``theta_coords`` optionally flags which coordinates move the
    target parameter (pure metadata; nothing here depends on it).
    """

    names: tuple[str, ...]
    base: np.ndarray
    build: Callable[[np.ndarray], Distribution]
    theta_coords: tuple[bool, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        if len(self.names) != self.base.shape[0]:
            raise ValueError("parameter names and base vector disagree in length")

    @property
    def n_params(self) -> int:
        return len(self.names)

    def distribution(self) -> Distribution:
        return self.build(self.base)

    def path(self, direction: Sequence[float]) -> Path:
        return chart_path(self, direction)

    def coordinate_path(self, j: int) -> Path:
        e = np.zeros(self.n_params)
        e[j] = 1.0
        return chart_path(self, e)

    def scores(self) -> list[StateFunction]:
        """Scores of all coordinate paths at the base point."""
        return [score_of_path(self.coordinate_path(j)) for j in range(self.n_params)]


def chart_path(chart: Chart, direction: Sequence[float]) -> Path:
    d = np.asarray(direction, dtype=float)

    def evaluate(t: float) -> Distribution:
        return chart.build(chart.base + t * d)

    return Path(kind="chart", evaluate=evaluate, start=chart.distribution())


def _richardson(fn: Callable[[float], np.ndarray], h: float = FD_STEP) -> np.ndarray:
    """Central difference at 0 with one Richardson extrapolation step."""
    d1 = (fn(h) - fn(-h)) / (2.0 * h)
    d2 = (fn(h / 2.0) - fn(-h / 2.0)) / h
    return (4.0 * d2 - d1) / 3.0


def score_of_path(path: Path) -> StateFunction:
    """d/dt log p_t at t=0, a mean-zero function under the path's start.

    Mixture paths use the exact closed form (density ratio minus one);
    everything else is differentiated numerically and re-centered.
    """
    P0 = path.start
    if path.kind == "mixture":
        assert path.end is not None
        return density_ratio(P0, path.end) - 1.0

    # Differentiate the probability vector, not its logarithm: p_t is smooth
    # (often affine) in t, so the quotient p'(0)/p(0) avoids the 1/p blow-up
    # that differencing log p suffers near small probabilities.
    def probs(t: float) -> np.ndarray:
        p = path.evaluate(t).probs
        if p.min() <= 0.0:
            raise InvalidDistributionError(f"non-positive probability on path at t={t!r}")
        return p

    raw = StateFunction(P0.space, _richardson(probs) / P0.probs)
    return center(raw, P0)


def convex_tangent_basis(members: Sequence[Distribution], P: Distribution) -> "Subspace":
    """Tangent space at ``P`` of a convex family, spanned by the centered
    density ratios of its members (rank-pruned)."""
    if not members:
        raise ValueError("need at least one member distribution")
    return Subspace(P, [density_ratio(P, Q) - 1.0 for Q in members])


class Subspace:
    """A subspace of the mean-zero functions at a base distribution.

    The basis handed in is centered, orthonormalized in the base-weighted
    inner product, and rank-pruned (relative singular-value cutoff
    ``RANK_TOL``), so stored bases are always orthonormal and reports built
    from them are deterministic.
    """

    __slots__ = ("base", "matrix")

    def __init__(
        self,
        base: Distribution,
        functions: Iterable[StateFunction],
        prune_tol: float = RANK_TOL,
        scale: float | None = None,
    ):
        cols = []
        for f in functions:
            if f.space != base.space:
                raise SpaceMismatchError("basis function on a different space")
            cols.append(f.values - base.probs @ f.values)
        k = len(base.space)
        raw = np.column_stack(cols) if cols else np.zeros((k, 0))
        sqrt_w = np.sqrt(base.probs)
        u, s, _ = np.linalg.svd(sqrt_w[:, None] * raw, full_matrices=False)
        # ``scale`` sets an absolute floor so all-noise inputs (e.g. the
        # residuals of an already-contained basis) collapse to dimension 0.
        cutoff = prune_tol * (s[0] if s.size else 0.0)
        if scale is not None:
            cutoff = max(cutoff, prune_tol * scale)
        keep = s > cutoff
        self.base = base
        self.matrix = u[:, keep] / sqrt_w[:, None]
        self.matrix.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def basis(self) -> list[StateFunction]:
        return [StateFunction(self.base.space, self.matrix[:, j]) for j in range(self.dim)]

    def __repr__(self) -> str:
        return f"Subspace(dim={self.dim}, states={len(self.base.space)})"

    def coords(self, f: StateFunction) -> np.ndarray:
        """Coefficients of the projection of centered ``f`` onto the basis."""
        fc = f.values - self.base.probs @ f.values
        return self.matrix.T @ (self.base.probs * fc)


def project(f: StateFunction, S: Subspace) -> StateFunction:
    """Orthogonal projection of ``f`` (centered at the base) onto ``S`` in
    the base-weighted inner product."""
    if f.space != S.base.space:
        raise SpaceMismatchError("function and subspace on different spaces")
    return StateFunction(f.space, S.matrix @ S.coords(f))


def full_tangent_space(P: Distribution) -> Subspace:
    """All mean-zero functions at ``P`` (dimension: number of states minus 1)."""
    k = len(P.space)
    eye = np.eye(k)[:, : k - 1]
    return Subspace(P, [StateFunction(P.space, eye[:, j]) for j in range(k - 1)])


def orth_complement(S: Subspace, within: Subspace | None = None) -> Subspace:
    """Orthogonal complement of ``S`` inside ``within`` (default: the full
    mean-zero space at the base)."""
    ambient = within if within is not None else full_tangent_space(S.base)
    if ambient.base.space != S.base.space or not ambient.base.close_to(S.base):
        raise ValueError("subspaces must share the same base distribution")
    residuals = []
    for b in ambient.basis:
        residuals.append(b - project(b, S))
    # The ambient basis is orthonormal, so unit scale separates genuine
    # complement directions from projection round-off.
    return Subspace(S.base, residuals, scale=1.0)


def subspace_residual(A: Subspace, B: Subspace) -> float:
    """Max norm of a unit basis vector of ``A`` after removing its projection
    onto ``B``; zero (to tolerance) certifies A is contained in B."""
    if A.base.space != B.base.space or not A.base.close_to(B.base):
        raise ValueError("subspaces must share the same base distribution")
    worst = 0.0
    for a in A.basis:
        r = a - project(a, B)
        worst = max(worst, norm(r, A.base))
    return worst


def pathwise_derivative(
    theta: Callable[[Distribution], float], path: Path, t: float = 0.0
) -> float:
    """d/ds theta(path(t+s)) at s=0, central differences plus Richardson."""

    def g(s: float) -> np.ndarray:
        return np.asarray(theta(path.evaluate(t + s)), dtype=float)

    return float(_richardson(g))


@dataclass(frozen=True)
class InfluenceCurveReport:
    """Per-path gaps between the pathwise derivative of the target and the
    candidate curve's inner product with the path score."""

    gaps: tuple[float, ...]
    tolerance: float
    max_gap: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        worst = max(self.gaps) if self.gaps else 0.0
        object.__setattr__(self, "max_gap", worst)
        object.__setattr__(self, "passed", worst <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "kind": "influence_curve",
            "tolerance": self.tolerance,
            "max_gap": self.max_gap,
            "pass": self.passed,
            "gaps": list(self.gaps),
        }


def verify_influence_curve(
    IC: StateFunction,
    theta: Callable[[Distribution], float],
    paths: Sequence[Path],
    P: Distribution,
    tol: float,
) -> InfluenceCurveReport:
    """Check the defining property of an influence curve: along every path,
    the derivative of the target equals the inner product of the candidate
    with the path score at ``P``.  An empty path list passes vacuously."""
    gaps = []
    for path in paths:
        lhs = pathwise_derivative(theta, path)
        rhs = inner_product(IC, score_of_path(path), P)
        gaps.append(abs(lhs - rhs))
    return InfluenceCurveReport(gaps=tuple(gaps), tolerance=tol)


def eic_from_chart(
    chart: Chart,
    theta: Callable[[Distribution], float],
    P: Distribution | None = None,
) -> StateFunction:
    """Efficient influence curve of ``theta`` for the model the chart spans.

    Solves the Gram system so the result lies in the span of the chart
    scores and pairs with every score to the matching coordinate derivative
    of ``theta``.  Over-parameterized charts (rank-deficient score Gram) are
    pruned with a warning; the returned function is unaffected because null
    directions contribute nothing.
    """
    base_dist = chart.distribution()
    if P is not None:
        if not base_dist.close_to(P, tol=1e-9):
            raise ValueError("chart base does not reproduce the given distribution")
        base_dist = P
    scores = chart.scores()
    grads = np.array(
        [pathwise_derivative(theta, chart.coordinate_path(j)) for j in range(chart.n_params)]
    )
    w = base_dist.probs
    score_mat = np.column_stack([s.values for s in scores])
    gram = score_mat.T @ (w[:, None] * score_mat)
    u, s, vt = np.linalg.svd(gram)
    keep = s > RANK_TOL * s[0]
    dropped = int(np.sum(~keep))
    if dropped:
        warnings.warn(
            f"score Gram matrix is rank deficient; pruned {dropped} chart direction(s)",
            stacklevel=2,
        )
    inv = vt.T[:, keep] @ ((u[:, keep] / s[keep]).T)
    coeffs = inv @ grads
    return StateFunction(base_dist.space, score_mat @ coeffs)


def saturated_chart(P: Distribution) -> Chart:
    """Full multinomial chart at ``P``: the first K-1 state probabilities are
    free coordinates and the last is the complement."""
    k = len(P.space)
    names = tuple(f"p{i}" for i in range(k - 1))
    space = P.space

    def build(params: np.ndarray) -> Distribution:
        probs = np.empty(k)
        probs[:-1] = params
        probs[-1] = 1.0 - params.sum()
        if probs.min() <= 0.0:
            raise InvalidDistributionError("saturated chart left the simplex")
        return Distribution(space, probs, min_prob=0.0)

    return Chart(names=names, base=P.probs[:-1].copy(), build=build)
