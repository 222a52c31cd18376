"""Verification engine for estimating-function properties: identification
checks, brute-force double-robustness sweeps, section-wise orthogonality
(necessity and the two-sided equivalence), convexity probes, transport
invariance, and the flatness/curvature diagnostics.

Universal quantifiers ("for any nuisance value", "for any section member")
are approximated by seeded grids and samplers; every report embeds the
sizes and seeds it was produced with, and reductions are max/argmax by
lowest index so reports are identical under any evaluation order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .manifold import Distribution, StateFunction, expectation, inner_product, mixture
from .models import (
    EstimatingFunction,
    ModelInstance,
    Parameterization,
    Section,
    eic_estfun,
    nuisance_grid,
    sample_section,
)
from .tangent import eic_from_chart, pathwise_derivative
from .transport import TransportReport, m_curvature_residual, m_flatness_residual

__all__ = [
    "EstimatingFunctionReport",
    "DRReport",
    "OrthoReport",
    "IffReport",
    "ConvexityReport",
    "EInvarianceReport",
    "FlatnessReport",
    "check_estimating_function",
    "dr_bruteforce",
    "necessity_check",
    "iff_check",
    "convexity_check",
    "e_invariance_check",
    "flatness_suite",
]

PATH_POINTS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class EstimatingFunctionReport:
    """Identification diagnostics at the truth: unbiasedness, separation of
    the estimating equation away from the truth, and the second moment."""

    model: str
    estimating_function: str
    tolerance: float
    unbiasedness: float
    theta_grid: tuple[float, ...]
    offtruth_means: tuple[float, ...]
    second_moment: float
    passed: bool = field(init=False)

    def __post_init__(self):
        identified = all(abs(v) > self.tolerance for v in self.offtruth_means)
        ok = self.unbiasedness <= self.tolerance and identified and np.isfinite(self.second_moment)
        object.__setattr__(self, "passed", bool(ok))

    def to_dict(self) -> dict:
        return {
            "kind": "estimating_function",
            "model": self.model,
            "estimating_function": self.estimating_function,
            "tolerance": self.tolerance,
            "unbiasedness": self.unbiasedness,
            "theta_grid": list(self.theta_grid),
            "offtruth_means": list(self.offtruth_means),
            "second_moment": self.second_moment,
            "pass": self.passed,
        }


def check_estimating_function(
    instance: ModelInstance,
    D: EstimatingFunction,
    P: Distribution,
    theta_grid: Sequence[float] | None = None,
    tol: float = 1e-10,
    parameterization: Parameterization | None = None,
) -> EstimatingFunctionReport:
    """Verify the three defining conditions at the truth: mean zero, nonzero
    mean at every nearby wrong target value, and a finite second moment.
    The default grid spans +/- 0.2 around the truth in 9 steps with the
    center removed."""
    param = parameterization or instance.parameterization
    theta0 = param.theta(P)
    g1, g2 = param.gamma1(P), param.gamma2(P)
    if theta_grid is None:
        offsets = np.linspace(-0.2, 0.2, 9)
        theta_grid = tuple(theta0 + o for o in offsets if o != 0.0)
    at_truth = D(theta0, g1, g2)
    return EstimatingFunctionReport(
        model=instance.name,
        estimating_function=D.name,
        tolerance=tol,
        unbiasedness=abs(expectation(at_truth, P)),
        theta_grid=tuple(theta_grid),
        offtruth_means=tuple(expectation(D(t, g1, g2), P) for t in theta_grid),
        second_moment=inner_product(at_truth, at_truth, P),
    )


@dataclass(frozen=True)
class DRReport:
    """Exact unbiasedness sweep with one nuisance at the truth and the other
    running over a grid, for both sides."""

    model: str
    estimating_function: str
    tolerance: float
    grid_sizes: tuple[int, int]
    seed: int
    side1_violations: tuple[float, ...]  # gamma1 on the grid, gamma2 true
    side2_violations: tuple[float, ...]  # gamma1 true, gamma2 on the grid
    max_violation_side1: float = field(init=False)
    max_violation_side2: float = field(init=False)
    argmax_side1: int = field(init=False)
    argmax_side2: int = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        v1 = np.asarray(self.side1_violations)
        v2 = np.asarray(self.side2_violations)
        m1 = float(v1.max()) if v1.size else 0.0
        m2 = float(v2.max()) if v2.size else 0.0
        object.__setattr__(self, "max_violation_side1", m1)
        object.__setattr__(self, "max_violation_side2", m2)
        object.__setattr__(self, "argmax_side1", int(v1.argmax()) if v1.size else -1)
        object.__setattr__(self, "argmax_side2", int(v2.argmax()) if v2.size else -1)
        object.__setattr__(self, "passed", bool(max(m1, m2) <= self.tolerance))

    def to_dict(self) -> dict:
        return {
            "kind": "dr_bruteforce",
            "model": self.model,
            "estimating_function": self.estimating_function,
            "tolerance": self.tolerance,
            "grid_sizes": list(self.grid_sizes),
            "seed": self.seed,
            "max_violation_side1": self.max_violation_side1,
            "max_violation_side2": self.max_violation_side2,
            "argmax_side1": self.argmax_side1,
            "argmax_side2": self.argmax_side2,
            "pass": self.passed,
            "side1_violations": list(self.side1_violations),
            "side2_violations": list(self.side2_violations),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        rows = [
            ("side1", i, v, v <= self.tolerance)
            for i, v in enumerate(self.side1_violations)
        ] + [
            ("side2", i, v, v <= self.tolerance)
            for i, v in enumerate(self.side2_violations)
        ]
        return _csv_text(("side", "grid_index", "abs_mean", "pass"), rows)


def dr_bruteforce(
    instance: ModelInstance,
    D: EstimatingFunction,
    P: Distribution,
    grid1: Sequence[np.ndarray],
    grid2: Sequence[np.ndarray],
    tol: float = 1e-10,
    seed: int = 0,
    parameterization: Parameterization | None = None,
) -> DRReport:
    """Full-summation expectations of the estimating function at the truth
    target with each nuisance swept over its grid while the other stays at
    the truth."""
    param = parameterization or instance.parameterization
    theta0 = param.theta(P)
    g1t, g2t = param.gamma1(P), param.gamma2(P)
    side1 = tuple(abs(expectation(D(theta0, g1, g2t), P)) for g1 in grid1)
    side2 = tuple(abs(expectation(D(theta0, g1t, g2), P)) for g2 in grid2)
    return DRReport(
        model=instance.name,
        estimating_function=D.name,
        tolerance=tol,
        grid_sizes=(len(side1), len(side2)),
        seed=seed,
        side1_violations=side1,
        side2_violations=side2,
    )


@dataclass(frozen=True)
class OrthoReport:
    """Per-member orthogonality of a fixed function to the section tangent
    space, measured in each member's own inner product."""

    section: str
    tolerance: float
    per_member: tuple[float, ...]
    n_members: int = field(init=False)
    max_gap: float = field(init=False)
    argmax_member: int = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        gaps = np.asarray(self.per_member)
        object.__setattr__(self, "n_members", int(gaps.size))
        object.__setattr__(self, "max_gap", float(gaps.max()) if gaps.size else 0.0)
        object.__setattr__(self, "argmax_member", int(gaps.argmax()) if gaps.size else -1)
        object.__setattr__(self, "passed", bool(self.max_gap <= self.tolerance))

    def to_dict(self) -> dict:
        return {
            "kind": "orthogonality",
            "section": self.section,
            "tolerance": self.tolerance,
            "n_members": self.n_members,
            "max_gap": self.max_gap,
            "argmax_member": self.argmax_member,
            "pass": self.passed,
            "per_member": list(self.per_member),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        rows = [(i, g, g <= self.tolerance) for i, g in enumerate(self.per_member)]
        return _csv_text(("member_index", "max_abs_pairing", "pass"), rows)


def necessity_check(
    D_at_truth: StateFunction, section: Section, tol: float = 1e-8
) -> OrthoReport:
    """Pair the truth-evaluated function against every tangent direction of
    the section at every sampled member; a doubly robust function stays
    orthogonal everywhere, not just at the base."""
    gaps = []
    for member in section.members:
        tangent = section.tangent_at(member)
        worst = 0.0
        for b in tangent.basis:
            worst = max(worst, abs(inner_product(D_at_truth, b, member)))
        gaps.append(worst)
    return OrthoReport(section=section.label, tolerance=tol, per_member=tuple(gaps))


@dataclass(frozen=True)
class IffReport:
    """Two-sided orthogonality plus the connecting-path derivative probe;
    the verdict is doubly robust only when every piece passes."""

    model: str
    estimating_function: str
    tolerance: float
    ortho1: OrthoReport
    ortho2: OrthoReport
    path_gaps1: tuple[float, ...]
    path_gaps2: tuple[float, ...]
    path_points: tuple[float, ...] = PATH_POINTS
    max_path_gap: float = field(init=False)
    doubly_robust: bool = field(init=False)

    def __post_init__(self):
        gaps = self.path_gaps1 + self.path_gaps2
        worst = max(gaps) if gaps else 0.0
        object.__setattr__(self, "max_path_gap", worst)
        verdict = self.ortho1.passed and self.ortho2.passed and worst <= self.tolerance
        object.__setattr__(self, "doubly_robust", bool(verdict))

    @property
    def max_violation(self) -> float:
        return max(self.ortho1.max_gap, self.ortho2.max_gap, self.max_path_gap)

    def to_dict(self) -> dict:
        return {
            "kind": "iff_check",
            "model": self.model,
            "estimating_function": self.estimating_function,
            "tolerance": self.tolerance,
            "doubly_robust": self.doubly_robust,
            "max_violation": self.max_violation,
            "max_path_gap": self.max_path_gap,
            "path_points": list(self.path_points),
            "ortho1": self.ortho1.to_dict(),
            "ortho2": self.ortho2.to_dict(),
            "path_gaps1": list(self.path_gaps1),
            "path_gaps2": list(self.path_gaps2),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def iff_check(
    instance: ModelInstance,
    D: EstimatingFunction,
    section1: Section,
    section2: Section,
    tol: float = 1e-8,
    parameterization: Parameterization | None = None,
) -> IffReport:
    """Run the necessity check on both sections and, along each connecting
    path from a member back to the base, verify the derivative of the
    member-evaluated estimating-equation mean vanishes at five points."""
    param = parameterization or instance.parameterization
    base = section1.base
    theta0 = param.theta(base)
    g1t, g2t = param.gamma1(base), param.gamma2(base)
    D_truth = D(theta0, g1t, g2t)

    ortho1 = necessity_check(D_truth, section1, tol)
    ortho2 = necessity_check(D_truth, section2, tol)

    def path_gaps(section: Section) -> tuple[float, ...]:
        gaps = []
        for member in section.members:
            if section.which == 1:
                d_member = D(theta0, param.gamma1(member), g2t)
            else:
                d_member = D(theta0, g1t, param.gamma2(member))
            path = section.connect(member, base)
            g = lambda Q: expectation(d_member, Q)  # noqa: E731
            gaps.append(max(abs(pathwise_derivative(g, path, t=t)) for t in PATH_POINTS))
        return tuple(gaps)

    return IffReport(
        model=instance.name,
        estimating_function=D.name,
        tolerance=tol,
        ortho1=ortho1,
        ortho2=ortho2,
        path_gaps1=path_gaps(section1),
        path_gaps2=path_gaps(section2),
    )


@dataclass(frozen=True)
class ConvexityReport:
    """Membership gaps of pairwise mixtures of section members."""

    section: str
    tolerance: float
    gaps: tuple[float, ...]
    n_pairs: int
    max_gap: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        worst = max(self.gaps) if self.gaps else 0.0
        object.__setattr__(self, "max_gap", worst)
        object.__setattr__(self, "passed", bool(worst <= self.tolerance))

    def to_dict(self) -> dict:
        return {
            "kind": "convexity",
            "section": self.section,
            "tolerance": self.tolerance,
            "n_pairs": self.n_pairs,
            "max_gap": self.max_gap,
            "pass": self.passed,
            "gaps": list(self.gaps),
        }


def convexity_check(
    section: Section, pairs: int, tol: float = 1e-12, seed: int = 0
) -> ConvexityReport:
    """Mix random member pairs at three interior weights and measure how far
    the mixtures drift from the section's defining equalities.  A section
    with fewer than two members passes vacuously."""
    members = section.members
    gaps = []
    if len(members) >= 2:
        rng = np.random.default_rng(seed)
        for _ in range(pairs):
            i, j = rng.choice(len(members), size=2, replace=False)
            for t in (0.25, 0.5, 0.75):
                Q = mixture(members[i], members[j], t)
                gaps.append(section.membership_gap(Q))
    return ConvexityReport(
        section=section.label, tolerance=tol, gaps=tuple(gaps), n_pairs=pairs
    )


@dataclass(frozen=True)
class EInvarianceReport:
    """Per-member comparison of the recentring defect of the truth function
    at the member against the unbiasedness defect with the member's
    nuisance value swapped in; the two must pass or fail together."""

    section: str
    tolerance: float
    invariance_gaps: tuple[float, ...]
    swap_gaps: tuple[float, ...]
    max_invariance_gap: float = field(init=False)
    max_swap_gap: float = field(init=False)
    equivalent: bool = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        inv = np.asarray(self.invariance_gaps)
        swp = np.asarray(self.swap_gaps)
        object.__setattr__(self, "max_invariance_gap", float(inv.max()) if inv.size else 0.0)
        object.__setattr__(self, "max_swap_gap", float(swp.max()) if swp.size else 0.0)
        agree = np.all((inv <= self.tolerance) == (swp <= self.tolerance))
        object.__setattr__(self, "equivalent", bool(agree))
        object.__setattr__(self, "passed", bool(agree))

    def to_dict(self) -> dict:
        return {
            "kind": "e_invariance",
            "section": self.section,
            "tolerance": self.tolerance,
            "max_invariance_gap": self.max_invariance_gap,
            "max_swap_gap": self.max_swap_gap,
            "equivalent": self.equivalent,
            "pass": self.passed,
            "invariance_gaps": list(self.invariance_gaps),
            "swap_gaps": list(self.swap_gaps),
        }


def e_invariance_check(
    instance: ModelInstance,
    D: EstimatingFunction,
    section: Section,
    tol: float = 1e-10,
    parameterization: Parameterization | None = None,
) -> EInvarianceReport:
    """Recentring the truth function at a member is a no-op exactly when its
    member mean vanishes, which mirrors unbiasedness with that member's
    nuisance value plugged in; check the equivalence member by member."""
    param = parameterization or instance.parameterization
    base = section.base
    theta0 = param.theta(base)
    g1t, g2t = param.gamma1(base), param.gamma2(base)
    D_truth = D(theta0, g1t, g2t)
    inv_gaps, swap_gaps = [], []
    for member in section.members:
        inv_gaps.append(abs(expectation(D_truth, member)))
        if section.which == 1:
            swapped = D(theta0, param.gamma1(member), g2t)
        else:
            swapped = D(theta0, g1t, param.gamma2(member))
        swap_gaps.append(abs(expectation(swapped, base)))
    return EInvarianceReport(
        section=section.label,
        tolerance=tol,
        invariance_gaps=tuple(inv_gaps),
        swap_gaps=tuple(swap_gaps),
    )


@dataclass(frozen=True)
class FlatnessReport:
    """Transport diagnostics for both sections plus the implication checks
    against the brute-force verdict of the efficient-curve function."""

    model: str
    parameterization: str
    flatness: tuple[TransportReport, TransportReport]
    curvature: tuple[TransportReport, TransportReport]
    dr_report: DRReport
    flat: bool = field(init=False)
    curvature_free: bool = field(init=False)
    implications_ok: bool = field(init=False)

    def __post_init__(self):
        flat = all(r.passed for r in self.flatness)
        curv = all(r.passed for r in self.curvature)
        dr = self.dr_report.passed
        ok = (not flat or dr) and (not curv or dr) and (not flat or curv)
        object.__setattr__(self, "flat", bool(flat))
        object.__setattr__(self, "curvature_free", bool(curv))
        object.__setattr__(self, "implications_ok", bool(ok))

    def to_dict(self) -> dict:
        return {
            "kind": "flatness_suite",
            "model": self.model,
            "parameterization": self.parameterization,
            "flat": self.flat,
            "curvature_free": self.curvature_free,
            "doubly_robust": self.dr_report.passed,
            "implications_ok": self.implications_ok,
            "flatness": [r.to_dict() for r in self.flatness],
            "curvature": [r.to_dict() for r in self.curvature],
            "dr_report": self.dr_report.to_dict(),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def flatness_suite(
    instance: ModelInstance,
    parameterization: Parameterization | None = None,
    P: Distribution | None = None,
    members_per_section: int = 20,
    seed: int = 0,
    flat_tol: float = 1e-10,
    curvature_tol: float = 1e-8,
    dr_tol: float = 1e-8,
    grid_size: int = 64,
) -> FlatnessReport:
    """Transport the section tangent spaces of sampled members back to the
    base and measure containment (flatness) and the pairing with the
    efficient influence curve (curvature-freeness), for both sections; then
    cross-check the implications against a brute-force sweep of the
    efficient-curve estimating function."""
    param = parameterization or instance.parameterization
    base = P if P is not None else instance.base
    eic = eic_from_chart(instance.chart, param.theta)
    flat_reports, curv_reports = [], []
    for which in (1, 2):
        section = sample_section(instance, param, base, which, members_per_section, seed + which)
        base_tangent = section.tangent_at(base)
        flat_gaps, curv_gaps = [], []
        for member in section.members:
            member_tangent = section.tangent_at(member)
            flat_gaps.append(m_flatness_residual(member_tangent, base_tangent, base))
            curv_gaps.append(m_curvature_residual(eic, member_tangent, base))
        cfg = {"section": section.label, "members": members_per_section, "seed": seed + which}
        flat_reports.append(
            TransportReport(kind="flatness", tolerance=flat_tol, pairs=tuple(flat_gaps), config=cfg)
        )
        curv_reports.append(
            TransportReport(kind="curvature-free", tolerance=curvature_tol, pairs=tuple(curv_gaps), config=cfg)
        )
    eic_fn = eic_estfun(instance, param)
    grid1 = nuisance_grid(instance, 1, grid_size, seed + 11, parameterization=param)
    grid2 = nuisance_grid(instance, 2, grid_size, seed + 12, parameterization=param)
    dr = dr_bruteforce(instance, eic_fn, base, grid1, grid2, tol=dr_tol, seed=seed, parameterization=param)
    return FlatnessReport(
        model=instance.name,
        parameterization=param.name,
        flatness=(flat_reports[0], flat_reports[1]),
        curvature=(curv_reports[0], curv_reports[1]),
        dr_report=dr,
    )
