"""Finite-state model zoo: a treatment-arm mean model, a partially linear
outcome model, and a conditional odds-ratio model under two nuisance
parameterizations.  Each instance bundles the joint law, a smooth chart, the
target/nuisance functionals, known estimating functions, section samplers,
and nuisance grids.

Conventions: Y, A are 0/1 coded (PLM allows real Y); L is coded by its index
into the level list.  Nuisance values are plain numpy arrays whose shapes
are documented per model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .manifold import (
    Distribution,
    SampleSpace,
    StateFunction,
)
from .tangent import (
    Chart,
    Path,
    Subspace,
    chart_path,
    convex_tangent_basis,
    eic_from_chart,
    mixture_path,
)

__all__ = [
    "Parameterization",
    "EstimatingFunction",
    "Section",
    "ModelInstance",
    "ModelSpecError",
    "SectionSamplingError",
    "build_ate",
    "ate_estfun",
    "build_plm",
    "build_odds_ratio",
    "parameterize_odds_ratio",
    "eic_estfun",
    "sample_section",
    "nuisance_grid",
    "from_spec",
]

GRID_CLAMP = 0.01  # probability grids stay inside (GRID_CLAMP, 1 - GRID_CLAMP)
MEMBERSHIP_TOL = 1e-10


class ModelSpecError(ValueError):
    """Model specification is malformed or out of range."""


class SectionSamplingError(RuntimeError):
    """A sampled candidate could not be repaired into the section."""


@dataclass(frozen=True)
class Parameterization:
    """Target and nuisance functionals, evaluable on any law of the model."""

    name: str
    theta: Callable[[Distribution], float]
    gamma1: Callable[[Distribution], np.ndarray]
    gamma2: Callable[[Distribution], np.ndarray]
    tol: float = MEMBERSHIP_TOL


@dataclass(frozen=True)
class EstimatingFunction:
    """Maps (theta, gamma1-value, gamma2-value) to a function on states."""

    name: str
    fn: Callable[[float, np.ndarray, np.ndarray], StateFunction]

    def __call__(self, theta: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        return self.fn(theta, np.asarray(g1, dtype=float), np.asarray(g2, dtype=float))


@dataclass(frozen=True)
class Section:
    """A sampled slice of the model where the target and one nuisance are
    pinned at the base while the other nuisance varies.

    ``members[0]`` is always the base point.  ``connect`` yields a path
    between two members that stays inside the section (a plain mixture when
    the section is convex, coordinate interpolation otherwise), and
    ``tangent_at`` returns the section's tangent space at a member via the
    member's section chart.
    """

    label: str
    which: int
    base: Distribution
    members: tuple[Distribution, ...]
    connect: Callable[[Distribution, Distribution], Path]
    tangent_at: Callable[[Distribution], Subspace]
    membership_gap: Callable[[Distribution], float]
    convex: bool
    seed: int
    count: int


@dataclass(frozen=True)
class ModelInstance:
    """A concrete model at a concrete truth."""

    name: str
    base: Distribution
    chart: Chart
    parameterization: Parameterization
    estimating_functions: Mapping[str, EstimatingFunction]
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared conditional-probability helpers
# ---------------------------------------------------------------------------


def _codes(space: SampleSpace, name: str, levels: Sequence[float]) -> np.ndarray:
    col = space.column(name)
    codes = np.empty(len(col), dtype=int)
    for i, val in enumerate(col):
        hits = [j for j, lev in enumerate(levels) if abs(lev - val) < 1e-12]
        if len(hits) != 1:
            raise ValueError(f"state value {val!r} not matched in levels of {name}")
        codes[i] = hits[0]
    return codes


def _group_sum(weights: np.ndarray, codes: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(codes, weights=weights, minlength=n)


def _simplex_draw(rng: np.random.Generator, n: int, low: float = 0.5) -> np.ndarray:
    """A strictly interior probability vector, kept away from the faces so
    mixture paths between sampled members tolerate endpoint overshoot."""
    w = low + rng.random(n)
    return w / w.sum()


def _logit(p):
    return np.log(p / (1.0 - p))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# treatment-arm mean model (binary Y and A, finite L)
# ---------------------------------------------------------------------------


def _ate_marginals(P: Distribution, y: np.ndarray, a: np.ndarray, l: np.ndarray, nl: int):
    """(p_l, propensity P(A=1|l), outcome table P(Y=1|a,l)) read off a joint law."""
    probs = P.probs
    p_l = _group_sum(probs, l, nl)
    p_a1l = _group_sum(probs * a, l, nl)
    prop = p_a1l / p_l
    out = np.empty((2, nl))
    for arm in (0, 1):
        sel = (a == arm).astype(float)
        p_arm_l = _group_sum(probs * sel, l, nl)
        p_y1_arm_l = _group_sum(probs * sel * y, l, nl)
        out[arm] = p_y1_arm_l / p_arm_l
    return p_l, prop, out


def build_ate(
    p_l: Sequence[float],
    propensity: Sequence[float],
    outcome: Sequence[Sequence[float]],
    arm: int = 1,
) -> ModelInstance:
    """Treatment-arm mean instance.

    p_l: marginal of L (length nl); propensity: P(A=1|l); outcome: table
    P(Y=1|a,l) of shape (2, nl).  Target: the mean of the outcome regression
    on the chosen arm, standardized over L.  gamma1 is the (2, nl) outcome
    table, gamma2 the length-nl table P(A=arm|l).
    """
    p_l = np.asarray(p_l, dtype=float)
    propensity = np.asarray(propensity, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    nl = p_l.shape[0]
    if arm not in (0, 1):
        raise ModelSpecError(f"arm must be 0 or 1, got {arm!r}")
    if outcome.shape != (2, nl):
        raise ModelSpecError(f"outcome table must have shape (2, {nl})")
    for label, arr in (("p_l", p_l), ("propensity", propensity), ("outcome", outcome)):
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise ModelSpecError(f"{label} entries must lie strictly inside (0, 1)")
    if abs(p_l.sum() - 1.0) > 1e-12:
        raise ModelSpecError("p_l must sum to 1")

    states = [(yv, av, lv) for yv in (0, 1) for av in (0, 1) for lv in range(nl)]
    space = SampleSpace(("Y", "A", "L"), states)
    y = space.column("Y")
    a = space.column("A")
    l = space.column("L").astype(int)

    def joint(p_l_, prop_, out_) -> np.ndarray:
        pa = np.where(a == 1, prop_[l], 1.0 - prop_[l])
        py = np.where(y == 1, out_[a.astype(int), l], 1.0 - out_[a.astype(int), l])
        return p_l_[l] * pa * py

    base = Distribution(space, joint(p_l, propensity, outcome))

    def theta(P: Distribution) -> float:
        pl_, _, out_ = _ate_marginals(P, y, a, l, nl)
        return float(pl_ @ out_[arm])

    def gamma1(P: Distribution) -> np.ndarray:
        return _ate_marginals(P, y, a, l, nl)[2]

    def gamma2(P: Distribution) -> np.ndarray:
        _, prop_, _ = _ate_marginals(P, y, a, l, nl)
        return prop_ if arm == 1 else 1.0 - prop_

    param = Parameterization("ate", theta, gamma1, gamma2)

    # Saturated chart: L-marginal free coords, propensity, full outcome table.
    names = tuple(
        [f"pL{j}" for j in range(nl - 1)]
        + [f"e{j}" for j in range(nl)]
        + [f"m{av}_{j}" for av in (0, 1) for j in range(nl)]
    )

    def build(params: np.ndarray) -> Distribution:
        pl_ = np.empty(nl)
        pl_[:-1] = params[: nl - 1]
        pl_[-1] = 1.0 - pl_[:-1].sum()
        prop_ = params[nl - 1 : 2 * nl - 1]
        out_ = params[2 * nl - 1 :].reshape(2, nl)
        return Distribution(space, joint(pl_, prop_, out_), min_prob=0.0)

    chart = Chart(
        names=names,
        base=np.concatenate([p_l[:-1], propensity, outcome.ravel()]),
        build=build,
    )

    meta = {
        "arm": arm,
        "nl": nl,
        "codes": (y, a, l),
        "p_l": p_l,
        "propensity": propensity,
        "outcome": outcome,
    }
    instance = ModelInstance(
        name="ate",
        base=base,
        chart=chart,
        parameterization=param,
        estimating_functions={},
        meta=meta,
    )
    funs = {"aipw": ate_estfun(instance), "ipw": _ate_ipw_estfun(instance)}
    object.__setattr__(instance, "estimating_functions", funs)
    return instance


def ate_estfun(instance: ModelInstance) -> EstimatingFunction:
    """Augmented inverse-probability-weighted function for the arm mean:
    weighted outcome residual plus the regression term, affine in theta with
    slope -1.  gamma1 is the (2, nl) outcome table, gamma2 the arm
    propensity P(A=arm|l)."""
    space = instance.base.space
    y, a, l = instance.meta["codes"]
    arm = instance.meta["arm"]
    on_arm = (a == arm).astype(float)

    def fn(theta: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        m_arm = g1[arm, l]
        w = on_arm / g2[l]
        return StateFunction(space, w * (y - m_arm) + m_arm - theta)

    return EstimatingFunction("aipw", fn)


def _ate_ipw_estfun(instance: ModelInstance) -> EstimatingFunction:
    """Pure weighting version (augmentation removed); singly robust."""
    space = instance.base.space
    y, a, l = instance.meta["codes"]
    arm = instance.meta["arm"]
    on_arm = (a == arm).astype(float)

    def fn(theta: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        return StateFunction(space, on_arm / g2[l] * y - theta)

    return EstimatingFunction("ipw", fn)


# ---------------------------------------------------------------------------
# partially linear outcome model
# ---------------------------------------------------------------------------


def build_plm(
    theta: float,
    omega: Sequence[float],
    d_fun: Callable[[float, float], float] | None = None,
    a_support: Sequence[float] = (0.0, 1.0),
    l_support: Sequence[float] = (0.0, 1.0),
    eps_support: Sequence[float] = (-1.0, 1.0),
    p_al: Sequence[Sequence[float]] | None = None,
    eps_probs: Sequence[float] | None = None,
) -> ModelInstance:
    """Partially linear instance: Y is the linear treatment term plus an
    arbitrary function of L plus an independent mean-zero noise with finite
    support.

    gamma1 is the length-nl table E[d(A, L) | L=l]; gamma2 the length-nl
    table of the L-regression offsets.  The estimating function is the
    product of the two centered residuals.
    """
    a_support = tuple(float(x) for x in a_support)
    l_support = tuple(float(x) for x in l_support)
    eps_support = tuple(float(x) for x in eps_support)
    omega = np.asarray(omega, dtype=float)
    na, nl, ne = len(a_support), len(l_support), len(eps_support)
    if omega.shape != (nl,):
        raise ModelSpecError(f"omega must have length {nl}")
    if d_fun is None:
        d_fun = lambda a, l: a  # noqa: E731 - default index function
    if p_al is None:
        w = np.array([[1.0 + i + j for j in range(nl)] for i in range(na)])
        p_al = w / w.sum()
    p_al = np.asarray(p_al, dtype=float)
    if p_al.shape != (na, nl) or np.any(p_al <= 0):
        raise ModelSpecError(f"p_al must be a positive table of shape ({na}, {nl})")
    p_al = p_al / p_al.sum()
    if eps_probs is None:
        eps_probs = np.full(ne, 1.0 / ne)
    eps_probs = np.asarray(eps_probs, dtype=float)
    if eps_probs.shape != (ne,) or np.any(eps_probs <= 0):
        raise ModelSpecError("eps_probs must be positive with one entry per support point")
    eps_probs = eps_probs / eps_probs.sum()
    eps_mean = float(eps_probs @ np.asarray(eps_support))
    if abs(eps_mean) > 1e-12:
        raise ModelSpecError(f"noise must have mean zero, got {eps_mean!r}")

    states = []
    idx_a, idx_l, idx_e = [], [], []
    for i, av in enumerate(a_support):
        for j, lv in enumerate(l_support):
            for k, ev in enumerate(eps_support):
                states.append((theta * av + omega[j] + ev, av, lv))
                idx_a.append(i)
                idx_l.append(j)
                idx_e.append(k)
    space = SampleSpace(("Y", "A", "L"), states)
    idx_a = np.array(idx_a)
    idx_l = np.array(idx_l)
    idx_e = np.array(idx_e)
    y = space.column("Y")
    a = space.column("A")
    lvals = space.column("L")
    d_vals = np.array([d_fun(av, lv) for av, lv in zip(a, lvals)])

    def joint(p_al_, eps_probs_) -> np.ndarray:
        return p_al_[idx_a, idx_l] * eps_probs_[idx_e]

    base = Distribution(space, joint(p_al, eps_probs))

    def theta_fn(P: Distribution) -> float:
        probs = P.probs
        pl_ = _group_sum(probs, idx_l, nl)
        e_a_l = _group_sum(probs * a, idx_l, nl) / pl_
        resid = a - e_a_l[idx_l]
        num = float(np.sum(probs * resid * y))
        den = float(np.sum(probs * resid * a))
        return num / den

    def gamma1_fn(P: Distribution) -> np.ndarray:
        probs = P.probs
        pl_ = _group_sum(probs, idx_l, nl)
        return _group_sum(probs * d_vals, idx_l, nl) / pl_

    def gamma2_fn(P: Distribution) -> np.ndarray:
        probs = P.probs
        th = theta_fn(P)
        pl_ = _group_sum(probs, idx_l, nl)
        return _group_sum(probs * (y - th * a), idx_l, nl) / pl_

    param = Parameterization("plm", theta_fn, gamma1_fn, gamma2_fn)

    # Chart over the directions representable on this fixed support: the
    # (A, L) table and, when the noise support allows it, the noise weights
    # (two weights are always pinned by the sum and mean-zero constraints).
    n_free_eps = ne - 2
    names = tuple(
        [f"pAL{i}_{j}" for i in range(na) for j in range(nl)][:-1]
        + [f"pE{k}" for k in range(n_free_eps)]
    )
    e_last2 = np.array(eps_support[-2:])
    solve_mat = np.linalg.inv(np.array([[1.0, 1.0], e_last2]))

    def build(params: np.ndarray) -> Distribution:
        flat = np.empty(na * nl)
        flat[:-1] = params[: na * nl - 1]
        flat[-1] = 1.0 - flat[:-1].sum()
        pe = np.empty(ne)
        pe[:n_free_eps] = params[na * nl - 1 :]
        head_sum = pe[:n_free_eps].sum()
        head_mean = pe[:n_free_eps] @ np.asarray(eps_support[:n_free_eps])
        pe[-2:] = solve_mat @ np.array([1.0 - head_sum, -head_mean])
        return Distribution(space, joint(flat.reshape(na, nl), pe), min_prob=0.0)

    chart = Chart(
        names=names,
        base=np.concatenate([p_al.ravel()[:-1], eps_probs[:n_free_eps]]),
        build=build,
    )

    meta = {
        "nl": nl,
        "codes": (idx_a, idx_l, idx_e),
        "d_vals": d_vals,
        "theta": float(theta),
        "omega": omega,
        "p_al": p_al,
        "eps_probs": eps_probs,
        "eps_support": eps_support,
    }

    def estfun(theta_: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        return StateFunction(space, (d_vals - g1[idx_l]) * (y - theta_ * a - g2[idx_l]))

    return ModelInstance(
        name="plm",
        base=base,
        chart=chart,
        parameterization=param,
        estimating_functions={"plm": EstimatingFunction("plm", estfun)},
        meta=meta,
    )


# ---------------------------------------------------------------------------
# conditional odds-ratio model (binary Y and A, baselines at 0)
# ---------------------------------------------------------------------------


def _odds_joint(
    theta: float, u: np.ndarray, v: np.ndarray, p_l: np.ndarray,
    y: np.ndarray, a: np.ndarray, l: np.ndarray,
) -> np.ndarray:
    uy = np.where(y == 1, u[l], 1.0 - u[l])
    va = np.where(a == 1, v[l], 1.0 - v[l])
    q = uy * va * np.exp(theta * y * a)
    z = _group_sum(q, l, len(p_l))
    return p_l[l] * q / z[l]


def _odds_cond(P: Distribution, y, a, l, nl):
    """(p_l, f(y,a|l) as a (2,2,nl) array indexed [y,a,l])."""
    probs = P.probs
    p_l = _group_sum(probs, l, nl)
    cond = np.zeros((2, 2, nl))
    for i in range(len(probs)):
        cond[int(y[i]), int(a[i]), l[i]] = probs[i] / p_l[l[i]]
    return p_l, cond


def build_odds_ratio(
    theta: float,
    baseline_y: Sequence[float],
    baseline_a: Sequence[float],
    p_l: Sequence[float],
) -> ModelInstance:
    """Conditional odds-ratio instance with binary Y, A and baselines at 0.

    baseline_y[l] is the chance of Y=1 given A=0 at level l, baseline_a[l]
    the chance of A=1 given Y=0; together with the log odds ratio theta and
    the L-marginal they determine the joint law via the standard
    factorization with a per-level normalizer.
    """
    u = np.asarray(baseline_y, dtype=float)
    v = np.asarray(baseline_a, dtype=float)
    p_l = np.asarray(p_l, dtype=float)
    nl = p_l.shape[0]
    if u.shape != (nl,) or v.shape != (nl,):
        raise ModelSpecError(f"baseline tables must have length {nl}")
    for label, arr in (("baseline_y", u), ("baseline_a", v), ("p_l", p_l)):
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise ModelSpecError(f"{label} entries must lie strictly inside (0, 1)")
    if abs(p_l.sum() - 1.0) > 1e-12:
        raise ModelSpecError("p_l must sum to 1")

    states = [(yv, av, lv) for yv in (0, 1) for av in (0, 1) for lv in range(nl)]
    space = SampleSpace(("Y", "A", "L"), states)
    y = space.column("Y")
    a = space.column("A")
    l = space.column("L").astype(int)

    base = Distribution(space, _odds_joint(theta, u, v, p_l, y, a, l))

    def theta_fn(P: Distribution) -> float:
        _, cond = _odds_cond(P, y, a, l, nl)
        ors = np.log(cond[1, 1] * cond[0, 0] / (cond[1, 0] * cond[0, 1]))
        return float(ors.mean())

    param = parameterize_odds_ratio_functions(space, y, a, l, nl, theta_fn, "alternative")

    names = tuple(
        ["theta"]
        + [f"u{j}" for j in range(nl)]
        + [f"v{j}" for j in range(nl)]
        + [f"pL{j}" for j in range(nl - 1)]
    )

    def build(params: np.ndarray) -> Distribution:
        th = params[0]
        u_ = params[1 : 1 + nl]
        v_ = params[1 + nl : 1 + 2 * nl]
        pl_ = np.empty(nl)
        pl_[:-1] = params[1 + 2 * nl :]
        pl_[-1] = 1.0 - pl_[:-1].sum()
        return Distribution(space, _odds_joint(th, u_, v_, pl_, y, a, l), min_prob=0.0)

    chart = Chart(
        names=names,
        base=np.concatenate([[theta], u, v, p_l[:-1]]),
        build=build,
        theta_coords=tuple(n == "theta" for n in names),
    )

    meta = {
        "nl": nl,
        "codes": (y, a, l),
        "theta": float(theta),
        "baseline_y": u,
        "baseline_a": v,
        "p_l": p_l,
    }
    instance = ModelInstance(
        name="odds_ratio",
        base=base,
        chart=chart,
        parameterization=param,
        estimating_functions={},
        meta=meta,
    )
    funs = {
        "eic_alternative": _odds_eic_alternative(instance),
        "eic_canonical": _odds_eic_canonical(instance),
    }
    object.__setattr__(instance, "estimating_functions", funs)
    return instance


def parameterize_odds_ratio_functions(space, y, a, l, nl, theta_fn, scheme: str):
    """Nuisance functionals for the requested scheme (shared constructor)."""
    if scheme == "alternative":

        def gamma1(P: Distribution) -> np.ndarray:
            _, cond = _odds_cond(P, y, a, l, nl)
            return cond[1, 0] / (cond[1, 0] + cond[0, 0])  # f(Y=1 | A=0, l)

        def gamma2(P: Distribution) -> np.ndarray:
            _, cond = _odds_cond(P, y, a, l, nl)
            return cond[0, 1] / (cond[0, 1] + cond[0, 0])  # f(A=1 | Y=0, l)

        return Parameterization("odds_alternative", theta_fn, gamma1, gamma2)
    if scheme == "canonical":

        def gamma1(P: Distribution) -> np.ndarray:
            _, cond = _odds_cond(P, y, a, l, nl)
            return cond[0, 1] + cond[1, 1]  # f(A=1 | l)

        def gamma2(P: Distribution) -> np.ndarray:
            _, cond = _odds_cond(P, y, a, l, nl)
            pa = cond.sum(axis=0)
            return np.stack([cond[1, 0] / pa[0], cond[1, 1] / pa[1]])  # f(Y=1 | a, l)

        return Parameterization("odds_canonical", theta_fn, gamma1, gamma2)
    raise ModelSpecError(f"unknown parameterization scheme {scheme!r}")


def parameterize_odds_ratio(instance: ModelInstance, scheme: str) -> Parameterization:
    """Canonical or alternative nuisance functionals for an odds-ratio
    instance; the target functional is shared by both schemes."""
    if instance.name != "odds_ratio":
        raise ModelSpecError("parameterize_odds_ratio expects an odds-ratio instance")
    y, a, l = instance.meta["codes"]
    nl = instance.meta["nl"]
    return parameterize_odds_ratio_functions(
        instance.base.space, y, a, l, nl, instance.parameterization.theta, scheme
    )


def _odds_eic_alternative(instance: ModelInstance) -> EstimatingFunction:
    """Efficient influence curve as an estimating function in the baseline
    coordinates.

    At any law the sign-alternating kernel divided by the two baseline
    tables has, per level of L, a product form whose expectation factors and
    vanishes whenever either table is at the truth; the level weights are
    frozen at the values that reproduce the efficient curve at the base.
    """
    space = instance.base.space
    y, a, l = instance.meta["codes"]
    nl = instance.meta["nl"]
    theta0 = instance.meta["theta"]
    u0 = instance.meta["baseline_y"]
    v0 = instance.meta["baseline_a"]
    eic = eic_from_chart(instance.chart, instance.parameterization.theta)
    sign = np.where((y + a) % 2 == 0, 1.0, -1.0)
    uy0 = np.where(y == 1, u0[l], 1.0 - u0[l])
    va0 = np.where(a == 1, v0[l], 1.0 - v0[l])
    cells = eic.values * uy0 * va0 * np.exp(theta0 * y * a) * sign
    weights = _group_sum(cells, l, nl) / _group_sum(np.ones_like(cells), l, nl)

    def fn(theta: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        uy = np.where(y == 1, g1[l], 1.0 - g1[l])
        va = np.where(a == 1, g2[l], 1.0 - g2[l])
        vals = weights[l] * sign * np.exp(-theta * y * a) / (uy * va)
        return StateFunction(space, vals)

    return EstimatingFunction("eic_alternative", fn)


def _odds_eic_canonical(instance: ModelInstance) -> EstimatingFunction:
    """Efficient influence curve extended along the treatment/outcome
    density coordinates: rebuild the implied law (holding the base
    L-marginal), recompute its efficient curve, and add an affine pull
    toward the log odds ratio the outcome table implies."""
    y, a, l = instance.meta["codes"]
    nl = instance.meta["nl"]
    p_l0 = instance.meta["p_l"]
    theta_fn = instance.parameterization.theta
    space = instance.base.space

    def fn(theta: float, g1: np.ndarray, g2: np.ndarray) -> StateFunction:
        # g1: f(A=1|l); g2: stacked f(Y=1|a,l), shape (2, nl).
        theta_implied = float(np.mean(_logit(g2[1]) - _logit(g2[0])))
        u_ = g2[0]
        # f(A=1|Y=0,l) from the implied joint pieces.
        t0 = g1 * (1.0 - g2[1])
        t1 = (1.0 - g1) * (1.0 - g2[0])
        v_ = t0 / (t0 + t1)
        params = np.concatenate([[theta_implied], u_, v_, p_l0[:-1]])
        chart = Chart(names=instance.chart.names, base=params, build=instance.chart.build)
        eic = eic_from_chart(chart, theta_fn)
        return StateFunction(space, eic.values + (theta_implied - theta))

    return EstimatingFunction("eic_canonical", fn)


def eic_estfun(instance: ModelInstance, parameterization: Parameterization) -> EstimatingFunction:
    """The registered efficient-influence-curve estimating function matching
    a parameterization (for the arm-mean model this is the augmented
    weighting function, which coincides with the efficient curve)."""
    if instance.name == "ate":
        return instance.estimating_functions["aipw"]
    if instance.name == "odds_ratio":
        key = "eic_alternative" if parameterization.name.endswith("alternative") else "eic_canonical"
        return instance.estimating_functions[key]
    raise ModelSpecError(f"no efficient-curve estimating function for {instance.name!r}")


# ---------------------------------------------------------------------------
# section samplers
# ---------------------------------------------------------------------------


def _mixture_connect(p: Distribution, q: Distribution) -> Path:
    return mixture_path(p, q)


def _section(
    label,
    which,
    base,
    members,
    connect,
    tangent_at,
    param: Parameterization,
    gamma_other: Callable[[Distribution], np.ndarray],
    convex,
    seed,
    count,
) -> Section:
    theta0 = param.theta(base)
    g_other0 = gamma_other(base)

    def membership_gap(Q: Distribution) -> float:
        g_gap = float(np.max(np.abs(gamma_other(Q) - g_other0)))
        return max(abs(param.theta(Q) - theta0), g_gap)

    for m in members:
        gap = membership_gap(m)
        if gap > param.tol:
            raise SectionSamplingError(f"{label}: sampled member violates membership ({gap:.2e})")
    if convex and len(members) >= 2:
        # Convex sections admit an exact tangent basis: centered density
        # ratios of the sampled members (no finite differences involved).
        # With enough members in general position this spans the full
        # section tangent space; a singleton falls back to the chart.
        member_tuple = tuple(members)

        def tangent_at(target: Distribution) -> Subspace:  # noqa: F811
            return convex_tangent_basis(member_tuple, target)

    return Section(
        label=label,
        which=which,
        base=base,
        members=tuple(members),
        connect=connect,
        tangent_at=tangent_at,
        membership_gap=membership_gap,
        convex=convex,
        seed=seed,
        count=count,
    )


def _ate_sections(instance, param, base, which, count, seed) -> Section:
    y, a, l = instance.meta["codes"]
    nl = instance.meta["nl"]
    arm = instance.meta["arm"]
    space = base.space
    p_l0, prop0, out0 = _ate_marginals(base, y, a, l, nl)
    theta0 = float(p_l0 @ out0[arm])
    rng = np.random.default_rng(seed)

    def joint(pl_, prop_, out_):
        pa = np.where(a == 1, prop_[l], 1.0 - prop_[l])
        py = np.where(y == 1, out_[a.astype(int), l], 1.0 - out_[a.astype(int), l])
        return pl_[l] * pa * py

    if which == 1:
        # Outcome tables and the L-marginal vary; the target is repaired by a
        # constant shift of the arm row, which is affine in the one linear
        # coordinate that the fixed propensity exposes.
        def draw() -> Distribution:
            for _ in range(100):
                pl_ = _simplex_draw(rng, nl)
                out_ = 0.1 + 0.8 * rng.random((2, nl))
                shift = theta0 - float(pl_ @ out_[arm])
                out_[arm] += shift
                if np.all(out_ > 0.08) and np.all(out_ < 0.92):
                    return Distribution(space, joint(pl_, prop0, out_))
            raise SectionSamplingError("arm-row repair left the admissible range 100 times in a row")

        members = [base] + [draw() for _ in range(count - 1)]

        def tangent_at(member: Distribution) -> Subspace:
            pl_m, _, out_m = _ate_marginals(member, y, a, l, nl)
            names = tuple(
                [f"pL{j}" for j in range(nl - 1)]
                + [f"m{av}_{j}" for av in (0, 1) for j in range(nl) if not (av == arm and j == 0)]
            )

            def build(params: np.ndarray) -> Distribution:
                pl_ = np.empty(nl)
                pl_[:-1] = params[: nl - 1]
                pl_[-1] = 1.0 - pl_[:-1].sum()
                cells = iter(params[nl - 1 :])
                out_ = np.empty((2, nl))
                for av in (0, 1):
                    for j in range(nl):
                        if av == arm and j == 0:
                            continue
                        out_[av, j] = next(cells)
                out_[arm, 0] = (theta0 - pl_[1:] @ out_[arm, 1:]) / pl_[0]
                return Distribution(space, joint(pl_, prop0, out_), min_prob=0.0)

            free = [pl_m[:-1]] + [
                np.array([out_m[av, j]])
                for av in (0, 1)
                for j in range(nl)
                if not (av == arm and j == 0)
            ]
            chart = Chart(names=names, base=np.concatenate(free), build=build)
            return Subspace(member, chart.scores())

        return _section(
            "ate/M1", 1, base, members, _mixture_connect, tangent_at,
            param, param.gamma2, True, seed, count,
        )

    if which == 2:
        # The propensity varies freely; outcome tables and the L-marginal
        # stay put, so the target is untouched.
        def draw() -> Distribution:
            prop_ = 0.1 + 0.8 * rng.random(nl)
            return Distribution(space, joint(p_l0, prop_, out0))

        members = [base] + [draw() for _ in range(count - 1)]

        def tangent_at(member: Distribution) -> Subspace:
            _, prop_m, _ = _ate_marginals(member, y, a, l, nl)

            def build(params: np.ndarray) -> Distribution:
                return Distribution(space, joint(p_l0, params, out0), min_prob=0.0)

            chart = Chart(
                names=tuple(f"e{j}" for j in range(nl)), base=prop_m.copy(), build=build
            )
            return Subspace(member, chart.scores())

        return _section(
            "ate/M2", 2, base, members, _mixture_connect, tangent_at,
            param, param.gamma1, True, seed, count,
        )

    raise ModelSpecError(f"which must be 1 or 2, got {which!r}")


def _plm_sections(instance, param, base, which, count, seed) -> Section:
    if which != 1:
        raise ModelSpecError(
            "the partially linear model only supports sections varying the first "
            "nuisance; varying the offset function moves the outcome support"
        )
    idx_a, idx_l, idx_e = instance.meta["codes"]
    na = int(idx_a.max()) + 1
    nl = instance.meta["nl"]
    ne = int(idx_e.max()) + 1
    space = base.space
    probs0 = base.probs
    eps0 = _group_sum(probs0, idx_e, ne)
    rng = np.random.default_rng(seed)

    def joint(p_al_):
        return p_al_[idx_a, idx_l] * eps0[idx_e]

    def draw() -> Distribution:
        w = 0.1 + rng.random((na, nl))
        return Distribution(space, joint(w / w.sum()))

    members = [base] + [draw() for _ in range(count - 1)]

    def tangent_at(member: Distribution) -> Subspace:
        p_al_m = np.zeros((na, nl))
        np.add.at(p_al_m, (idx_a, idx_l), member.probs)

        def build(params: np.ndarray) -> Distribution:
            flat = np.empty(na * nl)
            flat[:-1] = params
            flat[-1] = 1.0 - flat[:-1].sum()
            return Distribution(space, joint(flat.reshape(na, nl)), min_prob=0.0)

        chart = Chart(
            names=tuple(f"pAL{k}" for k in range(na * nl - 1)),
            base=p_al_m.ravel()[:-1],
            build=build,
        )
        return Subspace(member, chart.scores())

    return _section(
        "plm/M1", 1, base, members, _mixture_connect, tangent_at,
        param, param.gamma2, True, seed, count,
    )


def _odds_sections(instance, param, base, which, count, seed) -> Section:
    y, a, l = instance.meta["codes"]
    nl = instance.meta["nl"]
    space = base.space
    rng = np.random.default_rng(seed)
    p_l0, cond0 = _odds_cond(base, y, a, l, nl)
    theta0 = param.theta(base)
    u0 = cond0[1, 0] / (cond0[1, 0] + cond0[0, 0])
    v0 = cond0[0, 1] / (cond0[0, 1] + cond0[0, 0])
    scheme = param.name.split("_", 1)[1]

    def interp_connect(coords_of, build):
        def connect(p: Distribution, q: Distribution) -> Path:
            c0, c1 = coords_of(p), coords_of(q)
            chart = Chart(
                names=tuple(f"t{i}" for i in range(len(c0))), base=c0, build=build
            )
            return chart_path(chart, c1 - c0)

        return connect

    if scheme == "alternative":
        # Coordinates: the varying baseline table plus the L-marginal.
        # These slices are convex: with one baseline table held fixed, the
        # per-level normalizers factor out of the cross-ratio, so mixtures
        # keep both the association parameter and the held table.
        def build_factory(vary_first: bool):
            def build(params: np.ndarray) -> Distribution:
                tab = params[:nl]
                pl_ = np.empty(nl)
                pl_[:-1] = params[nl:]
                pl_[-1] = 1.0 - pl_[:-1].sum()
                u_, v_ = (tab, v0) if vary_first else (u0, tab)
                return Distribution(
                    space, _odds_joint(theta0, u_, v_, pl_, y, a, l), min_prob=0.0
                )

            return build

        vary_first = which == 1
        build = build_factory(vary_first)

        def coords_of(Q: Distribution) -> np.ndarray:
            pl_q, cond_q = _odds_cond(Q, y, a, l, nl)
            u_q = cond_q[1, 0] / (cond_q[1, 0] + cond_q[0, 0])
            v_q = cond_q[0, 1] / (cond_q[0, 1] + cond_q[0, 0])
            tab = u_q if vary_first else v_q
            return np.concatenate([tab, pl_q[:-1]])

        def draw() -> Distribution:
            tab = 0.1 + 0.8 * rng.random(nl)
            pl_ = _simplex_draw(rng, nl)
            return build(np.concatenate([tab, pl_[:-1]]))

        members = [base] + [draw() for _ in range(count - 1)]

        def tangent_at(member: Distribution) -> Subspace:
            chart = Chart(
                names=tuple(f"t{i}" for i in range(2 * nl - 1)),
                base=coords_of(member),
                build=build,
            )
            return Subspace(member, chart.scores())

        gamma_other = param.gamma2 if which == 1 else param.gamma1
        return _section(
            f"odds-alt/M{which}", which, base, members,
            _mixture_connect, tangent_at,
            param, gamma_other, True, seed, count,
        )

    # canonical scheme
    prop0 = cond0[0, 1] + cond0[1, 1]  # f(A=1 | l)
    out0 = np.stack(
        [cond0[1, 0] / (cond0[1, 0] + cond0[0, 0]), cond0[1, 1] / (cond0[1, 1] + cond0[0, 1])]
    )  # f(Y=1 | a, l)

    def joint_can(pl_, prop_, out_) -> np.ndarray:
        pa = np.where(a == 1, prop_[l], 1.0 - prop_[l])
        py = np.where(y == 1, out_[a.astype(int), l], 1.0 - out_[a.astype(int), l])
        return pl_[l] * pa * py

    if which == 1:
        # Treatment density and L-marginal vary; the outcome table (which
        # already pins the odds ratio) stays put -> a convex slice.
        def build(params: np.ndarray) -> Distribution:
            prop_ = params[:nl]
            pl_ = np.empty(nl)
            pl_[:-1] = params[nl:]
            pl_[-1] = 1.0 - pl_[:-1].sum()
            return Distribution(space, joint_can(pl_, prop_, out0), min_prob=0.0)

        def coords_of(Q: Distribution) -> np.ndarray:
            pl_q, cond_q = _odds_cond(Q, y, a, l, nl)
            prop_q = cond_q[0, 1] + cond_q[1, 1]
            return np.concatenate([prop_q, pl_q[:-1]])

        def draw() -> Distribution:
            prop_ = 0.1 + 0.8 * rng.random(nl)
            pl_ = _simplex_draw(rng, nl)
            return build(np.concatenate([prop_, pl_[:-1]]))

        members = [base] + [draw() for _ in range(count - 1)]

        def tangent_at(member: Distribution) -> Subspace:
            chart = Chart(
                names=tuple(f"t{i}" for i in range(2 * nl - 1)),
                base=coords_of(member),
                build=build,
            )
            return Subspace(member, chart.scores())

        return _section(
            "odds-can/M1", 1, base, members, _mixture_connect, tangent_at,
            param, param.gamma2, True, seed, count,
        )

    if which == 2:
        # The outcome table varies on the fixed-odds-ratio slice
        # (coordinates: the baseline outcome column and the L-marginal);
        # the companion column follows from the log odds ratio.
        def build(params: np.ndarray) -> Distribution:
            b = params[:nl]
            pl_ = np.empty(nl)
            pl_[:-1] = params[nl:]
            pl_[-1] = 1.0 - pl_[:-1].sum()
            out_ = np.stack([b, _sigmoid(theta0 + _logit(b))])
            return Distribution(space, joint_can(pl_, prop0, out_), min_prob=0.0)

        def coords_of(Q: Distribution) -> np.ndarray:
            pl_q, cond_q = _odds_cond(Q, y, a, l, nl)
            b_q = cond_q[1, 0] / (cond_q[1, 0] + cond_q[0, 0])
            return np.concatenate([b_q, pl_q[:-1]])

        def draw() -> Distribution:
            b = 0.1 + 0.8 * rng.random(nl)
            pl_ = _simplex_draw(rng, nl)
            return build(np.concatenate([b, pl_[:-1]]))

        members = [base] + [draw() for _ in range(count - 1)]

        def tangent_at(member: Distribution) -> Subspace:
            chart = Chart(
                names=tuple(f"t{i}" for i in range(2 * nl - 1)),
                base=coords_of(member),
                build=build,
            )
            return Subspace(member, chart.scores())

        return _section(
            "odds-can/M2", 2, base, members,
            interp_connect(coords_of, build), tangent_at,
            param, param.gamma1, False, seed, count,
        )

    raise ModelSpecError(f"which must be 1 or 2, got {which!r}")


def sample_section(
    instance: ModelInstance,
    parameterization: Parameterization,
    base: Distribution,
    which: int,
    count: int,
    seed: int,
) -> Section:
    """Sample a section at ``base``: ``count`` members (the base first),
    each certified to share the target and the untouched nuisance with the
    base to the parameterization tolerance."""
    if count < 1:
        raise ModelSpecError("count must be >= 1")
    kind = parameterization.name
    if kind == "ate":
        return _ate_sections(instance, parameterization, base, which, count, seed)
    if kind == "plm":
        return _plm_sections(instance, parameterization, base, which, count, seed)
    if kind.startswith("odds_"):
        return _odds_sections(instance, parameterization, base, which, count, seed)
    raise ModelSpecError(f"unknown parameterization {kind!r}")


# ---------------------------------------------------------------------------
# nuisance grids
# ---------------------------------------------------------------------------


def _prob_grid(rng, truth: np.ndarray, size: int) -> list[np.ndarray]:
    """Truth first, then clamped extremes, then random interior tables."""
    grid = [truth.copy()]
    if size > 1:
        grid.append(np.full_like(truth, GRID_CLAMP + 0.005))
    if size > 2:
        grid.append(np.full_like(truth, 1.0 - GRID_CLAMP - 0.005))
    while len(grid) < size:
        grid.append(GRID_CLAMP + (1.0 - 2.0 * GRID_CLAMP) * rng.random(truth.shape))
    return grid[:size]


def _real_grid(rng, truth: np.ndarray, size: int, spread: float = 1.0) -> list[np.ndarray]:
    grid = [truth.copy()]
    if size > 1:
        grid.append(truth - spread)
    if size > 2:
        grid.append(truth + spread)
    while len(grid) < size:
        grid.append(truth + spread * (2.0 * rng.random(truth.shape) - 1.0))
    return grid[:size]


def nuisance_grid(
    instance: ModelInstance,
    which: int,
    size: int,
    seed: int,
    parameterization: Parameterization | None = None,
) -> list[np.ndarray]:
    """Deterministic grid of nuisance values: the truth, boundary-adjacent
    extremes, then seeded random tables.  Probability-valued nuisances stay
    inside (0.01, 0.99); real-valued ones stay within +/- 1 of the truth."""
    if which not in (1, 2):
        raise ModelSpecError(f"which must be 1 or 2, got {which!r}")
    param = parameterization or instance.parameterization
    rng = np.random.default_rng(seed)
    truth = param.gamma1(instance.base) if which == 1 else param.gamma2(instance.base)
    if instance.name == "plm":
        d_vals = instance.meta["d_vals"]
        real_valued = which == 2 or d_vals.min() < 0 or d_vals.max() > 1
        if real_valued:
            return _real_grid(rng, truth, size)
        return _prob_grid(rng, truth, size)
    return _prob_grid(rng, truth, size)


# ---------------------------------------------------------------------------
# JSON model specs
# ---------------------------------------------------------------------------


def _table_from_json(obj, field_name: str, n: int) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ModelSpecError(f"field {field_name!r} must be an object keyed by level strings")
    try:
        return np.array([float(obj[str(j)]) for j in range(n)])
    except KeyError as e:
        raise ModelSpecError(f"field {field_name!r} is missing level {e.args[0]!r}") from e


def from_spec(spec: dict) -> ModelInstance:
    """Build a model instance from the JSON model-spec dictionary.

    Schema: {"model": "ate"|"plm"|"odds_ratio", "params": {...},
    "arm": 0|1 (ate only), "parameterization": "canonical"|"alternative"
    (odds_ratio only)}.  All tables are objects keyed by level strings.
    """
    if "model" not in spec:
        raise ModelSpecError('missing required field "model"')
    kind = spec["model"]
    params = spec.get("params")
    if not isinstance(params, dict):
        raise ModelSpecError('missing or malformed field "params"')

    if kind == "ate":
        p_l_obj = params.get("p_l")
        if not isinstance(p_l_obj, dict):
            raise ModelSpecError('missing table "params.p_l"')
        nl = len(p_l_obj)
        p_l = _table_from_json(p_l_obj, "params.p_l", nl)
        prop = _table_from_json(params.get("propensity"), "params.propensity", nl)
        out_obj = params.get("outcome")
        if not isinstance(out_obj, dict) or set(out_obj) != {"0", "1"}:
            raise ModelSpecError('field "params.outcome" must map arms "0" and "1" to tables')
        outcome = np.stack(
            [_table_from_json(out_obj[arm_key], f"params.outcome.{arm_key}", nl) for arm_key in ("0", "1")]
        )
        arm = spec.get("arm", 1)
        try:
            return build_ate(p_l, prop, outcome, arm=arm)
        except ModelSpecError:
            raise
        except ValueError as e:
            raise ModelSpecError(str(e)) from e

    if kind == "plm":
        omega_obj = params.get("omega")
        if not isinstance(omega_obj, dict):
            raise ModelSpecError('missing table "params.omega"')
        nl = len(omega_obj)
        omega = _table_from_json(omega_obj, "params.omega", nl)
        theta = params.get("theta")
        if not isinstance(theta, (int, float)):
            raise ModelSpecError('missing numeric field "params.theta"')
        kwargs = {}
        if "p_al" in params:
            rows = params["p_al"]
            if not isinstance(rows, dict) or set(rows) != {"0", "1"}:
                raise ModelSpecError('field "params.p_al" must map treatment levels "0" and "1"')
            kwargs["p_al"] = np.stack(
                [_table_from_json(rows[k], f"params.p_al.{k}", nl) for k in ("0", "1")]
            )
        return build_plm(float(theta), omega, l_support=tuple(range(nl)), **kwargs)

    if kind == "odds_ratio":
        theta = params.get("theta")
        if not isinstance(theta, (int, float)):
            raise ModelSpecError('missing numeric field "params.theta"')
        by_obj = params.get("baseline_y")
        if not isinstance(by_obj, dict):
            raise ModelSpecError('missing table "params.baseline_y"')
        nl = len(by_obj)
        baseline_y = _table_from_json(by_obj, "params.baseline_y", nl)
        baseline_a = _table_from_json(params.get("baseline_a"), "params.baseline_a", nl)
        p_l = _table_from_json(params.get("p_l"), "params.p_l", nl)
        instance = build_odds_ratio(float(theta), baseline_y, baseline_a, p_l)
        scheme = spec.get("parameterization", "alternative")
        if scheme not in ("canonical", "alternative"):
            raise ModelSpecError(f'field "parameterization" must be "canonical" or "alternative", got {scheme!r}')
        param = parameterize_odds_ratio(instance, scheme)
        object.__setattr__(instance, "parameterization", param)
        return instance

    raise ModelSpecError(f'unknown model kind {kind!r}; expected "ate", "plm", or "odds_ratio"')
