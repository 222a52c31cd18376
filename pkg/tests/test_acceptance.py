"""Acceptance suite: the full battery of end-to-end checks at their agreed
sizes and tolerances, one test per criterion, each printing a PASS/FAIL
line (visible under ``pytest -s`` or on failure).

All "exact" checks are full summations over at most 64 states; randomized
pieces are seeded and deterministic.
"""

import time

import numpy as np
import pytest

from drlab.manifold import Distribution, SampleSpace, StateFunction, center
from drlab.models import (
    build_ate,
    build_odds_ratio,
    build_plm,
    nuisance_grid,
    parameterize_odds_ratio,
    sample_section,
)
from drlab.montecarlo import default_scenarios, population_root, run_experiment
from drlab.robustness import (
    convexity_check,
    dr_bruteforce,
    flatness_suite,
    iff_check,
    necessity_check,
)
from drlab.tangent import chart_path, eic_from_chart, mixture_path, verify_influence_curve
from drlab.transport import duality_gap


def _report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"criterion {num}: [{status}] {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def ate():
    # the agreed arm-mean instance: uniform covariate, propensity (0.3, 0.7),
    # arm-1 outcome row (0.2, 0.6), target 0.4
    return build_ate([0.5, 0.5], [0.3, 0.7], [[0.1, 0.3], [0.2, 0.6]], arm=1)


@pytest.fixture(scope="module")
def odds():
    return build_odds_ratio(float(np.log(2.0)), [0.3, 0.5], [0.4, 0.6], [0.5, 0.5])


def test_criterion_1_transport_duality():
    """10^4 random tuples on 2..16 states keep the duality gap at zero."""
    rng = np.random.default_rng(20240501)
    start = time.monotonic()
    worst = 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 17))
        space = SampleSpace(("X",), [(i,) for i in range(k)])
        w1 = 0.05 + rng.random(k)
        w2 = 0.05 + rng.random(k)
        P = Distribution(space, w1 / w1.sum())
        Q = Distribution(space, w2 / w2.sum())
        d1 = center(StateFunction(space, rng.standard_normal(k)), P)
        d2 = center(StateFunction(space, rng.standard_normal(k)), P)
        worst = max(worst, duality_gap(d1, d2, P, Q))
    elapsed = time.monotonic() - start
    _report(
        1,
        worst <= 1e-12 and elapsed < 5.0,
        f"max duality gap {worst:.3e} over 10^4 tuples in {elapsed:.2f}s",
    )


def test_criterion_2_convexity_implies_dr(ate):
    """Convex sections certified by 200 mixture probes; the augmented
    weighting function survives 10^3 nuisance values per side exactly."""
    start = time.monotonic()
    assert abs(ate.parameterization.theta(ate.base) - 0.4) < 1e-14
    probes_ok = True
    worst_probe = 0.0
    for which in (1, 2):
        section = sample_section(ate, ate.parameterization, ate.base, which, 30, seed=200 + which)
        rep = convexity_check(section, pairs=67, tol=1e-12, seed=which)  # 67 pairs x 3 weights > 200 probes
        probes_ok = probes_ok and rep.passed
        worst_probe = max(worst_probe, rep.max_gap)
    g1 = nuisance_grid(ate, 1, 1000, seed=21)
    g2 = nuisance_grid(ate, 2, 1000, seed=22)
    dr = dr_bruteforce(ate, ate.estimating_functions["aipw"], ate.base, g1, g2, tol=1e-10)
    elapsed = time.monotonic() - start
    _report(
        2,
        probes_ok and dr.passed and elapsed < 10.0,
        f"convexity max gap {worst_probe:.3e}, DR max violation "
        f"{max(dr.max_violation_side1, dr.max_violation_side2):.3e} in {elapsed:.2f}s",
    )


def test_criterion_3_partially_linear_dr():
    """The residual-product function is exactly unbiased over 10^3 wrong
    values per side on the slope-2 instance."""
    plm = build_plm(2.0, [0.0, 1.0])
    g1 = nuisance_grid(plm, 1, 1000, seed=31)
    g2 = nuisance_grid(plm, 2, 1000, seed=32)
    dr = dr_bruteforce(plm, plm.estimating_functions["plm"], plm.base, g1, g2, tol=1e-10)
    _report(
        3,
        dr.passed,
        f"max violation {max(dr.max_violation_side1, dr.max_violation_side2):.3e} "
        f"over 10^3 grid points per side",
    )


def test_criterion_4_necessity_and_iff(ate):
    """Orthogonality at 50 members per section plus vanishing derivatives
    along the connecting paths at five points each."""
    param = ate.parameterization
    d0 = ate.estimating_functions["aipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
    s1 = sample_section(ate, param, ate.base, 1, 50, seed=401)
    s2 = sample_section(ate, param, ate.base, 2, 50, seed=402)
    nec1 = necessity_check(d0, s1, tol=1e-8)
    nec2 = necessity_check(d0, s2, tol=1e-8)
    iff = iff_check(ate, ate.estimating_functions["aipw"], s1, s2, tol=1e-8)
    ok = nec1.passed and nec2.passed and iff.doubly_robust and iff.max_path_gap <= 1e-8
    _report(
        4,
        ok,
        f"necessity max {max(nec1.max_gap, nec2.max_gap):.3e}, "
        f"path-derivative max {iff.max_path_gap:.3e} over 50 members per side",
    )


def test_criterion_5_odds_ratio_dichotomy(odds):
    """One joint, two nuisance parameterizations: the efficient curve is
    doubly robust under the baseline scheme and provably not under the
    density-factorization scheme."""
    alt = parameterize_odds_ratio(odds, "alternative")
    can = parameterize_odds_ratio(odds, "canonical")

    d_alt = odds.estimating_functions["eic_alternative"]
    a1 = sample_section(odds, alt, odds.base, 1, 50, seed=501)
    a2 = sample_section(odds, alt, odds.base, 2, 50, seed=502)
    iff_alt = iff_check(odds, d_alt, a1, a2, tol=1e-8, parameterization=alt)
    g1 = nuisance_grid(odds, 1, 500, seed=51, parameterization=alt)
    g2 = nuisance_grid(odds, 2, 500, seed=52, parameterization=alt)
    dr_alt = dr_bruteforce(odds, d_alt, odds.base, g1, g2, tol=1e-8, parameterization=alt)

    d_can = odds.estimating_functions["eic_canonical"]
    c1 = sample_section(odds, can, odds.base, 1, 50, seed=503)
    c2 = sample_section(odds, can, odds.base, 2, 50, seed=504)
    iff_can = iff_check(odds, d_can, c1, c2, tol=1e-8, parameterization=can)

    ok = iff_alt.doubly_robust and dr_alt.passed and (not iff_can.doubly_robust) and (
        iff_can.max_violation > 1e-6
    )
    _report(
        5,
        ok,
        f"baseline scheme max {max(iff_alt.max_violation, dr_alt.max_violation_side1, dr_alt.max_violation_side2):.3e} (robust), "
        f"factorization scheme violation {iff_can.max_violation:.3e} (not robust)",
    )


def test_criterion_6_flatness_chain(ate, odds):
    """Transported section tangents stay contained for the arm-mean model,
    the efficient curve stays orthogonal, and the implication chain holds
    across the zoo."""
    rep = flatness_suite(ate, members_per_section=25, seed=601)
    flat_max = max(r.max_gap for r in rep.flatness)
    curv_max = max(r.max_gap for r in rep.curvature)
    chain_ok = rep.flat and flat_max <= 1e-10 and rep.curvature_free and curv_max <= 1e-8
    chain_ok = chain_ok and rep.dr_report.passed and rep.implications_ok
    alt = parameterize_odds_ratio(odds, "alternative")
    can = parameterize_odds_ratio(odds, "canonical")
    for param in (alt, can):
        other = flatness_suite(odds, param, members_per_section=25, seed=602)
        chain_ok = chain_ok and other.implications_ok
    _report(
        6,
        chain_ok,
        f"flatness {flat_max:.3e} (<=1e-10), curvature {curv_max:.3e} (<=1e-8), "
        f"implication chain intact across the zoo",
    )


def test_criterion_7_influence_curve_riesz(ate):
    """The efficient curve represents the target's derivative along 100
    random chart and mixture paths."""
    param = ate.parameterization
    eic = eic_from_chart(ate.chart, param.theta)
    rng = np.random.default_rng(701)
    paths = []
    for i in range(100):
        if i % 2 == 0:
            w = 0.2 + rng.random(8)
            paths.append(mixture_path(ate.base, Distribution(ate.base.space, w / w.sum())))
        else:
            d = rng.standard_normal(ate.chart.n_params)
            paths.append(chart_path(ate.chart, d / np.linalg.norm(d)))
    rep = verify_influence_curve(eic, param.theta, paths, ate.base, tol=1e-6)
    _report(7, rep.passed, f"max Riesz gap {rep.max_gap:.3e} over 100 paths")


def test_criterion_8_monte_carlo_model_dr(ate):
    """n = 50,000 with 500 replicates: singly wrong scenarios unbiased to
    Monte Carlo precision, doubly wrong visibly biased."""
    start = time.monotonic()
    scenarios = default_scenarios(ate)
    g1w, g2w = scenarios["both-wrong"]
    designed = population_root(
        ate.base, ate.estimating_functions["aipw"], g1w, g2w, (-0.6, 1.4)
    )
    table = run_experiment(
        ate,
        ate.estimating_functions["aipw"],
        scenarios=scenarios,
        n_list=[50_000],
        replicates=500,
        seed=8675309,
    )
    rows = {r.scenario: r for r in table.rows}
    elapsed = time.monotonic() - start
    ok = abs(designed - 0.4) >= 0.02
    for name in ("gamma1-wrong", "gamma2-wrong"):
        ok = ok and abs(rows[name].bias) <= 3.0 * rows[name].se
    ok = ok and abs(rows["both-wrong"].bias) >= 5.0 * rows["both-wrong"].se
    ok = ok and all(r.n_failed == 0 for r in table.rows)
    ok = ok and elapsed < 60.0
    _report(
        8,
        ok,
        f"designed bias {designed - 0.4:+.4f}, gamma1-wrong {rows['gamma1-wrong'].bias:+.5f} "
        f"(3se {3 * rows['gamma1-wrong'].se:.5f}), gamma2-wrong {rows['gamma2-wrong'].bias:+.5f} "
        f"(3se {3 * rows['gamma2-wrong'].se:.5f}), both-wrong {rows['both-wrong'].bias:+.5f} "
        f"(5se {5 * rows['both-wrong'].se:.5f}) in {elapsed:.1f}s",
    )


def test_criterion_9_determinism(ate, odds):
    """Repeating representative checks with the same seed yields
    byte-identical serialized reports."""
    alt = parameterize_odds_ratio(odds, "alternative")

    def dr_run():
        g1 = nuisance_grid(ate, 1, 100, seed=91)
        g2 = nuisance_grid(ate, 2, 100, seed=92)
        return dr_bruteforce(ate, ate.estimating_functions["aipw"], ate.base, g1, g2).to_json()

    def iff_run():
        s1 = sample_section(odds, alt, odds.base, 1, 15, seed=93)
        s2 = sample_section(odds, alt, odds.base, 2, 15, seed=94)
        return iff_check(
            odds, odds.estimating_functions["eic_alternative"], s1, s2,
            tol=1e-8, parameterization=alt,
        ).to_json()

    def mc_run():
        return run_experiment(
            ate, ate.estimating_functions["aipw"], n_list=[2000], replicates=40, seed=95
        ).to_csv()

    def flat_run():
        return flatness_suite(ate, members_per_section=10, seed=96).to_json()

    ok = True
    for label, fn in (("dr", dr_run), ("iff", iff_run), ("simulate", mc_run), ("flatness", flat_run)):
        first, second = fn(), fn()
        ok = ok and first == second
    _report(9, ok, "dr, iff, simulate, and flatness reports byte-identical on reruns")
