import json

import numpy as np
import numpy.testing as npt
import pytest

from drlab.manifold import StateFunction
from drlab.models import (
    EstimatingFunction,
    build_ate,
    build_odds_ratio,
    build_plm,
    nuisance_grid,
    parameterize_odds_ratio,
    sample_section,
)
from drlab.robustness import (
    check_estimating_function,
    convexity_check,
    dr_bruteforce,
    e_invariance_check,
    flatness_suite,
    iff_check,
    necessity_check,
)


@pytest.fixture(scope="module")
def ate():
    return build_ate([0.5, 0.5], [0.3, 0.7], [[0.1, 0.3], [0.2, 0.6]], arm=1)


@pytest.fixture(scope="module")
def plm():
    return build_plm(2.0, [0.0, 1.0])


@pytest.fixture(scope="module")
def odds():
    return build_odds_ratio(float(np.log(2.0)), [0.3, 0.5], [0.4, 0.6], [0.5, 0.5])


class TestIdentification:
    def test_aipw_passes_with_affine_slope(self, ate):
        rep = check_estimating_function(ate, ate.estimating_functions["aipw"], ate.base)
        assert rep.passed
        # slope is exactly -1: mean at theta' is theta - theta'
        for t, v in zip(rep.theta_grid, rep.offtruth_means):
            npt.assert_allclose(v, 0.4 - t, atol=1e-13)

    def test_truth_excluded_from_grid(self, ate):
        rep = check_estimating_function(ate, ate.estimating_functions["aipw"], ate.base)
        assert all(abs(t - 0.4) > 1e-12 for t in rep.theta_grid)

    def test_zero_function_rejected(self, ate):
        zero = EstimatingFunction(
            "zero", lambda th, g1, g2: StateFunction(ate.base.space, np.zeros(8))
        )
        rep = check_estimating_function(ate, zero, ate.base)
        assert not rep.passed

    def test_plm_has_nonzero_slope(self, plm):
        rep = check_estimating_function(plm, plm.estimating_functions["plm"], plm.base)
        assert rep.passed
        assert all(abs(v) > 1e-4 for v in rep.offtruth_means)


class TestBruteForce:
    def test_aipw_is_doubly_robust(self, ate):
        g1 = nuisance_grid(ate, 1, 100, seed=1)
        g2 = nuisance_grid(ate, 2, 100, seed=2)
        rep = dr_bruteforce(ate, ate.estimating_functions["aipw"], ate.base, g1, g2, tol=1e-10)
        assert rep.passed
        assert rep.max_violation_side1 < 1e-13
        assert rep.max_violation_side2 < 1e-13

    def test_plm_is_doubly_robust(self, plm):
        g1 = nuisance_grid(plm, 1, 100, seed=3)
        g2 = nuisance_grid(plm, 2, 100, seed=4)
        rep = dr_bruteforce(plm, plm.estimating_functions["plm"], plm.base, g1, g2, tol=1e-10)
        assert rep.passed

    def test_pure_weighting_fails_on_wrong_propensity(self, ate):
        g1 = nuisance_grid(ate, 1, 50, seed=5)
        g2 = nuisance_grid(ate, 2, 50, seed=6)
        rep = dr_bruteforce(ate, ate.estimating_functions["ipw"], ate.base, g1, g2, tol=1e-10)
        assert not rep.passed
        assert rep.max_violation_side2 > 1e-3
        # the truth grid point itself is still unbiased
        assert rep.side2_violations[0] < 1e-13

    def test_report_roundtrips_json_and_csv(self, ate):
        g1 = nuisance_grid(ate, 1, 5, seed=7)
        g2 = nuisance_grid(ate, 2, 5, seed=8)
        rep = dr_bruteforce(ate, ate.estimating_functions["aipw"], ate.base, g1, g2)
        data = json.loads(rep.to_json())
        assert data["pass"] and data["grid_sizes"] == [5, 5]
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "side,grid_index,abs_mean,pass"
        assert len(lines) == 11


class TestNecessity:
    def test_aipw_orthogonal_over_both_sections(self, ate):
        param = ate.parameterization
        d0 = ate.estimating_functions["aipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
        for which in (1, 2):
            s = sample_section(ate, param, ate.base, which, 50, seed=which + 20)
            rep = necessity_check(d0, s, tol=1e-8)
            assert rep.passed
            assert rep.max_gap < 1e-12

    def test_base_only_reduces_to_orthogonality_at_base(self, ate):
        param = ate.parameterization
        d0 = ate.estimating_functions["aipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
        s = sample_section(ate, param, ate.base, 1, 1, seed=0)
        rep = necessity_check(d0, s, tol=1e-8)
        assert rep.n_members == 1 and rep.passed

    def test_pure_weighting_fails_on_propensity_section(self, ate):
        param = ate.parameterization
        d0 = ate.estimating_functions["ipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
        s2 = sample_section(ate, param, ate.base, 2, 50, seed=23)
        rep = necessity_check(d0, s2, tol=1e-8)
        assert not rep.passed
        assert rep.max_gap > 1e-3
        assert 0 < rep.argmax_member < 50


class TestIff:
    def test_aipw_verdict_doubly_robust(self, ate):
        param = ate.parameterization
        s1 = sample_section(ate, param, ate.base, 1, 25, seed=31)
        s2 = sample_section(ate, param, ate.base, 2, 25, seed=32)
        rep = iff_check(ate, ate.estimating_functions["aipw"], s1, s2, tol=1e-8)
        assert rep.doubly_robust
        assert rep.max_path_gap < 1e-9

    def test_ipw_verdict_not_doubly_robust(self, ate):
        param = ate.parameterization
        s1 = sample_section(ate, param, ate.base, 1, 25, seed=33)
        s2 = sample_section(ate, param, ate.base, 2, 25, seed=34)
        rep = iff_check(ate, ate.estimating_functions["ipw"], s1, s2, tol=1e-8)
        assert not rep.doubly_robust

    def test_odds_ratio_dichotomy(self, odds):
        # same joint, same efficient curve: one nuisance bookkeeping admits
        # a doubly robust verdict, the other provably cannot
        alt = parameterize_odds_ratio(odds, "alternative")
        can = parameterize_odds_ratio(odds, "canonical")
        a1 = sample_section(odds, alt, odds.base, 1, 25, seed=41)
        a2 = sample_section(odds, alt, odds.base, 2, 25, seed=42)
        rep_alt = iff_check(
            odds, odds.estimating_functions["eic_alternative"], a1, a2,
            tol=1e-8, parameterization=alt,
        )
        assert rep_alt.doubly_robust
        c1 = sample_section(odds, can, odds.base, 1, 25, seed=43)
        c2 = sample_section(odds, can, odds.base, 2, 25, seed=44)
        rep_can = iff_check(
            odds, odds.estimating_functions["eic_canonical"], c1, c2,
            tol=1e-8, parameterization=can,
        )
        assert not rep_can.doubly_robust
        assert rep_can.max_violation > 1e-6

    def test_verdict_agrees_with_bruteforce_across_zoo(self, ate, plm, odds):
        alt = parameterize_odds_ratio(odds, "alternative")
        cases = [
            (ate, ate.parameterization, ate.estimating_functions["aipw"], (1, 2)),
            (ate, ate.parameterization, ate.estimating_functions["ipw"], (1, 2)),
            (plm, plm.parameterization, plm.estimating_functions["plm"], (1,)),
            (odds, alt, odds.estimating_functions["eic_alternative"], (1, 2)),
        ]
        for inst, param, fn, which_list in cases:
            g1 = nuisance_grid(inst, 1, 60, seed=51, parameterization=param)
            g2 = nuisance_grid(inst, 2, 60, seed=52, parameterization=param)
            dr = dr_bruteforce(inst, fn, inst.base, g1, g2, tol=1e-8, parameterization=param)
            if len(which_list) < 2:
                continue
            s1 = sample_section(inst, param, inst.base, 1, 20, seed=53)
            s2 = sample_section(inst, param, inst.base, 2, 20, seed=54)
            iff = iff_check(inst, fn, s1, s2, tol=1e-8, parameterization=param)
            assert iff.doubly_robust == dr.passed

    def test_necessity_follows_bruteforce(self, ate):
        # anything the brute-force sweep certifies must pass orthogonality
        param = ate.parameterization
        g1 = nuisance_grid(ate, 1, 40, seed=61)
        g2 = nuisance_grid(ate, 2, 40, seed=62)
        d0 = ate.estimating_functions["aipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
        dr = dr_bruteforce(ate, ate.estimating_functions["aipw"], ate.base, g1, g2, tol=1e-10)
        assert dr.passed
        for which in (1, 2):
            s = sample_section(ate, param, ate.base, which, 30, seed=63 + which)
            assert necessity_check(d0, s, tol=1e-8).passed


class TestConvexity:
    def test_ate_sections_pass(self, ate):
        for which in (1, 2):
            s = sample_section(ate, ate.parameterization, ate.base, which, 20, seed=71 + which)
            rep = convexity_check(s, pairs=60, tol=1e-12, seed=5)
            assert rep.passed
            assert rep.max_gap < 1e-13

    def test_alternative_odds_sections_pass(self, odds):
        alt = parameterize_odds_ratio(odds, "alternative")
        for which in (1, 2):
            s = sample_section(odds, alt, odds.base, which, 15, seed=73 + which)
            assert convexity_check(s, pairs=40, tol=1e-12, seed=6).passed

    def test_singleton_section_vacuous(self, ate):
        s = sample_section(ate, ate.parameterization, ate.base, 1, 1, seed=75)
        rep = convexity_check(s, pairs=10, tol=1e-12)
        assert rep.passed and rep.max_gap == 0.0

    def test_curved_synthetic_section_fails(self, odds):
        can = parameterize_odds_ratio(odds, "canonical")
        s = sample_section(odds, can, odds.base, 2, 15, seed=77)
        rep = convexity_check(s, pairs=40, tol=1e-12, seed=7)
        assert not rep.passed
        assert rep.max_gap > 1e-4


class TestEInvariance:
    def test_aipw_invariant_over_both_sections(self, ate):
        for which in (1, 2):
            s = sample_section(ate, ate.parameterization, ate.base, which, 25, seed=81 + which)
            rep = e_invariance_check(ate, ate.estimating_functions["aipw"], s, tol=1e-10)
            assert rep.passed and rep.equivalent
            assert rep.max_invariance_gap < 1e-12
            assert rep.max_swap_gap < 1e-12

    def test_base_member_has_zero_gap(self, ate):
        s = sample_section(ate, ate.parameterization, ate.base, 1, 10, seed=83)
        rep = e_invariance_check(ate, ate.estimating_functions["aipw"], s, tol=1e-10)
        assert rep.invariance_gaps[0] < 1e-14

    def test_pure_weighting_fails_equivalently_on_propensity_side(self, ate):
        # invariance defect and swapped-in bias appear together, member by
        # member, on the section where the weight table moves
        s2 = sample_section(ate, ate.parameterization, ate.base, 2, 25, seed=85)
        rep = e_invariance_check(ate, ate.estimating_functions["ipw"], s2, tol=1e-10)
        assert rep.equivalent
        assert rep.max_invariance_gap > 1e-3
        assert rep.max_swap_gap > 1e-3
        # and is untouched on the outcome side, where its bias has no lever
        s1 = sample_section(ate, ate.parameterization, ate.base, 1, 25, seed=86)
        rep1 = e_invariance_check(ate, ate.estimating_functions["ipw"], s1, tol=1e-10)
        assert rep1.equivalent
        assert rep1.max_invariance_gap < 1e-12


class TestFlatnessSuite:
    def test_ate_chain(self, ate):
        rep = flatness_suite(ate, members_per_section=20, seed=91)
        assert rep.flat and rep.curvature_free and rep.dr_report.passed
        assert rep.implications_ok
        assert max(r.max_gap for r in rep.flatness) <= 1e-10
        assert max(r.max_gap for r in rep.curvature) <= 1e-8

    def test_alternative_odds_curvature_free(self, odds):
        alt = parameterize_odds_ratio(odds, "alternative")
        rep = flatness_suite(odds, alt, members_per_section=20, seed=93)
        assert rep.curvature_free
        assert rep.dr_report.passed
        assert rep.implications_ok

    def test_canonical_odds_not_curvature_free(self, odds):
        can = parameterize_odds_ratio(odds, "canonical")
        rep = flatness_suite(odds, can, members_per_section=20, seed=95)
        assert not rep.curvature_free
        assert max(r.max_gap for r in rep.curvature) > 1e-6
        assert not rep.flat
        assert rep.implications_ok  # failed antecedents keep implications true

    def test_implication_chain_across_zoo(self, ate, plm, odds):
        # convex sections -> flat -> curvature-free -> doubly robust, with
        # no link violated anywhere in the zoo
        alt = parameterize_odds_ratio(odds, "alternative")
        can = parameterize_odds_ratio(odds, "canonical")
        for inst, param in ((ate, ate.parameterization), (odds, alt), (odds, can)):
            rep = flatness_suite(inst, param, members_per_section=15, seed=97)
            convex = all(
                convexity_check(
                    sample_section(inst, param, inst.base, w, 15, seed=98 + w),
                    pairs=30, tol=1e-12, seed=9,
                ).passed
                for w in (1, 2)
            )
            assert rep.implications_ok
            if convex:
                assert rep.flat
            if rep.flat:
                assert rep.curvature_free
            if rep.curvature_free:
                assert rep.dr_report.passed


class TestReportShapes:
    def test_ortho_report_csv(self, ate):
        param = ate.parameterization
        d0 = ate.estimating_functions["aipw"](0.4, param.gamma1(ate.base), param.gamma2(ate.base))
        s = sample_section(ate, param, ate.base, 1, 5, seed=99)
        rep = necessity_check(d0, s, tol=1e-8)
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "member_index,max_abs_pairing,pass"
        assert len(lines) == 6

    def test_iff_report_serializes(self, ate):
        param = ate.parameterization
        s1 = sample_section(ate, param, ate.base, 1, 5, seed=100)
        s2 = sample_section(ate, param, ate.base, 2, 5, seed=101)
        rep = iff_check(ate, ate.estimating_functions["aipw"], s1, s2, tol=1e-8)
        data = json.loads(rep.to_json())
        assert data["doubly_robust"] is True
        assert data["ortho1"]["n_members"] == 5
