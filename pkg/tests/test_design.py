"""Tests for the Laplace-scale design solver: feasibility accounting, the
search box, and agreement with an independent dense-grid oracle."""
from __future__ import annotations

import numpy as np
import pytest

from privarx.design import (
    NoiseDesignProblem,
    SearchBox,
    bounding_box,
    feasible,
    objective,
    optimize,
)
from privarx.model import ArxModel
from privarx.privacy import CoefficientBounds, PrivacyConstants, calibrate_all, constants
from privarx.stability import certify

from conftest import design_oracle, random_problem


def reference_problem(gamma3: float = 1000.0) -> NoiseDesignProblem:
    model = ArxModel(a=(-0.25, 0.375), b=((1.0, 2.0), (3.0, 4.0), (5.0, 6.0)))
    consts = constants(certify(model), model.p, CoefficientBounds((3.0, 7.0, 11.0)))
    return NoiseDesignProblem(p=2, q=(2, 2, 2), gamma3=gamma3,
                              epsilon=0.5, delta_adj=1.0, consts=consts)




def test_objective_arithmetic():
    prob = reference_problem()
    got = objective((2.0, 1.0, 1.0, 1.0), prob)
    np.testing.assert_allclose(got, 14.0 / 1002.0, rtol=1e-14)
    # min over all scales, including the output scale
    got2 = objective((1.0, 2.0, 2.0, 2.0), prob)
    np.testing.assert_allclose(got2, (2.0 + 4.0 * 6.0) / 1002.0, rtol=1e-14)


def test_feasible_matches_direct_conditions():
    """1000 random points against directly coded constraint arithmetic."""
    rng = np.random.default_rng(71)
    for _ in range(20):
        prob = random_problem(rng)
        eps, d, c = prob.epsilon, prob.delta_adj, prob.consts
        for _ in range(50):
            b = tuple(rng.uniform(0.01, 50.0, size=prob.m + 1))
            ok, slacks = feasible(b, prob)
            direct = c.c1 * d / b[0] <= eps and all(
                (c.ci2[i] / b[0] + 1.0 / b[1 + i]) * d <= eps
                for i in range(prob.m))
            assert ok == direct
            assert slacks is not None and len(slacks) == prob.m + 1
            assert ok == all(s >= 0 for s in slacks)


def test_feasible_edge_cases():
    prob = reference_problem()
    ok, slacks = feasible((1.0, -1.0, 1.0, 1.0), prob)
    assert not ok and slacks is None
    with pytest.raises(ValueError):
        feasible((1.0, 1.0), prob)
    below = (prob.consts.c1 * prob.delta_adj / prob.epsilon * 0.9,
             1e9, 1e9, 1e9)
    ok2, slacks2 = feasible(below, prob)
    assert not ok2 and slacks2[0] < 0


def test_bounding_box():
    prob = reference_problem()
    box = bounding_box(prob)
    d_over_e = prob.delta_adj / prob.epsilon
    np.testing.assert_allclose(box.lower[0], max(prob.consts.ci2) * d_over_e,
                               rtol=1e-12)
    np.testing.assert_allclose(box.lower[1:], (d_over_e,) * 3, rtol=1e-12)
    assert all(u == 10.0 * max(box.lower) for u in box.upper)
    assert all(lo < up for lo, up in zip(box.lower, box.upper))


def test_bounding_box_no_inputs():
    prob = NoiseDesignProblem(p=1, q=(), gamma3=1.0, epsilon=1.0,
                              delta_adj=1.0, consts=PrivacyConstants(3.0, ()))
    box = bounding_box(prob)
    assert box.lower == (3.0,)
    assert box.upper == (30.0,)


def test_heuristic_points_are_feasible():
    rng = np.random.default_rng(101)
    for _ in range(20):
        prob = random_problem(rng)
        if prob.m == 0:
            continue
        for rho in (0.25, 0.5, 0.75):
            spec = calibrate_all(prob.consts, prob.epsilon, prob.delta_adj, rho)
            ok, _ = feasible(spec.b, prob, tol=1e-9)
            assert ok


def test_optimize_reference_problem():
    """The reference design problem lands in the all-equal valley at the
    smallest feasible equal scale."""
    sol = optimize(reference_problem(1000.0))
    np.testing.assert_allclose(sol.f_star, 3.9357604619794486, rtol=1e-6)
    s_expected = 175.02421034386947
    np.testing.assert_allclose(sol.b_star, (s_expected,) * 4, rtol=1e-4)
    assert min(sol.slacks) >= -1e-9


def test_optimize_dominates_heuristic():
    """The solver is never worse than the budget-split heuristic at any
    split, and strictly better on the reference problem."""
    rng = np.random.default_rng(202)
    for _ in range(10):
        prob = random_problem(rng)
        if prob.m == 0:
            continue
        sol = optimize(prob)
        for rho in (0.25, 0.5, 0.75):
            spec = calibrate_all(prob.consts, prob.epsilon, prob.delta_adj, rho)
            assert sol.f_star <= objective(spec.b, prob) * (1 + 1e-9)
    prob = reference_problem(100.0)
    sol = optimize(prob)
    heur = min(objective(calibrate_all(prob.consts, prob.epsilon,
                                       prob.delta_adj, rho).b, prob)
               for rho in (0.25, 0.5, 0.75))
    assert sol.f_star < 0.99 * heur


def test_optimize_matches_brute_force():
    """Six random problems with up to two channels: the solver's value
    agrees with the independent reference oracle to 1e-3 relative."""
    rng = np.random.default_rng(808)
    for _ in range(6):
        prob = random_problem(rng)
        sol = optimize(prob)
        f_oracle = design_oracle(prob, sol.search_box)
        rel = abs(sol.f_star - f_oracle) / max(1.0, abs(f_oracle))
        assert rel <= 1e-3, f"solver {sol.f_star} vs oracle {f_oracle}"


def test_optimize_no_inputs():
    """With no input channels the objective is increasing in the only
    scale, so the optimum sits exactly on the constraint floor."""
    prob = NoiseDesignProblem(p=2, q=(), gamma3=5.0, epsilon=1.0,
                              delta_adj=1.0, consts=PrivacyConstants(4.0, ()))
    sol = optimize(prob)
    np.testing.assert_allclose(sol.b_star, (4.0,), rtol=1e-9)
    np.testing.assert_allclose(sol.f_star, 2 * 16.0 / (5.0 + 32.0), rtol=1e-9)


def test_gamma3_dominant_limit():
    """When gamma3 dwarfs the scales the objective degenerates to
    minimizing the numerator: f* * gamma3 converges."""
    p1 = reference_problem(1e6)
    p2 = reference_problem(1e8)
    v1 = optimize(p1).f_star * 1e6
    v2 = optimize(p2).f_star * 1e8
    np.testing.assert_allclose(v1, v2, rtol=0.02)


def test_descent_from_random_starts_never_beats_solver():
    """Soundness of the multistart: projected descents launched from 10
    random feasible interior points never improve on the returned value."""
    from privarx.design import _descend
    rng = np.random.default_rng(55)
    prob = reference_problem(1000.0)
    sol = optimize(prob)
    box = sol.search_box
    launched = 0
    while launched < 10:
        start = tuple(float(rng.uniform(lo, up))
                      for lo, up in zip(box.lower, box.upper))
        ok, _ = feasible(start, prob)
        if not ok:
            continue
        launched += 1
        _, f = _descend(start, prob, box, 1e-9)
        assert f >= sol.f_star - 1e-6 * max(1.0, abs(sol.f_star))


def test_solution_invariants():
    rng = np.random.default_rng(404)
    for _ in range(5):
        prob = random_problem(rng)
        sol = optimize(prob)
        assert min(sol.slacks) >= -1e-9
        np.testing.assert_allclose(sol.f_star, objective(sol.b_star, prob),
                                   rtol=1e-12)
        for x, lo, up in zip(sol.b_star, sol.search_box.lower,
                             sol.search_box.upper):
            assert lo * (1 - 1e-12) <= x <= up * (1 + 1e-12)
        again = optimize(prob)
        assert again.b_star == sol.b_star and again.f_star == sol.f_star


def test_problem_validation():
    consts = PrivacyConstants(2.0, (1.0,))
    with pytest.raises(ValueError):
        NoiseDesignProblem(p=1, q=(1, 1), gamma3=1.0, epsilon=1.0,
                           delta_adj=1.0, consts=consts)
    with pytest.raises(ValueError):
        NoiseDesignProblem(p=1, q=(1,), gamma3=0.0, epsilon=1.0,
                           delta_adj=1.0, consts=consts)
    with pytest.raises(ValueError):
        NoiseDesignProblem(p=1, q=(1,), gamma3=1.0, epsilon=-1.0,
                           delta_adj=1.0, consts=consts)
    prob = NoiseDesignProblem(p=1, q=(1,), gamma3=1.0, epsilon=1.0,
                              delta_adj=1.0, consts=consts)
    with pytest.raises(ValueError):
        optimize(prob, tol=0.0)
