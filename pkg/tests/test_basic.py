import math

import numpy as np
import pytest

from conftest import single_controller
from hiergame import (BasicSolveOptions, Box, InvShannon, Linear, NonConvergenceError,
                      ParameterError, Quadratic, ScenarioParams, ValidationError,
                      agent_best_response, agent_utility, centralized_optimum, gen_scenario,
                      price_update, solve_basic)


def test_best_response_examples():
    f, g, box = Quadratic(1, 2), Quadratic(0.5, 0), Box(0, 10)
    assert agent_best_response(f, g, 0.0, box) == pytest.approx(4 / 3, abs=1e-12)
    assert agent_best_response(f, g, 2.0, box) == pytest.approx(2.0, abs=1e-12)
    assert agent_best_response(Quadratic(1, 0), Linear(0, 0), 0.0, box) == 0.0


def test_price_update_examples():
    assert price_update(Quadratic(0.5, 0), 4 / 3) == pytest.approx(4 / 3, abs=1e-15)
    assert price_update(Linear(3, 0), 7.0) == 3.0
    assert price_update(InvShannon(1, 1), 1.0) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert price_update(InvShannon(1, 1), 1.0) == pytest.approx(1.386294, abs=1e-6)


def test_fixture_converges_with_ratio_one_third(basic_fixture):
    ref = centralized_optimum(basic_fixture)
    res = solve_basic(basic_fixture, reference=ref)
    cell = ("a", "c")
    assert res.allocation[cell] == pytest.approx(2.0, abs=1e-8)
    assert res.prices[cell] == pytest.approx(2.0, abs=1e-8)
    err = np.sqrt(res.trace.column("epsilon"))
    assert err[:3] == pytest.approx([2 / 3, 2 / 9, 2 / 27], abs=1e-12)
    ratios = [b / a for a, b in zip(err, err[1:]) if b > 1e-6]
    assert len(ratios) >= 8
    assert all(abs(r - 1 / 3) <= 1e-9 for r in ratios)
    # |x - 2| <= 1e-3  <=>  epsilon <= 1e-6
    assert res.trace.first_crossing(1e-6) == 6


def test_contraction_rate_law():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m, L = rng.uniform(0.2, 5.0, size=2)
        inst = single_controller([Quadratic(m / 2, 3.0)], [Quadratic(L / 2, 0.0)], [Box(0, 100)])
        deltas = solve_basic(inst).trace.column("max_price_delta")
        for a, b in zip(deltas, deltas[1:]):
            if b < 1e-4:  # below this the scalar solve tolerance shows
                break
            assert b / a == pytest.approx(L / (m + L), abs=1e-9)


def test_immediate_fixed_point():
    inst = single_controller([Quadratic(1, 0)], [Quadratic(0.5, 0)])
    res = solve_basic(inst)
    assert len(res.trace) == 1
    assert res.allocation[("a0", "c")] == 0.0 and res.prices[("a0", "c")] == 0.0


def test_linear_cost_stops_after_one_sweep():
    inst = single_controller([Quadratic(1, 2)], [Linear(3, 0)])
    res = solve_basic(inst)
    assert len(res.trace) == 1
    assert res.prices[("a0", "c")] == 3.0


def test_exit_conditions_on_generated_instance():
    inst = gen_scenario("crowd_sensing", 1, 40, ScenarioParams(coupling=False), seed=5)
    opts = BasicSolveOptions(tol_price=1e-9)
    res = solve_basic(inst, opts)
    for cell in inst.cells:
        x, theta = res.allocation[cell], res.prices[cell]
        f, g, box = inst.f(cell), inst.g(cell), inst.box(cell)
        assert abs(theta - g.grad(x)) <= opts.tol_price
        m, _ = f.curvature_bounds(box)
        tol_kkt = 10 * opts.tol_price / m
        d = f.grad(x)
        if box.lo < x < box.hi:
            assert abs(d) <= tol_kkt
        elif x == box.lo:
            assert d >= -tol_kkt
        else:
            assert d <= tol_kkt
    for a in inst.agents:
        assert agent_utility(inst, res.allocation, res.prices, a.id) >= -1e-9


def test_explicit_theta0(basic_fixture):
    res = solve_basic(basic_fixture, BasicSolveOptions(theta0={("a", "c"): 2.0}))
    assert len(res.trace) == 1 and res.allocation[("a", "c")] == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ParameterError):
        solve_basic(basic_fixture, BasicSolveOptions(theta0={}))


def test_nonconvergence_carries_trace(basic_fixture):
    with pytest.raises(NonConvergenceError) as info:
        solve_basic(basic_fixture, BasicSolveOptions(max_outer=3))
    assert len(info.value.trace) == 3


def test_form_mismatch(basic_fixture):
    inst = gen_scenario("crowd_sensing", 2, 3, seed=1)
    with pytest.raises(ValidationError, match="form"):
        solve_basic(inst)


def test_options_validation():
    with pytest.raises(ParameterError):
        BasicSolveOptions(tol_price=0)
    with pytest.raises(ParameterError):
        BasicSolveOptions(max_outer=0)
    with pytest.raises(ParameterError):
        BasicSolveOptions(theta0="zero")


def test_parallel_determinism():
    inst = gen_scenario("crowd_sensing", 1, 1200, ScenarioParams(coupling=False), seed=2)
    traces = [solve_basic(inst, BasicSolveOptions(threads=t)).trace.to_csv() for t in (1, 3, 8)]
    assert traces[0] == traces[1] == traces[2]
