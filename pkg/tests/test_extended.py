import dataclasses

import numpy as np
import pytest

from conftest import cell_sum, single_controller
from hiergame import (AdmmOptions, Agent, BasicSolveOptions, Box, Controller, GameInstance,
                      InfeasibleError, NonConvergenceError, Quadratic, ScenarioParams, SolveTrace,
                      ValidationError, centralized_optimum, epsilon, gen_scenario, kkt_check,
                      nash_certificate, solve_basic, solve_mlmf, solve_single_controller_coupled)
from hiergame._layout import Layout

Q = Quadratic


def mlmf_grid(nc, na, f=Q(1.0, 1.0), g=Q(0.5, 0.0), capacity=None):
    cids = [f"c{j}" for j in range(nc)]
    aids = [f"a{i}" for i in range(na)]
    ctrls = [Controller(c, {a: f for a in aids}) for c in cids]
    agents = []
    for a in aids:
        cons = () if capacity is None else (cell_sum([(a, c) for c in cids], capacity,
                                                     name=f"capacity:{a}"),)
        agents.append(Agent(a, {c: g for c in cids}, {c: Box(0.0, 10.0) for c in cids}, cons))
    return GameInstance("mlmf", ctrls, agents)


def as_form(inst, form):
    return dataclasses.replace(inst, form=form)


# -- single controller, coupled agents -------------------------------------------

def test_coupled_equality_example():
    inst = single_controller([Q(1.0, 2.0)] * 2, [Q(0.5, 0.0)] * 2,
                             constraints=[cell_sum([("a0", "c"), ("a1", "c")], 1.0, "eq")])
    res = solve_single_controller_coupled(inst)
    x = res.allocation.to_array(inst)
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-7)
    np.testing.assert_allclose(res.prices.to_array(inst), [0.5, 0.5], atol=1e-7)
    # stationarity of min sum (x-2)^2: 2(x-2) + lam = 0
    assert res.duals["k"] == pytest.approx(3.0, abs=1e-6)


def test_coupled_without_constraints_matches_basic():
    inst = single_controller([Q(1.0, 2.0), Q(3.0, 0.5)], [Q(0.5, 0.0), Q(2.0, 0.0)])
    coupled = solve_single_controller_coupled(as_form(inst, "single-controller-coupled"))
    basic = solve_basic(inst)
    np.testing.assert_allclose(coupled.allocation.to_array(inst), basic.allocation.to_array(inst),
                               atol=1e-12)
    assert len(coupled.trace) == len(basic.trace)


def test_coupled_slack_constraint():
    inst = single_controller([Q(1.0, 2.0)] * 2, [Q(0.5, 0.0)] * 2,
                             constraints=[cell_sum([("a0", "c"), ("a1", "c")], 100.0)])
    res = solve_single_controller_coupled(inst)
    np.testing.assert_allclose(res.allocation.to_array(inst), [2.0, 2.0], atol=1e-7)
    np.testing.assert_allclose(res.prices.to_array(inst), [2.0, 2.0], atol=1e-7)
    assert res.duals["k"] == 0.0


def test_coupled_rejects_other_forms(basic_fixture):
    with pytest.raises(ValidationError, match="single-controller-coupled"):
        solve_single_controller_coupled(basic_fixture)


# -- multiple controllers ----------------------------------------------------------

def test_mlmf_all_slack():
    inst = mlmf_grid(2, 2, capacity=10.0)
    res = solve_mlmf(inst)
    np.testing.assert_allclose(res.allocation.to_array(inst), 1.0, atol=1e-7)
    assert centralized_optimum(inst).total == pytest.approx(0.0, abs=1e-12)
    assert all(v == 0.0 for v in res.duals.agent_duals.values())


def test_mlmf_binding_capacity():
    inst = mlmf_grid(2, 1, capacity=1.0)
    res = solve_mlmf(inst)
    np.testing.assert_allclose(res.allocation.to_array(inst), [0.5, 0.5], atol=1e-7)
    assert res.duals.agent_duals["capacity:a0"] == pytest.approx(1.0, abs=1e-6)
    assert res.duals.controller_duals == {}


def test_mlmf_dual_signs_and_trace_columns():
    inst = gen_scenario("crowd_sensing", 3, 12, seed=5)
    res = solve_mlmf(inst)
    assert all(v >= 0 for v in res.duals.merged().values())
    last = res.trace[-1]
    assert last.agent_residual <= 1e-8 and last.controller_residual <= 1e-8
    names = Layout(inst).names
    lam = np.array([res.duals.merged()[n] for n in names])
    fam = Layout(inst).family
    assert last.agent_dual_norm == pytest.approx(np.linalg.norm(lam[fam == "agent"]))
    assert last.controller_dual_norm == pytest.approx(np.linalg.norm(lam[fam == "controller"]))


def test_mlmf_reaches_oracle_at_ten_by_hundred():
    inst = gen_scenario("crowd_sensing", 10, 100, seed=42)
    ref = centralized_optimum(inst)
    res = solve_mlmf(inst, reference=ref)
    assert res.trace.first_crossing(1e-3) is not None
    assert res.trace.first_crossing(1e-3) <= 100
    assert epsilon(inst, res.allocation, ref) <= 1e-3


@pytest.mark.parametrize("kind", ["crowd_sensing", "caching", "vehicular", "fog"])
@pytest.mark.parametrize("seed", [0, 1])
def test_equilibrium_is_constrained_optimum(kind, seed):
    inst = gen_scenario(kind, 3, 10, seed=seed)
    opts = BasicSolveOptions(tol_price=1e-8)
    admm = AdmmOptions(tol_primal=1e-8, tol_dual=1e-8)
    ref = centralized_optimum(inst)
    res = solve_mlmf(inst, opts, admm)
    bound = 10 * max(opts.tol_price, admm.tol_primal) * (1 + abs(ref.total))
    assert epsilon(inst, res.allocation, ref) <= bound
    assert kkt_check(inst, res.allocation, res.duals, 1e-6).passed
    # marginal-cost pricing at exit
    lay = Layout(inst)
    gap = np.abs(res.prices.to_array(inst) - lay.g.grad(res.allocation.to_array(inst)))
    assert gap.max() <= opts.tol_price


def test_nash_certificate():
    inst = gen_scenario("crowd_sensing", 3, 15, seed=2)
    res = solve_mlmf(inst)
    rng = np.random.default_rng(0)
    cells = [inst.cells[k] for k in rng.choice(len(inst.cells), 15, replace=False)]
    gain = nash_certificate(inst, res.allocation, res.prices, res.duals.merged(), cells=cells)
    assert 0.0 <= gain <= 1e-8
    # a visibly wrong price breaks it
    bad = dataclasses.replace(res.prices, theta={**res.prices.theta,
                                                 cells[0]: res.prices.theta[cells[0]] + 0.5})
    assert nash_certificate(inst, res.allocation, bad, res.duals.merged(), cells=cells[:1]) > 1e-3


# -- degeneration chain ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_one_controller_mlmf_equals_coupled(seed):
    inst = gen_scenario("crowd_sensing", 1, 6, seed=seed)
    assert inst.form == "single-controller-coupled"
    a = solve_single_controller_coupled(inst).allocation.to_array(inst)
    b = solve_mlmf(as_form(inst, "mlmf")).allocation.to_array(inst)
    assert np.linalg.norm(a - b) <= 1e-6


def test_unconstrained_chain():
    inst = gen_scenario("crowd_sensing", 1, 6, ScenarioParams(coupling=False), seed=3)
    assert inst.form == "basic"
    x = [solve_basic(inst).allocation.to_array(inst),
         solve_single_controller_coupled(as_form(inst, "single-controller-coupled"))
         .allocation.to_array(inst),
         solve_mlmf(as_form(inst, "mlmf")).allocation.to_array(inst)]
    assert np.linalg.norm(x[0] - x[1]) <= 1e-6 and np.linalg.norm(x[0] - x[2]) <= 1e-6


# -- errors carry the trace ----------------------------------------------------------

def test_max_outer_carries_trace():
    inst = gen_scenario("crowd_sensing", 2, 4, seed=0)
    with pytest.raises(NonConvergenceError) as err:
        solve_mlmf(inst, BasicSolveOptions(max_outer=2))
    assert isinstance(err.value.trace, SolveTrace) and len(err.value.trace) == 2


def test_inner_failure_carries_outer_trace():
    inst = gen_scenario("crowd_sensing", 2, 4, seed=0)
    with pytest.raises(NonConvergenceError) as err:
        solve_mlmf(inst, admm=AdmmOptions(max_inner=1))
    assert isinstance(err.value.trace, SolveTrace)
    assert err.value.inner_history is not None and len(err.value.inner_history) == 1


def test_infeasible_carries_trace():
    inst = single_controller([Q(1.0, 2.0)] * 2, [Q(0.5, 0.0)] * 2,
                             constraints=[cell_sum([("a0", "c"), ("a1", "c")], 100.0, "eq")])
    with pytest.raises(InfeasibleError) as err:
        solve_single_controller_coupled(inst)
    assert isinstance(err.value.trace, SolveTrace) and len(err.value.trace) == 0


def test_thread_count_does_not_change_trace():
    inst = gen_scenario("fog", 4, 40, seed=1)
    csvs = {solve_mlmf(inst, BasicSolveOptions(threads=t)).trace.to_csv() for t in (1, 4)}
    assert len(csvs) == 1
