import numpy as np
import pytest

from hiergame import (KINDS, GameInstance, InvShannon, LogConcaveCost, ParameterError, Quadratic,
                      ScenarioParams, centralized_optimum, gen_scenario, validate_instance)
from hiergame._layout import Layout
from hiergame.admm import check_feasible


def test_ten_by_hundred_example():
    inst = gen_scenario("crowd_sensing", 10, 100, seed=42)
    assert inst.form == "mlmf"
    assert len(inst.cells) == 1000
    names = [k.name for k in inst.constraints]
    assert sum(n.startswith("demand:") for n in names) == 10
    assert sum(n.startswith("capacity:") for n in names) == 100
    assert len(names) == 110


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    a = gen_scenario(kind, 3, 7, seed=11).to_json()
    b = gen_scenario(kind, 3, 7, seed=11).to_json()
    assert a == b
    assert a != gen_scenario(kind, 3, 7, seed=12).to_json()


def test_degenerate_size_is_basic():
    inst = gen_scenario("crowd_sensing", 1, 1, ScenarioParams(coupling=False))
    assert inst.form == "basic"
    assert validate_instance(inst).ok


def test_one_controller_with_coupling():
    inst = gen_scenario("crowd_sensing", 1, 5, seed=0)
    assert inst.form == "single-controller-coupled"
    assert [k.name for k in inst.constraints] == ["demand:c0"]


@pytest.mark.parametrize("kind", KINDS)
def test_round_trip_and_valid(kind):
    inst = gen_scenario(kind, 4, 9, seed=3)
    assert validate_instance(inst).ok
    back = GameInstance.from_dict(inst.to_dict())
    assert back.to_json() == inst.to_json()
    assert back.seed == 3 and back.kind == kind


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_regime_guarantee(kind, seed):
    inst = gen_scenario(kind, 3, 6, seed=seed)
    for cell in inst.cells:
        box = inst.box(cell)
        m_f, _ = inst.f(cell).curvature_bounds(box)
        m_g, l_g = inst.g(cell).curvature_bounds(box)
        assert m_f > 0
        assert 0 <= m_g <= l_g < np.inf
        assert isinstance(inst.f(cell), Quadratic) and isinstance(inst.g(cell), InvShannon)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_strictly_interior(kind, seed):
    lay = Layout(gen_scenario(kind, 3, 6, seed=seed))
    assert check_feasible(lay.lo, lay.hi, lay.A, lay.b, lay.is_eq) > 1e-9


def test_some_but_not_all_constraints_bind():
    inst = gen_scenario("crowd_sensing", 5, 50, seed=0)
    ref = centralized_optimum(inst)
    active = [abs(v) > 1e-8 for v in ref.multipliers.values()]
    assert 0 < sum(active) < len(active)


def test_out_of_regime_flagged():
    inst = gen_scenario("crowd_sensing", 2, 3, ScenarioParams(out_of_regime=True), seed=0)
    rep = validate_instance(inst)
    assert rep.ok and rep.warnings
    assert all(isinstance(inst.g(c), LogConcaveCost) for c in inst.cells)


def test_fog_is_sparse():
    inst = gen_scenario("fog", 5, 20, seed=0)
    assert len(inst.cells) == 20 * ScenarioParams().fog_links
    assert all(inst.box(c).hi == ScenarioParams().fog_box_hi for c in inst.cells)


def test_vehicular_tight_boxes_and_relay():
    inst = gen_scenario("vehicular", 3, 10, seed=0)
    lo, hi = ScenarioParams().window
    assert all(lo <= inst.box(c).hi <= hi for c in inst.cells)
    assert [k.name for k in inst.constraints] == [f"relay:c{j}" for j in range(3)]


def test_caching_has_only_storage():
    inst = gen_scenario("caching", 3, 10, seed=0)
    assert all(k.name.startswith("capacity:") for k in inst.constraints)


def test_unit_scaling_preserves_optimum():
    # the per-agent unit rescales every term uniformly, so allocations match
    a = gen_scenario("crowd_sensing", 2, 4, seed=1)
    b = gen_scenario("crowd_sensing", 2, 4, ScenarioParams(per_agent_units=False), seed=1)
    xa = centralized_optimum(a).allocation.to_array(a)
    xb = centralized_optimum(b).allocation.to_array(b)
    np.testing.assert_allclose(xa, xb, atol=1e-7)


@pytest.mark.parametrize("call", [
    lambda: gen_scenario("satellite", 2, 2),
    lambda: gen_scenario("fog", 0, 2),
    lambda: gen_scenario("fog", 2, 0),
    lambda: ScenarioParams(target=(3.0, 1.0)),
    lambda: ScenarioParams(box_hi=0.0),
    lambda: ScenarioParams(fog_links=0),
    lambda: ScenarioParams(capacity_margin=0.0),
    lambda: gen_scenario("crowd_sensing", 3, 6, ScenarioParams(demand_share=5.0)),
])
def test_parameter_errors(call):
    with pytest.raises(ParameterError):
        call()
