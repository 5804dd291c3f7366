import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from hiergame import Agent, Box, Controller, GameInstance, LinearConstraint, Quadratic, load_instance

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "basic_quadratic.json"

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def basic_fixture():
    return load_instance(FIXTURE)


def single_controller(fs, gs, boxes=None, constraints=(), form=None):
    """One controller ``c`` over agents ``a0..``; ``form`` defaults from the constraints."""
    ids = [f"a{i}" for i in range(len(fs))]
    boxes = boxes or [Box(0.0, 10.0)] * len(fs)
    ctrl = Controller("c", dict(zip(ids, fs)), tuple(constraints))
    agents = [Agent(a, {"c": g}, {"c": b}) for a, g, b in zip(ids, gs, boxes)]
    form = form or ("single-controller-coupled" if constraints else "basic")
    return GameInstance(form, [ctrl], agents)


def cell_sum(cells, rhs, kind="le", name="k", coef=1.0):
    return LinearConstraint(name, [(c, coef) for c in cells], rhs, kind)


def asymmetric_capacity():
    """Two controllers share one agent with capacity 2 (baseline fixture)."""
    cells = [("a", "c1"), ("a", "c2")]
    return GameInstance(
        "mlmf",
        [Controller("c1", {"a": Quadratic(1.0, 1.0)}), Controller("c2", {"a": Quadratic(4.0, 2.0)})],
        [Agent("a", {"c1": Quadratic(0.5, 0.0), "c2": Quadratic(0.5, 0.0)},
               {"c1": Box(0.0, 10.0), "c2": Box(0.0, 10.0)},
               (cell_sum(cells, 2.0, name="capacity:a"),))],
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
