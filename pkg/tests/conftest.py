import math

import numpy as np
import pytest
from hypothesis import settings

from cbba_etc.engine import Trial
from cbba_etc.world import Color, RobotState, ScenarioConfig, VictimStatus

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_trial(strategy="tree", n_robots=2, n_victims=2, **kw) -> Trial:
    cfg = ScenarioConfig(strategy=strategy, n_robots=n_robots, n_victims=n_victims,
                         duration_s=kw.pop("duration_s", 10.0), rng_seed=kw.pop("rng_seed", 7), **kw)
    return Trial(cfg)


def place_robot(trial, rid, pos, heading=0.0):
    r = trial.world.robots[rid]
    r.position[0], r.position[1] = pos
    r.heading = heading
    return r


def place_victim(trial, slot, pos, color=Color.RED):
    """Move the victim in ``slot`` to ``pos`` and recolor it."""
    w = trial.world
    v = w.victim_in_slot(slot)
    v.position = (float(pos[0]), float(pos[1]))
    v.wall_color = Color(color)
    w.vpos[slot] = v.position
    w.vcolor[slot] = int(color)
    return v


def retire_victim(trial, slot):
    """Deactivate a slot without scheduling a replacement."""
    w = trial.world
    v = w.victim_in_slot(slot)
    v.status = VictimStatus.EXPIRED
    w.active[slot] = False
    return v


def lone_robot(pos=(0.0, 0.0), color=Color.RED, heading=0.0, rid=0) -> RobotState:
    return RobotState(rid, np.array(pos, dtype=float), heading, Color(color))


@pytest.fixture
def cfg():
    return ScenarioConfig()


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
