"""Fixed-tick trial loop, stochastic actions and the victim lifecycle."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .comms import Bus
from .metrics import TrialMetrics
from .world import (RobotState, ScenarioConfig, VictimState, VictimStatus, World,
                    clamp_to_arena, robot_color, sample_disc)

log = logging.getLogger(__name__)

# tags for the independent RNG streams derived from a trial seed
ENV_STREAM, ROBOT_STREAM, COMM_STREAM, CONTROL_STREAM = 0, 1, 2, 3


@dataclass
class SimClock:
    dt_s: float
    tick_index: int = 0

    @property
    def now_s(self) -> float:
        return self.tick_index * self.dt_s

    def advance(self) -> None:
        self.tick_index += 1


class ActionOutcome(enum.Enum):
    MOVED = "MOVED"
    MOVE_FAILED = "MOVE_FAILED"
    INSPECTED = "INSPECTED"
    INSPECT_FAILED = "INSPECT_FAILED"
    RESCUED = "RESCUED"
    RESCUE_FAILED_STOCHASTIC = "RESCUE_FAILED_STOCHASTIC"
    RESCUE_FAILED_MISMATCH = "RESCUE_FAILED_MISMATCH"
    ABANDONED = "ABANDONED"
    IDLE = "IDLE"


def _fails(rng: np.random.Generator, p: float) -> bool:
    # no draw at all when p == 0 keeps failure-free streams identical across scenarios
    if p <= 0.0:
        return False
    return p >= 1.0 or rng.random() < p


def step_move(robot: RobotState, target_point, rng: np.random.Generator, cfg: ScenarioConfig,
              now: float = 0.0) -> ActionOutcome:
    if _fails(rng, cfg.p_move_fail):
        robot.busy_until = max(robot.busy_until, now + cfg.move_penalty_s)
        return ActionOutcome.MOVE_FAILED
    px, py = float(robot.position[0]), float(robot.position[1])
    dx, dy = target_point[0] - px, target_point[1] - py
    d = math.hypot(dx, dy)
    step = cfg.max_speed_mps * cfg.tick_dt_s
    if d <= step:
        nx, ny = float(target_point[0]), float(target_point[1])
    else:
        nx, ny = px + dx / d * step, py + dy / d * step
    if d > 0.0:
        robot.heading = math.atan2(dy, dx)
    robot.position[0], robot.position[1] = clamp_to_arena(nx, ny, cfg.arena_radius_m)
    return ActionOutcome.MOVED


def _require_close(robot: RobotState, victim: VictimState, cfg: ScenarioConfig) -> None:
    d = math.hypot(robot.position[0] - victim.position[0], robot.position[1] - victim.position[1])
    if d > cfg.detection_dist_m:
        raise ValueError(f"robot {robot.id} is {d:.3f} m from victim {victim.id}; "
                         f"must be within {cfg.detection_dist_m} m")
    if victim.status != VictimStatus.ACTIVE:
        raise ValueError(f"victim {victim.id} is not ACTIVE")


def step_inspect(robot: RobotState, victim: VictimState, rng: np.random.Generator,
                 cfg: ScenarioConfig) -> ActionOutcome:
    _require_close(robot, victim, cfg)
    if _fails(rng, cfg.p_inspect_fail):
        return ActionOutcome.INSPECT_FAILED
    robot.inspected[victim.id] = victim.wall_color
    return ActionOutcome.INSPECTED


def step_rescue(robot: RobotState, victim: VictimState, rng: np.random.Generator,
                cfg: ScenarioConfig, now: float = 0.0, world: Optional[World] = None) -> ActionOutcome:
    _require_close(robot, victim, cfg)
    if victim.id not in robot.inspected:
        raise ValueError(f"robot {robot.id} has not inspected victim {victim.id}")
    if victim.wall_color != robot.color:
        robot.mark_incompatible(victim.id, now + cfg.incompat_memory_s)
        return ActionOutcome.RESCUE_FAILED_MISMATCH
    if _fails(rng, cfg.p_rescue_fail):
        return ActionOutcome.RESCUE_FAILED_STOCHASTIC
    if world is not None:
        world.mark_rescued(victim)
    else:
        victim.status = VictimStatus.RESCUED
    return ActionOutcome.RESCUED


def tick_environment(world: World, rng: np.random.Generator, cfg: ScenarioConfig) -> list[tuple]:
    """Expire old victims, refill emptied slots, then apply agent attrition.

    Returns ``(kind, robot_id, victim_id)`` events.
    """
    events: list[tuple] = []
    now = world.now
    old = np.flatnonzero(world.active & (now - world.vspawn >= cfg.victim_lifetime_s))
    for s in old:
        v = world.victim_in_slot(int(s))
        world.mark_expired(v)
        events.append(("expired", -1, v.id))
    if world.pending_respawn:
        slots, world.pending_respawn = world.pending_respawn, []
        for s in slots:
            v = world.spawn_victim(s)
            events.append(("spawned", -1, v.id))
    p = cfg.p_agent_fail_per_tick
    if p > 0.0 and now >= cfg.agent_fail_grace_s:
        for r in world.robots:
            if r.alive and rng.random() < p:
                r.alive = False
                world.alive[r.id] = False
                events.append(("robot_failed", r.id, -1))
    return events


class Trial:
    """All mutable state of one run. Controllers act on it through the ``do_*`` methods."""

    def __init__(self, cfg: ScenarioConfig, trial_index: int = 0, record_events: bool = False) -> None:
        cfg.validate()
        self.cfg = cfg
        seed = int(cfg.rng_seed)
        self.env_rng = np.random.default_rng([seed, ENV_STREAM])
        self.robot_rngs = [np.random.default_rng([seed, ROBOT_STREAM, i]) for i in range(cfg.n_robots)]
        comm_rngs = [np.random.default_rng([seed, COMM_STREAM, i]) for i in range(cfg.n_robots)]
        self.control_rng = np.random.default_rng([seed, CONTROL_STREAM])
        self.clock = SimClock(cfg.tick_dt_s)
        self.world = World(cfg, self.env_rng)
        self.bus = Bus(cfg.n_robots, cfg.comm_range_m, cfg.p_packet_loss,
                       cfg.bandwidth_cap_msgs_per_tick, comm_rngs)
        self.metrics = TrialMetrics(trial_index=trial_index, rng_seed=seed)
        self.events: Optional[list[dict]] = [] if record_events else None
        w = self.world
        for slot in range(cfg.n_victims):
            w.spawn_victim(slot)
        for i in range(cfg.n_robots):
            rng = self.robot_rngs[i]
            w.robot_pos[i] = sample_disc(rng, cfg.arena_radius_m)
            heading = float(rng.uniform(0.0, 2 * math.pi))
            w.robots.append(RobotState(i, w.robot_pos[i], heading, robot_color(i)))
        from .strategies import make_controller  # strategies depend on engine

        self.controller = make_controller(cfg.strategy, self)

    @property
    def now(self) -> float:
        return self.clock.now_s

    @property
    def tick(self) -> int:
        return self.clock.tick_index

    def log_event(self, kind: str, robot: int = -1, victim: int = -1, **extra) -> None:
        if self.events is not None:
            rec = {"tick": self.tick, "t": self.now, "kind": kind, "robot": robot, "victim": victim}
            rec.update(extra)
            self.events.append(rec)

    # -- actions ------------------------------------------------------------
    def do_move(self, robot: RobotState, point) -> ActionOutcome:
        out = step_move(robot, point, self.robot_rngs[robot.id], self.cfg, self.now)
        if out is ActionOutcome.MOVE_FAILED:
            self.log_event("move_failed", robot.id)
        return out

    def do_inspect(self, robot: RobotState, victim: VictimState) -> ActionOutcome:
        out = step_inspect(robot, victim, self.robot_rngs[robot.id], self.cfg)
        self.log_event(out.value.lower(), robot.id, victim.id)
        return out

    def do_rescue(self, robot: RobotState, victim: VictimState) -> ActionOutcome:
        out = step_rescue(robot, victim, self.robot_rngs[robot.id], self.cfg, self.now, self.world)
        if out is ActionOutcome.RESCUED:
            self.metrics.rescued += 1
        elif out is ActionOutcome.RESCUE_FAILED_MISMATCH:
            self.metrics.failed_rescues += 1
        self.log_event(out.value.lower(), robot.id, victim.id)
        return out

    def count_negotiation(self, robot: RobotState, trigger: Optional[str]) -> None:
        self.metrics.negotiations += 1
        if trigger is not None:
            self.metrics.trigger_histogram[trigger] += 1
        self.log_event("negotiation", robot.id, trigger=trigger)

    # -- loop -----------------------------------------------------------------
    def step(self) -> None:
        w = self.world
        w.now, w.tick = self.now, self.tick
        for kind, rid, vid in tick_environment(w, self.env_rng, self.cfg):
            if kind == "expired":
                self.metrics.expired += 1
            self.log_event(kind, rid, vid)
        inboxes = self.bus.deliver(w.alive)
        ctl = self.controller
        ctl.begin_tick()
        now = self.now
        for r in w.robots:
            if r.alive and now >= r.busy_until:
                ctl.cycle(r, inboxes[r.id])
        self.clock.advance()

    def run(self) -> TrialMetrics:
        for _ in range(self.cfg.n_ticks):
            self.step()
        m = self.metrics
        m.messages_sent = self.bus.metrics.messages_sent
        m.robots_alive_at_end = int(self.world.alive.sum())
        m.victims_spawned = self.world.next_victim_id
        return m


def run_trial(cfg: ScenarioConfig, trial_index: int = 0, events: Optional[list] = None) -> TrialMetrics:
    """Run one trial; deterministic in ``cfg`` (including ``rng_seed``).

    If ``events`` is a list, the per-tick event log is appended to it.
    """
    trial = Trial(cfg, trial_index, record_events=events is not None)
    m = trial.run()
    if events is not None:
        events.extend(trial.events)
    return m
