"""Arena geometry, domain records and scenario configuration."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

STRATEGIES = ("tree", "comm", "cbba", "cbba-tree", "c-cbba", "cbba-etc")


class ConfigError(ValueError):
    """Raised for invalid or inconsistent scenario configuration."""


class Color(enum.IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2


class VictimStatus(enum.IntEnum):
    ACTIVE = 0
    RESCUED = 1
    EXPIRED = 2


@dataclass
class EtcParams:
    """Trigger thresholds and adaptive-interval constants for cbba-etc."""

    theta_bid_change: float = 0.6
    theta_outbid_margin: float = 0.6
    rho_base: float = 1.0
    theta_high: float = 3.0
    theta_low: float = 1.0
    mu: float = 10.0
    kappa: float = 0.1
    lam: float = 6.0
    gamma: float = 0.001
    phi_min: float = 3.0
    phi_max: float = 8.0
    i_base_s: float = 20.0
    i_init_s: float = 100.0

    def validate(self) -> None:
        if not self.theta_low < self.theta_high:
            raise ConfigError("etc: theta_low must be < theta_high")
        if not self.phi_min < self.phi_max:
            raise ConfigError("etc: phi_min must be < phi_max")
        if self.kappa <= 0 or self.lam <= 0:
            raise ConfigError("etc: kappa and lam must be positive")
        if self.i_base_s <= 0:
            raise ConfigError("etc: i_base_s must be positive")
        if self.theta_bid_change < 0 or self.theta_outbid_margin < 0:
            raise ConfigError("etc: trigger thresholds must be non-negative")
        lo, hi = self.i_base_s * self.phi_min, self.i_base_s * self.phi_max
        if not lo <= self.i_init_s <= hi:
            raise ConfigError(f"etc: i_init_s must lie in [{lo}, {hi}]")

    @property
    def i_min_s(self) -> float:
        return self.i_base_s * self.phi_min

    @property
    def i_max_s(self) -> float:
        return self.i_base_s * self.phi_max


@dataclass
class ScenarioConfig:
    """Everything a single trial depends on. Defaults are the baseline scenario."""

    duration_s: float = 3000.0
    trials: int = 50
    arena_radius_m: float = 32.0
    n_robots: int = 20
    n_victims: int = 100
    victim_lifetime_s: float = 100.0
    max_speed_mps: float = 40.0 / 3.6
    move_penalty_s: float = 0.5
    comm_range_m: float = 57.0
    vision_range_m: float = 12.0
    vision_angle_rad: float = math.pi / 2
    detection_dist_m: float = 5.0
    p_move_fail: float = 0.0
    p_inspect_fail: float = 0.0
    p_rescue_fail: float = 0.0
    p_agent_fail_per_tick: float = 0.0
    agent_fail_grace_s: float = 500.0
    p_packet_loss: float = 0.0
    bandwidth_cap_msgs_per_tick: Optional[int] = None
    victim_replacement: bool = True
    tick_dt_s: float = 0.5
    rng_seed: int = 0
    strategy: str = "cbba-etc"
    bundle_capacity: int = 3
    etc_params: EtcParams = field(default_factory=EtcParams)
    # knobs the source leaves open; see README for the chosen values
    incompat_memory_s: float = 30.0
    utility_eps: float = 1e-6
    mismatch_factor: float = 0.1
    consensus_period_s: float = 100.0
    ccbba_clusters: int = 2
    ccbba_recluster_s: float = 300.0
    tree_global_tasks: bool = False

    def validate(self) -> None:
        positive = (
            "arena_radius_m", "victim_lifetime_s", "max_speed_mps",
            "move_penalty_s", "comm_range_m", "vision_range_m", "detection_dist_m",
            "tick_dt_s", "incompat_memory_s", "utility_eps", "consensus_period_s",
            "ccbba_recluster_s",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be >= 0")
        for name in ("trials", "n_robots", "bundle_capacity", "ccbba_clusters"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_victims < 0:
            raise ConfigError("n_victims must be >= 0")
        for name in ("p_move_fail", "p_inspect_fail", "p_rescue_fail",
                     "p_agent_fail_per_tick", "p_packet_loss", "mismatch_factor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0.0 < self.vision_angle_rad <= 2 * math.pi:
            raise ConfigError("vision_angle_rad must be in (0, 2*pi]")
        if self.agent_fail_grace_s < 0:
            raise ConfigError("agent_fail_grace_s must be >= 0")
        if self.bandwidth_cap_msgs_per_tick is not None and self.bandwidth_cap_msgs_per_tick < 1:
            raise ConfigError("bandwidth_cap_msgs_per_tick must be >= 1 or null")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        self.etc_params.validate()

    @property
    def n_ticks(self) -> int:
        return int(math.ceil(self.duration_s / self.tick_dt_s - 1e-9))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        etc_changes = changes.pop("etc_params", None)
        cfg = dataclasses.replace(self, **changes)
        if isinstance(etc_changes, dict):
            cfg.etc_params = dataclasses.replace(self.etc_params, **etc_changes)
        elif etc_changes is not None:
            cfg.etc_params = etc_changes
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        etc = data.pop("etc_params", {}) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        etc_known = {f.name for f in dataclasses.fields(EtcParams)}
        if set(etc) - etc_known:
            raise ConfigError(f"unknown etc_params keys: {sorted(set(etc) - etc_known)}")
        cfg = cls(**data, etc_params=EtcParams(**etc))
        cfg.validate()
        return cfg


@dataclass
class VictimState:
    id: int
    position: tuple[float, float]
    wall_color: Color
    spawn_time_s: float
    status: VictimStatus = VictimStatus.ACTIVE
    slot: int = -1


@dataclass
class RobotState:
    """Per-robot record. ``position`` is a view into the world's position array."""

    id: int
    position: np.ndarray
    heading: float
    color: Color
    alive: bool = True
    current_target: Optional[int] = None
    busy_until: float = 0.0
    incompatible_until: dict[int, float] = field(default_factory=dict)
    knowledge: Any = None
    wander_waypoint: Optional[tuple[float, float]] = None
    inspected: dict[int, Color] = field(default_factory=dict)

    def is_incompatible(self, victim_id: int, now: float) -> bool:
        return self.incompatible_until.get(victim_id, -math.inf) > now

    def mark_incompatible(self, victim_id: int, until: float) -> None:
        # never move an expiry backwards
        self.incompatible_until[victim_id] = max(until, self.incompatible_until.get(victim_id, until))

    def prune_incompatible(self, now: float) -> None:
        stale = [v for v, t in self.incompatible_until.items() if t <= now]
        for v in stale:
            del self.incompatible_until[v]


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def angle_offset(heading: float, bearing: float) -> float:
    """Absolute wrapped difference between two angles, in [0, pi]."""
    return abs((bearing - heading + math.pi) % (2 * math.pi) - math.pi)


def in_vision_cone(observer: RobotState, point, cfg: ScenarioConfig) -> bool:
    dx = point[0] - observer.position[0]
    dy = point[1] - observer.position[1]
    d = math.hypot(dx, dy)
    if d > cfg.vision_range_m:
        return False
    if d == 0.0:
        return True
    return angle_offset(observer.heading, math.atan2(dy, dx)) <= cfg.vision_angle_rad / 2


def in_comm_range(a: RobotState, b: RobotState, cfg: ScenarioConfig) -> bool:
    return a.alive and b.alive and distance(a.position, b.position) <= cfg.comm_range_m


def sample_disc(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    """Area-uniform point in a disc of the given radius."""
    r = radius * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    return (r * math.cos(theta), r * math.sin(theta))


def spawn_victim(rng: np.random.Generator, cfg: ScenarioConfig, now: float = 0.0,
                 victim_id: int = 0) -> VictimState:
    """Fresh ACTIVE victim, area-uniform in the arena with a uniform wall color."""
    pos = sample_disc(rng, cfg.arena_radius_m)
    color = Color(int(rng.integers(3)))
    return VictimState(victim_id, pos, color, now)


def robot_color(robot_id: int) -> Color:
    return Color(robot_id % 3)


def clamp_to_arena(x: float, y: float, radius: float) -> tuple[float, float]:
    r = math.hypot(x, y)
    if r <= radius:
        return x, y
    s = radius / r
    return x * s, y * s


class World:
    """Mutable trial state: robots plus victims held in fixed slots.

    Victims live in ``n_slots`` slots. With replacement on, a fresh victim
    takes over the slot of the one it replaces, which keeps per-robot
    knowledge arrays a constant size.
    """

    def __init__(self, cfg: ScenarioConfig, env_rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.env_rng = env_rng
        self.now = 0.0
        self.tick = 0
        n = max(cfg.n_victims, 1)
        self.n_slots = n
        self.vpos = np.zeros((n, 2))
        self.vcolor = np.full(n, -1, dtype=np.int64)
        self.vid = np.full(n, -1, dtype=np.int64)
        self.vspawn = np.zeros(n)
        self.active = np.zeros(n, dtype=np.bool_)
        self.victims: dict[int, VictimState] = {}
        self.next_victim_id = 0
        self.pending_respawn: list[int] = []
        self.robot_pos = np.zeros((cfg.n_robots, 2))
        self.robots: list[RobotState] = []
        self.alive = np.ones(cfg.n_robots, dtype=np.bool_)

    # -- victims ----------------------------------------------------------
    def spawn_victim(self, slot: int) -> VictimState:
        v = spawn_victim(self.env_rng, self.cfg, self.now, self.next_victim_id)
        v.slot = slot
        self.next_victim_id += 1
        self.victims[v.id] = v
        self.vpos[slot] = v.position
        self.vcolor[slot] = int(v.wall_color)
        self.vid[slot] = v.id
        self.vspawn[slot] = self.now
        self.active[slot] = True
        return v

    def victim_in_slot(self, slot: int) -> Optional[VictimState]:
        vid = int(self.vid[slot])
        return self.victims.get(vid) if vid >= 0 else None

    def is_active(self, victim_id: int) -> bool:
        v = self.victims.get(victim_id)
        return v is not None and v.status == VictimStatus.ACTIVE

    def _retire(self, v: VictimState, status: VictimStatus) -> None:
        v.status = status
        self.active[v.slot] = False
        if self.cfg.victim_replacement:
            self.pending_respawn.append(v.slot)

    def mark_rescued(self, v: VictimState) -> None:
        self._retire(v, VictimStatus.RESCUED)

    def mark_expired(self, v: VictimState) -> None:
        self._retire(v, VictimStatus.EXPIRED)

    def active_ids(self) -> list[int]:
        return [int(self.vid[s]) for s in np.flatnonzero(self.active)]
