"""The six per-robot controllers.

``tree`` and ``comm`` are behaviour trees over sighted victims; ``cbba-tree``
and ``cbba-etc`` are behaviour trees over consensus knowledge; ``cbba`` and
``c-cbba`` drive the same consensus core from a plain state machine with no
retry path.
"""

from __future__ import annotations

import enum
import math
from typing import Optional

import numpy as np

from . import _kernels
from .bt import Action, BtStatus, Condition, Selector, Sequence, tick
from .cbba import (Bundle, ConsensusKnowledge, apply_dissemination, build_bundle, claim_bundle,
                   cluster_leaders, consensus_merge, kmeanspp_clusters, merge_payload,
                   select_new_target)
from .comms import Message, MsgKind
from .engine import ActionOutcome
from .etc import AdaptiveState, adapt_interval, evaluate_triggers, primary_trigger
from .world import RobotState, VictimState, sample_disc


class StrategyKind(enum.Enum):
    TREE = "tree"
    COMM = "comm"
    CBBA = "cbba"
    CBBA_TREE = "cbba-tree"
    C_CBBA = "c-cbba"
    CBBA_ETC = "cbba-etc"


class Controller:
    """Shared plumbing: target bookkeeping, wandering and the execute sub-tree."""

    kind: StrategyKind

    def __init__(self, trial) -> None:
        self.trial = trial
        self.cfg = trial.cfg
        self.world = trial.world
        self.bus = trial.bus
        self.det = self.cfg.detection_dist_m

    def begin_tick(self) -> None:
        pass

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        raise NotImplementedError

    # -- helpers --------------------------------------------------------------
    def target_victim(self, robot: RobotState) -> Optional[VictimState]:
        if robot.current_target is None:
            return None
        return self.world.victims.get(robot.current_target)

    def drop_target(self, robot: RobotState) -> None:
        if robot.current_target is not None:
            robot.inspected.pop(robot.current_target, None)
        robot.current_target = None

    def send(self, robot: RobotState, kind: MsgKind, payload, only=None) -> None:
        msg = Message(robot.id, kind, payload, self.trial.tick)
        self.bus.broadcast(msg, self.world.robot_pos, self.world.alive, only)

    def wander(self, robot: RobotState) -> ActionOutcome:
        wp = robot.wander_waypoint
        if wp is None or (robot.position[0] == wp[0] and robot.position[1] == wp[1]):
            wp = sample_disc(self.trial.robot_rngs[robot.id], self.cfg.arena_radius_m)
            robot.wander_waypoint = wp
        return self.trial.do_move(robot, wp)

    def dist(self, robot: RobotState, v: VictimState) -> float:
        return math.hypot(robot.position[0] - v.position[0], robot.position[1] - v.position[1])

    def execute_bt(self, robot: RobotState) -> BtStatus:
        """Approach, inspect, then rescue or abandon. Failures return RUNNING and are retried."""
        v = self.target_victim(robot)
        if self.dist(robot, v) > self.det:
            self.trial.do_move(robot, v.position)
            return BtStatus.RUNNING
        if v.id not in robot.inspected:
            self.trial.do_inspect(robot, v)
            return BtStatus.RUNNING
        out = self.trial.do_rescue(robot, v)
        if out is ActionOutcome.RESCUE_FAILED_STOCHASTIC:
            return BtStatus.RUNNING
        self.on_target_finished(robot, v, out)
        self.drop_target(robot)
        return BtStatus.SUCCESS

    def on_target_finished(self, robot: RobotState, v: VictimState, out: ActionOutcome) -> None:
        pass


# ---------------------------------------------------------------------------
# tree / comm
# ---------------------------------------------------------------------------


class TreeController(Controller):
    kind = StrategyKind.TREE

    def __init__(self, trial) -> None:
        super().__init__(trial)
        n, s = self.cfg.n_robots, self.world.n_slots
        self.known_vid = np.full((n, s), -1, dtype=np.int64)
        self.half_angle = self.cfg.vision_angle_rad / 2
        self.root = Selector(
            "decision_cycle",
            Sequence("act_on_task",
                     Condition("target_valid", self.target_valid),
                     Action("execute", self.execute_bt)),
            Action("find_closest_victim", self.acquire),
            Action("wander", lambda r: (self.wander(r), BtStatus.SUCCESS)[1]),
        )

    def sense(self, robot: RobotState) -> None:
        w = self.world
        seen = _kernels.cone_mask(float(robot.position[0]), float(robot.position[1]), robot.heading,
                                  w.vpos, w.active, self.cfg.vision_range_m, self.half_angle)
        row = self.known_vid[robot.id]
        row[seen] = w.vid[seen]

    def target_valid(self, robot: RobotState) -> bool:
        v = self.target_victim(robot)
        if v is None or not self.world.is_active(v.id):
            self.drop_target(robot)
            return False
        return True

    def candidate_mask(self, robot: RobotState) -> np.ndarray:
        w = self.world
        if self.cfg.tree_global_tasks:
            mask = w.active.copy()
        else:
            mask = w.active & (self.known_vid[robot.id] == w.vid)
        now = self.trial.now
        for vid, until in robot.incompatible_until.items():
            if until > now:
                v = w.victims.get(vid)
                if v is not None and w.vid[v.slot] == vid:
                    mask[v.slot] = False
        return mask

    def acquire(self, robot: RobotState) -> BtStatus:
        mask = self.candidate_mask(robot)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return BtStatus.FAILURE
        w = self.world
        d = _kernels.distances(float(robot.position[0]), float(robot.position[1]), w.vpos[idx])
        order = np.lexsort((w.vid[idx], d))
        slot = int(idx[order[0]])
        robot.current_target = int(w.vid[slot])
        self.on_acquired(robot, slot)
        return BtStatus.SUCCESS

    def on_acquired(self, robot: RobotState, slot: int) -> None:
        pass

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        robot.prune_incompatible(self.trial.now)
        self.sense(robot)
        tick(self.root, robot)


class CommController(TreeController):
    """Tree plus claim / release / incompatibility broadcasts."""

    kind = StrategyKind.COMM

    def __init__(self, trial) -> None:
        super().__init__(trial)
        n, s = self.cfg.n_robots, self.world.n_slots
        self.claim_vid = np.full((n, s), -1, dtype=np.int64)
        self.claimant = np.full((n, s), -1, dtype=np.int64)

    def absorb(self, robot: RobotState, inbox: list[Message]) -> None:
        me = robot.id
        cv, cl = self.claim_vid[me], self.claimant[me]
        now = self.trial.now
        for m in inbox:
            vid, slot = m.payload[0], m.payload[1]
            if m.kind is MsgKind.TARGET_CLAIM:
                cv[slot], cl[slot] = vid, m.sender
            elif m.kind is MsgKind.TARGET_RELEASE:
                if cv[slot] == vid and cl[slot] == m.sender:
                    cl[slot] = -1
            elif m.kind is MsgKind.INCOMPATIBILITY_REPORT:
                if cv[slot] == vid and cl[slot] == m.sender:
                    cl[slot] = -1
                if m.payload[2] == int(robot.color):
                    robot.mark_incompatible(vid, now + self.cfg.incompat_memory_s)

    def candidate_mask(self, robot: RobotState) -> np.ndarray:
        mask = super().candidate_mask(robot)
        me = robot.id
        cl = self.claimant[me]
        mask &= ~((self.claim_vid[me] == self.world.vid) & (cl >= 0) & (cl != me))
        return mask

    def target_valid(self, robot: RobotState) -> bool:
        v = self.target_victim(robot)
        if v is not None and not self.world.is_active(v.id):
            self.send(robot, MsgKind.TARGET_RELEASE, (v.id, v.slot))
        return super().target_valid(robot)

    def on_acquired(self, robot: RobotState, slot: int) -> None:
        self.send(robot, MsgKind.TARGET_CLAIM, (int(self.world.vid[slot]), slot))

    def on_target_finished(self, robot: RobotState, v: VictimState, out: ActionOutcome) -> None:
        if out is ActionOutcome.RESCUE_FAILED_MISMATCH:
            self.send(robot, MsgKind.INCOMPATIBILITY_REPORT, (v.id, v.slot, int(robot.color)))
        else:
            self.send(robot, MsgKind.TARGET_RELEASE, (v.id, v.slot))

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        self.absorb(robot, inbox)
        super().cycle(robot, inbox)


# ---------------------------------------------------------------------------
# consensus-based controllers
# ---------------------------------------------------------------------------


class ConsensusController(Controller):
    """Per-robot consensus knowledge plus passive absorption of received states."""

    trigger_on_receipt = False

    def __init__(self, trial) -> None:
        super().__init__(trial)
        n_slots = self.world.n_slots
        self.know = [ConsensusKnowledge(n_slots, r.id) for r in self.world.robots]
        self.bundles = [Bundle(self.cfg.bundle_capacity) for _ in self.world.robots]

    def absorb(self, robot: RobotState, inbox: list[Message]) -> bool:
        """Merge received consensus states; returns whether any arrived.

        Own claims taken over by others are accumulated in ``lost_pending``.
        """
        if not inbox:
            return False
        k = self.know[robot.id]
        before = np.flatnonzero(k.z == robot.id)
        got = False
        for m in inbox:
            if m.kind is MsgKind.CONSENSUS_STATE or m.kind is MsgKind.LEADER_REPORT \
                    or m.kind is MsgKind.LEADER_CONSENSUS:
                merge_payload(k, m.sender, m.payload)
                got = True
            elif m.kind is MsgKind.ASSIGNMENT_DISSEMINATION:
                apply_dissemination(k, Bundle(self.cfg.bundle_capacity), m.payload)
                got = True
        if got and before.size:
            k.lost_pending += int(np.count_nonzero(k.z[before] != robot.id))
        return got

    def build(self, robot: RobotState) -> Bundle:
        return build_bundle(robot, self.world, self.know[robot.id], self.cfg, self.trial.now,
                            self.trial.tick)

    def won_target_valid(self, robot: RobotState) -> bool:
        v = self.target_victim(robot)
        if v is None or not self.world.is_active(v.id) \
                or self.know[robot.id].winner(v.slot, v.id) != robot.id:
            self.drop_target(robot)
            return False
        return True

    def broadcast_state(self, robot: RobotState, bundle: Bundle) -> None:
        k = self.know[robot.id]
        self.send(robot, MsgKind.CONSENSUS_STATE, k.snapshot(bundle))

    def on_target_finished(self, robot: RobotState, v: VictimState, out: ActionOutcome) -> None:
        k = self.know[robot.id]
        if k.winner(v.slot, v.id) == robot.id:
            k.release(v.slot, self.trial.tick)


class ConsensusTreeController(ConsensusController):
    """Behaviour tree: act on a valid won target, else acquire (maybe negotiating), else wander."""

    kind = StrategyKind.CBBA_TREE

    def __init__(self, trial) -> None:
        super().__init__(trial)
        self.t_last = [-math.inf] * self.cfg.n_robots
        self._pending: dict[int, Bundle] = {}
        self.root = Selector(
            "decision_cycle",
            Sequence("act_on_task",
                     Condition("target_valid_and_won", self.won_target_valid),
                     Action("execute", self.execute_bt)),
            Sequence("acquire_task",
                     Action("build_bundle", self.bt_build),
                     Action("conditional_consensus", self.bt_consensus),
                     Action("select_new_target", self.bt_select)),
            Action("wander", lambda r: (self.wander(r), BtStatus.SUCCESS)[1]),
        )

    def bt_build(self, robot: RobotState) -> BtStatus:
        self._pending[robot.id] = self.build(robot)
        return BtStatus.SUCCESS

    def should_negotiate(self, robot: RobotState, bundle: Bundle) -> tuple[bool, Optional[str]]:
        due = self.trial.now - self.t_last[robot.id] >= self.cfg.consensus_period_s
        return due, ("fallback" if due else None)

    def after_negotiation(self, robot: RobotState, lc: int) -> None:
        self.t_last[robot.id] = self.trial.now

    def bt_consensus(self, robot: RobotState) -> BtStatus:
        bundle = self._pending[robot.id]
        k = self.know[robot.id]
        fire, trig = self.should_negotiate(robot, bundle)
        claim_bundle(k, bundle, self.trial.tick)
        if fire:
            self.broadcast_state(robot, bundle)
            self.trial.count_negotiation(robot, trig)
            _, lost = consensus_merge(k, bundle, ())
            lc = k.lost_pending + lost
            k.lost_pending = 0
            k.announced = bundle.id_set()
            k.t_last_consensus = self.trial.now
            self.after_negotiation(robot, lc)
        self.after_acquire(robot, bundle)
        return BtStatus.SUCCESS

    def after_acquire(self, robot: RobotState, bundle: Bundle) -> None:
        pass

    def bt_select(self, robot: RobotState) -> BtStatus:
        bundle = self._pending.pop(robot.id)
        self.bundles[robot.id] = bundle
        bid = select_new_target(bundle, self.know[robot.id])
        if bid is None:
            return BtStatus.FAILURE
        robot.current_target = bid.victim_id
        return BtStatus.SUCCESS

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        robot.prune_incompatible(self.trial.now)
        if self.absorb(robot, inbox) and self.trigger_on_receipt:
            self.on_receipt(robot, inbox)
        tick(self.root, robot)

    def on_receipt(self, robot: RobotState, inbox: list[Message]) -> None:
        pass


class EtcController(ConsensusTreeController):
    """Event-triggered negotiation with an adaptive fallback interval."""

    kind = StrategyKind.CBBA_ETC
    trigger_on_receipt = True

    def __init__(self, trial) -> None:
        super().__init__(trial)
        p = self.cfg.etc_params
        self.params = p
        self.adaptive = [AdaptiveState.initial(p, 0.0) for _ in self.world.robots]

    def on_receipt(self, robot: RobotState, inbox: list[Message]) -> None:
        # a neighbour's round counts as synchronisation for the fallback timer,
        # dated to when it was held rather than when it arrived
        sent = max(m.sent_tick for m in inbox if m.kind is MsgKind.CONSENSUS_STATE) \
            if any(m.kind is MsgKind.CONSENSUS_STATE for m in inbox) else None
        if sent is not None:
            st = self.adaptive[robot.id]
            st.t_last_s = max(st.t_last_s, sent * self.cfg.tick_dt_s)

    def should_negotiate(self, robot: RobotState, bundle: Bundle) -> tuple[bool, Optional[str]]:
        fire, fired = evaluate_triggers(robot.id, bundle, self.know[robot.id],
                                        self.adaptive[robot.id], self.trial.now, self.params)
        kind = primary_trigger(fired)
        return fire, (kind.value if kind else None)

    def after_negotiation(self, robot: RobotState, lc: int) -> None:
        st = self.adaptive[robot.id]
        st.t_last_s = self.trial.now
        adapt_interval(st, lc, self.params)
        self.trial.log_event("interval", robot.id, i_adapt=st.i_adapt_s, lc=lc)

    def after_acquire(self, robot: RobotState, bundle: Bundle) -> None:
        self.know[robot.id].u_prev = {b.victim_id: b.score for b in bundle.bids}


class CbbaController(ConsensusController):
    """State machine that replans every cycle and negotiates on any bundle change.

    A negotiation occupies the robot's cycle. Failed inspections or rescues
    are not retried: the victim is abandoned and skipped for a while.
    """

    kind = StrategyKind.CBBA
    # ticks a robot stays in the negotiating state after broadcasting
    wait_ticks = 1

    def __init__(self, trial) -> None:
        super().__init__(trial)
        self.t_last = [-math.inf] * self.cfg.n_robots
        self.waiting_until = np.full(self.cfg.n_robots, -1, dtype=np.int64)

    def negotiate(self, robot: RobotState, bundle: Bundle) -> None:
        self.broadcast_state(robot, bundle)

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        now = self.trial.now
        robot.prune_incompatible(now)
        self.absorb(robot, inbox)
        if self.trial.tick <= self.waiting_until[robot.id]:
            return
        k = self.know[robot.id]
        bundle = self.build(robot)
        changed = bundle.id_set() != k.announced
        due = now - self.t_last[robot.id] >= self.cfg.consensus_period_s
        claim_bundle(k, bundle, self.trial.tick)
        self.bundles[robot.id] = bundle
        if changed or due:
            self.negotiate(robot, bundle)
            self.trial.count_negotiation(robot, "init" if changed else "fallback")
            k.announced = bundle.id_set()
            k.lost_pending = 0
            self.t_last[robot.id] = now
            k.t_last_consensus = now
            self.waiting_until[robot.id] = self.trial.tick + self.wait_ticks
            return
        bid = select_new_target(bundle, k)
        if bid is None:
            self.drop_target(robot)
            self.wander(robot)
            return
        if robot.current_target != bid.victim_id:
            self.drop_target(robot)
            robot.current_target = bid.victim_id
        self.execute_once(robot)

    def execute_once(self, robot: RobotState) -> None:
        v = self.target_victim(robot)
        if self.dist(robot, v) > self.det:
            self.trial.do_move(robot, v.position)
            return
        if v.id not in robot.inspected:
            out = self.trial.do_inspect(robot, v)
            if out is ActionOutcome.INSPECT_FAILED:
                self.abandon(robot, v)
            return
        out = self.trial.do_rescue(robot, v)
        if out is ActionOutcome.RESCUE_FAILED_STOCHASTIC:
            self.abandon(robot, v)
            return
        self.on_target_finished(robot, v, out)
        self.drop_target(robot)

    def abandon(self, robot: RobotState, v: VictimState) -> None:
        robot.mark_incompatible(v.id, self.trial.now + self.cfg.incompat_memory_s)
        self.trial.log_event("abandoned", robot.id, v.id)
        self.on_target_finished(robot, v, ActionOutcome.ABANDONED)
        self.drop_target(robot)


class CCbbaController(CbbaController):
    """cbba's state machine with member -> leader -> leaders -> members rounds."""

    kind = StrategyKind.C_CBBA

    def __init__(self, trial) -> None:
        super().__init__(trial)
        n = self.cfg.n_robots
        self.labels = np.zeros(n, dtype=np.int64)
        self.leader_of = np.zeros(n, dtype=np.int64)
        self.leaders: list[int] = []
        self.dissem_due = np.zeros(n, dtype=np.bool_)
        self.recluster_every = max(1, int(round(self.cfg.ccbba_recluster_s / self.cfg.tick_dt_s)))

    def begin_tick(self) -> None:
        w = self.world
        alive = w.alive
        if not alive.any():
            return
        if self.trial.tick % self.recluster_every == 0:
            ids = np.flatnonzero(alive)
            k = min(self.cfg.ccbba_clusters, ids.size)
            lab = kmeanspp_clusters(w.robot_pos[ids], k, self.trial.control_rng)
            self.labels[:] = -1
            self.labels[ids] = lab
        leaders = cluster_leaders(self.labels, alive & (self.labels >= 0))
        self.leaders = sorted(leaders.values())
        for rid in range(self.cfg.n_robots):
            self.leader_of[rid] = leaders.get(int(self.labels[rid]), -1)

    def members(self, leader: int) -> list[int]:
        alive = self.world.alive
        return [int(r) for r in np.flatnonzero((self.leader_of == leader) & alive) if r != leader]

    def negotiate(self, robot: RobotState, bundle: Bundle) -> None:
        lead = int(self.leader_of[robot.id])
        k = self.know[robot.id]
        if lead == robot.id:
            self.leader_exchange(robot, bundle)
        elif lead >= 0:
            self.send(robot, MsgKind.LEADER_REPORT, k.snapshot(bundle), only=[lead])

    def leader_exchange(self, robot: RobotState, bundle: Bundle) -> None:
        others = [l for l in self.leaders if l != robot.id]
        if others:
            self.send(robot, MsgKind.LEADER_CONSENSUS, self.know[robot.id].snapshot(bundle), only=others)
        self.dissem_due[robot.id] = True

    def cycle(self, robot: RobotState, inbox: list[Message]) -> None:
        rid = robot.id
        if self.leader_of[rid] == rid:
            reports = any(m.kind is MsgKind.LEADER_REPORT for m in inbox)
            peers = any(m.kind is MsgKind.LEADER_CONSENSUS for m in inbox)
            disseminate = bool(self.dissem_due[rid]) or peers
            self.dissem_due[rid] = False
            self.absorb(robot, [m for m in inbox if m.kind is not MsgKind.ASSIGNMENT_DISSEMINATION])
            if reports:
                self.leader_exchange(robot, self.bundles[rid])
            if disseminate:
                members = self.members(rid)
                if members:
                    self.send(robot, MsgKind.ASSIGNMENT_DISSEMINATION,
                              self.know[rid].snapshot(self.bundles[rid]), only=members)
            inbox = []
        super().cycle(robot, inbox)


_CONTROLLERS = {
    "tree": TreeController,
    "comm": CommController,
    "cbba": CbbaController,
    "cbba-tree": ConsensusTreeController,
    "c-cbba": CCbbaController,
    "cbba-etc": EtcController,
}


def make_controller(name: str, trial) -> Controller:
    return _CONTROLLERS[name](trial)
