"""Consensus core: utility scoring, greedy bundles, single-round merge,
target selection and the clustered (two-tier) variant.

Knowledge is stored per victim *slot* (see :class:`~cbba_etc.world.World`),
with the victim id kept alongside each entry so that a slot recycled for a
new victim never inherits a stale winner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .world import Color, RobotState, ScenarioConfig, VictimState, World


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def utility(robot: RobotState, victim: VictimState, known_color: Optional[Color],
            cfg: ScenarioConfig, now: float = 0.0) -> float:
    """Inverse-distance bid, scaled down when the wall color is known not to match.

    Victims the robot currently remembers as incompatible score 0.
    """
    if robot.is_incompatible(victim.id, now):
        return 0.0
    d = math.hypot(robot.position[0] - victim.position[0], robot.position[1] - victim.position[1])
    u = 1.0 / (d + cfg.utility_eps)
    if known_color is not None and Color(known_color) != robot.color:
        u *= cfg.mismatch_factor
    return u


# ---------------------------------------------------------------------------
# knowledge, bids and bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bid:
    victim_id: int
    slot: int
    score: float
    bidder: int
    stamp: int


@dataclass
class Bundle:
    capacity: int
    bids: list[Bid] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.bids)

    def __bool__(self) -> bool:
        return bool(self.bids)

    def ids(self) -> list[int]:
        return [b.victim_id for b in self.bids]

    def id_set(self) -> frozenset[int]:
        return frozenset(b.victim_id for b in self.bids)

    @property
    def head(self) -> Optional[Bid]:
        return self.bids[0] if self.bids else None


@dataclass(frozen=True)
class ConsensusPayload:
    """Immutable snapshot broadcast in a consensus message: bundle, y, z and stamps."""

    bundle: tuple[int, ...]
    y: np.ndarray
    z: np.ndarray
    stamp: np.ndarray
    vid: np.ndarray


class ConsensusKnowledge:
    """One robot's view of winning bids (``y``) and winners (``z``) per slot."""

    def __init__(self, n_slots: int, owner: int) -> None:
        self.owner = owner
        self.y = np.zeros(n_slots)
        self.z = np.full(n_slots, -1, dtype=np.int64)
        self.stamp = np.full(n_slots, -1, dtype=np.int64)
        self.vid = np.full(n_slots, -1, dtype=np.int64)
        self.u_prev: dict[int, float] = {}
        self.t_last_consensus: float = -math.inf
        self.announced: frozenset[int] = frozenset()
        self.lost_pending = 0

    def winner(self, slot: int, victim_id: int) -> int:
        if self.vid[slot] != victim_id:
            return -1
        return int(self.z[slot])

    def winning_bid(self, slot: int, victim_id: int) -> float:
        if self.vid[slot] != victim_id or self.z[slot] < 0:
            return 0.0
        return float(self.y[slot])

    def winners(self) -> dict[int, int]:
        """victim id -> believed winner, for every entry that has one."""
        idx = np.flatnonzero((self.z >= 0) & (self.vid >= 0))
        return {int(self.vid[s]): int(self.z[s]) for s in idx}

    def bids(self) -> dict[int, float]:
        idx = np.flatnonzero((self.z >= 0) & (self.vid >= 0))
        return {int(self.vid[s]): float(self.y[s]) for s in idx}

    def snapshot(self, bundle: Bundle) -> ConsensusPayload:
        return ConsensusPayload(tuple(bundle.ids()), self.y.copy(), self.z.copy(),
                                self.stamp.copy(), self.vid.copy())

    def record(self, bid: Bid) -> None:
        s = bid.slot
        self.y[s] = bid.score
        self.z[s] = bid.bidder
        self.stamp[s] = bid.stamp
        self.vid[s] = bid.victim_id

    def release(self, slot: int, stamp: int) -> None:
        self.y[slot] = 0.0
        self.z[slot] = -1
        self.stamp[slot] = stamp


def available_mask(robot: RobotState, world: World, knowledge: ConsensusKnowledge,
                   util: np.ndarray, now: float) -> np.ndarray:
    """ACTIVE, not remembered incompatible, and not held by another robot at >= our bid."""
    avail = world.active.copy()
    for vid, until in robot.incompatible_until.items():
        if until > now:
            v = world.victims.get(vid)
            if v is not None and v.slot >= 0 and world.vid[v.slot] == vid:
                avail[v.slot] = False
    k = knowledge
    foreign = (k.z >= 0) & (k.z != robot.id) & (k.vid == world.vid) & (k.y >= util)
    avail &= ~foreign
    return avail


def build_bundle(robot: RobotState, world: World, knowledge: ConsensusKnowledge,
                 cfg: ScenarioConfig, now: float = 0.0, stamp: int = 0) -> Bundle:
    """Greedy bundle over the world's ACTIVE victims (colors readable at bid time)."""
    util = _kernels.utility_row(float(robot.position[0]), float(robot.position[1]), int(robot.color),
                                world.vpos, world.vcolor, cfg.utility_eps, cfg.mismatch_factor)
    avail = available_mask(robot, world, knowledge, util, now)
    slots = _kernels.greedy_bundle(util, avail, world.vid, cfg.bundle_capacity)
    return Bundle(cfg.bundle_capacity,
                  [Bid(int(world.vid[s]), int(s), float(util[s]), robot.id, stamp) for s in slots])


def claim_bundle(knowledge: ConsensusKnowledge, bundle: Bundle, stamp: int) -> None:
    """Record our own bundle bids as winning, and release slots we no longer bid on."""
    me = knowledge.owner
    keep = {b.slot for b in bundle.bids}
    for s in np.flatnonzero(knowledge.z == me):
        if int(s) not in keep:
            knowledge.release(int(s), stamp)
    for b in bundle.bids:
        knowledge.record(b)


def merge_payload(knowledge: ConsensusKnowledge, sender: int, payload: ConsensusPayload) -> None:
    k = knowledge
    _kernels.merge_state(k.y, k.z, k.stamp, k.vid, payload.y, payload.z, payload.stamp,
                         payload.vid, sender, k.owner)


def resolve_bundle(knowledge: ConsensusKnowledge, bundle: Bundle) -> int:
    """Drop bundle entries we no longer win; returns how many were dropped."""
    me = knowledge.owner
    kept = [b for b in bundle.bids if knowledge.z[b.slot] == me and knowledge.vid[b.slot] == b.victim_id]
    lost = len(bundle.bids) - len(kept)
    bundle.bids = kept
    return lost


def consensus_merge(knowledge: ConsensusKnowledge, bundle: Bundle,
                    inbox: Iterable[tuple[int, ConsensusPayload]]) -> tuple[ConsensusKnowledge, int]:
    """Merge received (sender, payload) pairs; highest bid wins, ties to the lower id.

    Our own bundle bids take part in the comparison. Bundle entries now won by
    another robot are removed; the count removed is returned as ``tasks_lost``.
    """
    me = knowledge.owner
    for b in bundle.bids:
        if not (knowledge.vid[b.slot] == b.victim_id and knowledge.z[b.slot] == me
                and knowledge.stamp[b.slot] >= b.stamp):
            knowledge.record(b)
    for sender, payload in inbox:
        merge_payload(knowledge, sender, payload)
    return knowledge, resolve_bundle(knowledge, bundle)


def select_new_target(bundle: Bundle, knowledge: ConsensusKnowledge) -> Optional[Bid]:
    """Highest-score bundle entry this robot still wins."""
    me = knowledge.owner
    best = None
    for b in bundle.bids:
        if knowledge.z[b.slot] == me and knowledge.vid[b.slot] == b.victim_id:
            if best is None or b.score > best.score:
                best = b
    return best


# ---------------------------------------------------------------------------
# flat negotiation (used directly by tests and as the reference for C-CBBA)
# ---------------------------------------------------------------------------


def flat_round(knowledges: Sequence[ConsensusKnowledge], bundles: Sequence[Bundle],
               connected: Optional[np.ndarray] = None) -> list[int]:
    """One synchronous broadcast-and-merge among robots; returns tasks lost per robot.

    ``connected[i, j]`` says whether j hears i; default is all-to-all.
    """
    n = len(knowledges)
    for k, b in zip(knowledges, bundles):
        claim_bundle(k, b, stamp=max((x.stamp for x in b.bids), default=0))
    snaps = [k.snapshot(b) for k, b in zip(knowledges, bundles)]
    lost = []
    for j in range(n):
        inbox = [(i, snaps[i]) for i in range(n)
                 if i != j and (connected is None or connected[i, j])]
        _, lj = consensus_merge(knowledges[j], bundles[j], inbox)
        lost.append(lj)
    return lost


# ---------------------------------------------------------------------------
# clustering for the two-tier variant
# ---------------------------------------------------------------------------


def kmeanspp_clusters(positions: np.ndarray, k: int, rng: np.random.Generator,
                      max_iter: int = 100) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations; returns a label per point."""
    pts = np.asarray(positions, dtype=float)
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = _kernels.nearest_sq_dist(pts, pts[chosen])
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a center
            rest = [i for i in range(n) if i not in chosen]
            chosen.append(int(rest[int(rng.integers(len(rest)))]))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    labels, _ = _kernels.lloyd(pts, pts[chosen].copy(), max_iter)
    return labels


def cluster_leaders(labels: np.ndarray, alive: np.ndarray) -> dict[int, int]:
    """cluster label -> lowest alive robot id in it; empty clusters are omitted."""
    leaders: dict[int, int] = {}
    for rid in range(len(labels)):
        if alive[rid] and int(labels[rid]) not in leaders:
            leaders[int(labels[rid])] = rid
    return leaders


def apply_dissemination(knowledge: ConsensusKnowledge, bundle: Bundle,
                        payload: ConsensusPayload) -> int:
    """Overwrite our view with the leader's; returns bundle entries lost."""
    knowledge.y[:] = payload.y
    knowledge.z[:] = payload.z
    knowledge.stamp[:] = payload.stamp
    knowledge.vid[:] = payload.vid
    return resolve_bundle(knowledge, bundle)


def ccbba_round(knowledges: Sequence[ConsensusKnowledge], bundles: Sequence[Bundle],
                labels: np.ndarray, alive: Optional[np.ndarray] = None,
                connected: Optional[np.ndarray] = None) -> tuple[list[int], int]:
    """Synchronous three-phase clustered round.

    1. members report to their leader, 2. leaders exchange among themselves,
    3. leaders disseminate their merged view. Returns (tasks lost per robot,
    messages sent).
    """
    n = len(knowledges)
    alive = np.ones(n, dtype=bool) if alive is None else alive
    hears = (lambda i, j: True) if connected is None else (lambda i, j: bool(connected[i, j]))
    leaders = cluster_leaders(labels, alive)
    leader_of = {rid: leaders[int(labels[rid])] for rid in range(n) if alive[rid]}
    for k, b in zip(knowledges, bundles):
        claim_bundle(k, b, stamp=max((x.stamp for x in b.bids), default=0))
    messages = 0
    lost = [0] * n
    # phase 1
    for rid in range(n):
        if not alive[rid] or leader_of[rid] == rid:
            continue
        messages += 1
        lead = leader_of[rid]
        if hears(rid, lead):
            merge_payload(knowledges[lead], rid, knowledges[rid].snapshot(bundles[rid]))
    # phase 2
    lead_ids = sorted(leaders.values())
    snaps = {l: knowledges[l].snapshot(bundles[l]) for l in lead_ids}
    for l in lead_ids:
        messages += 1
    for l in lead_ids:
        for other in lead_ids:
            if other != l and hears(other, l):
                merge_payload(knowledges[l], other, snaps[other])
        lost[l] += resolve_bundle(knowledges[l], bundles[l])
    # phase 3
    for l in lead_ids:
        messages += 1
        payload = knowledges[l].snapshot(bundles[l])
        for rid in range(n):
            if alive[rid] and rid != l and leader_of[rid] == l and hears(l, rid):
                lost[rid] += apply_dissemination(knowledges[rid], bundles[rid], payload)
    return lost, messages
