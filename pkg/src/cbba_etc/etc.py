"""Event triggers and the adaptive consensus interval."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cbba import Bundle, ConsensusKnowledge
from .world import EtcParams


class TriggerKind(enum.Enum):
    INIT = "init"
    DBID = "dbid"
    CONFLICT = "conflict"
    FALLBACK = "fallback"


# when several triggers fire on one tick, the negotiation is attributed to the first
TRIGGER_PRIORITY = (TriggerKind.INIT, TriggerKind.DBID, TriggerKind.CONFLICT, TriggerKind.FALLBACK)


def sigmoid(x: float, mu: float) -> float:
    z = -mu * x
    if z > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def omega(lc: float, delta_lc: float, p: EtcParams) -> float:
    """Conflict-driven correction subtracted from ``rho_base``.

    Positive above ``theta_high`` (shrink the interval), negative at or below
    ``theta_low`` (grow it), zero in between.
    """
    if lc >= p.theta_high:
        return p.kappa * sigmoid(lc - p.theta_high, p.mu) * (1.0 + p.gamma * _sign(delta_lc))
    if lc <= p.theta_low:
        return -p.lam * sigmoid(p.theta_low - lc, p.mu) * (1.0 + p.gamma * _sign(-delta_lc))
    return 0.0


@dataclass
class AdaptiveState:
    i_adapt_s: float
    last_lc: int = 0
    t_last_s: float = 0.0

    @classmethod
    def initial(cls, p: EtcParams, t0: float = 0.0) -> "AdaptiveState":
        return cls(i_adapt_s=p.i_init_s, last_lc=0, t_last_s=t0)


def adapt_interval(state: AdaptiveState, lc: int, p: EtcParams) -> AdaptiveState:
    delta = lc - state.last_lc
    rho = p.rho_base - omega(lc, delta, p)
    state.i_adapt_s = float(np.clip(state.i_adapt_s * rho, p.i_min_s, p.i_max_s))
    state.last_lc = lc
    return state


def evaluate_triggers(robot_id: int, bundle: Bundle, knowledge: ConsensusKnowledge,
                      state: AdaptiveState, now: float, p: EtcParams
                      ) -> tuple[bool, set[TriggerKind]]:
    """Which of the four triggers fire for a freshly built bundle.

    Must be called before the bundle is recorded into ``knowledge`` so that
    foreign winners are still visible to the outbid check.
    """
    fired: set[TriggerKind] = set()
    if bundle and not knowledge.announced:
        fired.add(TriggerKind.INIT)
    head = bundle.head
    if head is not None:
        prev = knowledge.u_prev.get(head.victim_id)
        if prev is not None and abs(head.score - prev) > p.theta_bid_change:
            fired.add(TriggerKind.DBID)
    for b in bundle.bids:
        s = b.slot
        if (knowledge.vid[s] == b.victim_id and knowledge.z[s] >= 0 and knowledge.z[s] != robot_id
                and b.score > knowledge.y[s] + p.theta_outbid_margin):
            fired.add(TriggerKind.CONFLICT)
            break
    if now - state.t_last_s >= state.i_adapt_s:
        fired.add(TriggerKind.FALLBACK)
    return bool(fired), fired


def primary_trigger(fired: set[TriggerKind]) -> Optional[TriggerKind]:
    for kind in TRIGGER_PRIORITY:
        if kind in fired:
            return kind
    return None
