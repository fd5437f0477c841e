"""Range-limited, lossy, bandwidth-capped broadcast bus.

Messages sent during tick ``k`` are delivered to inboxes at the start of
tick ``k + 1``. ``messages_sent`` counts transmissions by the sender, not
copies received.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable, Optional

import numpy as np

from . import _kernels


class MsgKind(enum.Enum):
    TARGET_CLAIM = "TARGET_CLAIM"
    TARGET_RELEASE = "TARGET_RELEASE"
    INCOMPATIBILITY_REPORT = "INCOMPATIBILITY_REPORT"
    CONSENSUS_STATE = "CONSENSUS_STATE"
    LEADER_REPORT = "LEADER_REPORT"
    LEADER_CONSENSUS = "LEADER_CONSENSUS"
    ASSIGNMENT_DISSEMINATION = "ASSIGNMENT_DISSEMINATION"


@dataclass(frozen=True)
class Message:
    sender: int
    kind: MsgKind
    payload: Any
    sent_tick: int


@dataclass
class BusMetrics:
    messages_sent: int = 0
    messages_dropped_loss: int = 0
    messages_dropped_bandwidth: int = 0
    broadcasts_attempted: int = 0


class Bus:
    def __init__(self, n_robots: int, comm_range: float, p_loss: float,
                 bandwidth_cap: Optional[int], rngs: list[np.random.Generator]) -> None:
        self.n = n_robots
        self.comm_range = comm_range
        self.p_loss = p_loss
        self.cap = bandwidth_cap
        self.rngs = rngs
        self.metrics = BusMetrics()
        self.by_kind: dict[MsgKind, int] = {k: 0 for k in MsgKind}
        self._in_flight: list[tuple[int, Message]] = []
        self._sent_this_tick = np.zeros(n_robots, dtype=np.int64)
        self.inboxes: list[list[Message]] = [[] for _ in range(n_robots)]

    def broadcast(self, msg: Message, positions: np.ndarray, alive: np.ndarray,
                  only: Optional[Iterable[int]] = None) -> int:
        """Transmit ``msg``; returns the number of copies enqueued.

        ``only`` restricts delivery to the given robot ids (still subject to
        range and loss); the transmission is counted the same way.
        """
        s = msg.sender
        self.metrics.broadcasts_attempted += 1
        if self.cap is not None and self._sent_this_tick[s] >= self.cap:
            self.metrics.messages_dropped_bandwidth += 1
            return 0
        self._sent_this_tick[s] += 1
        self.metrics.messages_sent += 1
        self.by_kind[msg.kind] += 1
        d = _kernels.distances(float(positions[s, 0]), float(positions[s, 1]), positions)
        in_range = alive & (d <= self.comm_range)
        in_range[s] = False
        if only is not None:
            allowed = np.zeros(self.n, dtype=np.bool_)
            allowed[list(only)] = True
            in_range &= allowed
        recipients = np.flatnonzero(in_range)
        if self.p_loss > 0.0 and recipients.size:
            keep = self.rngs[s].random(recipients.size) >= self.p_loss
            self.metrics.messages_dropped_loss += int(recipients.size - keep.sum())
            recipients = recipients[keep]
        for r in recipients:
            self._in_flight.append((int(r), msg))
        return int(recipients.size)

    def deliver(self, alive: np.ndarray) -> list[list[Message]]:
        """Move last tick's copies into inboxes, ordered by (sent_tick, sender)."""
        for box in self.inboxes:
            box.clear()
        for r, msg in sorted(self._in_flight, key=lambda item: (item[1].sent_tick, item[1].sender)):
            if alive[r]:
                self.inboxes[r].append(msg)
        self._in_flight = []
        self._sent_this_tick[:] = 0
        return self.inboxes
