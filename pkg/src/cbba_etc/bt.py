"""A minimal reactive behaviour-tree engine.

Trees are immutable after construction and carry no per-tick memory: every
tick restarts at the root, so conditions are re-validated each cycle.
"""

from __future__ import annotations

import enum
from typing import Any, Callable, Optional, Sequence as Seq


class BtStatus(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class NodeKind(enum.Enum):
    SELECTOR = "selector"
    SEQUENCE = "sequence"
    CONDITION = "condition"
    ACTION = "action"


class BtError(ValueError):
    pass


class BtNode:
    __slots__ = ("kind", "children", "behavior", "label")

    def __init__(self, kind: NodeKind, label: str, children: Seq["BtNode"] = (),
                 behavior: Optional[Callable[[Any], Any]] = None) -> None:
        children = tuple(children)
        if kind in (NodeKind.SELECTOR, NodeKind.SEQUENCE):
            if not children:
                raise BtError(f"composite {label!r} needs at least one child")
            if behavior is not None:
                raise BtError(f"composite {label!r} cannot carry a behavior")
            for child in children:
                if not isinstance(child, BtNode):
                    raise BtError(f"child of {label!r} is not a BtNode: {child!r}")
        else:
            if children:
                raise BtError(f"leaf {label!r} cannot have children")
            if behavior is None:
                raise BtError(f"leaf {label!r} needs a behavior")
        self.kind = kind
        self.children = children
        self.behavior = behavior
        self.label = label

    def __repr__(self) -> str:
        return f"BtNode({self.kind.value}, {self.label!r})"


def Selector(label: str, *children: BtNode) -> BtNode:
    return BtNode(NodeKind.SELECTOR, label, children)


def Sequence(label: str, *children: BtNode) -> BtNode:
    return BtNode(NodeKind.SEQUENCE, label, children)


def Condition(label: str, predicate: Callable[[Any], bool]) -> BtNode:
    """Leaf mapping a boolean predicate to SUCCESS/FAILURE."""
    return BtNode(NodeKind.CONDITION, label, behavior=predicate)


def Action(label: str, fn: Callable[[Any], BtStatus]) -> BtNode:
    return BtNode(NodeKind.ACTION, label, behavior=fn)


def tick(node: BtNode, ctx: Any, trace: Optional[list] = None) -> BtStatus:
    """Evaluate ``node`` once against ``ctx``.

    If ``trace`` is a list, ``(label, status)`` pairs are appended in
    completion order for every node visited.
    """
    kind = node.kind
    if kind is NodeKind.SELECTOR:
        status = BtStatus.FAILURE
        for child in node.children:
            status = tick(child, ctx, trace)
            if status is not BtStatus.FAILURE:
                break
    elif kind is NodeKind.SEQUENCE:
        status = BtStatus.SUCCESS
        for child in node.children:
            status = tick(child, ctx, trace)
            if status is not BtStatus.SUCCESS:
                break
    elif kind is NodeKind.CONDITION:
        status = BtStatus.SUCCESS if node.behavior(ctx) else BtStatus.FAILURE
    else:
        status = node.behavior(ctx)
        if not isinstance(status, BtStatus):
            raise BtError(f"action {node.label!r} returned {status!r}, not a BtStatus")
    if trace is not None:
        trace.append((node.label, status))
    return status
