"""Marking-graph construction, liveness checking and audit reports.

The graph is built over abstract states: the place holding the (single)
kernel plus a finite abstraction of the guard-relevant attributes. Each
abstract variable ranges over representative concrete values, so guards are
evaluated by the same code the executor uses. Procedures are never run;
every transition instead has a declared abstract effect that maps an
abstract valuation to the set of possible successor valuations.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from .enet import (Guard, NetDefinition, PlaceKind, TraceEvent, TransitionKind, Value,
                   natural_key)
from .services import Action, AuditRecord

Valuation = dict[str, Value]
Effect = Callable[[Valuation, "int | None"], Iterable[Valuation]]


class AbstractionIncomplete(ValueError):
    pass


class CorruptLog(ValueError):
    pass


def _freeze(value: Value) -> Value:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


@dataclass(frozen=True)
class AbstractState:
    place: str
    attrs: tuple[tuple[str, Value], ...] = ()

    @classmethod
    def of(cls, place: str, valuation: Mapping[str, Value]) -> "AbstractState":
        return cls(place, tuple(sorted((k, _freeze(v)) for k, v in valuation.items())))

    @property
    def valuation(self) -> Valuation:
        return dict(self.attrs)

    def label(self) -> str:
        if not self.attrs:
            return self.place
        inner = ", ".join(f"{k}={v!r}" for k, v in self.attrs)
        return f"{self.place} [{inner}]"


@dataclass(frozen=True)
class Abstraction:
    """Finite attribute abstraction for one net.

    `variables` maps each abstract variable to its representative values.
    `alpha` projects concrete kernel attributes onto representatives.
    `effects` gives each transition's abstract effect (identity when absent).
    `decision_guards` restrict which decision alternatives a legal policy
    may choose, evaluated on the pre-firing valuation.
    """
    variables: Mapping[str, tuple[Value, ...]] = field(default_factory=dict)
    alpha: Callable[[Mapping[str, Value]], Valuation] | None = None
    effects: Mapping[str, Effect] = field(default_factory=dict)
    decision_guards: Mapping[tuple[str, int], Guard] = field(default_factory=dict)

    def project(self, attrs: Mapping[str, Value]) -> Valuation:
        if self.alpha is not None:
            return self.alpha(attrs)
        out = {}
        for name, reps in self.variables.items():
            out[name] = attrs[name] if name in attrs else reps[0]
        return out

    def successors(self, transition: str, valuation: Valuation, decision: int | None) -> list[Valuation]:
        effect = self.effects.get(transition)
        if effect is None:
            return [dict(valuation)]
        return [dict(v) for v in effect(dict(valuation), decision)]

    @classmethod
    def from_domains(cls, net: NetDefinition) -> "Abstraction":
        """Sound fallback for nets without a hand-written abstraction.

        Every declared domain value is a representative, and any transition
        may leave the guard variables at any value (havoc).
        """
        variables = {k: tuple(_freeze(v) for v in vals) for k, vals in net.domains.items()}
        names = sorted(variables)

        def havoc(_valuation: Valuation, _decision: int | None) -> list[Valuation]:
            return [dict(zip(names, combo))
                    for combo in itertools.product(*(variables[n] for n in names))]

        effects = {t.id: havoc for t in net.transitions} if names else {}
        return cls(variables, None, effects)


@dataclass
class MarkingGraph:
    net: str
    initial: AbstractState
    states: list[AbstractState]
    edges: list[tuple[AbstractState, str, int | None, AbstractState]]
    terminal: frozenset[AbstractState]
    declared_places: tuple[str, ...] = ()

    def successors(self, state: AbstractState) -> list[tuple[str, int | None, AbstractState]]:
        return [(t, d, dst) for src, t, d, dst in self.edges if src == state]

    def has_edge(self, src: AbstractState, transition: str, decision: int | None,
                 dst: AbstractState) -> bool:
        return (src, transition, decision, dst) in self._edge_set

    @property
    def _edge_set(self) -> set:
        cache = self.__dict__.get("_edges_cache")
        if cache is None or len(cache) != len(self.edges):
            cache = set(self.edges)
            self.__dict__["_edges_cache"] = cache
        return cache

    @property
    def places(self) -> set[str]:
        return {s.place for s in self.states}

    def to_dot(self) -> str:
        index = {s: i for i, s in enumerate(self.states)}
        lines = [f'digraph "{self.net}" {{', "  rankdir=LR;"]
        for s, i in index.items():
            shape = "doublecircle" if s in self.terminal else "circle"
            if s == self.initial:
                shape = "box"
            lines.append(f'  s{i} [label="{s.label()}", shape={shape}];')
        for src, t, d, dst in self.edges:
            label = t if d is None else f"{t}/{d}"
            lines.append(f'  s{index[src]} -> s{index[dst]} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_doc(self) -> dict:
        index = {s: i for i, s in enumerate(self.states)}
        return {
            "net": self.net,
            "initial": index[self.initial],
            "states": [{"id": i, "place": s.place, "attrs": {k: _jsonable(v) for k, v in s.attrs},
                        "terminal": s in self.terminal} for s, i in index.items()],
            "edges": [{"from": index[a], "transition": t, "decision": d, "to": index[b]}
                      for a, t, d, b in self.edges],
        }


def _jsonable(value: Value) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, bytes):
        return {"hex": value.hex()}
    return value


def build_marking_graph(net: NetDefinition, abstraction: Abstraction | None = None) -> MarkingGraph:
    """Breadth-first closure over every enabled transition and decision index."""
    abstraction = abstraction or Abstraction()
    for t in net.transitions:
        for arc in t.inputs:
            missing = arc.guard.variables - set(abstraction.variables)
            if missing:
                raise AbstractionIncomplete(
                    f"{t.id} guard uses unabstracted attribute(s) {', '.join(sorted(missing))}")
    for (tid, _), guard in abstraction.decision_guards.items():
        missing = guard.variables - set(abstraction.variables)
        if missing:
            raise AbstractionIncomplete(
                f"{tid} decision guard uses unabstracted attribute(s) {', '.join(sorted(missing))}")
    if len(net.initial) != 1:
        raise ValueError("marking graphs are built for single-kernel nets only")

    (start_place, seed), = net.initial.items()
    initial = AbstractState.of(start_place, abstraction.project(seed))
    terminal_places = net.terminal_places
    seen = {initial}
    order = [initial]
    edges: list[tuple[AbstractState, str, int | None, AbstractState]] = []
    queue = deque([initial])
    while queue:
        state = queue.popleft()
        valuation = state.valuation
        for t in net.transitions:
            if not any(a.place == state.place and a.guard.holds(valuation) for a in t.inputs):
                continue
            if t.kind is TransitionKind.SIMPLE:
                choices: Sequence[int | None] = [None]
            else:
                choices = [i for i in range(len(t.outputs))
                           if abstraction.decision_guards.get((t.id, i), Guard()).holds(valuation)]
            for choice in choices:
                target = t.outputs[0 if choice is None else choice]
                for succ in abstraction.successors(t.id, valuation, choice):
                    nxt = AbstractState.of(target, succ)
                    edges.append((state, t.id, choice, nxt))
                    if nxt not in seen:
                        seen.add(nxt)
                        order.append(nxt)
                        queue.append(nxt)
    terminal = frozenset(s for s in order if s.place in terminal_places)
    declared = tuple(p.id for p in net.places if p.kind is not PlaceKind.RESOLUTION)
    return MarkingGraph(net.name, initial, order, edges, terminal, declared)


@dataclass
class LivenessReport:
    deadlocks: list[AbstractState]
    unreachable: list[str]
    cannot_terminate: list[AbstractState]
    states: int
    edges: int

    @property
    def terminal_reachable(self) -> bool:
        return not self.cannot_terminate

    @property
    def ok(self) -> bool:
        return not self.deadlocks and self.terminal_reachable

    def summary(self) -> str:
        return (f"{self.states} states, {len(self.deadlocks)} deadlocks, "
                f"{len(self.unreachable)} unreachable places, "
                f"terminal reachable everywhere: {'yes' if self.terminal_reachable else 'no'}")

    def to_doc(self) -> dict:
        return {
            "states": self.states,
            "edges": self.edges,
            "deadlocks": [s.label() for s in self.deadlocks],
            "unreachable": self.unreachable,
            "cannot_terminate": [s.label() for s in self.cannot_terminate],
            "terminal_reachable": self.terminal_reachable,
            "ok": self.ok,
        }


def check_liveness(g: MarkingGraph) -> LivenessReport:
    outgoing: dict[AbstractState, int] = {s: 0 for s in g.states}
    reverse: dict[AbstractState, list[AbstractState]] = {s: [] for s in g.states}
    for src, _, _, dst in g.edges:
        outgoing[src] += 1
        reverse[dst].append(src)
    deadlocks = [s for s in g.states if outgoing[s] == 0 and s not in g.terminal]
    can_finish = set(g.terminal)
    queue = deque(g.terminal)
    while queue:
        s = queue.popleft()
        for prev in reverse[s]:
            if prev not in can_finish:
                can_finish.add(prev)
                queue.append(prev)
    visited = g.places
    unreachable = sorted((p for p in g.declared_places if p not in visited), key=natural_key)
    stuck = [s for s in g.states if s not in can_finish]
    return LivenessReport(deadlocks, unreachable, stuck, len(g.states), len(g.edges))


def trace_in_graph(g: MarkingGraph, abstraction: Abstraction | None,
                   trace: Sequence[TraceEvent]) -> bool:
    """True when the concrete trace is a path from the graph's initial state."""
    abstraction = abstraction or Abstraction()
    state = g.initial
    for event in trace:
        if event.consumed != state.place:
            return False
        nxt = AbstractState.of(event.produced, abstraction.project(event.attributes))
        if not g.has_edge(state, event.transition, event.decision, nxt):
            return False
        state = nxt
    return True


# -- reports over audit logs

class Lifecycle(str, Enum):
    PREPARED = "PREPARED"
    ARCHIVED = "ARCHIVED"
    SENT = "SENT"
    DELIVERED = "DELIVERED"
    PROCESSED = "PROCESSED"
    REJECTED = "REJECTED"


_RANK = {s: i for i, s in enumerate(Lifecycle)}
_FINAL = (Lifecycle.PROCESSED, Lifecycle.REJECTED)
_STAGE_OF = {
    Action.MESSAGE_ARCHIVED: Lifecycle.ARCHIVED,
    Action.MESSAGE_SENT: Lifecycle.SENT,
    Action.MESSAGE_PROCESSED: Lifecycle.PROCESSED,
    Action.MESSAGE_REJECTED: Lifecycle.REJECTED,
}


def parse_detail(detail: str) -> dict[str, str]:
    out = {}
    for token in detail.split():
        key, sep, value = token.partition("=")
        if sep:
            out[key] = value
    return out


@dataclass
class MessageState:
    sender: str
    message_no: int
    state: Lifecycle
    recipients: list[str] = field(default_factory=list)
    history: list[str] = field(default_factory=list)


@dataclass
class UserCounts:
    sessions: int = 0
    sent: int = 0
    received: int = 0
    rejected: int = 0
    denied: int = 0
    refused: int = 0


@dataclass
class Report:
    users: dict[str, UserCounts]
    messages: list[MessageState]
    anomalies: list[str]

    def to_doc(self) -> dict:
        return {
            "users": {u: vars(c) for u, c in sorted(self.users.items())},
            "messages": [
                {"sender": m.sender, "message_no": m.message_no, "state": m.state.value,
                 "recipients": m.recipients, "history": m.history}
                for m in self.messages
            ],
            "anomalies": self.anomalies,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"


def check_gapless(records: Sequence[AuditRecord]) -> None:
    for expected, r in enumerate(records, start=1):
        if r.seq != expected:
            raise CorruptLog(f"audit seq {r.seq} where {expected} was expected")


def generate_report(records: Sequence[AuditRecord],
                    traces: Iterable[Mapping[str, Value]] = ()) -> Report:
    """Per-user counts, per-message lifecycle and anomalies.

    Lifecycle stages come from audit actions in seq order. DELIVERED has no
    audit action, so it is taken from trace snapshots in which a receiver's
    kernel holds the message (`current_sender`/`current_no`).
    """
    records = sorted(records, key=lambda r: r.seq)
    check_gapless(records)
    users: dict[str, UserCounts] = {}
    messages: dict[tuple[str, int], MessageState] = {}
    anomalies: list[str] = []

    def counts(user: str) -> UserCounts:
        return users.setdefault(user, UserCounts())

    for r in records:
        c = counts(r.actor)
        if r.action is Action.SESSION_OPENED:
            c.sessions += 1
        elif r.action is Action.ACCESS_DENIED:
            c.denied += 1
        elif r.action is Action.SECMAIL_REFUSED:
            c.refused += 1
        stage = _STAGE_OF.get(r.action)
        if stage is None:
            continue
        if r.message_no is None:
            anomalies.append(f"seq {r.seq}: {r.action.value} without message number")
            continue
        detail = parse_detail(r.detail)
        if r.action in (Action.MESSAGE_ARCHIVED, Action.MESSAGE_SENT):
            key = (r.actor, r.message_no)
            if r.action is Action.MESSAGE_SENT:
                c.sent += 1
        else:
            sender = detail.get("from")
            if sender is None:
                anomalies.append(f"seq {r.seq}: {r.action.value} without sender")
                continue
            key = (sender, r.message_no)
            if r.action is Action.MESSAGE_PROCESSED:
                c.received += 1
            else:
                c.rejected += 1
        msg = messages.get(key)
        if msg is None:
            if stage is not Lifecycle.ARCHIVED:
                anomalies.append(f"seq {r.seq}: {r.action.value} for unknown message "
                                 f"{key[0]}#{key[1]}")
            msg = messages[key] = MessageState(key[0], key[1], stage)
        elif stage in _FINAL and msg.state in _FINAL:
            # several recipients: any rejection dominates
            msg.state = max(stage, msg.state, key=_RANK.__getitem__)
        elif _RANK[stage] < _RANK[msg.state] or (
                stage is msg.state and stage in (Lifecycle.ARCHIVED, Lifecycle.SENT)):
            anomalies.append(f"seq {r.seq}: {key[0]}#{key[1]} moved from "
                             f"{msg.state.value} to {stage.value}")
        else:
            msg.state = stage
        msg.history.append(f"{r.seq}:{stage.value}")
        if "to" in detail and not msg.recipients:
            msg.recipients = detail["to"].split(",")

    for attrs in traces:
        sender, no = attrs.get("current_sender"), attrs.get("current_no")
        if sender is None or no is None:
            continue
        msg = messages.get((sender, no))
        if msg is None:
            anomalies.append(f"trace references unknown message {sender}#{no}")
        elif msg.state is Lifecycle.SENT:
            msg.state = Lifecycle.DELIVERED
            msg.history.append(f"trace:{Lifecycle.DELIVERED.value}")

    by_sender: dict[str, list[int]] = {}
    for sender, no in messages:
        by_sender.setdefault(sender, []).append(no)
    for sender, numbers in sorted(by_sender.items()):
        missing = sorted(set(range(1, max(numbers) + 1)) - set(numbers))
        if missing:
            anomalies.append(f"{sender}: numbering gap, missing {missing}")
    for key, msg in sorted(messages.items()):
        if msg.state is Lifecycle.ARCHIVED:
            anomalies.append(f"{key[0]}#{key[1]}: archived but never sent")

    ordered = [messages[k] for k in sorted(messages)]
    # dedupe repeated trace hits
    anomalies = list(dict.fromkeys(anomalies))
    return Report(users, ordered, anomalies)
