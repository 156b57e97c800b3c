"""Evaluation-net (E-net) formalism and a deterministic step executor.

A net is a tuple of places, transitions and an initial marking. Places are
PERIPHERAL (kernels enter here), RESOLUTION (hold a decision value, never a
kernel) or GENERAL. Transitions are SIMPLE (one output) or DECISION (several
alternative outputs, one chosen through the attached resolution place).
Every place has capacity one. Inputs of a transition are alternatives: the
transition consumes the single kernel sitting on whichever input holds one
that satisfies that input's guard.
"""

from __future__ import annotations

import copy
import itertools
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

Value = Any  # str | int | bool | bytes | list of those

DEFAULT_MAX_STEPS = 10_000


class EnetError(Exception):
    pass


class NotEnabled(EnetError):
    def __init__(self, transition: str):
        super().__init__(f"transition {transition} is not enabled")
        self.transition = transition


class UnresolvedDecision(EnetError):
    def __init__(self, transition: str, place: str):
        super().__init__(f"{transition} needs a decision from {place} and no policy is attached")
        self.transition = transition
        self.place = place


class InvalidDecision(EnetError):
    pass


class ProcedureFailure(EnetError):
    def __init__(self, transition: str, procedure: str, cause: BaseException | str):
        super().__init__(f"{transition} ({procedure}) failed: {cause}")
        self.transition = transition
        self.procedure = procedure
        self.cause = cause


class PlaceKind(str, Enum):
    PERIPHERAL = "PERIPHERAL"
    RESOLUTION = "RESOLUTION"
    GENERAL = "GENERAL"


class TransitionKind(str, Enum):
    SIMPLE = "SIMPLE"
    DECISION = "DECISION"


def natural_key(ident: str) -> tuple:
    """Sort "t2" before "t10"."""
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", ident))


# -- guards

_COMPARE: dict[str, Callable[[Any, Any], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}
_UNARY: dict[str, Callable[[Any], bool]] = {
    "true": lambda a: a is True,
    "false": lambda a: a is False,
    "empty": lambda a: len(a) == 0,
    "nonempty": lambda a: len(a) > 0,
}
# Missing attributes read as these defaults, per operator family.
_UNARY_DEFAULT = {"true": False, "false": False, "empty": (), "nonempty": ()}


@dataclass(frozen=True)
class Atom:
    attr: str
    op: str
    value: Value = None

    def __post_init__(self) -> None:
        if not self.attr:
            raise ValueError("guard attribute name must be non-empty")
        if self.op not in _COMPARE and self.op not in _UNARY:
            raise ValueError(f"unknown guard operator {self.op!r}")
        if self.op in _COMPARE and not isinstance(self.value, (int, str, bool)):
            raise ValueError(f"comparison {self.attr} {self.op} needs a scalar operand")

    def holds(self, attrs: Mapping[str, Value]) -> bool:
        if self.op in _UNARY:
            return _UNARY[self.op](attrs.get(self.attr, _UNARY_DEFAULT[self.op]))
        if self.attr not in attrs:
            return False
        try:
            return _COMPARE[self.op](attrs[self.attr], self.value)
        except TypeError:
            return False

    def __str__(self) -> str:
        if self.op in _UNARY:
            return f"{self.attr} {self.op}"
        return f"{self.attr} {self.op} {self.value!r}"


@dataclass(frozen=True)
class Guard:
    """Conjunction of atoms over kernel attributes. No atoms means always true."""
    atoms: tuple[Atom, ...] = ()

    @classmethod
    def of(cls, *atoms: tuple) -> "Guard":
        return cls(tuple(Atom(*a) for a in atoms))

    def holds(self, attrs: Mapping[str, Value]) -> bool:
        return all(a.holds(attrs) for a in self.atoms)

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(a.attr for a in self.atoms)

    def __str__(self) -> str:
        return " and ".join(map(str, self.atoms)) or "true"


TRUE = Guard()


# -- net structure

@dataclass(frozen=True)
class PlaceSpec:
    id: str
    kind: PlaceKind = PlaceKind.GENERAL
    terminal: bool = False


@dataclass(frozen=True)
class InputArc:
    place: str
    guard: Guard = TRUE


@dataclass(frozen=True)
class TransitionSpec:
    id: str
    kind: TransitionKind
    inputs: tuple[InputArc, ...]
    outputs: tuple[str, ...]
    resolution_place: str | None = None
    procedure: str | None = None
    labels: tuple[str, ...] = ()

    def label_index(self, label: str | int) -> int:
        if isinstance(label, int):
            index = label
        elif label in self.labels:
            index = self.labels.index(label)
        elif label.isdigit():
            index = int(label)
        else:
            raise InvalidDecision(f"{self.id}: unknown decision {label!r} (choose from {self.labels})")
        if not 0 <= index < len(self.outputs):
            raise InvalidDecision(f"{self.id}: decision {index} outside 0..{len(self.outputs) - 1}")
        return index


@dataclass(frozen=True, eq=True)
class NetDefinition:
    name: str
    places: tuple[PlaceSpec, ...]
    transitions: tuple[TransitionSpec, ...]
    initial: Mapping[str, Mapping[str, Value]] = field(default_factory=dict)
    domains: Mapping[str, tuple[Value, ...]] = field(default_factory=dict)

    def place(self, place_id: str) -> PlaceSpec:
        for p in self.places:
            if p.id == place_id:
                return p
        raise KeyError(place_id)

    def transition(self, transition_id: str) -> TransitionSpec:
        for t in self.transitions:
            if t.id == transition_id:
                return t
        raise KeyError(transition_id)

    def places_of(self, kind: PlaceKind) -> list[PlaceSpec]:
        return [p for p in self.places if p.kind is kind]

    @property
    def terminal_places(self) -> frozenset[str]:
        return frozenset(p.id for p in self.places if p.terminal)

    @property
    def decision_transitions(self) -> frozenset[str]:
        return frozenset(t.id for t in self.transitions if t.kind is TransitionKind.DECISION)

    def consumers(self, place_id: str) -> list[TransitionSpec]:
        return [t for t in self.transitions if any(a.place == place_id for a in t.inputs)]

    def edges(self) -> frozenset[tuple[str, str]]:
        """The F and H relations as one set of (source, target) pairs."""
        out = set()
        for t in self.transitions:
            out.update((a.place, t.id) for a in t.inputs)
            out.update((t.id, p) for p in t.outputs)
        return frozenset(out)


# -- validation

@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]
    counts: dict[str, int]

    def __bool__(self) -> bool:
        return self.ok


def validate_net(net: NetDefinition) -> ValidationReport:
    v: list[str] = []
    place_ids = [p.id for p in net.places]
    kinds = {p.id: p.kind for p in net.places}
    for pid in sorted({p for p in place_ids if place_ids.count(p) > 1}):
        v.append(f"duplicate place id {pid}")
    tids = [t.id for t in net.transitions]
    for tid in sorted({t for t in tids if tids.count(t) > 1}):
        v.append(f"duplicate transition id {tid}")
    for pid in sorted(set(place_ids) & set(tids)):
        v.append(f"{pid} used as both place and transition id")
    if not net.places_of(PlaceKind.PERIPHERAL):
        v.append("no peripheral place")

    resolution_users: dict[str, list[str]] = {}
    for t in net.transitions:
        if not t.inputs:
            v.append(f"{t.id}: no input places")
        for arc in t.inputs:
            if arc.place not in kinds:
                v.append(f"{t.id}: unknown input place {arc.place}")
            elif kinds[arc.place] is PlaceKind.RESOLUTION:
                v.append(f"{t.id}: resolution place {arc.place} used as kernel input")
            for var in sorted(arc.guard.variables - set(net.domains)):
                v.append(f"{t.id}: guard attribute {var} has no declared domain")
        for out in t.outputs:
            if out not in kinds:
                v.append(f"{t.id}: unknown output place {out}")
            elif kinds[out] is PlaceKind.RESOLUTION:
                v.append(f"{t.id}: resolution place {out} used as kernel output")
        if t.kind is TransitionKind.SIMPLE:
            if len(t.outputs) != 1:
                v.append(f"{t.id}: simple transition must have exactly one output")
            if t.resolution_place is not None:
                v.append(f"{t.id}: simple transition with resolution place")
        else:
            if len(t.outputs) < 2:
                v.append(f"{t.id}: decision transition needs at least two alternatives")
            if t.resolution_place is None:
                v.append(f"{t.id}: decision without resolution place")
            elif kinds.get(t.resolution_place) is not PlaceKind.RESOLUTION:
                v.append(f"{t.id}: resolution place {t.resolution_place} is not of kind RESOLUTION")
            else:
                resolution_users.setdefault(t.resolution_place, []).append(t.id)
            if t.labels and len(t.labels) != len(t.outputs):
                v.append(f"{t.id}: {len(t.labels)} labels for {len(t.outputs)} outputs")

    for p in net.places_of(PlaceKind.RESOLUTION):
        users = resolution_users.get(p.id, [])
        if not users:
            v.append(f"resolution place {p.id} not attached to any decision transition")
        elif len(users) > 1:
            v.append(f"resolution place {p.id} shared by {', '.join(users)}")

    produced = {out for t in net.transitions for out in t.outputs}
    for p in net.places:
        if p.kind is PlaceKind.RESOLUTION:
            if p.terminal:
                v.append(f"resolution place {p.id} marked terminal")
            continue
        consumers = net.consumers(p.id)
        if p.terminal:
            if consumers:
                v.append(f"terminal place {p.id} has outgoing edges")
            continue
        if not consumers:
            v.append(f"place {p.id} is never consumed")
        if p.id not in produced and p.kind is not PlaceKind.PERIPHERAL:
            v.append(f"place {p.id} is never produced")

    for pid, attrs in net.initial.items():
        if pid not in kinds:
            v.append(f"initial marking on unknown place {pid}")
        elif kinds[pid] is PlaceKind.RESOLUTION:
            v.append(f"initial marking puts a kernel on resolution place {pid}")
        if any(not name for name in attrs):
            v.append(f"initial kernel at {pid} has an empty attribute name")

    v.extend(_guard_conflicts(net))
    counts = {
        "places": len(net.places),
        "peripheral": len(net.places_of(PlaceKind.PERIPHERAL)),
        "resolution": len(net.places_of(PlaceKind.RESOLUTION)),
        "general": len(net.places_of(PlaceKind.GENERAL)),
        "transitions": len(net.transitions),
    }
    return ValidationReport(not v, v, counts)


def _guard_conflicts(net: NetDefinition) -> list[str]:
    """Transitions sharing an input place must have pairwise exclusive guards.

    Exclusivity is proven by enumerating every assignment over the declared
    attribute domains of the variables the two guards mention.
    """
    found = []
    arcs: dict[str, list[tuple[str, Guard]]] = {}
    for t in net.transitions:
        for arc in t.inputs:
            arcs.setdefault(arc.place, []).append((t.id, arc.guard))
    for place, users in sorted(arcs.items(), key=lambda kv: natural_key(kv[0])):
        for (t1, g1), (t2, g2) in itertools.combinations(users, 2):
            if t1 == t2:
                continue
            variables = sorted(g1.variables | g2.variables)
            if any(var not in net.domains for var in variables):
                continue  # already reported as undeclared
            for values in itertools.product(*(net.domains[var] for var in variables)):
                attrs = dict(zip(variables, values))
                if g1.holds(attrs) and g2.holds(attrs):
                    found.append(f"{t1} and {t2} both enabled from {place} when {attrs}")
                    break
    return found


# -- kernels, markings, traces

@dataclass
class Kernel:
    id: int
    attributes: dict[str, Value] = field(default_factory=dict)

    def snapshot(self) -> dict[str, Value]:
        return copy.deepcopy(self.attributes)


@dataclass
class Marking:
    occupancy: dict[str, Kernel | None]
    resolutions: dict[str, int | None]

    def copy(self) -> "Marking":
        return copy.deepcopy(self)

    def kernel_at(self, place: str) -> Kernel | None:
        return self.occupancy.get(place)

    @property
    def occupied(self) -> list[str]:
        return [p for p, k in self.occupancy.items() if k is not None]


def initial_marking(net: NetDefinition, extra: Mapping[str, Value] | None = None) -> Marking:
    occupancy: dict[str, Kernel | None] = {
        p.id: None for p in net.places if p.kind is not PlaceKind.RESOLUTION}
    for kid, (pid, attrs) in enumerate(sorted(net.initial.items()), start=1):
        seeded = copy.deepcopy(dict(attrs))
        seeded.update(extra or {})
        occupancy[pid] = Kernel(kid, seeded)
    resolutions: dict[str, int | None] = {p.id: None for p in net.places_of(PlaceKind.RESOLUTION)}
    return Marking(occupancy, resolutions)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    transition: str
    consumed: str
    produced: str
    decision: int | None
    kernel: int
    attributes: dict[str, Value]


@dataclass(frozen=True)
class DecisionRequest:
    net: str
    transition: TransitionSpec
    attributes: Mapping[str, Value]
    env: Any


class ResolutionPolicy(Protocol):
    def __call__(self, request: DecisionRequest) -> int | str: ...


Procedure = Callable[[dict, "FiringContext"], None]


@dataclass(frozen=True)
class FiringContext:
    net: str
    transition: str
    decision: int | None
    env: Any
    label: str | None = None


# -- firing rule

def _satisfied_input(net: NetDefinition, m: Marking, t: TransitionSpec) -> InputArc | None:
    hits = []
    for arc in t.inputs:
        kernel = m.occupancy.get(arc.place)
        if kernel is not None and arc.guard.holds(kernel.attributes):
            hits.append(arc)
    return hits[0] if len(hits) == 1 else None


def _decide(net: NetDefinition, m: Marking, t: TransitionSpec, kernel: Kernel,
            policy: ResolutionPolicy | None, env: Any) -> int:
    assert t.resolution_place is not None
    pending = m.resolutions.get(t.resolution_place)
    if pending is not None:
        return pending
    if policy is None:
        raise UnresolvedDecision(t.id, t.resolution_place)
    return t.label_index(policy(DecisionRequest(net.name, t, kernel.snapshot(), env)))


def resolve_pending(net: NetDefinition, m: Marking, policy: ResolutionPolicy | None,
                    env: Any = None) -> Marking:
    """Ask the policy once for every decision whose input is ready.

    Returns a new marking with those answers stored on the resolution places,
    so later enabledness checks and the firing agree on one decision.
    """
    out = m.copy()
    for t in net.transitions:
        if t.kind is not TransitionKind.DECISION:
            continue
        arc = _satisfied_input(net, m, t)
        if arc is None or m.resolutions.get(t.resolution_place) is not None:
            continue
        if policy is None:
            raise UnresolvedDecision(t.id, t.resolution_place)
        out.resolutions[t.resolution_place] = _decide(net, m, t, m.occupancy[arc.place], policy, env)
    return out


def _target(net: NetDefinition, m: Marking, t: TransitionSpec, kernel: Kernel,
            policy: ResolutionPolicy | None, env: Any) -> tuple[str, int | None]:
    if t.kind is TransitionKind.SIMPLE:
        return t.outputs[0], None
    index = _decide(net, m, t, kernel, policy, env)
    return t.outputs[index], index


def enabled_transitions(net: NetDefinition, m: Marking, policy: ResolutionPolicy | None = None,
                        env: Any = None) -> list[str]:
    """Transitions whose input is satisfied and whose chosen output is free.

    Decisions already stored in the marking are used as-is. Otherwise the
    policy is queried; without one, UnresolvedDecision is raised.
    """
    enabled = []
    for t in net.transitions:
        arc = _satisfied_input(net, m, t)
        if arc is None:
            continue
        kernel = m.occupancy[arc.place]
        target, _ = _target(net, m, t, kernel, policy, env)
        if target == arc.place or m.occupancy.get(target) is None:
            enabled.append(t.id)
    return sorted(enabled, key=natural_key)


def fire(net: NetDefinition, m: Marking, transition: str, policy: ResolutionPolicy | None = None,
         env: Any = None, procedures: Mapping[str, Procedure] | None = None,
         seq: int = 0) -> tuple[Marking, TraceEvent]:
    """Fire one transition. The input marking is never mutated."""
    try:
        t = net.transition(transition)
    except KeyError:
        raise NotEnabled(transition) from None
    arc = _satisfied_input(net, m, t)
    if arc is None:
        raise NotEnabled(transition)
    kernel = m.occupancy[arc.place]
    assert kernel is not None
    target, decision = _target(net, m, t, kernel, policy, env)
    if target != arc.place and m.occupancy.get(target) is not None:
        raise NotEnabled(transition)

    attrs = kernel.snapshot()
    if t.procedure is not None:
        proc = (procedures or {}).get(t.procedure)
        if proc is None:
            raise ProcedureFailure(t.id, t.procedure, "procedure not registered")
        try:
            label = t.labels[decision] if decision is not None and t.labels else None
            proc(attrs, FiringContext(net.name, t.id, decision, env, label))
        except Exception as exc:  # noqa: BLE001 - any procedure error aborts the firing
            raise ProcedureFailure(t.id, t.procedure, exc) from exc
        if any(not name for name in attrs):
            raise ProcedureFailure(t.id, t.procedure, "empty attribute name")

    out = m.copy()
    out.occupancy[arc.place] = None
    out.occupancy[target] = Kernel(kernel.id, attrs)
    if t.resolution_place is not None:
        out.resolutions[t.resolution_place] = None
    event = TraceEvent(seq, t.id, arc.place, target, decision, kernel.id, copy.deepcopy(attrs))
    return out, event


# -- runs

class Outcome(str, Enum):
    TERMINATED = "TERMINATED"
    STEP_LIMIT = "STEP_LIMIT"
    DEADLOCK = "DEADLOCK"
    NONDETERMINISM = "NONDETERMINISM"


@dataclass
class RunResult:
    outcome: Outcome
    marking: Marking
    trace: list[TraceEvent]

    @property
    def transitions(self) -> list[str]:
        return [e.transition for e in self.trace]

    @property
    def final_places(self) -> list[str]:
        return self.marking.occupied


class Run:
    """Single-threaded stepper over one net instance.

    `step()` fires at most one transition; `outcome` becomes non-None once
    the run has ended. `run_to_terminal` is a loop over this.
    """

    def __init__(self, net: NetDefinition, policy: ResolutionPolicy | None, env: Any = None,
                 procedures: Mapping[str, Procedure] | None = None,
                 max_steps: int = DEFAULT_MAX_STEPS, marking: Marking | None = None,
                 kernel_attrs: Mapping[str, Value] | None = None):
        if max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        self.net = net
        self.policy = policy
        self.env = env
        self.procedures = procedures or {}
        self.max_steps = max_steps
        self.marking = marking.copy() if marking is not None else initial_marking(net, kernel_attrs)
        self.trace: list[TraceEvent] = []
        self.outcome: Outcome | None = None
        self._terminal = net.terminal_places

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def step(self) -> TraceEvent | None:
        if self.outcome is not None:
            return None
        occupied = self.marking.occupied
        if occupied and all(p in self._terminal for p in occupied):
            self.outcome = Outcome.TERMINATED
            return None
        if len(self.trace) >= self.max_steps:
            self.outcome = Outcome.STEP_LIMIT
            return None
        resolved = resolve_pending(self.net, self.marking, self.policy, self.env)
        enabled = enabled_transitions(self.net, resolved)
        if not enabled:
            self.outcome = Outcome.DEADLOCK
            return None
        if len(enabled) > 1:
            self.outcome = Outcome.NONDETERMINISM
            return None
        self.marking, event = fire(self.net, resolved, enabled[0], None, self.env,
                                   self.procedures, seq=len(self.trace))
        self.trace.append(event)
        return event

    def run(self) -> RunResult:
        while self.outcome is None:
            self.step()
        return self.result()

    def result(self) -> RunResult:
        assert self.outcome is not None
        return RunResult(self.outcome, self.marking, list(self.trace))


def run_to_terminal(net: NetDefinition, policy: ResolutionPolicy | None, env: Any = None,
                    max_steps: int = DEFAULT_MAX_STEPS,
                    procedures: Mapping[str, Procedure] | None = None,
                    kernel_attrs: Mapping[str, Value] | None = None) -> RunResult:
    return Run(net, policy, env, procedures, max_steps, kernel_attrs=kernel_attrs).run()


def simple(tid: str, source: str | Sequence[str], target: str, procedure: str | None = None,
           guard: Guard = TRUE) -> TransitionSpec:
    """Shorthand for a one-output transition."""
    sources = [source] if isinstance(source, str) else list(source)
    return TransitionSpec(tid, TransitionKind.SIMPLE, tuple(InputArc(s, guard) for s in sources),
                          (target,), None, procedure)


def decision(tid: str, source: str | Iterable[str], targets: Sequence[str], resolution: str,
             procedure: str | None = None, labels: Sequence[str] = ()) -> TransitionSpec:
    sources = [source] if isinstance(source, str) else list(source)
    return TransitionSpec(tid, TransitionKind.DECISION, tuple(InputArc(s) for s in sources),
                          tuple(targets), resolution, procedure, tuple(labels))
