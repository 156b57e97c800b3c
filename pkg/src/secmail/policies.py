"""Resolution policies: who answers the permissive places, and how.

A scenario names a policy as a list of rules plus an optional per-place
script. Lookup order for each decision is: the next scripted answer for
that resolution place, then the first matching rule, then `auto`.

Rules:
    auto              grant/deny from the environment's configuration, send
                      every scripted message, receive while mail is pending,
                      exit instead of retrying
    always-grant      grant at every grant/deny place
    deny-at:<place>   answer the negative alternative at that resolution place
    exit-after:<n>    leave the compose/receive loop after n messages
    random            seeded uniform choice among the legal alternatives
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .enet import DecisionRequest, TransitionSpec

RULE_NAMES = ("auto", "always-grant", "deny-at", "exit-after", "random")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    name: str
    arg: str | None = None

    @classmethod
    def parse(cls, text: str) -> "Rule":
        name, _, arg = text.partition(":")
        name = name.strip()
        if name not in RULE_NAMES:
            raise PolicyError(f"unknown policy rule {text!r}")
        if name in ("deny-at", "exit-after") and not arg:
            raise PolicyError(f"policy rule {name} needs an argument")
        if name == "exit-after" and not arg.isdigit():
            raise PolicyError(f"exit-after needs a non-negative integer, got {arg!r}")
        return cls(name, arg or None)

    def __str__(self) -> str:
        return self.name if self.arg is None else f"{self.name}:{self.arg}"


def _kind(t: TransitionSpec) -> str:
    labels = set(t.labels)
    if labels == {"grant", "deny"}:
        return "access" if (t.procedure or "").endswith("verify_rights") else "secmail"
    if "another" in labels:
        return "compose"
    if "continue" in labels:
        return "receive"
    if "retry" in labels:
        return "retry"
    return "other"


def _negative(t: TransitionSpec) -> int:
    for label in ("deny", "exit"):
        if label in t.labels:
            return t.labels.index(label)
    return len(t.outputs) - 1


def legal_choices(t: TransitionSpec, attrs: Mapping) -> list[int]:
    """Alternatives a well-behaved policy may pick; continuing needs pending mail."""
    choices = list(range(len(t.outputs)))
    if "continue" in t.labels and not attrs.get("pending"):
        choices.remove(t.labels.index("continue"))
    return choices


@dataclass
class SymbolicPolicy:
    rules: Sequence[Rule] = (Rule("auto"),)
    script: Mapping[str, Sequence[str | int]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        self._queues = {place: deque(answers) for place, answers in self.script.items()}
        self._rng = random.Random(self.seed)

    @classmethod
    def from_spec(cls, rules: str | Iterable[str] = "auto",
                  script: Mapping[str, Sequence[str | int]] | None = None,
                  seed: int = 0) -> "SymbolicPolicy":
        if isinstance(rules, str):
            rules = [r for r in rules.split("+") if r.strip()]
        parsed = [Rule.parse(r) for r in rules] or [Rule("auto")]
        return cls(parsed, dict(script or {}), seed)

    def __call__(self, request: DecisionRequest) -> int | str:
        t = request.transition
        queue = self._queues.get(t.resolution_place or "")
        if queue:
            return queue.popleft()
        for rule in self.rules:
            answer = self._apply(rule, request)
            if answer is not None:
                return answer
        return self._auto(request)

    def _apply(self, rule: Rule, request: DecisionRequest) -> int | str | None:
        t, attrs = request.transition, request.attributes
        kind = _kind(t)
        if rule.name == "auto":
            return self._auto(request)
        if rule.name == "always-grant" and kind in ("access", "secmail"):
            return "grant"
        if rule.name == "deny-at" and t.resolution_place == rule.arg:
            return _negative(t)
        if rule.name == "exit-after":
            limit = int(rule.arg or 0)
            if kind == "compose":
                return "exit" if attrs.get("sent_count", 0) >= limit else "another"
            if kind == "receive":
                if attrs.get("processed", 0) >= limit or not attrs.get("pending"):
                    return "exit"
                return "continue"
        if rule.name == "random":
            return self._rng.choice(legal_choices(t, attrs))
        return None

    @staticmethod
    def _auto(request: DecisionRequest) -> int | str:
        t, attrs, session = request.transition, request.attributes, request.env
        kind = _kind(t)
        user = attrs.get("user", getattr(session, "user", None))
        if kind == "access":
            return "grant" if session.env.peek_access(user).allowed else "deny"
        if kind == "secmail":
            return "grant" if session.env.peek_secmail(user) else "deny"
        if kind == "compose":
            return "another" if attrs.get("remaining", 0) > 0 else "exit"
        if kind == "receive":
            return "continue" if attrs.get("pending") else "exit"
        if kind == "retry":
            return "exit"
        return 0

    def describe(self) -> str:
        return "+".join(map(str, self.rules))


def always_grant_exit_after(n: int) -> SymbolicPolicy:
    return SymbolicPolicy([Rule("always-grant"), Rule("exit-after", str(n))])
