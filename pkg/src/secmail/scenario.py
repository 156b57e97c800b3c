"""Scenario files: loading, validation and execution against one environment.

A scenario is a JSON document::

    {
      "name": "happy_path", "seed": 1, "max_steps": 10000,
      "users": [{"id": "alice", "access": true, "crypto_server": true,
                 "secmail": true, "sign_key": "..."}],
      "keys": [{"sender": "alice", "recipient": "bob", "key": "..."}],
      "sessions": [
        {"net": "ENS", "user": "alice", "policy": "auto",
         "script": {"br3": ["another", "exit"]},
         "messages": [{"to": ["bob"], "subject": "...", "body": "...",
                       "attachment": ""}]},
        {"net": "ENR", "user": "bob", "policy": "auto"}
      ],
      "tamper": [{"sender": "alice", "message_no": 1, "field": "body_ct",
                  "index": 0, "mask": 1}]
    }

Byte-valued fields accept a UTF-8 string or ``{"hex": "..."}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import netfile
from .enet import DEFAULT_MAX_STEPS, DecisionRequest, EnetError, NetDefinition, Run, TraceEvent
from .nets import PROCEDURES, OutgoingMessage, Session, builtin_net
from .policies import PolicyError, SymbolicPolicy
from .services import Environment, SecuredMessage, TamperRule, Transport, UserRecord


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line} column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


class ValidationError(ScenarioError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class UserSeed:
    id: str
    access: bool = True
    crypto_server: bool = True
    secmail: bool = True
    sign_key: bytes = b""


@dataclass
class SessionSpec:
    net: str
    user: str
    policy: list[str] = field(default_factory=lambda: ["auto"])
    script: dict[str, list[str | int]] = field(default_factory=dict)
    messages: list[OutgoingMessage] = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    users: list[UserSeed]
    keys: dict[tuple[str, str], bytes]
    sessions: list[SessionSpec]
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    tamper: list[TamperRule] = field(default_factory=list)

    def environment(self) -> Environment:
        env = Environment(transport=Transport(self.tamper))
        for u in self.users:
            env.add_user(UserRecord(u.id, u.access, u.crypto_server, u.secmail, u.sign_key))
        for (sender, recipient), key in sorted(self.keys.items()):
            env.registry.add_pair(sender, recipient, key)
        return env

    def plaintexts(self) -> list[bytes]:
        return [part for s in self.sessions for m in s.messages
                for part in (m.subject, m.body, m.attachment)]


# -- parsing

def _bytes(value: Any, where: str) -> bytes:
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, dict) and set(value) == {"hex"}:
        try:
            return bytes.fromhex(value["hex"])
        except ValueError as exc:
            raise ValidationError(where, f"bad hex: {exc}") from None
    raise ValidationError(where, "expected a string or {\"hex\": ...}")


def _bool(doc: Mapping, key: str, where: str, default: bool = True) -> bool:
    value = doc.get(key, default)
    if not isinstance(value, bool):
        raise ValidationError(f"{where}.{key}", "expected true or false")
    return value


def _str(doc: Mapping, key: str, where: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{where}.{key}", "expected a non-empty string")
    return value


def scenario_from_doc(doc: Any, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ValidationError("scenario", "top level must be an object")
    users = []
    for i, u in enumerate(doc.get("users", [])):
        where = f"users[{i}]"
        sign_key = _bytes(u["sign_key"], f"{where}.sign_key") if "sign_key" in u else b""
        users.append(UserSeed(_str(u, "id", where), _bool(u, "access", where),
                              _bool(u, "crypto_server", where), _bool(u, "secmail", where),
                              sign_key))
    keys = {}
    for i, k in enumerate(doc.get("keys", [])):
        where = f"keys[{i}]"
        pair = (_str(k, "sender", where), _str(k, "recipient", where))
        if pair in keys:
            raise ValidationError(where, f"duplicate key for {pair[0]}->{pair[1]}")
        keys[pair] = _bytes(k.get("key"), f"{where}.key")
    sessions = []
    for i, s in enumerate(doc.get("sessions", [])):
        where = f"sessions[{i}]"
        policy = s.get("policy", "auto")
        rules = [r for r in policy.split("+")] if isinstance(policy, str) else list(policy)
        messages = []
        for j, m in enumerate(s.get("messages", [])):
            mw = f"{where}.messages[{j}]"
            to = m.get("to", [])
            if isinstance(to, str):
                to = [to]
            messages.append(OutgoingMessage(list(to), _bytes(m.get("subject", ""), f"{mw}.subject"),
                                            _bytes(m.get("body", ""), f"{mw}.body"),
                                            _bytes(m.get("attachment", ""), f"{mw}.attachment")))
        script = s.get("script", {})
        if not isinstance(script, dict):
            raise ValidationError(f"{where}.script", "expected an object of place -> decisions")
        sessions.append(SessionSpec(_str(s, "net", where).upper(), _str(s, "user", where), rules,
                                    {p: list(v) for p, v in script.items()}, messages))
    tamper = []
    for i, t in enumerate(doc.get("tamper", [])):
        where = f"tamper[{i}]"
        try:
            tamper.append(TamperRule(_str(t, "sender", where), int(t["message_no"]),
                                     _str(t, "field", where), int(t.get("index", 0)),
                                     t.get("recipient"), int(t.get("mask", 1))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(where, f"bad tamper rule: {exc}") from None
    seed = doc.get("seed", 0)
    max_steps = doc.get("max_steps", DEFAULT_MAX_STEPS)
    if not isinstance(seed, int):
        raise ValidationError("seed", "expected an integer")
    if not isinstance(max_steps, int) or max_steps < 1:
        raise ValidationError("max_steps", "expected a positive integer")
    scenario = Scenario(doc.get("name", name), users, keys, sessions, seed, max_steps, tamper)
    validate_scenario(scenario)
    return scenario


def validate_scenario(sc: Scenario) -> None:
    ids = [u.id for u in sc.users]
    declared = set(ids)
    for u in ids:
        if ids.count(u) > 1:
            raise ValidationError("users", f"duplicate user {u!r}")
    for (sender, recipient), key in sc.keys.items():
        for who in (sender, recipient):
            if who not in declared:
                raise ValidationError("keys", f"undeclared user {who!r}")
        if not key:
            raise ValidationError("keys", f"empty key for {sender}->{recipient}")
    signers = {u.id for u in sc.users if u.sign_key}
    for i, s in enumerate(sc.sessions):
        where = f"sessions[{i}]"
        if s.net not in ("ENS", "ENR"):
            raise ValidationError(f"{where}.net", f"unknown net {s.net!r}")
        if s.user not in declared:
            raise ValidationError(f"{where}.user", f"undeclared user {s.user!r}")
        try:
            SymbolicPolicy.from_spec(s.policy, s.script, sc.seed)
        except PolicyError as exc:
            raise ValidationError(f"{where}.policy", str(exc)) from None
        net = builtin_net(s.net)
        by_place = {t.resolution_place: t for t in net.transitions if t.resolution_place}
        for place, answers in s.script.items():
            t = by_place.get(place)
            if t is None:
                raise ValidationError(f"{where}.script", f"{s.net} has no resolution place {place!r}")
            for a in answers:
                try:
                    t.label_index(a)
                except EnetError as exc:
                    raise ValidationError(f"{where}.script.{place}", str(exc)) from None
        if s.net == "ENR" and s.messages:
            raise ValidationError(f"{where}.messages", "ENR sessions do not send messages")
        if s.messages and s.user not in signers:
            raise ValidationError(f"users.{s.user}.sign_key", "sender has no signing key")
        for j, m in enumerate(s.messages):
            mw = f"{where}.messages[{j}]"
            if not m.recipients:
                raise ValidationError(f"{mw}.to", "empty recipients")
            for r in m.recipients:
                if r not in declared:
                    raise ValidationError(f"{mw}.to", f"undeclared recipient {r!r}")
                if (s.user, r) not in sc.keys:
                    raise ValidationError(f"{mw}.to", f"no pair key {s.user}->{r}")
    for i, t in enumerate(sc.tamper):
        if t.field not in SecuredMessage.CIPHER_FIELDS:
            raise ValidationError(f"tamper[{i}].field", f"not a ciphertext field: {t.field!r}")
        if t.index < 0:
            raise ValidationError(f"tamper[{i}].index", "must be >= 0")
        if not t.mask & 0xFF:
            raise ValidationError(f"tamper[{i}].mask", "must flip at least one bit")
    _dry_run(sc)


class _ContinueOnEmpty(Exception):
    pass


def _checked(policy: SymbolicPolicy):
    def decide(request: DecisionRequest):
        answer = policy(request)
        t = request.transition
        if "continue" in t.labels and t.label_index(answer) == t.labels.index("continue") \
                and not request.attributes.get("pending"):
            raise _ContinueOnEmpty(t.resolution_place)
        return answer
    return decide


def _dry_run(sc: Scenario) -> None:
    """Pre-run the sessions in order to reject scripts that cannot play out."""
    env = sc.environment()
    for i, spec in enumerate(sc.sessions):
        run = _make_run(sc, spec, env, sc.max_steps)
        run.policy = _checked(run.policy)  # type: ignore[arg-type]
        try:
            run.run()
        except _ContinueOnEmpty as exc:
            raise ValidationError(f"sessions[{i}].script.{exc.args[0]}",
                                  "continue with empty pending") from None
        except EnetError as exc:
            raise ValidationError(f"sessions[{i}]", str(exc)) from None
        except IndexError:
            raise ValidationError("tamper", "byte index outside the ciphertext field") from None


def _make_run(sc: Scenario, spec: SessionSpec, env: Environment, max_steps: int) -> Run:
    net = builtin_net(spec.net)
    policy = SymbolicPolicy.from_spec(spec.policy, spec.script, sc.seed)
    session = Session(spec.user, env, list(spec.messages))
    return Run(net, policy, session, PROCEDURES, max_steps)


BUNDLED = ("happy_path", "deny_access", "secmail_refused", "multi_message", "tampered",
           "receive_loop")


def bundled_path(name: str) -> Path:
    ref = resources.files("secmail").joinpath("scenarios", f"{name}.json")
    return Path(str(ref))


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    """Load and validate a scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if seed is not None and isinstance(doc, dict):
        doc = {**doc, "seed": seed}
    try:
        return scenario_from_doc(doc, p.stem)
    except KeyError as exc:
        raise ValidationError("scenario", f"missing field {exc}") from None


# -- execution

@dataclass
class SessionResult:
    index: int
    net: str
    user: str
    outcome: str
    trace: list[TraceEvent]
    final_places: list[str]
    error: str | None = None
    audit_span: tuple[int, int] | None = None  # seq range, sequential runs only

    @property
    def ok(self) -> bool:
        return self.outcome == "TERMINATED"


@dataclass
class ScenarioResult:
    scenario: Scenario
    env: Environment
    sessions: list[SessionResult]

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.sessions)


def run_scenario(sc: Scenario, interleave: bool = False, max_steps: int | None = None,
                 env: Environment | None = None) -> ScenarioResult:
    env = env or sc.environment()
    limit = max_steps if max_steps is not None else sc.max_steps
    specs = list(enumerate(sc.sessions))
    runs: dict[int, Run] = {}
    errors: dict[int, str] = {}
    spans: dict[int, tuple[int, int]] = {}

    def advance(i: int) -> None:
        try:
            runs[i].step()
        except (EnetError, IndexError) as exc:
            errors[i] = str(exc)

    if interleave:
        for i, spec in specs:
            runs[i] = _make_run(sc, spec, env, limit)
        active = [i for i, _ in specs]
        while active:
            for i in list(active):
                advance(i)
                if runs[i].done or i in errors:
                    active.remove(i)
    else:
        for i, spec in specs:
            runs[i] = _make_run(sc, spec, env, limit)
            first = len(env.audit) + 1
            while not runs[i].done and i not in errors:
                advance(i)
            spans[i] = (first, len(env.audit))

    results = []
    for i, spec in specs:
        run = runs[i]
        outcome = "PROCEDURE_FAILURE" if i in errors else run.outcome.value  # type: ignore[union-attr]
        results.append(SessionResult(i, spec.net, spec.user, outcome, list(run.trace),
                                     run.marking.occupied, errors.get(i), spans.get(i)))
    return ScenarioResult(sc, env, results)


# -- output files

def event_to_line(event: TraceEvent) -> str:
    return json.dumps({
        "seq": event.seq,
        "transition": event.transition,
        "consumed": event.consumed,
        "produced": event.produced,
        "decision": event.decision,
        "kernel": event.kernel,
        "attributes": netfile.encode_value(event.attributes),
    }, sort_keys=True)


def event_from_line(line: str) -> TraceEvent:
    row = json.loads(line)
    return TraceEvent(row["seq"], row["transition"], row["consumed"], row["produced"],
                      row["decision"], row["kernel"], netfile.decode_value(row["attributes"]))


def trace_filename(s: SessionResult) -> str:
    return f"{s.index + 1:02d}-{s.net}-{s.user}.jsonl"


def write_outputs(result: ScenarioResult, out: str | Path) -> None:
    out = Path(out)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    for s in result.sessions:
        (traces / trace_filename(s)).write_text(
            "".join(event_to_line(e) + "\n" for e in s.trace), encoding="utf-8")
    (out / "audit.jsonl").write_text(result.env.audit.export_lines(), encoding="utf-8")
    (out / "archive.jsonl").write_text(result.env.archive.export_lines(), encoding="utf-8")
    summary = {
        "scenario": result.scenario.name,
        "seed": result.scenario.seed,
        "ok": result.ok,
        "sessions": [
            {"index": s.index, "net": s.net, "user": s.user, "outcome": s.outcome,
             "steps": len(s.trace), "final_places": s.final_places, "error": s.error,
             "transitions": [e.transition for e in s.trace]}
            for s in result.sessions
        ],
        "audit_records": len(result.env.audit),
        "archived": len(result.env.archive),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def read_traces(directory: str | Path) -> dict[str, list[TraceEvent]]:
    d = Path(directory)
    if not d.is_dir():
        return {}
    out = {}
    for path in sorted(d.glob("*.jsonl")):
        lines = path.read_text(encoding="utf-8").splitlines()
        out[path.name] = [event_from_line(line) for line in lines if line.strip()]
    return out


def load_net(spec: str) -> NetDefinition:
    """A built-in net name (ens/enr) or a path to a net file."""
    if spec.upper() in ("ENS", "ENR"):
        return builtin_net(spec)
    return netfile.load(spec)


def iter_payloads(env: Environment) -> Iterable[bytes]:
    yield from env.transport.payloads()
    for _, msg in env.archive.items():
        yield msg.to_bytes()

