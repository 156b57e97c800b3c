"""The two session nets: ENS (prepare and send) and ENR (receive and work on).

The figures that carried the arc relations are not available, so the
topology below is a reconstruction. It uses every declared place, puts the
decisions on the transitions the model names, logs after each action, and
ciphers before anything leaves the workstation.

ENS::

    t1  bp1 -> b1                      request access
    t2  b1  -> b2 | b3          (br1)  verify rights / crypto server
    t3  b2  -> b4 | b5          (br2)  request SecMail
    t4  b4  -> b6                      log session
    t5  b6  -> b7                      select recipients
    t6  b7  -> b8                      log selection
    t7  b8  -> b9                      cipher
    t8  b9  -> b10                     archive
    t9  b10 -> b11                     log archive
    t10 b11 -> b12                     send
    t11 b12 -> b13 | b14        (br3)  compose another / exit
    t12 b13 -> b15                     select + cipher + archive (loop pass)
    t13 b15 -> b12                     send (loop pass)
    t14 b3,b5 -> b14 | b1       (br4)  exit / retry

ENR::

    t1  bp1 -> b1                      request access
    t2  b1  -> b2 | b3          (br1)  verify rights / crypto server
    t3  b2  -> b4                      poll mailbox
    t4  b4  -> b5 | b6          (br2)  request SecMail
    t5  b5  -> b7                      log session
    t6  b7  -> b8   processed == 0     select first message
    t9  b8  -> b9                      receive secured e-mail
    t7  b9  -> b10                     log processed
    t12 b10 -> b11 | b7         (br5)  exit / continue
    t11 b7  -> b8   processed > 0 and pending nonempty   select next
    t8  b3  -> b11 | b1         (br3)  exit / retry
    t10 b6  -> b11 | b4         (br4)  exit / retry
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .analysis import Abstraction, Valuation
from .enet import (FiringContext, Guard, NetDefinition, PlaceKind, PlaceSpec, Procedure,
                   decision, simple)
from .services import Action, Environment, SecuredMessage, VerifyError

GRANT_DENY = ("grant", "deny")
EXIT_RETRY = ("exit", "retry")


@dataclass
class OutgoingMessage:
    recipients: list[str]
    subject: bytes
    body: bytes
    attachment: bytes = b""


@dataclass
class Session:
    """What a running session net sees as its environment."""
    user: str
    env: Environment
    messages: list[OutgoingMessage] = field(default_factory=list)


def _places(peripheral: list[str], resolution: list[str], general: list[str],
            terminal: str) -> tuple[PlaceSpec, ...]:
    return (tuple(PlaceSpec(p, PlaceKind.PERIPHERAL) for p in peripheral)
            + tuple(PlaceSpec(p, PlaceKind.RESOLUTION) for p in resolution)
            + tuple(PlaceSpec(p, PlaceKind.GENERAL, p == terminal) for p in general))


def build_ens() -> NetDefinition:
    places = _places(["bp1"], [f"br{i}" for i in range(1, 5)],
                     [f"b{i}" for i in range(1, 16)], terminal="b14")
    transitions = (
        simple("t1", "bp1", "b1", "ens.request_access"),
        decision("t2", "b1", ["b2", "b3"], "br1", "ens.verify_rights", GRANT_DENY),
        decision("t3", "b2", ["b4", "b5"], "br2", "ens.request_secmail", GRANT_DENY),
        simple("t4", "b4", "b6", "ens.log_session"),
        simple("t5", "b6", "b7", "ens.select_recipients"),
        simple("t6", "b7", "b8", "ens.log_selection"),
        simple("t7", "b8", "b9", "ens.cipher"),
        simple("t8", "b9", "b10", "ens.archive"),
        simple("t9", "b10", "b11", "ens.log_archive"),
        simple("t10", "b11", "b12", "ens.send"),
        decision("t11", "b12", ["b13", "b14"], "br3", "ens.exit", ("another", "exit")),
        simple("t12", "b13", "b15", "ens.prepare_followup"),
        simple("t13", "b15", "b12", "ens.send_followup"),
        decision("t14", ["b3", "b5"], ["b14", "b1"], "br4", "ens.exit", EXIT_RETRY),
    )
    return NetDefinition("ENS", places, transitions, {"bp1": {}})


def build_enr() -> NetDefinition:
    places = _places(["bp1"], [f"br{i}" for i in range(1, 6)],
                     [f"b{i}" for i in range(1, 12)], terminal="b11")
    first = Guard.of(("processed", "==", 0))
    more = Guard.of(("processed", ">", 0), ("pending", "nonempty"))
    transitions = (
        simple("t1", "bp1", "b1", "enr.request_access"),
        decision("t2", "b1", ["b2", "b3"], "br1", "enr.verify_rights", GRANT_DENY),
        simple("t3", "b2", "b4", "enr.poll_mailbox"),
        decision("t4", "b4", ["b5", "b6"], "br2", "enr.request_secmail", GRANT_DENY),
        simple("t5", "b5", "b7", "enr.log_session"),
        simple("t6", "b7", "b8", "enr.select_first", guard=first),
        simple("t7", "b9", "b10", "enr.log_processed"),
        decision("t8", "b3", ["b11", "b1"], "br3", "enr.exit", EXIT_RETRY),
        simple("t9", "b8", "b9", "enr.receive_secured"),
        decision("t10", "b6", ["b11", "b4"], "br4", "enr.exit", EXIT_RETRY),
        simple("t11", "b7", "b8", "enr.select_next", guard=more),
        decision("t12", "b10", ["b11", "b7"], "br5", "enr.exit", ("exit", "continue")),
    )
    domains = {"processed": (0, 1, 2, 3), "pending": ([], ["h"])}
    return NetDefinition("ENR", places, transitions, {"bp1": {}}, domains)


# -- procedures

def _audit(ctx: FiringContext, attrs: dict, action: Action, message_no: int | None = None,
           detail: str = "") -> None:
    ctx.env.env.audit.append(attrs["user"], action, message_no, detail)


def request_access(attrs: dict, ctx: FiringContext) -> None:
    s: Session = ctx.env
    s.env.user(s.user)
    attrs.update(user=s.user, requested_at=s.env.clock.tick(), granted=False, secmail=False)


def ens_request_access(attrs: dict, ctx: FiringContext) -> None:
    request_access(attrs, ctx)
    attrs.update(remaining=len(ctx.env.messages), sent_count=0, recipients=[])


def enr_request_access(attrs: dict, ctx: FiringContext) -> None:
    request_access(attrs, ctx)
    attrs.update(pending=[], processed=0)


def verify_rights(attrs: dict, ctx: FiringContext) -> None:
    env: Environment = ctx.env.env
    user = attrs["user"]
    if ctx.label == "grant" and not env.peek_access(user).allowed:
        raise PermissionError(f"access control denies {user}; resolution cannot grant it")
    result = env.authenticate(user)
    if ctx.label == "deny" and result.allowed:
        env.audit.append(user, Action.ACCESS_DENIED, detail="denied by resolution")
    attrs["granted"] = ctx.label == "grant"


def request_secmail(attrs: dict, ctx: FiringContext) -> None:
    env: Environment = ctx.env.env
    user = attrs["user"]
    if ctx.label == "grant" and not env.peek_secmail(user):
        raise PermissionError(f"SecMail refuses {user}; resolution cannot grant it")
    ok = env.request_secmail(user)
    if ctx.label == "deny" and ok:
        env.audit.append(user, Action.SECMAIL_REFUSED, detail="refused by resolution")
    attrs["secmail"] = ctx.label == "grant"


def log_session(attrs: dict, ctx: FiringContext) -> None:
    _audit(ctx, attrs, Action.SESSION_OPENED)


def exit_session(attrs: dict, ctx: FiringContext) -> None:
    if ctx.label == "exit":
        _audit(ctx, attrs, Action.SESSION_CLOSED)


def select_recipients(attrs: dict, ctx: FiringContext) -> None:
    messages = ctx.env.messages
    remaining = attrs.get("remaining", 0)
    if remaining <= 0:
        raise LookupError("no scripted message left to prepare")
    msg = messages[len(messages) - remaining]
    if not msg.recipients:
        raise ValueError("empty recipients")
    attrs.update(recipients=list(msg.recipients), subject=msg.subject, body=msg.body,
                 attachment=msg.attachment, remaining=remaining - 1)


def log_selection(attrs: dict, ctx: FiringContext) -> None:
    _audit(ctx, attrs, Action.RECIPIENTS_SELECTED, detail="to=" + ",".join(attrs["recipients"]))


def cipher(attrs: dict, ctx: FiringContext) -> None:
    sealed = ctx.env.env.seal(attrs["user"], attrs["recipients"], attrs["subject"],
                              attrs["body"], attrs["attachment"])
    attrs.update(message_no=sealed[0].message_no,
                 sealed=[m.to_bytes() for m in sealed],
                 tags=[m.tag for m in sealed],
                 signatures=[m.signature for m in sealed])


def archive(attrs: dict, ctx: FiringContext) -> None:
    store = ctx.env.env.archive
    attrs["archived"] = [store.store(SecuredMessage.from_bytes(b)) for b in attrs["sealed"]]


def log_archive(attrs: dict, ctx: FiringContext) -> None:
    _audit(ctx, attrs, Action.MESSAGE_ARCHIVED, attrs["message_no"],
           "to=" + ",".join(attrs["recipients"]) + " handles=" + ",".join(attrs["archived"]))


def send(attrs: dict, ctx: FiringContext) -> None:
    transport = ctx.env.env.transport
    for blob in attrs["sealed"]:
        transport.send(SecuredMessage.from_bytes(blob))
    attrs["sent_count"] = attrs.get("sent_count", 0) + 1
    _audit(ctx, attrs, Action.MESSAGE_SENT, attrs["message_no"],
           "to=" + ",".join(attrs["recipients"]))


def prepare_followup(attrs: dict, ctx: FiringContext) -> None:
    """Loop-pass aggregate of select, log, cipher, archive and log."""
    select_recipients(attrs, ctx)
    registry = ctx.env.env.registry
    for r in attrs["recipients"]:
        registry.pair_key(attrs["user"], r)  # fail before anything is logged
    log_selection(attrs, ctx)
    cipher(attrs, ctx)
    archive(attrs, ctx)
    log_archive(attrs, ctx)


def poll_mailbox(attrs: dict, ctx: FiringContext) -> None:
    attrs["pending"] = list(attrs.get("pending", [])) + ctx.env.env.transport.poll(attrs["user"])


_CURRENT = ("current", "current_sender", "current_no", "subject", "body", "attachment",
            "last_error")


def select_message(attrs: dict, ctx: FiringContext) -> None:
    for name in _CURRENT:
        attrs.pop(name, None)
    pending = list(attrs.get("pending", []))
    if pending:
        handle = pending.pop(0)
        header = ctx.env.env.transport.fetch(handle)
        attrs.update(current=handle, current_sender=header.sender, current_no=header.message_no)
    attrs["pending"] = pending


def receive_secured(attrs: dict, ctx: FiringContext) -> None:
    handle = attrs.get("current")
    if handle is None:
        return
    env: Environment = ctx.env.env
    msg = env.transport.fetch(handle)
    try:
        subject, body, attachment = env.open(msg)
    except VerifyError as exc:
        attrs["last_error"] = exc.code
        _audit(ctx, attrs, Action.MESSAGE_REJECTED, msg.message_no,
               f"from={msg.sender} error={exc.code}")
    else:
        attrs.pop("last_error", None)
        attrs.update(subject=subject, body=body, attachment=attachment)
    attrs["processed"] = attrs.get("processed", 0) + 1


def log_processed(attrs: dict, ctx: FiringContext) -> None:
    if "current" in attrs and "last_error" not in attrs:
        _audit(ctx, attrs, Action.MESSAGE_PROCESSED, attrs["current_no"],
               f"from={attrs['current_sender']}")


PROCEDURES: dict[str, Procedure] = {
    "ens.request_access": ens_request_access,
    "ens.verify_rights": verify_rights,
    "ens.request_secmail": request_secmail,
    "ens.log_session": log_session,
    "ens.select_recipients": select_recipients,
    "ens.log_selection": log_selection,
    "ens.cipher": cipher,
    "ens.archive": archive,
    "ens.log_archive": log_archive,
    "ens.send": send,
    "ens.prepare_followup": prepare_followup,
    "ens.send_followup": send,
    "ens.exit": exit_session,
    "enr.request_access": enr_request_access,
    "enr.verify_rights": verify_rights,
    "enr.poll_mailbox": poll_mailbox,
    "enr.request_secmail": request_secmail,
    "enr.log_session": log_session,
    "enr.select_first": select_message,
    "enr.select_next": select_message,
    "enr.receive_secured": receive_secured,
    "enr.log_processed": log_processed,
    "enr.exit": exit_session,
}


# -- abstractions for the marking graph

def ens_abstraction() -> Abstraction:
    return Abstraction()


EMPTY, SOME = (), ("h",)


def _enr_alpha(attrs) -> Valuation:
    return {
        "processed": 1 if attrs.get("processed", 0) > 0 else 0,
        "pending": SOME if attrs.get("pending") else EMPTY,
        "current": "current" in attrs,
    }


def _either_pending(v: Valuation) -> list[Valuation]:
    return [{**v, "pending": EMPTY}, {**v, "pending": SOME}]


def _enr_poll(v: Valuation, _d) -> list[Valuation]:
    return [v] if v["pending"] else _either_pending(v)


def _enr_select(v: Valuation, _d) -> list[Valuation]:
    if v["pending"]:
        return _either_pending({**v, "current": True})
    return [{**v, "current": False}]


def _enr_receive(v: Valuation, _d) -> list[Valuation]:
    return [{**v, "processed": 1}] if v["current"] else [v]


def _enr_reset(v: Valuation, _d) -> list[Valuation]:
    return [{"processed": 0, "pending": EMPTY, "current": False}]


def enr_abstraction() -> Abstraction:
    """processed in {0, >0}, pending in {empty, nonempty}, whether a message is selected.

    Continuing from br5 is only legal while messages are pending.
    """
    return Abstraction(
        variables={"processed": (0, 1), "pending": (EMPTY, SOME), "current": (False, True)},
        alpha=_enr_alpha,
        effects={"t1": _enr_reset, "t3": _enr_poll, "t6": _enr_select, "t11": _enr_select,
                 "t9": _enr_receive},
        decision_guards={("t12", 1): Guard.of(("pending", "nonempty"))},
    )


BUILTIN: dict[str, tuple[Callable[[], NetDefinition], Callable[[], Abstraction]]] = {
    "ENS": (build_ens, ens_abstraction),
    "ENR": (build_enr, enr_abstraction),
}


def builtin_net(name: str) -> NetDefinition:
    try:
        return BUILTIN[name.upper()][0]()
    except KeyError:
        raise KeyError(f"no built-in net {name!r}; choose ENS or ENR") from None


def abstraction_for(net: NetDefinition) -> Abstraction:
    """Hand-written abstraction for the canonical nets, domain havoc otherwise."""
    entry = BUILTIN.get(net.name)
    if entry is not None and entry[0]() == net:
        return entry[1]()
    return Abstraction.from_domains(net)
