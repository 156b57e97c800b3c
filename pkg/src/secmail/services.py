"""Simulated CSSW environment shared by every session of a scenario.

Each shared service (audit log, archive, key registry, transport) serializes
its mutations behind its own lock, so runs driven from different threads
still see a linearizable history. Time is a logical counter.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator

from . import crypto


class ServiceError(Exception):
    pass


class UnknownUser(ServiceError):
    def __init__(self, user: str):
        super().__init__(f"unknown user {user!r}")
        self.user = user


class UnknownPair(ServiceError):
    def __init__(self, sender: str, recipient: str):
        super().__init__(f"no pair key for {sender!r} -> {recipient!r}")
        self.sender = sender
        self.recipient = recipient


class UnknownHandle(ServiceError):
    def __init__(self, handle: str):
        super().__init__(f"unknown handle {handle!r}")
        self.handle = handle


class VerifyError(ServiceError):
    TAG_MISMATCH = "TAG_MISMATCH"
    BAD_SIGNATURE = "BAD_SIGNATURE"

    def __init__(self, code: str):
        super().__init__(code)
        self.code = code


class Action(str, Enum):
    SESSION_OPENED = "SESSION_OPENED"
    RECIPIENTS_SELECTED = "RECIPIENTS_SELECTED"
    MESSAGE_ARCHIVED = "MESSAGE_ARCHIVED"
    MESSAGE_SENT = "MESSAGE_SENT"
    MESSAGE_PROCESSED = "MESSAGE_PROCESSED"
    MESSAGE_REJECTED = "MESSAGE_REJECTED"
    SESSION_CLOSED = "SESSION_CLOSED"
    ACCESS_DENIED = "ACCESS_DENIED"
    SECMAIL_REFUSED = "SECMAIL_REFUSED"


class LogicalClock:
    def __init__(self) -> None:
        self._now = 0
        self._lock = threading.Lock()

    def tick(self) -> int:
        with self._lock:
            self._now += 1
            return self._now

    @property
    def now(self) -> int:
        return self._now


@dataclass
class UserRecord:
    id: str
    access: bool = True
    crypto_server_up: bool = True
    secmail: bool = True
    sign_key: bytes = b""
    send_counter: int = 0


@dataclass(frozen=True)
class AccessDecision:
    granted: bool
    crypto_server_up: bool

    @property
    def allowed(self) -> bool:
        return self.granted and self.crypto_server_up


class KeyRegistry:
    """Static key store; distribution and rotation are not modeled."""

    def __init__(self, pair_keys: dict[tuple[str, str], bytes] | None = None,
                 sign_keys: dict[str, bytes] | None = None):
        self._pairs: dict[tuple[str, str], bytes] = {}
        self._sign: dict[str, bytes] = {}
        self._lock = threading.Lock()
        for (sender, recipient), key in (pair_keys or {}).items():
            self.add_pair(sender, recipient, key)
        for user, key in (sign_keys or {}).items():
            self.add_sign_key(user, key)

    def add_pair(self, sender: str, recipient: str, key: bytes) -> None:
        if not key:
            raise ValueError(f"empty pair key for {sender}->{recipient}")
        with self._lock:
            self._pairs[(sender, recipient)] = bytes(key)

    def add_sign_key(self, user: str, key: bytes) -> None:
        if not key:
            raise ValueError(f"empty signing key for {user}")
        with self._lock:
            self._sign[user] = bytes(key)

    def pair_key(self, sender: str, recipient: str) -> bytes:
        try:
            return self._pairs[(sender, recipient)]
        except KeyError:
            raise UnknownPair(sender, recipient) from None

    def has_pair(self, sender: str, recipient: str) -> bool:
        return (sender, recipient) in self._pairs

    def sign_key(self, user: str) -> bytes:
        try:
            return self._sign[user]
        except KeyError:
            raise UnknownUser(user) from None

    def keys(self) -> Iterator[bytes]:
        yield from self._pairs.values()
        yield from self._sign.values()


@dataclass(frozen=True)
class SecuredMessage:
    message_no: int
    sender: str
    recipient: str
    subject_ct: bytes
    body_ct: bytes
    attachment_ct: bytes
    tag: int
    signature: int

    CIPHER_FIELDS = ("subject_ct", "body_ct", "attachment_ct")

    def to_bytes(self) -> bytes:
        """Wire encoding: length-prefixed fields, little-endian integers."""
        out = [struct.pack("<Q", self.message_no)]
        for part in (self.sender.encode(), self.recipient.encode(),
                     self.subject_ct, self.body_ct, self.attachment_ct):
            out.append(struct.pack("<I", len(part)))
            out.append(part)
        out.append(struct.pack("<QQ", self.tag, self.signature))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecuredMessage":
        (message_no,) = struct.unpack_from("<Q", data, 0)
        offset = 8
        parts = []
        for _ in range(5):
            (n,) = struct.unpack_from("<I", data, offset)
            offset += 4
            parts.append(bytes(data[offset:offset + n]))
            offset += n
        tag, signature = struct.unpack_from("<QQ", data, offset)
        if offset + 16 != len(data):
            raise ValueError("trailing bytes in secured message")
        return cls(message_no, parts[0].decode(), parts[1].decode(),
                   parts[2], parts[3], parts[4], tag, signature)

    def to_hex_dump(self) -> dict:
        return {
            "message_no": self.message_no,
            "sender": self.sender,
            "recipient": self.recipient,
            "subject_ct": self.subject_ct.hex(),
            "body_ct": self.body_ct.hex(),
            "attachment_ct": self.attachment_ct.hex(),
            "tag": f"{self.tag:016x}",
            "signature": f"{self.signature:016x}",
        }

    def flip(self, field_name: str, index: int, mask: int = 0x01) -> "SecuredMessage":
        """Copy with one ciphertext byte XORed by `mask` (tamper injection)."""
        if field_name not in self.CIPHER_FIELDS:
            raise ValueError(f"not a ciphertext field: {field_name}")
        if not mask & 0xFF:
            raise ValueError("mask must change the byte")
        data = bytearray(getattr(self, field_name))
        data[index] ^= mask & 0xFF
        return replace(self, **{field_name: bytes(data)})


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: int
    actor: str
    action: Action
    message_no: int | None = None
    detail: str = ""

    FIELDS = ("seq", "timestamp", "actor", "action", "message_no", "detail")

    def to_line(self) -> str:
        row = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "actor": self.actor,
            "action": self.action.value,
            "message_no": self.message_no,
            "detail": self.detail,
        }
        return json.dumps(row, ensure_ascii=False)

    @classmethod
    def from_line(cls, line: str) -> "AuditRecord":
        row = json.loads(line)
        return cls(int(row["seq"]), int(row["timestamp"]), row["actor"],
                   Action(row["action"]), row.get("message_no"), row.get("detail", ""))


class AuditLog:
    """Append-only, gapless-numbered log of accomplished actions."""

    def __init__(self, clock: LogicalClock | None = None):
        self._clock = clock or LogicalClock()
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def append(self, actor: str, action: Action | str, message_no: int | None = None,
               detail: str = "") -> AuditRecord:
        action = Action(action)
        with self._lock:
            record = AuditRecord(len(self._records) + 1, self._clock.tick(), actor,
                                 action, message_no, detail)
            self._records.append(record)
        return record

    def query(self, *, actor: str | None = None, action: Action | str | None = None,
              message_no: int | None = None,
              seq_range: tuple[int, int] | None = None) -> list[AuditRecord]:
        action = Action(action) if action is not None else None
        out = []
        for r in list(self._records):
            if actor is not None and r.actor != actor:
                continue
            if action is not None and r.action is not action:
                continue
            if message_no is not None and r.message_no != message_no:
                continue
            if seq_range is not None and not seq_range[0] <= r.seq <= seq_range[1]:
                continue
            out.append(r)
        return out

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[AuditRecord]:
        return iter(list(self._records))

    def export_lines(self) -> str:
        return "".join(r.to_line() + "\n" for r in self._records)


class Archive:
    """Message database holding sealed (ciphertext-only) records."""

    def __init__(self) -> None:
        self._store: dict[str, SecuredMessage] = {}
        self._lock = threading.Lock()

    def store(self, msg: SecuredMessage) -> str:
        if msg.message_no < 1:
            raise ValueError("archived messages must be numbered")
        with self._lock:
            handle = f"a{len(self._store) + 1:05d}"
            self._store[handle] = msg
        return handle

    def get(self, handle: str) -> SecuredMessage:
        try:
            return self._store[handle]
        except KeyError:
            raise UnknownHandle(handle) from None

    def items(self) -> list[tuple[str, SecuredMessage]]:
        return list(self._store.items())

    def __len__(self) -> int:
        return len(self._store)

    def export_lines(self) -> str:
        lines = []
        for handle, msg in self._store.items():
            lines.append(json.dumps({"handle": handle, **msg.to_hex_dump()}) + "\n")
        return "".join(lines)


@dataclass(frozen=True)
class TamperRule:
    """Flip one ciphertext byte of a matching message while in transit."""
    sender: str
    message_no: int
    field: str
    index: int
    recipient: str | None = None
    mask: int = 0x01

    def matches(self, msg: SecuredMessage) -> bool:
        return (msg.sender == self.sender and msg.message_no == self.message_no
                and (self.recipient is None or msg.recipient == self.recipient))


class Transport:
    """Lossless in-memory mail transport with FIFO mailboxes per recipient."""

    def __init__(self, tamper: Iterable[TamperRule] = ()):
        self._queues: dict[str, list[str]] = {}
        self._in_flight: dict[str, SecuredMessage] = {}
        self._log: list[tuple[str, bytes]] = []
        self._tamper = list(tamper)
        self._lock = threading.Lock()

    def send(self, msg: SecuredMessage) -> str:
        for rule in self._tamper:
            if rule.matches(msg):
                msg = msg.flip(rule.field, rule.index, rule.mask)
        with self._lock:
            handle = f"d{len(self._in_flight) + 1:05d}"
            self._in_flight[handle] = msg
            self._queues.setdefault(msg.recipient, []).append(handle)
            self._log.append((handle, msg.to_bytes()))
        return handle

    def poll(self, recipient: str) -> list[str]:
        with self._lock:
            return self._queues.pop(recipient, [])

    def fetch(self, handle: str) -> SecuredMessage:
        try:
            return self._in_flight[handle]
        except KeyError:
            raise UnknownHandle(handle) from None

    def payloads(self) -> list[bytes]:
        """Every wire payload ever enqueued, in send order."""
        return [payload for _, payload in self._log]


@dataclass
class Environment:
    """The shared service bundle a scenario runs against."""
    users: dict[str, UserRecord] = field(default_factory=dict)
    registry: KeyRegistry = field(default_factory=KeyRegistry)
    clock: LogicalClock = field(default_factory=LogicalClock)
    audit: AuditLog = None  # type: ignore[assignment]
    archive: Archive = field(default_factory=Archive)
    transport: Transport = field(default_factory=Transport)

    def __post_init__(self) -> None:
        if self.audit is None:
            self.audit = AuditLog(self.clock)
        self._counter_lock = threading.Lock()

    def user(self, user_id: str) -> UserRecord:
        try:
            return self.users[user_id]
        except KeyError:
            raise UnknownUser(user_id) from None

    def add_user(self, record: UserRecord) -> None:
        if record.id in self.users:
            raise ValueError(f"duplicate user {record.id!r}")
        self.users[record.id] = record
        if record.sign_key:
            self.registry.add_sign_key(record.id, record.sign_key)

    # -- identification, authentication and user control

    def peek_access(self, user_id: str) -> AccessDecision:
        u = self.user(user_id)
        return AccessDecision(u.access, u.crypto_server_up)

    def authenticate(self, user_id: str) -> AccessDecision:
        decision = self.peek_access(user_id)
        if not decision.allowed:
            reason = "no access rights" if not decision.granted else "local crypto server down"
            self.audit.append(user_id, Action.ACCESS_DENIED, detail=reason)
        return decision

    def peek_secmail(self, user_id: str) -> bool:
        return self.user(user_id).secmail

    def request_secmail(self, user_id: str) -> bool:
        ok = self.peek_secmail(user_id)
        if not ok:
            self.audit.append(user_id, Action.SECMAIL_REFUSED, detail="resource unavailable")
        return ok

    # -- SecMail crypto resource

    def seal(self, sender: str, recipients: list[str], subject: bytes, body: bytes,
             attachment: bytes) -> list[SecuredMessage]:
        """Seal one logical message for each recipient under one message number."""
        if not recipients:
            raise ValueError("empty recipients")
        pair_keys = [self.registry.pair_key(sender, r) for r in recipients]
        sign_key = self.registry.sign_key(sender)
        user = self.user(sender)
        with self._counter_lock:
            user.send_counter += 1
            message_no = user.send_counter
        signature = crypto.sign(sign_key, subject, body, attachment)
        out = []
        for recipient, key in zip(recipients, pair_keys):
            cts = [crypto.encipher(key, part) for part in (subject, body, attachment)]
            out.append(SecuredMessage(message_no, sender, recipient, *cts,
                                      tag=crypto.integrity_tag(key, *cts),
                                      signature=signature))
        return out

    def open(self, msg: SecuredMessage) -> tuple[bytes, bytes, bytes]:
        key = self.registry.pair_key(msg.sender, msg.recipient)
        if crypto.integrity_tag(key, msg.subject_ct, msg.body_ct, msg.attachment_ct) != msg.tag:
            raise VerifyError(VerifyError.TAG_MISMATCH)
        plain = tuple(crypto.decipher(key, ct) for ct in
                      (msg.subject_ct, msg.body_ct, msg.attachment_ct))
        if crypto.sign(self.registry.sign_key(msg.sender), *plain) != msg.signature:
            raise VerifyError(VerifyError.BAD_SIGNATURE)
        return plain  # type: ignore[return-value]


def seal(registry: KeyRegistry, user: UserRecord, recipient: str,
         plaintext: tuple[bytes, bytes, bytes]) -> SecuredMessage:
    """Single-recipient seal against a bare registry; bumps the user's counter."""
    env = Environment(users={user.id: user}, registry=registry)
    return env.seal(user.id, [recipient], *plaintext)[0]


def open_message(registry: KeyRegistry, msg: SecuredMessage) -> tuple[bytes, bytes, bytes]:
    return Environment(registry=registry).open(msg)
