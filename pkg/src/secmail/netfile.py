"""JSON text format for net definitions.

One document per net::

    {"name": ..., "places": [{"id", "kind", "terminal"}],
     "transitions": [{"id", "kind", "inputs": [{"place", "guard"}], "outputs",
                      "resolution_place", "procedure", "labels"}],
     "initial": {"bp1": {...attributes}}, "domains": {"attr": [values]}}

Guards are lists of ``[attr, op]`` or ``[attr, op, value]``. Byte strings in
attribute values are written as ``{"hex": "..."}``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .enet import (Atom, Guard, InputArc, NetDefinition, PlaceKind, PlaceSpec,
                   TransitionKind, TransitionSpec)


class NetFormatError(ValueError):
    pass


def encode_value(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return {"hex": bytes(value).hex()}
    if isinstance(value, (list, tuple)):
        return [encode_value(v) for v in value]
    if isinstance(value, dict):
        return {k: encode_value(v) for k, v in value.items()}
    return value


def decode_value(value: Any) -> Any:
    if isinstance(value, dict):
        if set(value) == {"hex"}:
            return bytes.fromhex(value["hex"])
        return {k: decode_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [decode_value(v) for v in value]
    return value


def _guard_to_doc(guard: Guard) -> list:
    return [[a.attr, a.op] if a.value is None else [a.attr, a.op, encode_value(a.value)]
            for a in guard.atoms]


def net_to_doc(net: NetDefinition) -> dict:
    return {
        "name": net.name,
        "places": [{"id": p.id, "kind": p.kind.value, "terminal": p.terminal} for p in net.places],
        "transitions": [
            {
                "id": t.id,
                "kind": t.kind.value,
                "inputs": [{"place": a.place, "guard": _guard_to_doc(a.guard)} for a in t.inputs],
                "outputs": list(t.outputs),
                "resolution_place": t.resolution_place,
                "procedure": t.procedure,
                "labels": list(t.labels),
            }
            for t in net.transitions
        ],
        "initial": {pid: encode_value(dict(attrs)) for pid, attrs in net.initial.items()},
        "domains": {k: encode_value(list(v)) for k, v in net.domains.items()},
    }


def net_from_doc(doc: dict) -> NetDefinition:
    try:
        places = tuple(PlaceSpec(p["id"], PlaceKind(p.get("kind", "GENERAL")),
                                 bool(p.get("terminal", False))) for p in doc["places"])
        transitions = []
        for t in doc["transitions"]:
            inputs = tuple(
                InputArc(a["place"], Guard(tuple(Atom(*map(decode_value, atom))
                                                 for atom in a.get("guard", []))))
                for a in t["inputs"])
            transitions.append(TransitionSpec(
                t["id"], TransitionKind(t.get("kind", "SIMPLE")), inputs, tuple(t["outputs"]),
                t.get("resolution_place"), t.get("procedure"), tuple(t.get("labels", ()))))
        initial = {pid: decode_value(attrs) for pid, attrs in doc.get("initial", {}).items()}
        domains = {k: tuple(decode_value(v)) for k, v in doc.get("domains", {}).items()}
        return NetDefinition(doc["name"], places, tuple(transitions), initial, domains)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetFormatError(f"malformed net document: {exc}") from exc


def dumps(net: NetDefinition) -> str:
    return json.dumps(net_to_doc(net), indent=2) + "\n"


def loads(text: str) -> NetDefinition:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return net_from_doc(doc)


def dump(net: NetDefinition, path: str | Path) -> None:
    Path(path).write_text(dumps(net), encoding="utf-8")


def load(path: str | Path) -> NetDefinition:
    return loads(Path(path).read_text(encoding="utf-8"))
