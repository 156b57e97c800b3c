"""Independent oracles. Nothing here imports the package under test.

The brute-force simulators re-state the canonical topologies as plain
tables and explore every resolution script (every decision alternative at
every step) up to a fixed depth with concrete counters instead of the
analysis module's abstraction.
"""

from __future__ import annotations

DEPTH = 50

# transition -> (inputs, outputs); more than one output means a decision
ENS_TABLE = {
    "t1": (["bp1"], ["b1"]),
    "t2": (["b1"], ["b2", "b3"]),
    "t3": (["b2"], ["b4", "b5"]),
    "t4": (["b4"], ["b6"]),
    "t5": (["b6"], ["b7"]),
    "t6": (["b7"], ["b8"]),
    "t7": (["b8"], ["b9"]),
    "t8": (["b9"], ["b10"]),
    "t9": (["b10"], ["b11"]),
    "t10": (["b11"], ["b12"]),
    "t11": (["b12"], ["b13", "b14"]),
    "t12": (["b13"], ["b15"]),
    "t13": (["b15"], ["b12"]),
    "t14": (["b3", "b5"], ["b14", "b1"]),
}

ENR_TABLE = {
    "t1": (["bp1"], ["b1"]),
    "t2": (["b1"], ["b2", "b3"]),
    "t3": (["b2"], ["b4"]),
    "t4": (["b4"], ["b5", "b6"]),
    "t5": (["b5"], ["b7"]),
    "t6": (["b7"], ["b8"]),
    "t7": (["b9"], ["b10"]),
    "t8": (["b3"], ["b11", "b1"]),
    "t9": (["b8"], ["b9"]),
    "t10": (["b6"], ["b11", "b4"]),
    "t11": (["b7"], ["b8"]),
    "t12": (["b10"], ["b11", "b7"]),
}


def brute_force_ens(depth: int = DEPTH) -> set[str]:
    """Places the ENS kernel can occupy under some resolution script."""
    seen = {"bp1"}
    frontier = {"bp1"}
    for _ in range(depth):
        nxt = set()
        for place in frontier:
            for inputs, outputs in ENS_TABLE.values():
                if place in inputs:
                    nxt.update(outputs)
        frontier = nxt - seen
        seen |= nxt
        if not frontier:
            break
    return seen


def _enr_moves(state):
    place, processed, pending, current = state
    for tid, (inputs, outputs) in ENR_TABLE.items():
        if place not in inputs:
            continue
        if tid == "t6" and processed != 0:
            continue
        if tid == "t11" and not (processed > 0 and pending > 0):
            continue
        for i, out in enumerate(outputs):
            if tid == "t12" and i == 1 and pending == 0:
                continue  # continue needs pending mail
            if tid == "t3":
                # zero to three new messages; three is enough to select one while another waits
                for arrived in range(4):
                    yield tid, i, (out, processed, pending + arrived, current)
            elif tid in ("t6", "t11"):
                if pending:
                    yield tid, i, (out, processed, pending - 1, True)
                else:
                    yield tid, i, (out, processed, pending, False)
            elif tid == "t9":
                yield tid, i, (out, processed + (1 if current else 0), pending, current)
            else:
                yield tid, i, (out, processed, pending, current)


def brute_force_enr(depth: int = DEPTH) -> set[tuple]:
    """Concrete ENR states reachable within `depth` firings.

    State is (place, processed count, pending count, message selected).
    """
    start = ("bp1", 0, 0, False)
    seen = {start}
    frontier = {start}
    for _ in range(depth):
        nxt = set()
        for state in frontier:
            for _, _, succ in _enr_moves(state):
                nxt.add(succ)
        frontier = nxt - seen
        seen |= nxt
        if not frontier:
            break
    return seen


def abstract_enr(states: set[tuple]) -> set[tuple]:
    return {(place, processed > 0, pending > 0, current)
            for place, processed, pending, current in states}


def fnv1a_64_reference(data: bytes) -> int:
    """Textbook FNV-1a with modular arithmetic, no masking tricks."""
    h = 14695981039346656037
    for b in data:
        h = h ^ b
        h = (h * 1099511628211) % 2**64
    return h
