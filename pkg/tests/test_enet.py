import copy
import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from secmail import netfile
from secmail.enet import (Guard, InputArc, NetDefinition, NotEnabled, Outcome, PlaceKind,
                          PlaceSpec, ProcedureFailure, Run, TransitionKind, TransitionSpec,
                          UnresolvedDecision, decision, enabled_transitions, fire,
                          initial_marking, resolve_pending, run_to_terminal, simple,
                          validate_net)
from secmail.nets import PROCEDURES, Session, build_enr, build_ens
from secmail.policies import SymbolicPolicy, always_grant_exit_after


def marking_at(net, place, **attrs):
    m = initial_marking(net)
    kernel = m.occupancy["bp1"]
    m.occupancy["bp1"] = None
    kernel.attributes.update(attrs)
    m.occupancy[place] = kernel
    return m


def tiny_net(**overrides):
    places = (PlaceSpec("p0", PlaceKind.PERIPHERAL), PlaceSpec("r1", PlaceKind.RESOLUTION),
              PlaceSpec("a"), PlaceSpec("b"), PlaceSpec("end", terminal=True))
    transitions = (simple("t1", "p0", "a"),
                   decision("t2", "a", ["end", "b"], "r1", labels=("stop", "go")),
                   simple("t3", "b", "a"))
    fields = dict(name="tiny", places=places, transitions=transitions, initial={"p0": {}})
    fields.update(overrides)
    return NetDefinition(**fields)


class TestValidate:
    def test_ens_counts(self, ens):
        report = validate_net(ens)
        assert report.ok, report.violations
        assert report.counts == {"places": 20, "peripheral": 1, "resolution": 4, "general": 15,
                                 "transitions": 14}

    def test_enr_counts(self, enr):
        report = validate_net(enr)
        assert report.ok, report.violations
        assert report.counts == {"places": 17, "peripheral": 1, "resolution": 5, "general": 11,
                                 "transitions": 12}

    def test_decision_without_resolution_place(self):
        bad = TransitionSpec("t2", TransitionKind.DECISION, (InputArc("a"),), ("end", "b"))
        net = tiny_net(transitions=(simple("t1", "p0", "a"), bad, simple("t3", "b", "a")))
        report = validate_net(net)
        assert not report.ok
        assert "t2: decision without resolution place" in report.violations

    def test_simple_with_two_outputs(self):
        bad = TransitionSpec("t1", TransitionKind.SIMPLE, (InputArc("p0"),), ("a", "b"))
        net = tiny_net(transitions=(bad,) + tiny_net().transitions[1:])
        assert any("exactly one output" in v for v in validate_net(net).violations)

    def test_no_peripheral(self):
        places = tuple(dataclasses.replace(p, kind=PlaceKind.GENERAL)
                       if p.kind is PlaceKind.PERIPHERAL else p for p in tiny_net().places)
        assert "no peripheral place" in validate_net(tiny_net(places=places)).violations

    def test_terminal_with_outgoing_edge(self):
        net = tiny_net(transitions=tiny_net().transitions + (simple("t4", "end", "a"),))
        assert "terminal place end has outgoing edges" in validate_net(net).violations

    def test_unknown_place_and_orphan(self):
        net = tiny_net(places=tiny_net().places + (PlaceSpec("orphan"),),
                       transitions=tiny_net().transitions + (simple("t9", "ghost", "a"),))
        v = validate_net(net).violations
        assert "t9: unknown input place ghost" in v
        assert "place orphan is never consumed" in v

    def test_resolution_place_as_kernel_place(self):
        net = tiny_net(transitions=tiny_net().transitions + (simple("t4", "b", "r1"),))
        assert any("resolution place r1 used as kernel output" in v
                   for v in validate_net(net).violations)

    def test_duplicate_ids(self):
        net = tiny_net(places=tiny_net().places + (PlaceSpec("a"),))
        assert "duplicate place id a" in validate_net(net).violations

    def test_overlapping_guards_rejected(self, enr):
        t6 = enr.transition("t6")
        loose = dataclasses.replace(enr.transition("t11"),
                                    inputs=(InputArc("b7", Guard.of(("processed", ">=", 0))),))
        net = dataclasses.replace(enr, transitions=tuple(
            loose if t.id == "t11" else t for t in enr.transitions))
        v = validate_net(net).violations
        assert any(x.startswith("t6 and t11 both enabled from b7") for x in v)
        assert t6.inputs[0].guard == Guard.of(("processed", "==", 0))

    def test_guard_without_domain(self, enr):
        net = dataclasses.replace(enr, domains={})
        assert "t6: guard attribute processed has no declared domain" in validate_net(net).violations


class TestGuards:
    def test_exclusive_by_brute_force(self, enr):
        t6 = enr.transition("t6").inputs[0].guard
        t11 = enr.transition("t11").inputs[0].guard
        for processed in range(4):
            for pending in ([], ["h"], ["h", "i"]):
                attrs = {"processed": processed, "pending": pending}
                assert not (t6.holds(attrs) and t11.holds(attrs))

    def test_missing_attribute_defaults(self):
        assert not Guard.of(("x", "==", 0)).holds({})
        assert Guard.of(("x", "empty")).holds({})
        assert not Guard.of(("flag", "true")).holds({})


class TestEnabled:
    def test_ens_initial(self, ens):
        assert enabled_transitions(ens, initial_marking(ens)) == ["t1"]

    def test_terminal_place_enables_nothing(self, ens):
        assert enabled_transitions(ens, marking_at(ens, "b14")) == []

    def test_enr_b7_first_pass(self, enr):
        m = marking_at(enr, "b7", processed=0, pending=["d1"])
        assert enabled_transitions(enr, m) == ["t6"]

    def test_enr_b7_loop_pass(self, enr):
        m = marking_at(enr, "b7", processed=1, pending=["d1"])
        assert enabled_transitions(enr, m) == ["t11"]

    def test_enr_b7_loop_with_nothing_pending(self, enr):
        assert enabled_transitions(enr, marking_at(enr, "b7", processed=1, pending=[])) == []

    def test_unresolved_decision(self, ens):
        with pytest.raises(UnresolvedDecision):
            enabled_transitions(ens, marking_at(ens, "b1"))

    def test_pending_resolution_used(self, ens):
        m = marking_at(ens, "b1")
        m.resolutions["br1"] = 1
        assert enabled_transitions(ens, m) == ["t2"]

    def test_alternative_inputs(self, ens):
        for place in ("b3", "b5"):
            assert enabled_transitions(ens, marking_at(ens, place), lambda r: "exit") == ["t14"]

    def test_ordering_is_natural(self):
        places = (PlaceSpec("p", PlaceKind.PERIPHERAL), PlaceSpec("q", terminal=True),
                  PlaceSpec("r", terminal=True))
        net = NetDefinition("n", places, (simple("t10", "p", "q"), simple("t2", "p", "r")),
                            {"p": {}})
        assert enabled_transitions(net, initial_marking(net)) == ["t2", "t10"]


class TestFire:
    def test_t1_moves_kernel_and_stamps(self, ens, alice):
        m0 = initial_marking(ens)
        m1, ev = fire(ens, m0, "t1", None, alice, PROCEDURES)
        assert m1.occupied == ["b1"]
        assert m0.occupied == ["bp1"]
        assert ev.seq == 0 and ev.consumed == "bp1" and ev.produced == "b1"
        assert ev.attributes["user"] == "alice"
        assert ev.attributes["requested_at"] >= 1

    def test_t2_deny(self, ens, env):
        session = Session("mallory", env)
        m = marking_at(ens, "b1", user="mallory")
        m2, ev = fire(ens, m, "t2", lambda r: "deny", session, PROCEDURES, seq=1)
        assert m2.occupied == ["b3"]
        assert ev.decision == 1 and ev.seq == 1
        assert ev.attributes["granted"] is False

    def test_not_enabled(self, ens):
        m = initial_marking(ens)
        before = copy.deepcopy(m)
        with pytest.raises(NotEnabled):
            fire(ens, m, "t7")
        assert m == before

    def test_procedure_failure_is_atomic(self, ens, alice):
        m = marking_at(ens, "b6", user="alice", remaining=0)
        before = copy.deepcopy(m)
        audit_before = len(alice.env.audit)
        with pytest.raises(ProcedureFailure):
            fire(ens, m, "t5", None, alice, PROCEDURES)
        assert m == before
        assert len(alice.env.audit) == audit_before

    def test_unregistered_procedure(self, ens):
        with pytest.raises(ProcedureFailure):
            fire(ens, initial_marking(ens), "t1", None, None, {})

    def test_capacity(self):
        places = (PlaceSpec("p", PlaceKind.PERIPHERAL), PlaceSpec("q"),
                  PlaceSpec("end", terminal=True))
        net = NetDefinition("cap", places, (simple("t1", "p", "q"), simple("t2", "q", "end")),
                            {"p": {}, "q": {}})
        m = initial_marking(net)
        assert enabled_transitions(net, m) == ["t2"]
        with pytest.raises(NotEnabled):
            fire(net, m, "t1")


class TestRun:
    def test_ens_always_grant_exit_after_first_send(self, ens, env):
        from secmail.nets import OutgoingMessage
        session = Session("alice", env, [OutgoingMessage(["bob"], b"subj", b"body text")])
        result = run_to_terminal(ens, always_grant_exit_after(1), session, procedures=PROCEDURES)
        assert result.outcome is Outcome.TERMINATED
        assert result.final_places == ["b14"]
        assert result.transitions == [f"t{i}" for i in range(1, 12)]

    def test_enr_deny_then_exit(self, enr, bob):
        policy = SymbolicPolicy.from_spec(["deny-at:br1"])
        result = run_to_terminal(enr, policy, bob, procedures=PROCEDURES)
        assert result.outcome is Outcome.TERMINATED
        assert result.transitions == ["t1", "t2", "t8"]
        assert [e.decision for e in result.trace] == [None, 1, 0]
        assert result.final_places == ["b11"]

    @pytest.mark.parametrize("build", [build_ens, build_enr])
    def test_zero_budget(self, build, env):
        result = run_to_terminal(build(), SymbolicPolicy(), Session("alice", env), max_steps=0,
                                 procedures=PROCEDURES)
        assert result.outcome is Outcome.STEP_LIMIT
        assert result.trace == []

    def test_retry_loop_hits_step_limit(self, ens, env):
        result = run_to_terminal(ens, SymbolicPolicy.from_spec([], {"br4": ["retry"] * 100}),
                                 Session("mallory", env), max_steps=25, procedures=PROCEDURES)
        assert result.outcome is Outcome.STEP_LIMIT
        assert len(result.trace) == 25

    def test_forced_continue_deadlocks(self, enr, env):
        env.transport.send(env.seal("alice", ["bob"], b"subject", b"body", b"")[0])
        policy = SymbolicPolicy.from_spec(["auto"], {"br5": ["continue"]})
        result = run_to_terminal(enr, policy, Session("bob", env), procedures=PROCEDURES)
        assert result.outcome is Outcome.DEADLOCK
        assert result.final_places == ["b7"]
        assert result.marking.kernel_at("b7").attributes["processed"] == 1

    def test_continue_on_empty_first_pass_is_harmless(self, enr, env):
        # nothing processed yet, so t6 may fire again
        policy = SymbolicPolicy.from_spec(["auto"], {"br5": ["continue"]})
        result = run_to_terminal(enr, policy, Session("bob", env), procedures=PROCEDURES)
        assert result.outcome is Outcome.TERMINATED

    def test_nondeterminism_reported(self):
        places = (PlaceSpec("p", PlaceKind.PERIPHERAL), PlaceSpec("q", terminal=True),
                  PlaceSpec("r", terminal=True))
        net = NetDefinition("n", places, (simple("t1", "p", "q"), simple("t2", "p", "r")),
                            {"p": {}})
        assert run_to_terminal(net, None).outcome is Outcome.NONDETERMINISM

    def test_resolution_queried_once_per_firing(self, ens, env):
        calls = []

        def counting(request):
            calls.append(request.transition.id)
            return SymbolicPolicy()(request)

        run_to_terminal(ens, counting, Session("mallory", env), procedures=PROCEDURES)
        assert calls == ["t2", "t14"]

    def test_resolve_pending_does_not_mutate(self, ens):
        m = marking_at(ens, "b1")
        out = resolve_pending(ens, m, lambda r: 0)
        assert m.resolutions["br1"] is None and out.resolutions["br1"] == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([0, 1]), max_size=40), st.sampled_from(["ENS", "ENR"]))
def test_run_invariants_under_random_scripts(choices, which):
    """Kernel conservation, capacity, gapless seq and determinism for arbitrary scripts."""
    from secmail.nets import OutgoingMessage
    from secmail.services import Environment, UserRecord

    def fresh():
        env = Environment()
        env.add_user(UserRecord("alice", sign_key=b"s-a"))
        env.add_user(UserRecord("bob", sign_key=b"s-b"))
        env.registry.add_pair("alice", "bob", b"kAB")
        msgs = [OutgoingMessage(["bob"], b"subject%d" % i, b"body%d" % i) for i in range(30)]
        return Session("alice" if which == "ENS" else "bob", env, msgs)

    def policy():
        queue = list(choices)

        def decide(request):
            legal = [0, 1]
            t = request.transition
            if "continue" in t.labels and not request.attributes.get("pending"):
                legal.remove(t.labels.index("continue"))
            if t.labels[0] == "grant":
                return 0
            return queue.pop(0) if queue and queue[0] in legal else legal[0]
        return decide

    net = build_ens() if which == "ENS" else build_enr()
    traces = []
    for _ in range(2):
        run = Run(net, policy(), fresh(), PROCEDURES, max_steps=60)
        while not run.done:
            event = run.step()
            if event is not None:
                assert len(run.marking.occupied) == 1
        traces.append(run.trace)
        assert [e.seq for e in run.trace] == list(range(len(run.trace)))
    assert traces[0] == traces[1]


class TestNetFile:
    @pytest.mark.parametrize("build", [build_ens, build_enr])
    def test_round_trip(self, build, tmp_path):
        net = build()
        path = tmp_path / "net.json"
        netfile.dump(net, path)
        assert netfile.load(path) == net

    def test_round_trip_with_bytes_and_guards(self):
        net = tiny_net(initial={"p0": {"k": b"\x00\xff", "n": [1, 2]}},
                       domains={"n": (0, 1)})
        assert netfile.loads(netfile.dumps(net)) == net

    def test_malformed(self):
        with pytest.raises(netfile.NetFormatError):
            netfile.loads('{"name": "x"}')
        with pytest.raises(netfile.NetFormatError):
            netfile.loads("{not json")
