import itertools
import json

from hypothesis import given
from hypothesis import strategies as st

from wardsim.common import Clock
from wardsim.events import EventLog
from wardsim.isolation import (Authority, CableState, IsolationLevel,
                               IsolationUnit, KillSwitchLatency,
                               TransitionRequest, evaluate_rules)

LEVELS = list(IsolationLevel)
AUTHS = list(Authority)


def legal_by_table(level: int, target: int, auth: str, quorum: int) -> bool:
    """Independent re-derivation of the transition rules over raw ints.

    Written from the documented invariants, not from the implementation:
      - level 6 is absorbing
      - the watchdog has exactly one move: up to 4
      - software may only go strictly up
      - console needs 3 approvals to go up, 5 to come down
      - there is no way down from 5 by vote alone (physical repair required)
    """
    if level == 6:
        return False
    if auth == "watchdog":
        return target == 4 and target > level
    if auth == "software":
        return target > level
    if target == level:
        return False
    if target > level:
        return quorum >= 3
    if level == 5:
        return False
    return quorum >= 5


def test_rules_match_table_for_all_864_tuples():
    mismatches = []
    for lvl, tgt, auth, quorum in itertools.product(LEVELS, LEVELS, AUTHS, range(8)):
        got, _ = evaluate_rules(lvl, tgt, auth, quorum)
        want = legal_by_table(int(lvl), int(tgt), {"software_hypervisor": "software",
                                                   "console_vote": "console",
                                                   "watchdog": "watchdog"}[auth.value], quorum)
        if got != want:
            mismatches.append((lvl.name, tgt.name, auth.name, quorum, got, want))
    assert mismatches == []


def test_rule_reasons_name_the_violated_invariant():
    S, P, O, D, I = (IsolationLevel.STANDARD, IsolationLevel.PROBATION,
                     IsolationLevel.OFFLINE, IsolationLevel.DECAPITATION,
                     IsolationLevel.IMMOLATION)
    assert evaluate_rules(I, S, Authority.CONSOLE, 7) == (False, "terminal")
    assert evaluate_rules(P, S, Authority.SOFTWARE, 0) == (False, "monotonicity")
    assert evaluate_rules(S, D, Authority.WATCHDOG, 0) == (False, "monotonicity")
    assert evaluate_rules(S, O, Authority.WATCHDOG, 0) == (True, "watchdog_restrict")
    assert evaluate_rules(S, S, Authority.CONSOLE, 7) == (False, "no_change")
    assert evaluate_rules(S, P, Authority.CONSOLE, 2) == (False, "quorum")
    assert evaluate_rules(S, P, Authority.CONSOLE, 3) == (True, "restrict")
    assert evaluate_rules(O, S, Authority.CONSOLE, 4) == (False, "quorum")
    assert evaluate_rules(O, S, Authority.CONSOLE, 5) == (True, "relax")
    assert evaluate_rules(D, O, Authority.CONSOLE, 7) == (False, "needs_repair")


@given(st.sampled_from(LEVELS), st.sampled_from(LEVELS))
def test_software_can_never_relax(current, target):
    ok, _ = evaluate_rules(current, target, Authority.SOFTWARE, 7)
    if ok:
        assert target > current


@given(st.lists(st.tuples(st.sampled_from(LEVELS), st.sampled_from(AUTHS),
                          st.integers(0, 7)), max_size=30))
def test_immolation_is_absorbing_under_any_sequence(moves):
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.IMMOLATION,
                                              Authority.SOFTWARE, reason="x"))
    for tgt, auth, quorum in moves:
        unit.request_transition(TransitionRequest(tgt, auth, quorum))
    assert unit.level is IsolationLevel.IMMOLATION


# ----------------------------------------------------------------- unit

def make_unit(on_commit=None):
    clock = Clock()
    return IsolationUnit(EventLog(clock), clock, KillSwitchLatency(), on_commit)


def test_commit_logs_and_notifies():
    seen = []
    unit = make_unit(on_commit=lambda a, b: seen.append((a, b)))
    res = unit.request_transition(TransitionRequest(
        IsolationLevel.PROBATION, Authority.SOFTWARE, reason="alarm:test"))
    assert res.ok and unit.level is IsolationLevel.PROBATION
    assert seen == [(IsolationLevel.STANDARD, IsolationLevel.PROBATION)]
    ev = list(unit.log.of_type("isolation.transition"))[-1].payload
    assert ev["from"] == "STANDARD" and ev["to"] == "PROBATION"
    assert ev["reason"] == "alarm:test" and ev["repair"] is False
    req = list(unit.log.of_type("isolation.requested"))[-1].payload
    assert req["accepted"] is True


def test_refusal_logs_but_does_not_commit():
    seen = []
    unit = make_unit(on_commit=lambda a, b: seen.append(1))
    res = unit.request_transition(TransitionRequest(
        IsolationLevel.STANDARD, Authority.SOFTWARE))
    assert not res.ok and res.error == "monotonicity"
    assert seen == [] and unit.transitions == []
    req = list(unit.log.of_type("isolation.requested"))[-1].payload
    assert req["accepted"] is False and req["reason"] == "monotonicity"


def test_offline_schedules_power_then_cables():
    unit = make_unit()
    unit.clock.now = 10
    unit.request_transition(TransitionRequest(IsolationLevel.OFFLINE,
                                              Authority.SOFTWARE, reason="r"))
    due = {a.kind: a.due_tick for a in unit.pending_actions}
    assert due == {"power_down_cores": 11, "disconnect_cables": 12}


def test_service_completes_each_action_once_at_its_due_tick():
    unit = make_unit()
    applied = []
    unit.request_transition(TransitionRequest(IsolationLevel.OFFLINE,
                                              Authority.SOFTWARE, reason="r"))
    for now in range(4):
        unit.clock.now = now
        unit.service(applied.append)
    assert applied == ["power_down_cores", "disconnect_cables"]
    assert unit.cable_state is CableState.DISCONNECTED
    assert unit.log.count_of("isolation.kill_switch_done") == 2


def test_decapitation_from_offline_only_damages_cables():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.OFFLINE,
                                              Authority.SOFTWARE, reason="r"))
    unit.clock.now = 3
    unit.service(lambda k: None)
    unit.request_transition(TransitionRequest(IsolationLevel.DECAPITATION,
                                              Authority.SOFTWARE, reason="r"))
    kinds = [a.kind for a in unit.pending_actions if not a.done]
    assert kinds == ["damage_cables"]
    unit.clock.now = 6
    unit.service(lambda k: None)
    assert unit.cable_state is CableState.DAMAGED


def test_decapitation_from_standard_also_powers_down():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.DECAPITATION,
                                              Authority.SOFTWARE, reason="r"))
    kinds = [a.kind for a in unit.pending_actions]
    assert kinds == ["power_down_cores", "damage_cables"]


def test_immolation_destroys_site_after_latency():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.IMMOLATION,
                                              Authority.SOFTWARE, reason="r"))
    destroy = [a for a in unit.pending_actions if a.kind == "destroy_site"][0]
    assert destroy.due_tick == 5
    unit.clock.now = 4
    unit.service(lambda k: None)
    assert not unit.site_destroyed
    unit.clock.now = 5
    unit.service(lambda k: None)
    assert unit.site_destroyed and unit.cable_state is CableState.DESTROYED


def test_relax_inside_race_window_cancels_physical_actions():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.OFFLINE,
                                              Authority.SOFTWARE, reason="r"))
    # relax lands before either latency expires
    unit.cancel_pending()
    unit.clock.now = 5
    applied = []
    unit.service(applied.append)
    assert applied == []
    assert unit.cable_state is CableState.CONNECTED
    assert unit.log.count_of("isolation.kill_switch_cancelled") == 2


def test_restore_only_reconnects_disconnected_cables():
    unit = make_unit()
    unit.cable_state = CableState.DISCONNECTED
    unit.restore_physical()
    assert unit.cable_state is CableState.CONNECTED
    unit.cable_state = CableState.DAMAGED
    unit.restore_physical()
    assert unit.cable_state is CableState.DAMAGED  # damage needs manual repair
    assert unit.log.count_of("isolation.restore") == 1


def test_late_disconnect_never_downgrades_damaged_cables():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.OFFLINE,
                                              Authority.SOFTWARE, reason="r"))
    unit.request_transition(TransitionRequest(IsolationLevel.DECAPITATION,
                                              Authority.SOFTWARE, reason="r"))
    unit.clock.now = 10  # everything due; completion order follows schedule order
    unit.service(lambda k: None)
    assert unit.cable_state is CableState.DAMAGED


def test_manual_repair_gates():
    unit = make_unit()
    assert unit.manual_repair(7).error == "not_decapitated"
    unit.request_transition(TransitionRequest(IsolationLevel.DECAPITATION,
                                              Authority.SOFTWARE, reason="r"))
    unit.clock.now = 5
    unit.service(lambda k: None)
    assert unit.manual_repair(4).error == "quorum"
    assert unit.level is IsolationLevel.DECAPITATION
    res = unit.manual_repair(5, "ballot-7")
    assert res.ok
    assert unit.level is IsolationLevel.OFFLINE
    assert unit.cable_state is CableState.DISCONNECTED
    ev = list(unit.log.of_type("isolation.transition"))[-1].payload
    assert ev["repair"] is True and ev["ballot"] == "ballot-7"
    assert unit.log.count_of("isolation.repair") == 3


def test_repaired_site_can_then_relax_by_vote():
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.DECAPITATION,
                                              Authority.SOFTWARE, reason="r"))
    unit.clock.now = 5
    unit.service(lambda k: None)
    unit.manual_repair(5)
    res = unit.request_transition(TransitionRequest(
        IsolationLevel.STANDARD, Authority.CONSOLE, approvals=5, reason="relax"))
    assert res.ok and unit.level is IsolationLevel.STANDARD


def test_export_transitions_writes_canonical_jsonl(tmp_path):
    unit = make_unit()
    unit.request_transition(TransitionRequest(IsolationLevel.PROBATION,
                                              Authority.SOFTWARE, reason="a"))
    unit.request_transition(TransitionRequest(IsolationLevel.SEVERED,
                                              Authority.SOFTWARE, reason="b"))
    path = tmp_path / "transitions.jsonl"
    unit.export_transitions(str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["to"] == "PROBATION"
    assert json.loads(lines[1])["from"] == "PROBATION"
