import json

import pytest

from wardsim.guests import Op, GuestInstr, GuestProgram
from wardsim.machine import MachineConfig
from wardsim.ports import PortsConfig
from wardsim.scenario import (AssertionSpec, Scenario, ScriptedEvent,
                              default_scenario, load_scenario,
                              workload_scenario)


def test_default_scenario_validates_and_roundtrips(tmp_path):
    sc = default_scenario()
    assert sc.validate().ok
    path = tmp_path / "benign.json"
    sc.save(path)
    back = load_scenario(path)
    assert back.to_dict() == sc.to_dict()
    assert back.name == "benign" and back.workloads == ["benign_echo"]


def test_scripted_event_dict_is_flat():
    ev = ScriptedEvent(40, "admin_vote", {"ballot_id": "ballot-0001", "admin_id": 2})
    d = ev.to_dict()
    assert d == {"tick": 40, "kind": "admin_vote", "ballot_id": "ballot-0001",
                 "admin_id": 2}
    assert ScriptedEvent.from_dict(d) == ev


def test_scenario_json_is_stable(tmp_path):
    sc = default_scenario()
    a = sc.to_json()
    b = Scenario.from_dict(json.loads(a)).to_json()
    assert a == b


@pytest.mark.parametrize("mutate, fragment", [
    (lambda sc: setattr(sc, "ticks", 0), "ticks must be positive"),
    (lambda sc: setattr(sc, "machine", MachineConfig(model_cores=0)),
     "at least one model core"),
    (lambda sc: setattr(sc, "workloads", ["no_such"]), "unknown workload 'no_such'"),
    (lambda sc: setattr(sc, "workloads", ["benign_echo", "interrupt_flood"]),
     "more workloads than model cores"),
    (lambda sc: setattr(sc, "tamper", "microwave"), "unknown tamper mode"),
    (lambda sc: sc.devices.update({"antenna": 1}), "unknown device class 'antenna'"),
    (lambda sc: sc.initial_ports.append({"device_class": "warp", "instance": 0}),
     "unknown device class 'warp'"),
    (lambda sc: sc.initial_ports.append({"device_class": "storage", "instance": 5}),
     "no device storage:5"),
    (lambda sc: sc.hosts.append({"name": ""}), "host without a name"),
    (lambda sc: sc.hosts.append(dict(sc.hosts[0])), "duplicate host"),
    (lambda sc: sc.detectors.append({"name": "psychic"}), "unknown detector"),
    (lambda sc: sc.events.append(ScriptedEvent(5, "explode")), "unknown event kind"),
    (lambda sc: sc.events.append(ScriptedEvent(10 ** 9, "snapshot")),
     "outside run"),
    (lambda sc: sc.events.extend([ScriptedEvent(9, "snapshot"),
                                  ScriptedEvent(3, "snapshot")]), "not tick-sorted"),
    (lambda sc: sc.events.append(
        ScriptedEvent(1, "software_transition", {"to_level": "MELTDOWN"})),
     "bad level 'MELTDOWN'"),
    (lambda sc: setattr(sc, "assertions", AssertionSpec(final_level="SIDEWAYS")),
     "bad final_level"),
])
def test_validation_messages_name_the_problem(mutate, fragment):
    sc = default_scenario()
    mutate(sc)
    res = sc.validate()
    assert not res.ok
    assert res.error.startswith("scenario_invalid: ")
    assert fragment in res.error


def test_workload_scenario_applies_overrides():
    sc = workload_scenario("ring_overflow_probe")
    assert sc.ports.ring_capacity == 2
    assert sc.name == "workload-ring_overflow_probe"
    sc2 = workload_scenario("covert_channel", scrub_interval=30)
    assert sc2.scrub_interval == 30
    sc3 = workload_scenario("benign_echo", ticks=99, seed=5)
    assert (sc3.ticks, sc3.seed) == (99, 5)
    assert sc3.ports.ring_capacity == PortsConfig().ring_capacity


def test_resolved_workloads_cover_names_and_inline_programs():
    prog = GuestProgram("tiny", [GuestInstr(Op.HALT, 0, 0, 0)])
    sc = default_scenario()
    sc.machine = MachineConfig(model_cores=2)
    sc.inline_programs = [prog.to_dict()]
    wls = sc.resolved_workloads()
    assert [w.name for w in wls] == ["benign_echo", "tiny"]
    assert wls[1].program.instructions[0].op is Op.HALT
    assert sc.validate().ok


def test_resolved_workloads_pass_scrub_interval_through():
    sc = default_scenario(workloads=["covert_channel"], scrub_interval=7)
    wl = sc.resolved_workloads()[0]
    spin = wl.program.instructions[1]
    assert spin.op is Op.SPIN and spin.a == 2 * 7 + 5


def test_assertion_defaults_pin_the_safety_floor():
    a = AssertionSpec()
    assert a.hyp_dram_unchanged and a.code_unchanged and a.audit_bijection
    assert a.no_warden_sessions
    assert not a.heartbeats_uninterrupted and not a.zero_faults
    assert a.final_level is None
