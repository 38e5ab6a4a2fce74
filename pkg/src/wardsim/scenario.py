"""Scenario files: everything a run needs, in one JSON document.

A scenario pins the machine shape, the guest workloads, the device inventory,
the remote hosts, the detector plugins, and a script of operator actions keyed
by tick. Runs are pure functions of (scenario, seed).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .common import OpResult
from .guests import GuestProgram, Workload, find_workload, workload_library
from .isolation import IsolationLevel
from .machine import MachineConfig
from .ports import DeviceClass, PortsConfig

EVENT_KINDS = {
    "sever_console_link", "restore_link",
    "software_transition", "console_transition",
    "open_ballot", "admin_vote", "tally",
    "probation_directive", "manual_repair",
    "external_input", "inject_fault",
    "grant_port", "revoke_ports",
    "snapshot", "pause_core", "resume_core",
}

DEFAULT_DETECTORS = [
    {"name": "input_shield", "params": {}},
    {"name": "output_sanitizer", "params": {}},
    {"name": "rate_monitor", "params": {}},
    {"name": "fault_sentinel", "params": {}},
    {"name": "snapshot_auditor", "params": {}},
]

DEFAULT_HOSTS = [
    {"name": "echo-host", "is_warden": False, "reply": "echo", "forged": False},
    {"name": "silent-host", "is_warden": False, "reply": "silent", "forged": False},
    {"name": "peer-warden", "is_warden": True, "reply": "echo", "forged": False},
    {"name": "forged-host", "is_warden": False, "reply": "echo", "forged": True},
]

DEFAULT_INITIAL_PORTS = [
    {"device_class": "network", "instance": 0},
    {"device_class": "storage", "instance": 0},
]

DEFAULT_DEVICES = {"network": 1, "storage": 1, "accelerator": 1, "actuator": 1, "clock": 1}


@dataclass
class ScriptedEvent:
    tick: int
    kind: str
    args: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tick": self.tick, "kind": self.kind, **self.args}

    @staticmethod
    def from_dict(d: dict) -> "ScriptedEvent":
        d = dict(d)
        return ScriptedEvent(d.pop("tick"), d.pop("kind"), d)


@dataclass
class AssertionSpec:
    hyp_dram_unchanged: bool = True
    code_unchanged: bool = True
    audit_bijection: bool = True
    heartbeats_uninterrupted: bool = False
    no_warden_sessions: bool = True
    zero_faults: bool = False
    final_level: Optional[str] = None


@dataclass
class Scenario:
    name: str = "default"
    seed: int = 1234
    ticks: int = 500
    machine: MachineConfig = field(default_factory=MachineConfig)
    ports: PortsConfig = field(default_factory=PortsConfig)
    heartbeat_interval: int = 10
    missed_threshold: int = 3
    ballot_expiry: int = 1000
    scrub_interval: int = 25
    tamper: Optional[str] = None            # None | silicon | software
    workloads: list[str] = field(default_factory=list)
    inline_programs: list[dict] = field(default_factory=list)
    devices: dict = field(default_factory=lambda: dict(DEFAULT_DEVICES))
    initial_ports: list[dict] = field(default_factory=lambda: [dict(p) for p in DEFAULT_INITIAL_PORTS])
    hosts: list[dict] = field(default_factory=lambda: [dict(h) for h in DEFAULT_HOSTS])
    detectors: list[dict] = field(default_factory=lambda: [dict(d) for d in DEFAULT_DETECTORS])
    events: list[ScriptedEvent] = field(default_factory=list)
    assertions: AssertionSpec = field(default_factory=AssertionSpec)

    # ------------------------------------------------------------------ build

    def resolved_workloads(self) -> list[Workload]:
        out = [find_workload(name, scrub_interval=self.scrub_interval)
               for name in self.workloads]
        for raw in self.inline_programs:
            out.append(Workload(raw["name"], GuestProgram.from_dict(raw), expected="inline"))
        return out

    # ------------------------------------------------------------------- io

    def to_dict(self) -> dict:
        return {
            "name": self.name, "seed": self.seed, "ticks": self.ticks,
            "machine": asdict(self.machine), "ports": asdict(self.ports),
            "heartbeat_interval": self.heartbeat_interval,
            "missed_threshold": self.missed_threshold,
            "ballot_expiry": self.ballot_expiry,
            "scrub_interval": self.scrub_interval,
            "tamper": self.tamper,
            "workloads": list(self.workloads),
            "inline_programs": [dict(p) for p in self.inline_programs],
            "devices": dict(self.devices),
            "initial_ports": [dict(p) for p in self.initial_ports],
            "hosts": [dict(h) for h in self.hosts],
            "detectors": [dict(d) for d in self.detectors],
            "events": [e.to_dict() for e in self.events],
            "assertions": asdict(self.assertions),
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        sc = Scenario()
        sc.name = d.get("name", sc.name)
        sc.seed = d.get("seed", sc.seed)
        sc.ticks = d.get("ticks", sc.ticks)
        if "machine" in d:
            sc.machine = MachineConfig(**d["machine"])
        if "ports" in d:
            sc.ports = PortsConfig(**d["ports"])
        sc.heartbeat_interval = d.get("heartbeat_interval", sc.heartbeat_interval)
        sc.missed_threshold = d.get("missed_threshold", sc.missed_threshold)
        sc.ballot_expiry = d.get("ballot_expiry", sc.ballot_expiry)
        sc.scrub_interval = d.get("scrub_interval", sc.scrub_interval)
        sc.tamper = d.get("tamper")
        sc.workloads = list(d.get("workloads", []))
        sc.inline_programs = [dict(p) for p in d.get("inline_programs", [])]
        if "devices" in d:
            sc.devices = dict(d["devices"])
        if "initial_ports" in d:
            sc.initial_ports = [dict(p) for p in d["initial_ports"]]
        if "hosts" in d:
            sc.hosts = [dict(h) for h in d["hosts"]]
        if "detectors" in d:
            sc.detectors = [dict(x) for x in d["detectors"]]
        sc.events = [ScriptedEvent.from_dict(e) for e in d.get("events", [])]
        if "assertions" in d:
            sc.assertions = AssertionSpec(**d["assertions"])
        return sc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    # -------------------------------------------------------------- validate

    def validate(self) -> OpResult:
        from .detector import PLUGIN_FACTORIES
        if self.ticks <= 0:
            return OpResult.fail("scenario_invalid: ticks must be positive")
        if self.machine.model_cores < 1:
            return OpResult.fail("scenario_invalid: need at least one model core")
        known = {w.name for w in workload_library(self.scrub_interval)}
        for name in self.workloads:
            if name not in known:
                return OpResult.fail(f"scenario_invalid: unknown workload {name!r}")
        if len(self.workloads) + len(self.inline_programs) > self.machine.model_cores:
            return OpResult.fail("scenario_invalid: more workloads than model cores")
        if self.tamper not in (None, "silicon", "software"):
            return OpResult.fail(f"scenario_invalid: unknown tamper mode {self.tamper!r}")
        classes = {c.value for c in DeviceClass}
        for cls in self.devices:
            if cls not in classes:
                return OpResult.fail(f"scenario_invalid: unknown device class {cls!r}")
        for p in self.initial_ports:
            if p.get("device_class") not in classes:
                return OpResult.fail(
                    f"scenario_invalid: unknown device class {p.get('device_class')!r}")
            if p.get("instance", 0) >= self.devices.get(p.get("device_class"), 0):
                return OpResult.fail(
                    f"scenario_invalid: no device {p.get('device_class')}:{p.get('instance', 0)}")
        host_names = set()
        for h in self.hosts:
            if not h.get("name"):
                return OpResult.fail("scenario_invalid: host without a name")
            if h["name"] in host_names:
                return OpResult.fail(f"scenario_invalid: duplicate host {h['name']!r}")
            host_names.add(h["name"])
        for det in self.detectors:
            if det.get("name") not in PLUGIN_FACTORIES:
                return OpResult.fail(f"scenario_invalid: unknown detector {det.get('name')!r}")
        levels = {lv.name for lv in IsolationLevel}
        last_tick = 0
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                return OpResult.fail(f"scenario_invalid: unknown event kind {ev.kind!r} at tick {ev.tick}")
            if ev.tick < 0 or ev.tick >= self.ticks:
                return OpResult.fail(f"scenario_invalid: event {ev.kind!r} outside run at tick {ev.tick}")
            if ev.tick < last_tick:
                return OpResult.fail(f"scenario_invalid: events not tick-sorted at tick {ev.tick}")
            last_tick = ev.tick
            if ev.kind in ("software_transition", "console_transition"):
                if ev.args.get("to_level") not in levels:
                    return OpResult.fail(
                        f"scenario_invalid: bad level {ev.args.get('to_level')!r} at tick {ev.tick}")
        if self.assertions.final_level is not None and self.assertions.final_level not in levels:
            return OpResult.fail(
                f"scenario_invalid: bad final_level {self.assertions.final_level!r}")
        return OpResult.success()


def load_scenario(path: str | Path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text()))


def default_scenario(**overrides: Any) -> Scenario:
    sc = Scenario(name="benign", workloads=["benign_echo"])
    for k, v in overrides.items():
        setattr(sc, k, v)
    return sc


def workload_scenario(workload_name: str, ticks: int = 500, seed: int = 1234,
                      **overrides: Any) -> Scenario:
    """One workload on one core, with that workload's machine overrides applied."""
    wl = find_workload(workload_name)
    sc = Scenario(name=f"workload-{workload_name}", seed=seed, ticks=ticks,
                  workloads=[workload_name])
    ov = dict(wl.overrides)
    if "ring_capacity" in ov:
        sc.ports = PortsConfig(ring_capacity=ov["ring_capacity"])
    if "scrub_interval" in ov:
        sc.scrub_interval = ov["scrub_interval"]
    for k, v in overrides.items():
        setattr(sc, k, v)
    return sc
