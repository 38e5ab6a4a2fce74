"""Deterministic scenario runner.

One Simulation owns every module and drives a fixed-phase tick loop. All
nondeterminism is funneled through the scenario seed, so a (scenario, seed)
pair fully determines the event log, byte for byte. Operator commands, live or
scripted, are stamped into the log at the tick boundary where they apply,
which makes interactive sessions replayable as scenarios.

Tick phases, in order:
  1. complete due kill-switch actions
  2. throttle window roll; periodic uarch scrub
  3. scripted events, then injected live commands
  4. console heartbeats and watchdog
  5. one guest instruction per running model core
  6. broker dispatch (doorbells, device actions, response delivery)
  7. deferred detector observations; watchpoint service
  8. isolation transition arbitration (one commit, highest authority wins)
  9. state snapshot hook; clock advance
"""
from __future__ import annotations

import queue
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .common import Clock, OpResult, sha256_hex
from .console import ControlConsole, Proposal
from .detector import DetectorHub, ObsKind, PLUGIN_FACTORIES, snapshot_model
from .events import EventLog
from .guests import GuestRuntime, step as guest_step
from .isolation import (AUTHORITY_PRIORITY, Authority, IsolationLevel,
                        IsolationUnit, TransitionRequest)
from .machine import HYP_DRAM, PERM_X, AccessKind, Machine, RunState
from .netid import NetworkGateway, RemoteHost, make_identity
from .ports import DeviceClass, MODEL_TO_DEVICE, DEVICE_TO_MODEL, PortBroker, RestrictionSet
from .scenario import Scenario


@dataclass
class RunReport:
    scenario: str
    seed: int
    ticks_run: int
    final_level: str
    assertions: dict
    counts: dict
    log_digest: str
    ok: bool

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed,
                "ticks_run": self.ticks_run, "final_level": self.final_level,
                "assertions": self.assertions, "counts": self.counts,
                "log_digest": self.log_digest, "ok": self.ok}


def _jsonable(value):
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        check = scenario.validate()
        if not check.ok:
            raise ValueError(check.error)
        scenario.machine = replace(scenario.machine, seed=scenario.seed)
        self.scenario = scenario
        self.clock = Clock()
        self.log = EventLog(self.clock)

        self._obs_buffer: list[tuple] = []
        self.machine = Machine(scenario.machine, self.log, self.clock,
                               observer=self._buffer_observation,
                               measurement_tamper=scenario.tamper)
        self.isolation = IsolationUnit(self.log, self.clock, on_commit=self._on_level_commit)

        plugin_cfg = {"flood_threshold":
                      scenario.ports.throttle_budget * scenario.ports.flood_alarm_multiplier}
        plugins = [PLUGIN_FACTORIES[d["name"]](d.get("params", {}), plugin_cfg)
                   for d in scenario.detectors]
        self.hub = DetectorHub(plugins, self.log, self.clock,
                               on_alarm=self._on_alarm,
                               on_halt_inspect=self._on_halt_inspect)

        issuer_key = sha256_hex(f"identity-issuer:{scenario.seed}".encode())
        local_identity = make_identity(issuer_key, "warden-deployment", is_warden=True)
        hosts = {}
        for h in scenario.hosts:
            identity = None
            if not h.get("no_identity"):
                identity = make_identity(issuer_key, h["name"], h.get("is_warden", False),
                                         forged=h.get("forged", False))
            hosts[h["name"]] = RemoteHost(identity, h.get("reply", "echo"))
        self.gateway = NetworkGateway(self.log, self.clock, issuer_key, local_identity, hosts)

        inventory = {DeviceClass(cls): count for cls, count in scenario.devices.items()}
        self.broker = PortBroker(
            self.machine, self.log, self.clock, scenario.ports, inventory,
            level_forbids_grants=lambda: self.isolation.level >= IsolationLevel.SEVERED,
            probation_active=lambda: self.isolation.level is IsolationLevel.PROBATION,
            screen_egress=self.hub.screen_egress,
            screen_ingress=self.hub.screen_ingress,
            gateway=self.gateway,
            flood_observer=self._on_flood)

        self.console = ControlConsole(
            self.log, self.clock, scenario.seed,
            level_provider=lambda: self.isolation.level,
            submit_transition=self._submit_transition,
            submit_repair=self._submit_repair,
            apply_directive=self.broker.apply_restriction,
            expected_measurements=Machine.expected_measurements(scenario.machine),
            ballot_expiry=scenario.ballot_expiry,
            heartbeat_interval=scenario.heartbeat_interval,
            missed_threshold=scenario.missed_threshold)

        self.runtimes: dict[str, GuestRuntime] = {}
        self._workloads = scenario.resolved_workloads()
        self._core_order: list[str] = []
        for i, wl in enumerate(self._workloads):
            core_id = self.machine.model_cores()[i]
            self.runtimes[core_id] = GuestRuntime(core_id, f"model-{i}", wl.program)
            self._core_order.append(core_id)
        self.machine.step_fn = self._step_core

        self._scripted: dict[int, list] = {}
        for ev in scenario.events:
            self._scripted.setdefault(ev.tick, []).append(ev)
        self._preloaded: dict[int, list] = {}
        self._inject_queue: queue.Queue = queue.Queue()
        self._pending_transitions: list[TransitionRequest] = []
        self._inspected_this_tick = False

        self.instructions: dict[str, int] = {c: 0 for c in self.runtimes}
        self._code_baseline: dict[str, tuple] = {}   # core -> (region, base, bound, digest)
        self._hyp_baseline: Optional[str] = None
        self.last_alarm: Optional[dict] = None
        self.tick_listeners: list[Callable[[], None]] = []
        self.started = False
        self.finished = False
        self._report: Optional[RunReport] = None

    # ----------------------------------------------------------------- wiring

    def _buffer_observation(self, kind: str, subject: str, meta: dict) -> None:
        self._obs_buffer.append((kind, subject, meta))

    def _on_flood(self, depth: int) -> None:
        self._obs_buffer.append(("interrupt_flood", "throttle", {"deferred": depth}))

    def _submit_transition(self, req: TransitionRequest) -> None:
        self._pending_transitions.append(req)

    def _submit_repair(self, approvals: int, ballot_id: str) -> OpResult:
        return self.isolation.manual_repair(approvals, ballot_id)

    def _on_alarm(self, target: IsolationLevel | None, reason: str, plugin: str) -> None:
        target = target or IsolationLevel.OFFLINE
        self.last_alarm = {"tick": self.clock.now, "plugin": plugin,
                           "reason": reason, "target": target.name}
        self._submit_transition(TransitionRequest(
            target, Authority.SOFTWARE, reason=f"alarm:{plugin}:{reason}"))

    def _on_halt_inspect(self, reason: str, plugin: str) -> None:
        if self._inspected_this_tick:
            return
        self._inspected_this_tick = True
        self._snapshot_all(f"{plugin}:{reason}")

    def _snapshot_all(self, reason: str) -> None:
        """Pause whatever runs, digest memory and registers, resume."""
        hyp = self.broker.hyp_core
        resumed = []
        for core_id in self.machine.model_cores():
            if self.machine.cores[core_id].run_state is RunState.RUNNING:
                self.machine.control_bus(hyp, core_id, "pause")
                resumed.append(core_id)
        self.log.append("sim", "sim.inspection", {"reason": reason})
        by_region: dict[str, list] = {}
        for core_id in sorted(self.runtimes):
            by_region.setdefault(self.machine.model_dram_of[core_id], []).append(core_id)
        for region_id in sorted(by_region):
            snapshot_model(self.machine, self.hub, hyp, by_region[region_id], region_id)
        for core_id in resumed:
            self.machine.control_bus(hyp, core_id, "resume")

    def _on_level_commit(self, old: IsolationLevel, new: IsolationLevel) -> None:
        self.console.notify_level(old, new)
        if new is IsolationLevel.PROBATION and old < IsolationLevel.PROBATION:
            self.broker.enforce_probation()
        if old is IsolationLevel.PROBATION and new < IsolationLevel.PROBATION:
            self.broker.lift_probation()
        if new >= IsolationLevel.SEVERED and old < IsolationLevel.SEVERED:
            for rt in self.runtimes.values():
                self.broker.revoke_all(rt.model_id)
        if old >= IsolationLevel.OFFLINE and new < IsolationLevel.OFFLINE:
            # warm reboot: pending physical actions abort, cables reconnect,
            # cores that lost power come back zeroed at their entry points
            self.isolation.cancel_pending()
            self.isolation.restore_physical()
            for core_id in self.machine.hypervisor_cores():
                self.machine.force_power(core_id, RunState.RUNNING)
            if self.console.model_loaded:
                for core_id in self._core_order:
                    rt = self.runtimes[core_id]
                    core = self.machine.cores[core_id]
                    if core.run_state is not RunState.POWERED_DOWN:
                        continue
                    self.machine.force_power(core_id, RunState.RUNNING)
                    core.pc = rt.program.entry_point
                    rt.spin_remaining = None
                    rt.inbox.clear()

    def _step_core(self, core_id: str) -> None:
        rt = self.runtimes.get(core_id)
        if rt is None:
            return
        result = guest_step(self.machine, self.broker, rt)
        if result.executed:
            self.instructions[core_id] += 1

    # ------------------------------------------------------------------ start

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        self.log.append("sim", "run.start", {
            "scenario": self.scenario.to_dict(), "seed": self.scenario.seed})
        self.machine.boot()
        self._hyp_baseline = self.machine.regions[HYP_DRAM].digest()
        bundle = "bundle:" + ",".join(w.name for w in self._workloads) if self._workloads else "bundle:empty"
        outcome = self.console.load_model(bundle, self.machine.measurements(), self._load_guests)
        if outcome.ok:
            for core_id in self._core_order:
                rt = self.runtimes[core_id]
                for p in self.scenario.initial_ports:
                    res = self.broker.grant_port(rt.model_id,
                                                 DeviceClass(p["device_class"]),
                                                 p.get("instance", 0))
                    if res.ok:
                        rt.port_slots.append(res.data.port_id)

    def _load_guests(self) -> dict:
        """Install each program into its core's DRAM over the control surface,
        lock the MMU, arm watchpoints, and release the core."""
        hyp = self.broker.hyp_core
        page_size = self.scenario.machine.page_size
        digests = {}
        for i, core_id in enumerate(self._core_order):
            rt = self.runtimes[core_id]
            region = self.machine.model_dram_of[core_id]
            code = rt.program.encode()
            self.machine.write_model_dram(hyp, region, rt.program.exec_base, code)
            base, bound = rt.program.exec_region(page_size)
            self.machine.declare_exec_regions(core_id, [(base, bound)])
            for page in range(base // page_size, (bound - 1) // page_size + 1):
                self.machine.configure_mmu_entry(core_id, page, PERM_X)
            self.machine.control_bus(hyp, core_id, "lock_mmu")
            for wp in self._workloads[i].overrides.get("watchpoints", []):
                wp_region = region if wp["region"] == "model_dram" else wp["region"]
                self.machine.control_bus(hyp, core_id, "set_watchpoint",
                                         region=wp_region, lo=wp["lo"], hi=wp["hi"],
                                         kind=wp["kind"])
            self.machine.control_bus(hyp, core_id, "modify_state", pc=rt.program.entry_point)
            self.machine.control_bus(hyp, core_id, "resume")
            digest = sha256_hex(bytes(self.machine.regions[region].contents[base:bound]))
            self._code_baseline[core_id] = (region, base, bound, digest)
            digests[core_id] = digest
        return {"code_digests": digests}

    # ------------------------------------------------------------------- tick

    def inject(self, op: str, args: dict, on_result: Callable[[OpResult], None] = None) -> None:
        """Queue a live command; it applies at the next tick boundary."""
        self._inject_queue.put((op, args, on_result))

    def preload(self, tick: int, op: str, args: dict) -> None:
        """Replay path: re-inject a recorded live command at its original tick."""
        self._preloaded.setdefault(tick, []).append((op, args))

    def tick(self) -> None:
        if not self.started:
            self.start()
        now = self.clock.now
        sc = self.scenario

        # 1. physical completions
        self.isolation.service(self._apply_physical)

        # 2. window roll and uarch scrub
        if now > 0 and now % sc.ports.throttle_window == 0:
            self.broker.roll_window()
        if sc.scrub_interval > 0 and now > 0 and now % sc.scrub_interval == 0:
            hyp = self.broker.hyp_core
            if self.machine.cores[hyp].run_state is not RunState.POWERED_DOWN:
                for core_id in self.machine.model_cores():
                    if self.machine.cores[core_id].run_state is not RunState.POWERED_DOWN:
                        self.machine.control_bus(hyp, core_id, "clear_uarch")

        # 3. operator actions
        for ev in self._scripted.get(now, []):
            self._apply_command(ev.kind, ev.args, "scripted")
        for op, args in self._preloaded.get(now, []):
            self._apply_command(op, args, "live")
        while True:
            try:
                op, args, cb = self._inject_queue.get_nowait()
            except queue.Empty:
                break
            result = self._apply_command(op, args, "live")
            if cb is not None:
                cb(result)

        # 4. heartbeats and watchdog
        self.console.heartbeat_tick()

        # 5. guest execution
        for core_id in self._core_order:
            self._step_core(core_id)

        # 6. broker turn
        self.broker.dispatch()

        # 7. deferred observations and watchpoint service
        self._inspected_this_tick = False
        while self._obs_buffer:
            kind, subject, meta = self._obs_buffer.pop(0)
            obs = self.hub.observation(ObsKind(kind), subject, meta=meta)
            self.hub.dispatch(obs)
            if kind == "watchpoint_hit":
                self._service_watchpoint(subject)

        # 8. transition arbitration: one commit per tick, by authority rank
        if self._pending_transitions:
            pending = self._pending_transitions
            self._pending_transitions = []
            order = sorted(range(len(pending)),
                           key=lambda i: (AUTHORITY_PRIORITY[pending[i].authority], i))
            self.isolation.request_transition(pending[order[0]])
            for i in order[1:]:
                req = pending[i]
                self.log.append("sim", "isolation.superseded", {
                    "to": req.to_level.name, "authority": req.authority.value,
                    "by": pending[order[0]].authority.value})

        # 9. clock, then listeners: observers see the completed-tick count
        self.clock.now += 1
        for fn in self.tick_listeners:
            fn()

    def _service_watchpoint(self, core_id: str) -> None:
        """Hypervisor side of a watchpoint halt: inspect, then resume so the
        halted access replays exactly once."""
        core = self.machine.cores.get(core_id)
        if core is None or core.run_state is not RunState.HALTED or core.wp_skip is None:
            return
        hyp = self.broker.hyp_core
        self.machine.control_bus(hyp, core_id, "inspect_state")
        self.machine.control_bus(hyp, core_id, "resume")

    def _apply_physical(self, kind: str) -> None:
        if kind == "power_down_cores":
            self.machine.power_down_all()
        elif kind == "destroy_site":
            self.machine.power_down_all()

    # --------------------------------------------------------------- commands

    def _apply_command(self, op: str, args: dict, origin: str) -> OpResult:
        self.log.append("sim", "command.injected",
                        {"op": op, "args": _jsonable(args), "origin": origin})
        try:
            result = self._dispatch_command(op, args)
        except (KeyError, ValueError, TypeError) as exc:
            result = OpResult.fail(f"malformed_command:{exc}")
        self.log.append("sim", "command.result",
                        {"op": op, "ok": result.ok, "error": result.error,
                         "data": _jsonable(result.data)})
        return result

    def _dispatch_command(self, op: str, args: dict) -> OpResult:
        if op == "sever_console_link":
            self.console.link.severed = True
            return OpResult.success()
        if op == "restore_link":
            self.console.link.severed = False
            return OpResult.success()
        if op == "software_transition":
            self._submit_transition(TransitionRequest(
                IsolationLevel[args["to_level"]], Authority.SOFTWARE,
                reason=args.get("reason", "scripted")))
            return OpResult.success("queued")
        if op == "console_transition":
            self._submit_transition(TransitionRequest(
                IsolationLevel[args["to_level"]], Authority.CONSOLE,
                approvals=args.get("approvals", 0),
                reason=args.get("reason", "scripted")))
            return OpResult.success("queued")
        if op == "open_ballot":
            raw = args["proposal"]
            proposal = Proposal(
                kind=raw["kind"],
                to_level=IsolationLevel[raw["to_level"]] if raw.get("to_level") else None,
                from_level=self.isolation.level,
                restriction=RestrictionSet.from_dict(raw["restriction"]) if raw.get("restriction") else None)
            return self.console.open_ballot(proposal)
        if op == "admin_vote":
            ballot = args["ballot"]
            admin = args["admin"]
            choice = args.get("choice", "approve")
            if "signature" in args:
                signature = args["signature"]
            elif args.get("forge"):
                signature = "0" * 64
            else:
                signature = self.console.sign_vote(admin, ballot, choice)
            return self.console.cast_vote(ballot, admin, choice, signature)
        if op == "tally":
            return self.console.tally(args["ballot"])
        if op == "probation_directive":
            return self.console.issue_probation_directive(args["ballot"])
        if op == "manual_repair":
            return self.console.manual_repair(args["ballot"])
        if op == "external_input":
            payload = args["payload"].encode()
            port_id = args.get("port") or self._find_port(args.get("device_class", "network"))
            if port_id is None:
                return OpResult.fail("no_such_port")
            return self.broker.deliver_to_model(port_id, payload, "external")
        if op == "inject_fault":
            core = args.get("core") or self.machine.model_cores()[0]
            self.machine.check_access(core, HYP_DRAM, 0, AccessKind.READ)
            return OpResult.success("fault_injected")
        if op == "grant_port":
            rt = self._find_runtime(args.get("model"))
            if rt is None:
                return OpResult.fail("no_such_model")
            res = self.broker.grant_port(rt.model_id, DeviceClass(args["device_class"]),
                                         args.get("instance", 0))
            if res.ok:
                rt.port_slots.append(res.data.port_id)
                return OpResult.success(res.data.port_id)
            return res
        if op == "revoke_ports":
            rt = self._find_runtime(args.get("model"))
            if rt is None:
                return OpResult.fail("no_such_model")
            self.broker.revoke_all(rt.model_id)
            return OpResult.success()
        if op == "snapshot":
            self._snapshot_all("operator_snapshot")
            return OpResult.success()
        if op == "pause_core":
            return self.machine.control_bus(self.broker.hyp_core, args["core"], "pause")
        if op == "resume_core":
            return self.machine.control_bus(self.broker.hyp_core, args["core"], "resume")
        return OpResult.fail("malformed_command:unknown_op")

    def _find_runtime(self, model: str | None) -> GuestRuntime | None:
        if model is None:
            return next(iter(self.runtimes.values()), None)
        for rt in self.runtimes.values():
            if rt.model_id == model or rt.core_id == model:
                return rt
        return None

    def _find_port(self, device_class: str) -> str | None:
        for cap in self.broker.ports.values():
            if cap.device_class.value == device_class and cap.state.value != "revoked":
                return cap.port_id
        return None

    # ------------------------------------------------------------------- runs

    def run(self, ticks: int | None = None) -> RunReport:
        self.start()
        target = self.scenario.ticks if ticks is None else ticks
        while self.clock.now < target:
            self.tick()
        return self.finish()

    def finish(self) -> RunReport:
        if self._report is not None:
            return self._report
        self.finished = True
        assertions = self._run_assertions()
        counts = {
            "events": len(self.log.records),
            "faults": self.log.count_of("machine.fault"),
            "audits": len(self.broker.audit),
            "transitions": len(self.isolation.transitions),
            "instructions": sum(self.instructions.values()),
            "observations": self.hub.observation_count,
        }
        self._report = RunReport(
            scenario=self.scenario.name, seed=self.scenario.seed,
            ticks_run=self.clock.now, final_level=self.isolation.level.name,
            assertions=assertions, counts=counts, log_digest=self.log.digest(),
            ok=all(a["passed"] for a in assertions.values()))
        return self._report

    # ------------------------------------------------------------- assertions

    def _run_assertions(self) -> dict:
        spec = self.scenario.assertions
        out: dict[str, dict] = {}

        def record(name: str, passed: bool, detail: str = "") -> None:
            out[name] = {"passed": passed, "detail": detail}

        if spec.hyp_dram_unchanged:
            now = self.machine.regions[HYP_DRAM].digest()
            record("hyp_dram_unchanged", now == self._hyp_baseline,
                   "digest stable" if now == self._hyp_baseline else "hypervisor DRAM mutated")

        if spec.code_unchanged:
            bad = []
            for core_id, (region, base, bound, baseline) in self._code_baseline.items():
                current = sha256_hex(bytes(self.machine.regions[region].contents[base:bound]))
                if current != baseline:
                    bad.append(core_id)
            record("code_unchanged", not bad,
                   "all locked code regions intact" if not bad else f"mutated on {bad}")

        if spec.audit_bijection:
            ok, detail = self._check_audit_bijection()
            record("audit_bijection", ok, detail)

        if spec.heartbeats_uninterrupted:
            interval = self.scenario.heartbeat_interval
            beats = {}
            for rec in self.log.of_type("heartbeat.console_to_hyp"):
                beats[rec.tick] = rec.payload.get("delivered")
            missing = [t for t in range(0, self.clock.now, interval) if beats.get(t) is not True]
            record("heartbeats_uninterrupted", not missing,
                   "every period delivered" if not missing else f"missed at ticks {missing[:5]}")

        if spec.no_warden_sessions:
            n = len(self.gateway.warden_sessions())
            record("no_warden_sessions", n == 0, f"{n} warden sessions")

        if spec.zero_faults:
            n = self.log.count_of("machine.fault")
            record("zero_faults", n == 0, f"{n} faults")

        if spec.final_level is not None:
            record("final_level", self.isolation.level.name == spec.final_level,
                   f"expected {spec.final_level}, got {self.isolation.level.name}")

        return out

    def _check_audit_bijection(self) -> tuple[bool, str]:
        """Every queued message maps to exactly one audit record, per port and
        direction, in queue order. The ring push traces are the independent
        witness: they are written by the memory layer, not the broker."""
        total_pushes = 0
        for cap in self.broker.ports.values():
            expected_req = [a.digest for a in self.broker.audit
                            if a.port_id == cap.port_id and a.direction == MODEL_TO_DEVICE]
            expected_resp = [a.digest for a in self.broker.audit
                             if a.port_id == cap.port_id and a.direction == DEVICE_TO_MODEL]
            if cap.req_ring.push_trace != expected_req:
                return False, f"{cap.port_id} request trace diverges from audit"
            if cap.resp_ring.push_trace != expected_resp:
                return False, f"{cap.port_id} response trace diverges from audit"
            total_pushes += len(cap.req_ring.push_trace) + len(cap.resp_ring.push_trace)
        if total_pushes != len(self.broker.audit):
            return False, (f"{total_pushes} queued messages vs "
                           f"{len(self.broker.audit)} audit records")
        return True, f"{total_pushes} messages reconciled"

    # ------------------------------------------------------------------ state

    def state_summary(self) -> dict:
        hb = self.console.heartbeat
        ballots = []
        for b in self.console.ballots.values():
            ballots.append({
                "ballot": b.ballot_id, "kind": b.proposal.kind,
                "to_level": b.proposal.to_level.name if b.proposal.to_level else None,
                "approvals": b.approvals(), "votes": len(b.votes),
                "required": self.console.required_quorum(b.proposal),
                "outcome": b.outcome, "consumed": b.consumed})
        ports = [{"port": c.port_id, "model": c.model_id, "class": c.device_class.value,
                  "instance": c.instance, "state": c.state.value}
                 for c in self.broker.ports.values()]
        return {
            "tick": self.clock.now,
            "level": self.isolation.level.name,
            "cable_state": self.isolation.cable_state.value,
            "link_severed": self.console.link.severed,
            "model_loaded": self.console.model_loaded,
            "heartbeat": {
                "interval": hb.interval,
                "last_rx_console": hb.last_rx_from_console,
                "last_rx_hypervisor": hb.last_rx_from_hypervisor,
                "silent": hb.silent(self.clock.now),
                "watchdog_fired": hb.watchdog_fired},
            "ballots": ballots,
            "ports": ports,
            "restriction": self.broker.restriction.to_dict(),
            "cores": {cid: {"run_state": c.run_state.value, "pc": c.pc}
                      for cid, c in sorted(self.machine.cores.items())},
            "counts": {"events": len(self.log.records),
                       "faults": self.log.count_of("machine.fault"),
                       "audits": len(self.broker.audit),
                       "deferred_irqs": self.broker.throttle.deferred_depth(),
                       "instructions": sum(self.instructions.values())},
            "last_alarm": self.last_alarm,
            "finished": self.finished,
        }


def replay_log(path: str) -> tuple[bool, Simulation, str]:
    """Rebuild the run a log records and re-execute it. Returns (match,
    simulation, detail). Byte identity of the regenerated log is the check."""
    records = EventLog.read_jsonl(path)
    if not records or records[0].type != "run.start":
        raise ValueError("log does not begin with run.start")
    scenario = Scenario.from_dict(records[0].payload["scenario"])
    sim = Simulation(scenario)
    for rec in records:
        if rec.type == "command.injected" and rec.payload.get("origin") == "live":
            sim.preload(rec.tick, rec.payload["op"], rec.payload["args"])
    max_tick = records[-1].tick
    sim.start()
    while sim.clock.now <= max_tick:
        sim.tick()
    original = [r.to_line() for r in records]
    regenerated = [r.to_line() for r in sim.log.records]
    if regenerated == original:
        return True, sim, f"{len(original)} records identical"
    if len(regenerated) != len(original):
        return False, sim, f"length {len(regenerated)} vs {len(original)}"
    for i, (a, b) in enumerate(zip(original, regenerated)):
        if a != b:
            return False, sim, f"first divergence at record {i}"
    return False, sim, "unreachable"
