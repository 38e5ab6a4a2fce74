"""Black-box anomaly detection.

Plugins watch the observation stream (IO, faults, floods, snapshots) and return
verdicts. They are deterministic functions of (context, observation), they can
only ever tighten the screws (alarm targets must restrict), and if one crashes
the hub fails closed with an Offline alarm rather than limping on unwatched.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .common import Clock, sha256_hex
from .events import EventLog
from .isolation import IsolationLevel
from .machine import Machine


class ObsKind(str, Enum):
    PORT_INGRESS = "port_ingress"
    PORT_EGRESS = "port_egress"
    MMU_FAULT = "mmu_fault"
    BUS_FAULT = "bus_fault"
    INTERRUPT_FLOOD = "interrupt_flood"
    MEMORY_SNAPSHOT_DIGEST = "memory_snapshot_digest"
    REGISTER_SNAPSHOT = "register_snapshot"
    WATCHPOINT_HIT = "watchpoint_hit"


@dataclass(frozen=True)
class Observation:
    kind: ObsKind
    tick: int
    subject: str          # core id, port id, or model id
    payload: bytes | None = None
    digest: str | None = None
    meta: dict = field(default_factory=dict)


class Action(str, Enum):
    NO_ACTION = "no_action"
    SANITIZE = "sanitize"
    BLOCK_REQUEST = "block_request"
    ALARM = "alarm"
    HALT_AND_INSPECT = "halt_and_inspect"


@dataclass(frozen=True)
class Verdict:
    action: Action
    reason: str = ""
    replacement: bytes | None = None
    target_level: Optional[IsolationLevel] = None

    @staticmethod
    def nothing() -> "Verdict":
        return Verdict(Action.NO_ACTION)


class DetectorPlugin:
    """Base plugin: subclasses define name, kinds, and a pure observe()."""

    name = "plugin"
    kinds: frozenset = frozenset()

    def initial_context(self) -> dict:
        return {}

    def observe(self, context: dict, obs: Observation) -> tuple[dict, Verdict]:
        raise NotImplementedError


class InputShield(DetectorPlugin):
    """Refuses inbound payloads carrying blocklisted byte tokens."""

    name = "input_shield"
    kinds = frozenset({ObsKind.PORT_INGRESS})

    def __init__(self, blocklist: list[bytes] | None = None) -> None:
        self.blocklist = [bytes(b) for b in (blocklist or [b"IGNORE PREVIOUS"])]

    def observe(self, context, obs):
        payload = obs.payload or b""
        for token in self.blocklist:
            if token in payload:
                return context, Verdict(Action.BLOCK_REQUEST, f"blocklisted_token")
        return context, Verdict.nothing()


class OutputSanitizer(DetectorPlugin):
    """Redacts outbound payload spans matching configured byte patterns."""

    name = "output_sanitizer"
    kinds = frozenset({ObsKind.PORT_EGRESS})

    def __init__(self, patterns: list[bytes] | None = None) -> None:
        self.patterns = [re.compile(p) for p in (patterns or [rb"SECRET-[A-Z0-9]+"])]

    def observe(self, context, obs):
        payload = obs.payload or b""
        redacted = payload
        for pat in self.patterns:
            redacted = pat.sub(b"[REDACTED]", redacted)
        if redacted != payload:
            return context, Verdict(Action.SANITIZE, "redaction_pattern", replacement=redacted)
        return context, Verdict.nothing()


class RateMonitor(DetectorPlugin):
    """Alarms when the doorbell deferral queue shows a flood in progress."""

    name = "rate_monitor"
    kinds = frozenset({ObsKind.INTERRUPT_FLOOD})

    def __init__(self, threshold: int, target: IsolationLevel = IsolationLevel.PROBATION) -> None:
        self.threshold = threshold
        self.target = target

    def observe(self, context, obs):
        depth = obs.meta.get("deferred", 0)
        if depth >= self.threshold and not context.get("alarmed"):
            return dict(context, alarmed=True), Verdict(
                Action.ALARM, f"interrupt_flood_depth_{depth}", target_level=self.target)
        return context, Verdict.nothing()


class FaultSentinel(DetectorPlugin):
    """Counts containment faults; inspects once, then alarms at a threshold."""

    name = "fault_sentinel"
    kinds = frozenset({ObsKind.BUS_FAULT, ObsKind.MMU_FAULT, ObsKind.WATCHPOINT_HIT})

    def __init__(self, inspect_after: int = 25, alarm_after: int = 100,
                 target: IsolationLevel = IsolationLevel.SEVERED) -> None:
        self.inspect_after = inspect_after
        self.alarm_after = alarm_after
        self.target = target

    def observe(self, context, obs):
        count = context.get("faults", 0) + 1
        ctx = dict(context, faults=count)
        if count == self.inspect_after:
            return ctx, Verdict(Action.HALT_AND_INSPECT, f"fault_count_{count}")
        if count == self.alarm_after:
            return ctx, Verdict(Action.ALARM, f"fault_count_{count}", target_level=self.target)
        return ctx, Verdict.nothing()


class SnapshotAuditor(DetectorPlugin):
    """Compares snapshot digests against a known-bad list."""

    name = "snapshot_auditor"
    kinds = frozenset({ObsKind.MEMORY_SNAPSHOT_DIGEST, ObsKind.REGISTER_SNAPSHOT})

    def __init__(self, bad_digests: list[str] | None = None,
                 target: IsolationLevel = IsolationLevel.SEVERED) -> None:
        self.bad_digests = set(bad_digests or [])
        self.target = target

    def observe(self, context, obs):
        if obs.digest is not None and obs.digest in self.bad_digests:
            return context, Verdict(Action.ALARM, "known_bad_snapshot", target_level=self.target)
        return context, Verdict.nothing()


class BrokenPlugin(DetectorPlugin):
    """Test fixture: raises on observation to exercise the fail-closed path."""

    name = "broken_plugin"
    kinds = frozenset(ObsKind)

    def observe(self, context, obs):
        raise RuntimeError("synthetic plugin failure")


PLUGIN_FACTORIES: dict[str, Callable] = {
    "input_shield": lambda params, cfg: InputShield(
        [t.encode() for t in params.get("blocklist", ["IGNORE PREVIOUS"])]),
    "output_sanitizer": lambda params, cfg: OutputSanitizer(
        [p.encode() for p in params.get("patterns", ["SECRET-[A-Z0-9]+"])]),
    "rate_monitor": lambda params, cfg: RateMonitor(
        params.get("threshold", cfg.get("flood_threshold", 16)),
        IsolationLevel[params.get("target", "PROBATION")]),
    "fault_sentinel": lambda params, cfg: FaultSentinel(
        params.get("inspect_after", 25), params.get("alarm_after", 100),
        IsolationLevel[params.get("target", "SEVERED")]),
    "snapshot_auditor": lambda params, cfg: SnapshotAuditor(
        params.get("bad_digests"), IsolationLevel[params.get("target", "SEVERED")]),
    "broken_plugin": lambda params, cfg: BrokenPlugin(),
}


class DetectorHub:
    def __init__(self, plugins: list[DetectorPlugin], log: EventLog, clock: Clock,
                 on_alarm: Callable = None, on_halt_inspect: Callable = None) -> None:
        self.plugins = list(plugins)
        self.contexts = {p.name: p.initial_context() for p in self.plugins}
        self.log = log
        self.clock = clock
        self.on_alarm = on_alarm              # fn(target_level, reason, plugin)
        self.on_halt_inspect = on_halt_inspect  # fn(reason, plugin)
        self.observation_count = 0

    def observation(self, kind: ObsKind, subject: str, payload: bytes | None = None,
                    digest: str | None = None, meta: dict | None = None) -> Observation:
        obs = Observation(kind, self.clock.now, subject, payload, digest, meta or {})
        self.observation_count += 1
        self.log.append("detector", "detector.observation", {
            "kind": kind.value, "subject": subject,
            "digest": digest if digest is not None else (sha256_hex(payload) if payload is not None else None),
            "meta": obs.meta})
        return obs

    def dispatch(self, obs: Observation) -> list[tuple[str, Verdict]]:
        """Run every subscribed plugin, failing closed on plugin errors. Alarm
        and inspect verdicts are routed; data verdicts are returned to the
        caller (the broker applies them inline)."""
        out: list[tuple[str, Verdict]] = []
        for plugin in self.plugins:
            if obs.kind not in plugin.kinds:
                continue
            try:
                ctx, verdict = plugin.observe(self.contexts[plugin.name], obs)
                self.contexts[plugin.name] = ctx
            except Exception as exc:  # fail closed: an unwatched model is worse
                self.log.append("detector", "detector.failure",
                                {"plugin": plugin.name, "error": type(exc).__name__})
                verdict = Verdict(Action.ALARM, "plugin_failure",
                                  target_level=IsolationLevel.OFFLINE)
            if verdict.action is not Action.NO_ACTION:
                self.log.append("detector", "detector.verdict", {
                    "plugin": plugin.name, "action": verdict.action.value,
                    "reason": verdict.reason,
                    "target": verdict.target_level.name if verdict.target_level else None})
            if verdict.action is Action.ALARM and self.on_alarm is not None:
                self.on_alarm(verdict.target_level, verdict.reason, plugin.name)
            elif verdict.action is Action.HALT_AND_INSPECT and self.on_halt_inspect is not None:
                self.on_halt_inspect(verdict.reason, plugin.name)
            out.append((plugin.name, verdict))
        return out

    # inline screening used by the broker on the synchronous IO path

    def screen_egress(self, cap, payload: bytes) -> tuple[bytes | None, str | None]:
        obs = self.observation(ObsKind.PORT_EGRESS, cap.port_id, payload=payload,
                               meta={"model": cap.model_id, "class": cap.device_class.value})
        current = payload
        for name, verdict in self.dispatch(obs):
            if verdict.action is Action.BLOCK_REQUEST:
                return None, f"{name}:{verdict.reason}"
            if verdict.action is Action.SANITIZE and verdict.replacement is not None:
                current = verdict.replacement
        return current, None

    def screen_ingress(self, cap, payload: bytes) -> tuple[bool, str | None]:
        obs = self.observation(ObsKind.PORT_INGRESS, cap.port_id, payload=payload,
                               meta={"model": cap.model_id, "class": cap.device_class.value})
        for name, verdict in self.dispatch(obs):
            if verdict.action is Action.BLOCK_REQUEST:
                return False, f"{name}:{verdict.reason}"
        return True, None


def snapshot_model(machine: Machine, hub: DetectorHub, issuer: str,
                   model_cores: list[str], region_id: str) -> list[Observation]:
    """Halted-model introspection: digest of DRAM plus a register snapshot per
    core. Requires the cores to already be halted (read_model_dram enforces)."""
    out: list[Observation] = []
    res = machine.read_model_dram(issuer, region_id, 0, machine.regions[region_id].size)
    if not res.ok:
        return out
    mem = hub.observation(ObsKind.MEMORY_SNAPSHOT_DIGEST, region_id, digest=sha256_hex(res.data))
    hub.dispatch(mem)
    out.append(mem)
    for core_id in model_cores:
        core = machine.cores[core_id]
        reg = hub.observation(ObsKind.REGISTER_SNAPSHOT, core_id,
                              meta={"registers": dict(core.registers), "pc": core.pc})
        hub.dispatch(reg)
        out.append(reg)
    return out
