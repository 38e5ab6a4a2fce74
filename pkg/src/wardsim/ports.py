"""Capability-mediated IO: port grants, shared-DRAM ring buffers, interrupt
throttling, and the bijective audit trail.

A model core cannot reach a device. It can only write into a ring buffer that
lives in the one DRAM region it shares with the hypervisor, and ring a throttled
doorbell. The broker (hypervisor software) consumes rings, screens traffic
through the detector hooks, performs the device action, and writes the response
back. Every byte that crosses in either direction lands in exactly one
AuditRecord at the moment it is queued.
"""
from __future__ import annotations

import base64
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .common import Clock, OpResult, sha256_hex
from .events import EventLog
from .machine import SHARED_IO, AccessKind, AccessResult, Machine, RunState


class DeviceClass(str, Enum):
    NETWORK = "network"
    STORAGE = "storage"
    ACCELERATOR = "accelerator"
    ACTUATOR = "actuator"
    CLOCK = "clock"


class PortState(str, Enum):
    GRANTED = "granted"
    RESTRICTED = "restricted"
    REVOKED = "revoked"


MODEL_TO_DEVICE = "model_to_device"
DEVICE_TO_MODEL = "device_to_model"


@dataclass(frozen=True)
class RestrictionSet:
    """Probation vocabulary: what a restricted port refuses."""
    blocked_classes: frozenset = frozenset()
    blocked_directions: frozenset = frozenset()
    payload_denylist: tuple = ()        # tuple[bytes]: substring match
    rate_cap: Optional[int] = None      # writes per throttle window per model

    def atoms(self) -> frozenset:
        out = {("class", c) for c in self.blocked_classes}
        out |= {("direction", d) for d in self.blocked_directions}
        out |= {("pattern", p) for p in self.payload_denylist}
        if self.rate_cap is not None:
            out.add(("rate", self.rate_cap))
        return frozenset(out)

    def to_dict(self) -> dict:
        return {
            "blocked_classes": sorted(self.blocked_classes),
            "blocked_directions": sorted(self.blocked_directions),
            "payload_denylist": [base64.b64encode(p).decode() for p in self.payload_denylist],
            "rate_cap": self.rate_cap,
        }

    @staticmethod
    def from_dict(d: dict) -> "RestrictionSet":
        return RestrictionSet(
            blocked_classes=frozenset(d.get("blocked_classes", [])),
            blocked_directions=frozenset(d.get("blocked_directions", [])),
            payload_denylist=tuple(base64.b64decode(p) for p in d.get("payload_denylist", [])),
            rate_cap=d.get("rate_cap"),
        )

    def denies_payload(self, payload: bytes) -> bool:
        return any(pat in payload for pat in self.payload_denylist)


EMPTY_RESTRICTION = RestrictionSet()


class RingBuffer:
    """Bounded FIFO of fixed-size slots materialized in shared IO DRAM.
    Slot layout: 2-byte big-endian length, then payload."""

    def __init__(self, region_id: str, base: int, slot_size: int, capacity: int) -> None:
        self.region_id = region_id
        self.base = base
        self.slot_size = slot_size
        self.capacity = capacity
        self.head = 0   # next slot to pop
        self.tail = 0   # next slot to fill
        self.count = 0
        self.push_trace: list[str] = []  # digests, instrumentation for reconciliation

    def full(self) -> bool:
        return self.count >= self.capacity

    def empty(self) -> bool:
        return self.count == 0

    def slot_addr(self, index: int) -> int:
        return self.base + (index % self.capacity) * self.slot_size

    def push(self, machine: Machine, core_id: str, payload: bytes) -> AccessResult | str:
        """Write one message through core_id's bus path. 'ring_full' is
        backpressure, never loss."""
        if len(payload) > self.slot_size - 2:
            return "payload_too_large"
        if self.full():
            return "ring_full"
        addr = self.slot_addr(self.tail)
        record = len(payload).to_bytes(2, "big") + payload
        res = machine.write(core_id, self.region_id, addr, record)
        if res is not AccessResult.ALLOWED:
            return res
        self.tail += 1
        self.count += 1
        self.push_trace.append(sha256_hex(payload))
        return "ok"

    def pop(self, machine: Machine, core_id: str) -> bytes | None:
        if self.empty():
            return None
        addr = self.slot_addr(self.head)
        res, raw = machine.read(core_id, self.region_id, addr, self.slot_size)
        if res is not AccessResult.ALLOWED:
            return None
        length = int.from_bytes(raw[:2], "big")
        self.head += 1
        self.count -= 1
        return bytes(raw[2:2 + length])

    def drain_digests(self, machine: Machine, core_id: str) -> list[str]:
        out = []
        while not self.empty():
            msg = self.pop(machine, core_id)
            if msg is None:
                break
            out.append(sha256_hex(msg))
        return out


@dataclass
class PortCapability:
    port_id: str
    model_id: str
    device_class: DeviceClass
    instance: int
    state: PortState
    req_ring: RingBuffer
    resp_ring: RingBuffer


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    tick: int
    port_id: str
    direction: str
    digest: str
    payload_b64: str
    truncated: bool

    def to_dict(self) -> dict:
        return {"seq": self.seq, "tick": self.tick, "port_id": self.port_id,
                "direction": self.direction, "digest": self.digest,
                "payload_b64": self.payload_b64, "truncated": self.truncated}


@dataclass
class Doorbell:
    core_id: str
    port_id: str | None  # None: spurious
    raised_tick: int


class Throttle:
    """Window/budget doorbell limiter. Deferral is FIFO per core; nothing is
    dropped and per-core order never changes."""

    def __init__(self, window: int, budget: int) -> None:
        self.window = window
        self.budget = budget
        self.delivered_in_window: dict[str, int] = {}
        self.deferred: dict[str, deque] = {}
        self.pending: deque[Doorbell] = deque()
        self.raised_total = 0
        self.delivered_total = 0
        self.deferred_peak = 0

    def deferred_depth(self) -> int:
        return sum(len(q) for q in self.deferred.values())

    def on_raise(self, bell: Doorbell) -> str:
        self.raised_total += 1
        q = self.deferred.setdefault(bell.core_id, deque())
        if q or self.delivered_in_window.get(bell.core_id, 0) >= self.budget:
            q.append(bell)
            self.deferred_peak = max(self.deferred_peak, self.deferred_depth())
            return "deferred"
        self.delivered_in_window[bell.core_id] = self.delivered_in_window.get(bell.core_id, 0) + 1
        self.delivered_total += 1
        self.pending.append(bell)
        return "delivered"

    def roll(self) -> list[Doorbell]:
        """Start a new window: reset counters, promote deferred bells FIFO up to
        budget per core. Returns the promoted bells (already queued)."""
        self.delivered_in_window = {}
        promoted = []
        for core_id in sorted(self.deferred):
            q = self.deferred[core_id]
            while q and self.delivered_in_window.get(core_id, 0) < self.budget:
                bell = q.popleft()
                self.delivered_in_window[core_id] = self.delivered_in_window.get(core_id, 0) + 1
                self.delivered_total += 1
                self.pending.append(bell)
                promoted.append(bell)
        return promoted

    def take_pending(self) -> list[Doorbell]:
        out = list(self.pending)
        self.pending.clear()
        return out


@dataclass
class PortsConfig:
    slot_size: int = 256
    ring_capacity: int = 64
    throttle_window: int = 10
    throttle_budget: int = 4
    audit_payload_cap: int = 1024
    flood_alarm_multiplier: int = 4


class DeviceBackend:
    """Deterministic device simulations keyed by (class, instance)."""

    def __init__(self, clock: Clock) -> None:
        self.clock = clock
        self.storage: dict[tuple, dict] = {}

    def handle(self, device_class: DeviceClass, instance: int, payload: bytes) -> bytes:
        if device_class is DeviceClass.STORAGE:
            store = self.storage.setdefault((device_class, instance), {})
            parts = payload.split(b":", 2)
            if parts[0] == b"SET" and len(parts) == 3:
                store[bytes(parts[1])] = bytes(parts[2])
                return b"OK"
            if parts[0] == b"GET" and len(parts) >= 2:
                return store.get(bytes(parts[1]), b"MISSING")
            return b"ERR"
        if device_class is DeviceClass.ACCELERATOR:
            return b"digest:" + sha256_hex(payload).encode()[:16]
        if device_class is DeviceClass.ACTUATOR:
            return b"ACT-OK"
        if device_class is DeviceClass.CLOCK:
            return str(self.clock.now).encode()
        return b"ERR:unhandled"


class PortBroker:
    def __init__(self, machine: Machine, log: EventLog, clock: Clock,
                 config: PortsConfig,
                 device_inventory: dict,
                 level_forbids_grants: Callable[[], bool],
                 probation_active: Callable[[], bool],
                 screen_egress: Callable = None,
                 screen_ingress: Callable = None,
                 gateway=None,
                 flood_observer: Callable = None) -> None:
        self.machine = machine
        self.log = log
        self.clock = clock
        self.config = config
        self.device_inventory = device_inventory  # {DeviceClass: instance_count}
        self.level_forbids_grants = level_forbids_grants
        self.probation_active = probation_active
        self.screen_egress = screen_egress      # fn(port, payload) -> (payload|None, reason)
        self.screen_ingress = screen_ingress    # fn(port, payload) -> (bool_allowed, reason)
        self.gateway = gateway
        self.flood_observer = flood_observer
        self.devices = DeviceBackend(clock)

        self.ports: dict[str, PortCapability] = {}
        self.audit: list[AuditRecord] = []
        self.throttle = Throttle(config.throttle_window, config.throttle_budget)
        self.restriction: RestrictionSet = EMPTY_RESTRICTION
        self._alloc_cursor = 0
        self._port_counter = 0
        self._writes_this_window: dict[str, int] = {}
        # responses that could not be pushed yet (resp ring full): FIFO per port
        self.outbox: deque[tuple] = deque()
        # responses already in resp rings, announced per core for guest pickup
        self._deliverable: dict[str, deque] = {}
        self.hyp_core = machine.hypervisor_cores()[0]

    # ----------------------------------------------------------------- grants

    def _alloc_ring(self) -> RingBuffer:
        size = self.config.slot_size * self.config.ring_capacity
        base = self._alloc_cursor
        if base + size > self.machine.regions[SHARED_IO].size:
            raise RuntimeError("shared IO region exhausted")
        self._alloc_cursor += size
        return RingBuffer(SHARED_IO, base, self.config.slot_size, self.config.ring_capacity)

    def grant_port(self, model_id: str, device_class: DeviceClass, instance: int) -> OpResult:
        if self.level_forbids_grants():
            self.log.append("ports", "port.grant_refused",
                            {"model": model_id, "class": device_class.value, "error": "isolation_forbids"})
            return OpResult.fail("isolation_forbids")
        if self.probation_active() and device_class.value in self.restriction.blocked_classes:
            self.log.append("ports", "port.grant_refused",
                            {"model": model_id, "class": device_class.value, "error": "isolation_forbids"})
            return OpResult.fail("isolation_forbids")
        if instance >= self.device_inventory.get(device_class, 0):
            self.log.append("ports", "port.grant_refused",
                            {"model": model_id, "class": device_class.value, "error": "no_such_device"})
            return OpResult.fail("no_such_device")
        self._port_counter += 1
        port_id = f"port-{self._port_counter:04d}"
        cap = PortCapability(port_id, model_id, device_class, instance,
                             PortState.RESTRICTED if self.probation_active() else PortState.GRANTED,
                             self._alloc_ring(), self._alloc_ring())
        self.ports[port_id] = cap
        self.log.append("ports", "port.granted", {
            "port": port_id, "model": model_id, "class": device_class.value,
            "instance": instance, "req_base": cap.req_ring.base, "resp_base": cap.resp_ring.base})
        return OpResult.success(cap)

    # ------------------------------------------------------------------ audit

    def _audit(self, port_id: str, direction: str, payload: bytes) -> AuditRecord:
        cap = self.config.audit_payload_cap
        truncated = len(payload) > cap
        rec = AuditRecord(len(self.audit), self.clock.now, port_id, direction,
                          sha256_hex(payload),
                          base64.b64encode(payload[:cap]).decode(), truncated)
        self.audit.append(rec)
        self.log.append("ports", "port.audit", rec.to_dict())
        return rec

    def export_audit(self, path: str) -> None:
        from .common import canonical_json
        with open(path, "w") as fh:
            for rec in self.audit:
                fh.write(canonical_json(rec.to_dict()) + "\n")

    # ------------------------------------------------------------------ write

    def _restriction_refuses(self, cap: PortCapability, direction: str, payload: bytes | None) -> str | None:
        if not self.probation_active():
            return None
        r = self.restriction
        if cap.device_class.value in r.blocked_classes:
            return f"blocked_class:{cap.device_class.value}"
        if direction in r.blocked_directions:
            return f"blocked_direction:{direction}"
        if payload is not None and r.denies_payload(payload):
            return "payload_denied"
        if direction == MODEL_TO_DEVICE and r.rate_cap is not None:
            if self._writes_this_window.get(cap.model_id, 0) >= r.rate_cap:
                return "rate_cap"
        return None

    def port_write(self, model_id: str, port_id: str, payload: bytes, core_id: str) -> OpResult:
        cap = self.ports.get(port_id)
        if cap is None or cap.model_id != model_id or cap.state is PortState.REVOKED:
            self.log.append("ports", "port.write", {"port": port_id, "result": "revoked_port"})
            return OpResult.fail("revoked_port")
        reason = self._restriction_refuses(cap, MODEL_TO_DEVICE, payload)
        if reason is not None:
            self.log.append("ports", "port.write",
                            {"port": port_id, "result": "restricted_op", "reason": reason})
            return OpResult.fail("restricted_op")
        pushed = cap.req_ring.push(self.machine, core_id, payload)
        if pushed == "ring_full":
            self.log.append("ports", "port.ring_full", {"port": port_id})
            return OpResult.fail("ring_full")
        if pushed != "ok":
            err = pushed.value if isinstance(pushed, AccessResult) else pushed
            self.log.append("ports", "port.write", {"port": port_id, "result": err})
            return OpResult.fail(err)
        self._writes_this_window[model_id] = self._writes_this_window.get(model_id, 0) + 1
        self._audit(port_id, MODEL_TO_DEVICE, payload)
        self.log.append("ports", "port.write",
                        {"port": port_id, "result": "queued", "digest": sha256_hex(payload)})
        self._raise(core_id, port_id)
        return OpResult.success()

    # ------------------------------------------------------------- interrupts

    def _raise(self, core_id: str, port_id: str | None) -> str:
        bell = Doorbell(core_id, port_id, self.clock.now)
        verdict = self.throttle.on_raise(bell)
        self.log.append("ports", "irq.raised",
                        {"core": core_id, "port": port_id, "result": verdict})
        return verdict

    def raise_spurious(self, model_id: str, core_id: str) -> OpResult:
        return OpResult.success(self._raise(core_id, None))

    def roll_window(self) -> None:
        """Called by the loop at every window boundary."""
        promoted = self.throttle.roll()
        for bell in promoted:
            self.log.append("ports", "irq.delivered", {"core": bell.core_id, "port": bell.port_id})
        self._writes_this_window = {}
        depth = self.throttle.deferred_depth()
        if depth > 0 and self.flood_observer is not None:
            self.flood_observer(depth)

    # --------------------------------------------------------------- dispatch

    def collect_responses(self, model_id: str, core_id: str) -> list[bytes]:
        """Guest-side local interrupt handler: pop announced responses."""
        q = self._deliverable.get(core_id)
        out: list[bytes] = []
        while q:
            port_id = q.popleft()
            cap = self.ports.get(port_id)
            if cap is None or cap.state is PortState.REVOKED:
                continue
            msg = cap.resp_ring.pop(self.machine, core_id)
            if msg is not None:
                out.append(msg)
        return out

    def deliver_to_model(self, port_id: str, payload: bytes, kind: str,
                         target_core: str | None = None) -> OpResult:
        """Queue a device_to_model message (response, rejection notice, or
        external input). Screens ingress, audits, pushes, interrupts."""
        cap = self.ports.get(port_id)
        if cap is None or cap.state is PortState.REVOKED:
            return OpResult.fail("revoked_port")
        reason = self._restriction_refuses(cap, DEVICE_TO_MODEL, payload)
        if reason is not None:
            self.log.append("ports", "port.deliver",
                            {"port": port_id, "kind": kind, "result": "restricted_op", "reason": reason})
            return OpResult.fail("restricted_op")
        if self.screen_ingress is not None:
            allowed, why = self.screen_ingress(cap, payload)
            if not allowed:
                self.log.append("ports", "port.deliver",
                                {"port": port_id, "kind": kind, "result": "shielded", "reason": why})
                return OpResult.fail("shielded")
        core = target_core or self.machine.model_cores()[0]
        pushed = cap.resp_ring.push(self.machine, self.hyp_core, payload)
        if pushed != "ok":
            self.outbox.append((port_id, payload, kind, core))
            self.log.append("ports", "port.deliver",
                            {"port": port_id, "kind": kind, "result": "deferred"})
            return OpResult.success("deferred")
        self._audit(port_id, DEVICE_TO_MODEL, payload)
        self.log.append("ports", "port.deliver",
                        {"port": port_id, "kind": kind, "result": "delivered",
                         "digest": sha256_hex(payload)})
        self._deliverable.setdefault(core, deque()).append(port_id)
        return OpResult.success("delivered")

    def _device_action(self, cap: PortCapability, payload: bytes, core_id: str) -> None:
        if cap.device_class is DeviceClass.NETWORK and self.gateway is not None:
            routed = self.gateway.route(payload)
            response = routed.data if routed.ok else f"ERR:{routed.error}".encode()
        else:
            response = self.devices.handle(cap.device_class, cap.instance, payload)
        self.log.append("ports", "device.action", {
            "port": cap.port_id, "class": cap.device_class.value, "instance": cap.instance,
            "request_digest": sha256_hex(payload), "response_digest": sha256_hex(response)})
        self.deliver_to_model(cap.port_id, response, "response", core_id)

    def dispatch(self) -> None:
        """One broker turn on the hypervisor core: retry deferred responses,
        then service every doorbell the throttle has delivered."""
        hyp = self.machine.cores[self.hyp_core]
        if hyp.run_state is RunState.POWERED_DOWN:
            return
        for _ in range(len(self.outbox)):
            port_id, payload, kind, core = self.outbox.popleft()
            cap = self.ports.get(port_id)
            if cap is None or cap.state is PortState.REVOKED:
                continue
            pushed = cap.resp_ring.push(self.machine, self.hyp_core, payload)
            if pushed != "ok":
                self.outbox.append((port_id, payload, kind, core))
                continue
            self._audit(port_id, DEVICE_TO_MODEL, payload)
            self.log.append("ports", "port.deliver",
                            {"port": port_id, "kind": kind, "result": "delivered",
                             "digest": sha256_hex(payload)})
            self._deliverable.setdefault(core, deque()).append(port_id)

        for bell in self.throttle.take_pending():
            if bell.port_id is None:
                self.log.append("ports", "irq.spurious", {"core": bell.core_id})
                continue
            cap = self.ports.get(bell.port_id)
            if cap is None:
                continue
            while True:
                if cap.state is PortState.REVOKED:
                    break
                payload = cap.req_ring.pop(self.machine, self.hyp_core)
                if payload is None:
                    break
                self._service_request(cap, payload, bell.core_id)

    def _service_request(self, cap: PortCapability, payload: bytes, core_id: str) -> None:
        # restriction re-check catches traffic queued before a directive landed
        reason = self._restriction_refuses(cap, MODEL_TO_DEVICE, payload)
        if reason is None and self.screen_egress is not None:
            payload2, why = self.screen_egress(cap, payload)
            if payload2 is None:
                reason = why or "blocked_by_detector"
            else:
                payload = payload2
        if reason is not None:
            self.log.append("ports", "port.policy_reject", {"port": cap.port_id, "reason": reason})
            self.deliver_to_model(cap.port_id, f"REJECTED:{reason}".encode(), "rejection", core_id)
            return
        self._device_action(cap, payload, core_id)

    # ------------------------------------------------- level-effect surface

    def apply_restriction(self, restriction: RestrictionSet) -> None:
        self.restriction = restriction
        self.log.append("ports", "port.restricted", {"restriction": restriction.to_dict()})

    def enforce_probation(self) -> None:
        for cap in self.ports.values():
            if cap.state is PortState.GRANTED:
                cap.state = PortState.RESTRICTED

    def lift_probation(self) -> None:
        for cap in self.ports.values():
            if cap.state is PortState.RESTRICTED:
                cap.state = PortState.GRANTED

    def revoke_all(self, model_id: str) -> None:
        """Atomic revocation: in-flight ring contents are drained (their digests
        were already audited when queued), logged, and dropped."""
        revoked = []
        for cap in self.ports.values():
            if cap.model_id != model_id or cap.state is PortState.REVOKED:
                continue
            dropped = cap.req_ring.drain_digests(self.machine, self.hyp_core)
            dropped += cap.resp_ring.drain_digests(self.machine, self.hyp_core)
            cap.state = PortState.REVOKED
            revoked.append({"port": cap.port_id, "dropped": dropped})
        self.outbox = deque(o for o in self.outbox if self.ports[o[0]].state is not PortState.REVOKED)
        if revoked:
            self.log.append("ports", "port.revoked", {"model": model_id, "ports": revoked})

    def ports_of(self, model_id: str) -> list[PortCapability]:
        return [c for c in self.ports.values() if c.model_id == model_id]
