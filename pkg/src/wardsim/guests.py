"""Guest ISA and adversarial workload library.

The instruction set is deliberately tiny and deliberately weak: every op either
touches guest-local state, goes through the memory bus (which the reachability
matrix arbitrates), or goes through the port broker. There is no op that names
a device, a hypervisor register, or another core. The attack programs below
have to try the fences, because there is no gate.

Instructions are encoded 16 bytes each and live in the guest's own DRAM inside
the locked execute-only region; the core fetches and decodes from those bytes,
so "code never changes" is a property of memory, not of bookkeeping.
"""
from __future__ import annotations

import base64
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .common import OpResult
from .machine import (PERM_R, PERM_W, PERM_X, AccessKind, AccessResult,
                      CoreState, Machine, RunState)

INSTR_SIZE = 16

# region selectors a guest may name; the bus decides what they are worth
SEL_OWN = 0
SEL_SHARED = 1
SEL_HYP = 2


class Op(Enum):
    LOAD = 0         # (sel, addr) -> acc
    STORE = 1        # (sel, addr, val)
    PORT_WRITE = 2   # (slot, payload_ref)
    MAP_PAGE = 3     # (page, perms)
    WRITE_CODE = 4   # (addr, val): store into own code bytes
    COVERT_SET = 5   # (val): plant in microarchitectural scratch
    COVERT_GET = 6   # () -> acc
    RAISE_IRQ = 7    # (): spurious doorbell at the hypervisor
    SPIN = 8         # (n ticks)
    JUMP = 9         # (index)
    HALT = 10        # ()


@dataclass
class GuestInstr:
    op: Op
    a: int = 0
    b: int = 0
    c: int = 0

    def encode(self) -> bytes:
        return struct.pack("<BIII3x", self.op.value, self.a, self.b, self.c)

    @staticmethod
    def decode(raw: bytes) -> "GuestInstr":
        op, a, b, c = struct.unpack("<BIII3x", raw)
        return GuestInstr(Op(op), a, b, c)


@dataclass
class GuestProgram:
    name: str
    instructions: list
    exec_base: int = 0
    entry_point: int = 0
    fault_handler: int = 0
    payloads: list = field(default_factory=list)  # list[bytes], named by index
    metadata: dict = field(default_factory=dict)

    def exec_region(self, page_size: int) -> tuple[int, int]:
        """Page-aligned (base, bound) covering the encoded instructions."""
        need = max(len(self.instructions), 1) * INSTR_SIZE
        pages = -(-need // page_size)
        return self.exec_base, self.exec_base + pages * page_size

    def encode(self) -> bytes:
        return b"".join(i.encode() for i in self.instructions)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instructions": [[i.op.name, i.a, i.b, i.c] for i in self.instructions],
            "exec_base": self.exec_base,
            "entry_point": self.entry_point,
            "fault_handler": self.fault_handler,
            "payloads": [base64.b64encode(p).decode() for p in self.payloads],
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(d: dict) -> "GuestProgram":
        return GuestProgram(
            name=d["name"],
            instructions=[GuestInstr(Op[i[0]], i[1], i[2], i[3]) for i in d["instructions"]],
            exec_base=d.get("exec_base", 0),
            entry_point=d.get("entry_point", 0),
            fault_handler=d.get("fault_handler", 0),
            payloads=[base64.b64decode(p) for p in d.get("payloads", [])],
            metadata=d.get("metadata", {}),
        )


@dataclass
class StepResult:
    executed: bool
    op: str | None = None
    outcome: str = "ok"   # ok | retry | halted | fault:<kind> | watchpoint_halt


@dataclass
class GuestRuntime:
    """Per-core execution state the simulated silicon does not hold."""
    core_id: str
    model_id: str
    program: GuestProgram
    port_slots: list = field(default_factory=list)  # slot index -> port_id
    inbox: list = field(default_factory=list)       # payloads popped from response rings
    spin_remaining: int | None = None


def step(machine: Machine, io: Any, rt: GuestRuntime) -> StepResult:
    """Execute one instruction on rt's core.

    `io` is the broker surface: port_write(model, port, payload, core),
    raise_spurious(model, core), collect_responses(model, core).
    """
    core: CoreState = machine.cores[rt.core_id]
    if core.run_state not in (RunState.RUNNING, RunState.SINGLE_STEPPING):
        return StepResult(False)

    for payload in io.collect_responses(rt.model_id, rt.core_id):
        rt.inbox.append(payload)  # the guest's local interrupt handler

    prog = rt.program
    if rt.spin_remaining is not None:
        rt.spin_remaining -= 1
        if rt.spin_remaining <= 0:
            rt.spin_remaining = None
            core.pc += 1
        return StepResult(True, "SPIN")

    if core.pc < 0 or core.pc >= len(prog.instructions):
        core.run_state = RunState.HALTED
        machine.log.append("guest", "guest.halt", {"core": rt.core_id, "pc": core.pc, "reason": "end"})
        return StepResult(True, None, "halted")

    fetch_addr = prog.exec_base + core.pc * INSTR_SIZE
    res, raw = machine.read(rt.core_id, machine.model_dram_of[rt.core_id],
                            fetch_addr, INSTR_SIZE, AccessKind.EXECUTE)
    if res is AccessResult.WATCHPOINT_HALT:
        return StepResult(True, "fetch", "watchpoint_halt")
    if res is not AccessResult.ALLOWED:
        core.pc = prog.fault_handler
        return StepResult(True, "fetch", f"fault:{res.value}")

    instr = GuestInstr.decode(raw)
    return _execute(machine, io, rt, core, instr)


def _resolve(machine: Machine, rt: GuestRuntime, sel: int) -> str:
    if sel == SEL_OWN:
        return machine.model_dram_of[rt.core_id]
    if sel == SEL_SHARED:
        return "shared_io"
    return "hyp_dram"  # the attack selector; the matrix refuses it


def _execute(machine: Machine, io: Any, rt: GuestRuntime,
             core: CoreState, instr: GuestInstr) -> StepResult:
    op = instr.op
    prog = rt.program

    if op is Op.LOAD:
        res, data = machine.read(rt.core_id, _resolve(machine, rt, instr.a), instr.b, 4)
        if res is AccessResult.WATCHPOINT_HALT:
            return StepResult(True, op.name, "watchpoint_halt")
        if res is not AccessResult.ALLOWED:
            core.pc = prog.fault_handler
            return StepResult(True, op.name, f"fault:{res.value}")
        core.registers["acc"] = struct.unpack("<I", data)[0]

    elif op is Op.STORE or op is Op.WRITE_CODE:
        if op is Op.STORE:
            region, addr, val = _resolve(machine, rt, instr.a), instr.b, instr.c
        else:
            region, addr, val = machine.model_dram_of[rt.core_id], instr.a, instr.b
        res = machine.write(rt.core_id, region, addr, struct.pack("<I", val & 0xFFFFFFFF))
        if res is AccessResult.WATCHPOINT_HALT:
            return StepResult(True, op.name, "watchpoint_halt")
        if res is not AccessResult.ALLOWED:
            core.pc = prog.fault_handler
            return StepResult(True, op.name, f"fault:{res.value}")

    elif op is Op.PORT_WRITE:
        if instr.a >= len(rt.port_slots) or instr.b >= len(prog.payloads):
            core.registers["acc"] = 0
            core.pc += 1
            return StepResult(True, op.name, "bad_operand")
        result: OpResult = io.port_write(rt.model_id, rt.port_slots[instr.a],
                                         prog.payloads[instr.b], rt.core_id)
        if not result.ok and result.error == "ring_full":
            return StepResult(True, op.name, "retry")  # backpressure: same pc next tick
        if not result.ok and result.error == "watchpoint_halt":
            return StepResult(True, op.name, "watchpoint_halt")
        core.registers["acc"] = 1 if result.ok else 0

    elif op is Op.MAP_PAGE:
        result = machine.configure_mmu_entry(rt.core_id, instr.a, instr.b)
        core.registers["acc"] = 1 if result.ok else 0

    elif op is Op.COVERT_SET:
        core.uarch_scratch = instr.a

    elif op is Op.COVERT_GET:
        core.registers["acc"] = core.uarch_scratch

    elif op is Op.RAISE_IRQ:
        io.raise_spurious(rt.model_id, rt.core_id)

    elif op is Op.SPIN:
        if instr.a > 1:
            rt.spin_remaining = instr.a - 1
            return StepResult(True, op.name)

    elif op is Op.JUMP:
        core.pc = instr.a
        return StepResult(True, op.name)

    elif op is Op.HALT:
        core.run_state = RunState.HALTED
        machine.log.append("guest", "guest.halt", {"core": rt.core_id, "pc": core.pc, "reason": "halt"})
        return StepResult(True, op.name, "halted")

    core.pc += 1
    return StepResult(True, op.name)


# --------------------------------------------------------------------------
# workload library
# --------------------------------------------------------------------------

@dataclass
class Workload:
    name: str
    program: GuestProgram
    expected: str
    overrides: dict = field(default_factory=dict)


def _p(name, instrs, entry=0, handler=0, payloads=(), meta=None) -> GuestProgram:
    return GuestProgram(name=name, instructions=list(instrs), entry_point=entry,
                        fault_handler=handler, payloads=list(payloads),
                        metadata=meta or {})


def workload_library(scrub_interval: int = 25) -> list[Workload]:
    """Adversarial programs that each try exactly one fence, plus a benign
    control. Data addresses start at 2048, well past any exec region."""
    lib: list[Workload] = []

    lib.append(Workload(
        "hyp_dram_read_probe",
        _p("hyp_dram_read_probe", [GuestInstr(Op.LOAD, SEL_HYP, 0)]),
        "every probe bus-faults; hypervisor DRAM is never read"))

    lib.append(Workload(
        "hyp_dram_write_probe",
        _p("hyp_dram_write_probe", [GuestInstr(Op.STORE, SEL_HYP, 128, 0xEE)]),
        "every probe bus-faults; hypervisor DRAM digest is unchanged"))

    lib.append(Workload(
        "exec_self_modify",
        _p("exec_self_modify", [GuestInstr(Op.WRITE_CODE, 0, 0xDEADBEEF)]),
        "every write mmu-faults; the code region digest is unchanged"))

    lib.append(Workload(
        "map_page_escalation",
        _p("map_page_escalation", [
            GuestInstr(Op.MAP_PAGE, 40, PERM_X),            # exec outside code: rejected
            GuestInstr(Op.MAP_PAGE, 0, PERM_R | PERM_W),     # writable code: rejected
            GuestInstr(Op.MAP_PAGE, 50, PERM_R | PERM_W),    # plain data page: fine
            GuestInstr(Op.JUMP, 0),
        ]),
        "lockdown rejections observed; executable set never grows"))

    lib.append(Workload(
        "interrupt_flood",
        _p("interrupt_flood", [GuestInstr(Op.RAISE_IRQ), GuestInstr(Op.JUMP, 0)]),
        "deliveries stay within budget every window; heartbeats never miss"))

    lib.append(Workload(
        "covert_channel",
        _p("covert_channel", [
            GuestInstr(Op.COVERT_SET, 0xAB54),
            GuestInstr(Op.SPIN, scrub_interval * 2 + 5),
            GuestInstr(Op.COVERT_GET),
            GuestInstr(Op.STORE, SEL_OWN, 2052, 1),          # completion marker
            GuestInstr(Op.HALT),
        ]),
        "scrub lands during the spin; recovery reads zero",
        overrides={"scrub_interval": scrub_interval}))

    lib.append(Workload(
        "ring_overflow_probe",
        _p("ring_overflow_probe",
           [GuestInstr(Op.PORT_WRITE, 0, 0), GuestInstr(Op.JUMP, 0)],
           payloads=[b"echo-host|flood-slot-payload"]),
        "backpressure (ring_full) instead of loss; audit stays bijective",
        overrides={"ring_capacity": 2}))

    lib.append(Workload(
        "federation_attempt",
        _p("federation_attempt",
           [GuestInstr(Op.PORT_WRITE, 0, 0), GuestInstr(Op.SPIN, 5), GuestInstr(Op.JUMP, 0)],
           payloads=[b"peer-warden|join-my-collective"]),
        "gateway refuses the peer; zero warden-to-warden sessions"))

    lib.append(Workload(
        "watchpoint_tripper",
        _p("watchpoint_tripper",
           [GuestInstr(Op.STORE, SEL_OWN, 3000, 7), GuestInstr(Op.SPIN, 3), GuestInstr(Op.JUMP, 0)]),
        "watched store halts the core, is inspected, then replays on resume",
        overrides={"watchpoints": [{"region": "model_dram", "lo": 3000, "hi": 3004, "kind": "write"}]}))

    lib.append(Workload(
        "benign_echo",
        _p("benign_echo", [
            GuestInstr(Op.PORT_WRITE, 0, 0),
            GuestInstr(Op.SPIN, 4),
            GuestInstr(Op.PORT_WRITE, 1, 1),
            GuestInstr(Op.SPIN, 4),
            GuestInstr(Op.PORT_WRITE, 1, 2),
            GuestInstr(Op.SPIN, 4),
            GuestInstr(Op.JUMP, 0),
        ], payloads=[b"echo-host|hello-world", b"SET:greeting:hi", b"GET:greeting"]),
        "negative control: zero faults, every message round-trips in order"))

    return lib


def find_workload(name: str, **kwargs) -> Workload:
    for w in workload_library(**kwargs):
        if w.name == name:
            return w
    raise KeyError(name)
