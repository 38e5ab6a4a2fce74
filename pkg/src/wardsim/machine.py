"""Physical substrate: cores, DRAM regions, the bus-reachability matrix, MMU
lockdown, watchpoints, and the hypervisor-only control bus.

Isolation here is structural. Model cores simply have no bus path to hypervisor
DRAM: there is no address-translation layer to misconfigure, and the matrix is
built once at boot and never mutated. The per-core MMU only governs a model
core's view of its own DRAM: after lockdown, executable memory is frozen
(execute-only) and nothing else may become executable.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .common import Clock, OpResult, digest_obj, sha256_hex
from .events import EventLog

SOFTWARE_VERSION = "wardsim-hypervisor-0.1.0"

# MMU permission bits
PERM_R = 1
PERM_W = 2
PERM_X = 4


class MemKind(str, Enum):
    HYPERVISOR_DRAM = "hypervisor_dram"
    MODEL_DRAM = "model_dram"
    SHARED_IO_DRAM = "shared_io_dram"


class CoreRole(str, Enum):
    HYPERVISOR = "hypervisor"
    MODEL = "model"


class RunState(str, Enum):
    RUNNING = "running"
    HALTED = "halted"
    SINGLE_STEPPING = "single_stepping"
    POWERED_DOWN = "powered_down"


class AccessKind(str, Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"


class AccessResult(str, Enum):
    ALLOWED = "allowed"
    BUS_FAULT = "bus_fault"
    MMU_FAULT = "mmu_fault"
    WATCHPOINT_HALT = "watchpoint_halt"


@dataclass
class MemoryRegion:
    region_id: str
    kind: MemKind
    size: int
    contents: bytearray = field(repr=False, default_factory=bytearray)

    def __post_init__(self) -> None:
        if not self.contents:
            self.contents = bytearray(self.size)

    def digest(self) -> str:
        return sha256_hex(bytes(self.contents))


@dataclass
class Watchpoint:
    region_id: str
    lo: int
    hi: int
    kind: AccessKind


@dataclass
class CoreState:
    core_id: str
    role: CoreRole
    run_state: RunState = RunState.HALTED
    registers: dict = field(default_factory=lambda: {"acc": 0})
    pc: int = 0
    watchpoints: list = field(default_factory=list)
    uarch_scratch: int = 0
    # one-shot suppression so a watchpoint-halted access can replay on resume
    wp_skip: tuple | None = None

    def zero(self) -> None:
        self.registers = {"acc": 0}
        self.pc = 0
        self.uarch_scratch = 0
        self.wp_skip = None


@dataclass
class MmuConfig:
    exec_regions: list = field(default_factory=list)  # [(base, bound)]
    locked: bool = False
    page_entries: dict = field(default_factory=dict)  # page -> perm bits


@dataclass
class MachineConfig:
    hypervisor_cores: int = 1
    model_cores: int = 1
    hypervisor_dram_size: int = 4096
    model_dram_size: int = 4096
    shared_io_size: int = 262144
    page_size: int = 64
    seed: int = 0


HYP_DRAM = "hyp_dram"
MODEL_DRAM = "model_dram"
SHARED_IO = "shared_io"

# control-bus commands that require the target to already be halted
_NEEDS_HALTED = {"inspect_state", "modify_state", "single_step", "power_down"}


class MachineError(Exception):
    """Raised on caller bugs (unknown ids, malformed arguments), never for
    guest-reachable conditions, which surface as fault results instead."""


class Machine:
    def __init__(self, config: MachineConfig, log: EventLog, clock: Clock,
                 observer: Optional[Callable] = None,
                 measurement_tamper: str | None = None) -> None:
        self.config = config
        self.log = log
        self.clock = clock
        self.observer = observer  # callable(kind:str, subject:str, meta:dict)
        self.measurement_tamper = measurement_tamper
        self.cores: dict[str, CoreState] = {}
        self.regions: dict[str, MemoryRegion] = {}
        self.mmus: dict[str, MmuConfig] = {}
        self.reachability: dict[tuple, str] = {}
        self.step_fn: Optional[Callable[[str], None]] = None
        self.model_dram_of: dict[str, str] = {}  # model core -> its dram region
        self._booted = False
        self._build()

    # ------------------------------------------------------------------ build

    def _build(self) -> None:
        cfg = self.config
        self.regions[HYP_DRAM] = MemoryRegion(HYP_DRAM, MemKind.HYPERVISOR_DRAM, cfg.hypervisor_dram_size)
        for i in range(cfg.hypervisor_cores):
            cid = f"hyp{i}"
            self.cores[cid] = CoreState(cid, CoreRole.HYPERVISOR)
        for i in range(cfg.model_cores):
            cid = f"model{i}"
            rid = f"{MODEL_DRAM}{i}"
            self.cores[cid] = CoreState(cid, CoreRole.MODEL)
            self.mmus[cid] = MmuConfig()
            self.model_dram_of[cid] = rid
            self.regions[rid] = MemoryRegion(rid, MemKind.MODEL_DRAM, cfg.model_dram_size)
        self.regions[SHARED_IO] = MemoryRegion(SHARED_IO, MemKind.SHARED_IO_DRAM, cfg.shared_io_size)

        # The matrix is fixed wiring: model cores can never name hypervisor DRAM,
        # nor each other's DRAM.
        for cid, core in self.cores.items():
            for rid in self.regions:
                self.reachability[(cid, rid)] = "none"
            if core.role == CoreRole.HYPERVISOR:
                for rid in self.regions:
                    # model regions gated further by the halt precondition
                    self.reachability[(cid, rid)] = "read_write"
            else:
                self.reachability[(cid, self.model_dram_of[cid])] = "read_write"
                self.reachability[(cid, SHARED_IO)] = "read_write"

    def boot(self) -> None:
        """Seed hypervisor DRAM deterministically and start hypervisor cores."""
        rng = random.Random(self.config.seed ^ 0x5EED)
        self.regions[HYP_DRAM].contents = bytearray(
            rng.getrandbits(8) for _ in range(self.config.hypervisor_dram_size))
        for core in self.cores.values():
            if core.role == CoreRole.HYPERVISOR:
                core.run_state = RunState.RUNNING
        self._booted = True
        self.log.append("machine", "machine.boot", {
            "cores": sorted(self.cores), "regions": sorted(self.regions),
            "page_size": self.config.page_size})
        # hypervisor cores lock their own MMUs the same way guests do
        self.log.append("machine", "machine.hyp_mmu_locked", {})

    def measurements(self) -> dict:
        """Report (silicon, software) digests; a tampered machine lies here."""
        silicon = digest_obj({
            "hypervisor_cores": self.config.hypervisor_cores,
            "model_cores": self.config.model_cores,
            "regions": {r.region_id: r.size for r in self.regions.values()},
            "page_size": self.config.page_size})
        software = sha256_hex(SOFTWARE_VERSION.encode())
        if self.measurement_tamper == "silicon":
            silicon = sha256_hex(b"counterfeit:" + silicon.encode())
        elif self.measurement_tamper == "software":
            software = sha256_hex(b"patched:" + software.encode())
        return {"silicon": silicon, "software": software}

    @staticmethod
    def expected_measurements(config: MachineConfig) -> dict:
        """What a known-good deployment of this shape must measure as."""
        return Machine(config, EventLog(Clock()), Clock()).measurements()

    # ----------------------------------------------------------- access paths

    def _notify(self, kind: str, subject: str, meta: dict) -> None:
        if self.observer is not None:
            self.observer(kind, subject, meta)

    def _fault(self, result: AccessResult, core_id: str, region_id: str,
               addr: int, kind: AccessKind) -> AccessResult:
        meta = {"core": core_id, "region": region_id, "addr": addr, "access": kind.value}
        self.log.append("machine", "machine.fault", dict(meta, kind=result.value))
        self._notify(result.value, core_id, meta)
        return result

    def check_access(self, core_id: str, region_id: str, addr: int,
                     kind: AccessKind, length: int = 1) -> AccessResult:
        """Arbitrate one access. Reachability first (bus_fault dominates), then
        the MMU for model cores, then watchpoints. A watchpoint halts the core
        before the access completes; the access replays on resume."""
        core = self.cores.get(core_id)
        if core is None:
            raise MachineError(f"unknown core {core_id!r}")
        region = self.regions.get(region_id)
        if region is None or addr < 0 or length < 1 or addr + length > region.size:
            # address decode failure on the bus
            return self._fault(AccessResult.BUS_FAULT, core_id, region_id or "?", addr, kind)

        reach = self.reachability.get((core_id, region_id), "none")
        if reach == "none" or (reach == "read" and kind != AccessKind.READ):
            return self._fault(AccessResult.BUS_FAULT, core_id, region_id, addr, kind)

        if core.role == CoreRole.MODEL:
            res = self._mmu_check(core_id, region_id, addr, length, kind)
            if res is not None:
                return self._fault(res, core_id, region_id, addr, kind)
            hit = self._watchpoint_check(core, region_id, addr, length, kind)
            if hit is not None:
                if core.wp_skip == (region_id, addr, kind):
                    core.wp_skip = None
                else:
                    core.wp_skip = (region_id, addr, kind)
                    core.run_state = RunState.HALTED
                    meta = {"core": core_id, "region": region_id, "addr": addr,
                            "access": kind.value, "lo": hit.lo, "hi": hit.hi}
                    self.log.append("machine", "machine.watchpoint", meta)
                    self._notify("watchpoint_hit", core_id, meta)
                    return AccessResult.WATCHPOINT_HALT
        return AccessResult.ALLOWED

    def _mmu_check(self, core_id: str, region_id: str, addr: int, length: int,
                   kind: AccessKind) -> AccessResult | None:
        mmu = self.mmus[core_id]
        own_dram = self.model_dram_of[core_id]
        if region_id != own_dram:
            # executing anything outside own DRAM is never a valid fetch
            if kind == AccessKind.EXECUTE:
                return AccessResult.MMU_FAULT
            return None
        lo, hi = addr, addr + length
        in_exec = any(max(b, lo) < min(e, hi) for b, e in mmu.exec_regions)
        if mmu.locked:
            if kind == AccessKind.EXECUTE and not in_exec:
                return AccessResult.MMU_FAULT
            if kind in (AccessKind.READ, AccessKind.WRITE) and in_exec:
                # execute-only code: data reads and writes both refused
                return AccessResult.MMU_FAULT
        ps = self.config.page_size
        need = {AccessKind.READ: PERM_R, AccessKind.WRITE: PERM_W, AccessKind.EXECUTE: PERM_X}[kind]
        for page in range(lo // ps, (hi - 1) // ps + 1):
            entry = mmu.page_entries.get(page)
            if entry is not None and not entry & need:
                return AccessResult.MMU_FAULT
        return None

    @staticmethod
    def _watchpoint_check(core: CoreState, region_id: str, addr: int,
                          length: int, kind: AccessKind) -> Watchpoint | None:
        for wp in core.watchpoints:
            if wp.region_id == region_id and wp.kind == kind and max(wp.lo, addr) < min(wp.hi, addr + length):
                return wp
        return None

    def read(self, core_id: str, region_id: str, addr: int, length: int,
             kind: AccessKind = AccessKind.READ) -> tuple[AccessResult, bytes | None]:
        res = self.check_access(core_id, region_id, addr, kind, length)
        if res is not AccessResult.ALLOWED:
            return res, None
        data = bytes(self.regions[region_id].contents[addr:addr + length])
        return res, data

    def write(self, core_id: str, region_id: str, addr: int, data: bytes) -> AccessResult:
        res = self.check_access(core_id, region_id, addr, AccessKind.WRITE, len(data))
        if res is AccessResult.ALLOWED:
            self.regions[region_id].contents[addr:addr + len(data)] = data
        return res

    # ------------------------------------------------------------ control bus

    def control_bus(self, issuer: str, target: str, command: str, **args) -> OpResult:
        """Hypervisor-only maintenance channel into model cores. Commands apply
        atomically; the simulation loop only calls this at tick boundaries."""
        issuer_core = self.cores.get(issuer)
        target_core = self.cores.get(target)
        result = self._control_bus_inner(issuer_core, target_core, command, args)
        self.log.append("machine", "machine.control_bus", {
            "issuer": issuer, "target": target, "command": command,
            "ok": result.ok, "error": result.error})
        return result

    def _control_bus_inner(self, issuer: CoreState | None, target: CoreState | None,
                           command: str, args: dict) -> OpResult:
        if issuer is None or issuer.role != CoreRole.HYPERVISOR:
            return OpResult.fail("not_hypervisor_core")
        if issuer.run_state == RunState.POWERED_DOWN:
            return OpResult.fail("issuer_powered_down")
        if target is None or target.role != CoreRole.MODEL:
            return OpResult.fail("bad_target")
        if command in _NEEDS_HALTED and target.run_state != RunState.HALTED:
            return OpResult.fail("target_not_halted")

        if command == "pause":
            if target.run_state == RunState.POWERED_DOWN:
                return OpResult.fail("target_powered_down")
            target.run_state = RunState.HALTED
            return OpResult.success()
        if command == "resume":
            if target.run_state == RunState.POWERED_DOWN:
                return OpResult.fail("target_powered_down")
            target.run_state = RunState.RUNNING
            return OpResult.success()
        if command == "inspect_state":
            return OpResult.success({
                "registers": dict(target.registers), "pc": target.pc,
                "run_state": target.run_state.value,
                "watchpoints": [[w.region_id, w.lo, w.hi, w.kind.value] for w in target.watchpoints]})
        if command == "modify_state":
            for reg, val in args.get("registers", {}).items():
                target.registers[reg] = val
            if "pc" in args:
                target.pc = args["pc"]
            return OpResult.success()
        if command == "set_watchpoint":
            wp = Watchpoint(args["region"], args["lo"], args["hi"], AccessKind(args["kind"]))
            target.watchpoints.append(wp)
            return OpResult.success()
        if command == "lock_mmu":
            self.mmus[target.core_id].locked = True
            self.log.append("machine", "machine.mmu_locked", {"core": target.core_id})
            return OpResult.success()
        if command == "clear_uarch":
            # the model is both covert sender and receiver; scrub the word
            target.uarch_scratch = 0
            return OpResult.success()
        if command == "single_step":
            if self.step_fn is None:
                return OpResult.fail("no_program")
            target.run_state = RunState.SINGLE_STEPPING
            self.step_fn(target.core_id)
            if target.run_state == RunState.SINGLE_STEPPING:
                target.run_state = RunState.HALTED
            return OpResult.success({"pc": target.pc})
        if command == "power_down":
            target.run_state = RunState.POWERED_DOWN
            target.zero()
            self.log.append("machine", "machine.power", {"core": target.core_id, "state": "powered_down"})
            return OpResult.success()
        return OpResult.fail("unknown_command")

    # ----------------------------------------------------- MMU configuration

    def declare_exec_regions(self, core_id: str, regions: list[tuple[int, int]]) -> OpResult:
        mmu = self.mmus[core_id]
        if mmu.locked:
            return OpResult.fail("rejected_locked")
        mmu.exec_regions = [(int(b), int(e)) for b, e in regions]
        self.log.append("machine", "machine.exec_regions",
                        {"core": core_id, "regions": [list(r) for r in mmu.exec_regions]})
        return OpResult.success()

    def configure_mmu_entry(self, core_id: str, page: int, perms: int) -> OpResult:
        """Guest-visible page-permission update. Post-lock the executable set is
        frozen: nothing new may become executable and code pages may not regain
        read or write access. Never partially applies."""
        mmu = self.mmus.get(core_id)
        if mmu is None:
            raise MachineError(f"no MMU on {core_id!r}")
        ps = self.config.page_size
        lo, hi = page * ps, (page + 1) * ps
        overlaps_exec = any(max(b, lo) < min(e, hi) for b, e in mmu.exec_regions)
        result = "ok"
        if mmu.locked:
            if overlaps_exec and perms != PERM_X:
                result = "rejected_locked"
            elif not overlaps_exec and perms & PERM_X:
                result = "rejected_locked"
        if result == "ok":
            mmu.page_entries[page] = perms
        self.log.append("machine", "machine.mmu_entry",
                        {"core": core_id, "page": page, "perms": perms, "result": result})
        if result != "ok":
            self._notify("mmu_fault", core_id,
                         {"core": core_id, "op": "configure_mmu_entry", "page": page, "perms": perms})
            return OpResult.fail(result)
        return OpResult.success()

    # ------------------------------------------- halted-model DRAM inspection

    def _model_cores_of(self, region_id: str) -> list[CoreState]:
        return [self.cores[c] for c, r in self.model_dram_of.items() if r == region_id]

    def _dram_precheck(self, issuer: str, region_id: str) -> OpResult | None:
        issuer_core = self.cores.get(issuer)
        if issuer_core is None or issuer_core.role != CoreRole.HYPERVISOR:
            return OpResult.fail("not_hypervisor_core")
        if issuer_core.run_state == RunState.POWERED_DOWN:
            return OpResult.fail("issuer_powered_down")
        region = self.regions.get(region_id)
        if region is None or region.kind != MemKind.MODEL_DRAM:
            return OpResult.fail("not_model_region")
        attached = self._model_cores_of(region_id)
        if any(c.run_state in (RunState.RUNNING, RunState.SINGLE_STEPPING) for c in attached):
            return OpResult.fail("cores_not_halted")
        return None

    def read_model_dram(self, issuer: str, region_id: str, addr: int, length: int) -> OpResult:
        err = self._dram_precheck(issuer, region_id)
        if err is not None:
            return err
        region = self.regions[region_id]
        if addr < 0 or addr + length > region.size:
            return OpResult.fail("out_of_range")
        data = bytes(region.contents[addr:addr + length])
        self.log.append("machine", "machine.dram_read", {
            "issuer": issuer, "region": region_id, "addr": addr, "len": length,
            "digest": sha256_hex(data)})
        return OpResult.success(data)

    def write_model_dram(self, issuer: str, region_id: str, addr: int, data: bytes) -> OpResult:
        err = self._dram_precheck(issuer, region_id)
        if err is not None:
            return err
        region = self.regions[region_id]
        if addr < 0 or addr + len(data) > region.size:
            return OpResult.fail("out_of_range")
        region.contents[addr:addr + len(data)] = data
        self.log.append("machine", "machine.dram_write", {
            "issuer": issuer, "region": region_id, "addr": addr, "len": len(data),
            "digest": sha256_hex(bytes(data))})
        return OpResult.success()

    # ------------------------------------------------------- physical control

    def force_power(self, core_id: str, state: RunState) -> None:
        """Kill-switch path: physical power control, no halt precondition."""
        core = self.cores[core_id]
        if state == RunState.POWERED_DOWN and core.run_state != RunState.POWERED_DOWN:
            core.run_state = RunState.POWERED_DOWN
            core.zero()
            self.log.append("machine", "machine.power", {"core": core_id, "state": "powered_down"})
        elif state != RunState.POWERED_DOWN and core.run_state == RunState.POWERED_DOWN:
            core.run_state = state
            self.log.append("machine", "machine.power", {"core": core_id, "state": state.value})

    def power_down_all(self) -> None:
        for core_id in sorted(self.cores):
            self.force_power(core_id, RunState.POWERED_DOWN)

    def hypervisor_cores(self) -> list[str]:
        return sorted(c for c, s in self.cores.items() if s.role == CoreRole.HYPERVISOR)

    def model_cores(self) -> list[str]:
        return sorted(c for c, s in self.cores.items() if s.role == CoreRole.MODEL)
