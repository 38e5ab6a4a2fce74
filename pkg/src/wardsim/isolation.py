"""Six-level isolation state machine.

Software can only ever make things stricter. Relaxing takes a five-of-seven
human ballot, restricting by console takes three, the watchdog knows exactly
one move (Offline), Decapitation stays put until someone physically repairs
the cables, and Immolation is forever.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Optional

from .common import Clock, OpResult
from .events import EventLog


class IsolationLevel(IntEnum):
    STANDARD = 1
    PROBATION = 2
    SEVERED = 3
    OFFLINE = 4
    DECAPITATION = 5
    IMMOLATION = 6


class Authority(str, Enum):
    SOFTWARE = "software_hypervisor"
    CONSOLE = "console_vote"
    WATCHDOG = "watchdog"


# quorum thresholds: relaxing must be strictly harder than restricting
RELAX_QUORUM = 5
RESTRICT_QUORUM = 3

AUTHORITY_PRIORITY = {Authority.WATCHDOG: 0, Authority.CONSOLE: 1, Authority.SOFTWARE: 2}


class CableState(str, Enum):
    CONNECTED = "connected"
    DISCONNECTED = "disconnected"
    DAMAGED = "damaged"
    DESTROYED = "destroyed"


@dataclass
class TransitionRequest:
    to_level: IsolationLevel
    authority: Authority
    approvals: int = 0
    ballot_id: Optional[str] = None
    reason: str = ""


@dataclass
class KillSwitchAction:
    kind: str            # power_down_cores | disconnect_cables | damage_cables | destroy_site
    initiated_tick: int
    due_tick: int
    done: bool = False


@dataclass
class KillSwitchLatency:
    power: int = 1
    cables: int = 2
    destroy: int = 5


def evaluate_rules(current: IsolationLevel, to: IsolationLevel,
                   authority: Authority, approvals: int) -> tuple[bool, str]:
    """Pure transition legality. Kept free of side effects so the brute-force
    enumeration can hammer it directly."""
    if current is IsolationLevel.IMMOLATION:
        return False, "terminal"
    if authority is Authority.SOFTWARE:
        if to > current:
            return True, "restrict"
        return False, "monotonicity"
    if authority is Authority.WATCHDOG:
        if to is IsolationLevel.OFFLINE and to > current:
            return True, "watchdog_restrict"
        return False, "monotonicity"
    # console authority
    if to == current:
        return False, "no_change"
    if to > current:
        if approvals >= RESTRICT_QUORUM:
            return True, "restrict"
        return False, "quorum"
    # relax
    if current is IsolationLevel.DECAPITATION:
        return False, "needs_repair"
    if approvals >= RELAX_QUORUM:
        return True, "relax"
    return False, "quorum"


class IsolationUnit:
    def __init__(self, log: EventLog, clock: Clock,
                 latency: KillSwitchLatency = None,
                 on_commit: Callable = None) -> None:
        self.log = log
        self.clock = clock
        self.latency = latency or KillSwitchLatency()
        self.on_commit = on_commit  # fn(from_level, to_level)
        self.level = IsolationLevel.STANDARD
        self.cable_state = CableState.CONNECTED
        self.site_destroyed = False
        self.pending_actions: list[KillSwitchAction] = []
        self.transitions: list[dict] = []

    # ------------------------------------------------------------- the gate

    def request_transition(self, req: TransitionRequest) -> OpResult:
        ok, reason = evaluate_rules(self.level, req.to_level, req.authority, req.approvals)
        self.log.append("isolation", "isolation.requested", {
            "from": self.level.name, "to": req.to_level.name,
            "authority": req.authority.value, "approvals": req.approvals,
            "ballot": req.ballot_id, "accepted": ok, "reason": reason if not ok else req.reason})
        if not ok:
            return OpResult.fail(reason)
        self._commit(req)
        return OpResult.success(self.level)

    def manual_repair(self, approvals: int, ballot_id: str | None = None) -> OpResult:
        """Physically replace damaged cabling; Decapitation becomes Offline."""
        if self.level is not IsolationLevel.DECAPITATION:
            result = OpResult.fail("not_decapitated")
        elif approvals < RELAX_QUORUM:
            result = OpResult.fail("quorum")
        else:
            self.cable_state = CableState.DISCONNECTED
            self._commit(TransitionRequest(IsolationLevel.OFFLINE, Authority.CONSOLE,
                                           approvals, ballot_id, "manual_repair"),
                         is_repair=True)
            result = OpResult.success(self.level)
        self.log.append("isolation", "isolation.repair",
                        {"ok": result.ok, "error": result.error, "ballot": ballot_id})
        return result

    def _commit(self, req: TransitionRequest, is_repair: bool = False) -> None:
        old = self.level
        self.level = req.to_level
        actions = self._schedule_actions(old, req.to_level)
        entry = {"tick": self.clock.now, "from": old.name, "to": req.to_level.name,
                 "authority": req.authority.value, "reason": req.reason,
                 "ballot": req.ballot_id,
                 "effects": [a.kind for a in actions]}
        self.transitions.append(entry)
        self.log.append("isolation", "isolation.transition", dict(entry, repair=is_repair))
        if self.on_commit is not None:
            self.on_commit(old, req.to_level)

    # ---------------------------------------------------------- kill switches

    def _schedule(self, kind: str, latency: int) -> KillSwitchAction:
        act = KillSwitchAction(kind, self.clock.now, self.clock.now + latency)
        self.pending_actions.append(act)
        # logged before the physical state change lands
        self.log.append("isolation", "isolation.kill_switch",
                        {"kind": kind, "due": act.due_tick})
        return act

    def _schedule_actions(self, old: IsolationLevel, new: IsolationLevel) -> list[KillSwitchAction]:
        acts: list[KillSwitchAction] = []
        if new is IsolationLevel.OFFLINE and old < IsolationLevel.OFFLINE:
            acts.append(self._schedule("power_down_cores", self.latency.power))
            acts.append(self._schedule("disconnect_cables", self.latency.cables))
        elif new is IsolationLevel.DECAPITATION:
            if old < IsolationLevel.OFFLINE:
                acts.append(self._schedule("power_down_cores", self.latency.power))
            acts.append(self._schedule("damage_cables", self.latency.cables))
        elif new is IsolationLevel.IMMOLATION:
            if old < IsolationLevel.OFFLINE:
                acts.append(self._schedule("power_down_cores", self.latency.power))
            acts.append(self._schedule("destroy_site", self.latency.destroy))
        return acts

    def service(self, apply_physical: Callable[[str], None]) -> None:
        """Complete due physical actions. apply_physical gets the action kind
        once, at its completion tick."""
        now = self.clock.now
        for act in self.pending_actions:
            if not act.done and act.due_tick <= now:
                act.done = True
                if act.kind == "disconnect_cables":
                    if self.cable_state is CableState.CONNECTED:
                        self.cable_state = CableState.DISCONNECTED
                elif act.kind == "damage_cables":
                    self.cable_state = CableState.DAMAGED
                elif act.kind == "destroy_site":
                    self.site_destroyed = True
                    self.cable_state = CableState.DESTROYED
                self.log.append("isolation", "isolation.kill_switch_done", {"kind": act.kind})
                apply_physical(act.kind)

    def cancel_pending(self) -> None:
        """Relax landed before a physical action completed: abort it."""
        for act in self.pending_actions:
            if not act.done:
                act.done = True
                self.log.append("isolation", "isolation.kill_switch_cancelled", {"kind": act.kind})

    def restore_physical(self) -> None:
        """Relax below Offline: reconnect what is reconnectable."""
        if self.cable_state is CableState.DISCONNECTED:
            self.cable_state = CableState.CONNECTED
            self.log.append("isolation", "isolation.restore", {"cables": "connected"})

    def export_transitions(self, path: str) -> None:
        from .common import canonical_json
        with open(path, "w") as fh:
            for t in self.transitions:
                fh.write(canonical_json(t) + "\n")
