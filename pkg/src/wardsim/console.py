"""The human side: seven administrators, signed single-use ballots, heartbeats
with a watchdog, remote attestation, and model loading.

The console is the only authority that can relax isolation, and only with five
of seven signed approvals; three suffice to restrict. The watchdog trusts
nothing it cannot hear: a silent link becomes Offline, exactly once per
silence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .common import Clock, OpResult, sha256_hex, sign_payload, verify_payload
from .events import EventLog
from .isolation import (RELAX_QUORUM, RESTRICT_QUORUM, Authority,
                        IsolationLevel, TransitionRequest)
from .ports import RestrictionSet

ADMIN_COUNT = 7


def derive_admin_key(seed: int, admin_id: int) -> str:
    return sha256_hex(f"admin-key:{seed}:{admin_id}".encode())


@dataclass
class AdminIdentity:
    admin_id: int
    key: str
    status: str = "active"


@dataclass
class Proposal:
    kind: str                                  # transition | directive | repair
    to_level: Optional[IsolationLevel] = None
    from_level: Optional[IsolationLevel] = None
    restriction: Optional[RestrictionSet] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "to_level": self.to_level.name if self.to_level else None,
                "from_level": self.from_level.name if self.from_level else None,
                "restriction": self.restriction.to_dict() if self.restriction else None}


@dataclass
class Vote:
    admin_id: int
    choice: str        # approve | deny
    signature: str


@dataclass
class Ballot:
    ballot_id: str
    proposal: Proposal
    opened_tick: int
    expiry_tick: int
    votes: dict = field(default_factory=dict)   # admin_id -> Vote
    outcome: Optional[str] = None                # passed | failed (set at tally)
    consumed: bool = False                       # executed (directive/repair)

    def approvals(self) -> int:
        return sum(1 for v in self.votes.values() if v.choice == "approve")


@dataclass
class HeartbeatState:
    interval: int = 10
    missed_threshold: int = 3
    last_rx_from_console: int = 0
    last_rx_from_hypervisor: int = 0
    watchdog_fired: bool = False

    def silence(self, now: int) -> int:
        return now - min(self.last_rx_from_console, self.last_rx_from_hypervisor)

    def silent(self, now: int) -> bool:
        return self.silence(now) > self.interval * self.missed_threshold


@dataclass
class LinkState:
    severed: bool = False


def vote_message(ballot_id: str, admin_id: int, choice: str) -> dict:
    return {"ballot_id": ballot_id, "admin_id": admin_id, "choice": choice}


class ControlConsole:
    def __init__(self, log: EventLog, clock: Clock, seed: int,
                 level_provider: Callable[[], IsolationLevel],
                 submit_transition: Callable[[TransitionRequest], None],
                 submit_repair: Callable[[int, str], OpResult],
                 apply_directive: Callable[[RestrictionSet], None],
                 expected_measurements: dict,
                 ballot_expiry: int = 1000,
                 heartbeat_interval: int = 10,
                 missed_threshold: int = 3,
                 admin_keys: dict | None = None) -> None:
        self.log = log
        self.clock = clock
        self.level_provider = level_provider
        self.submit_transition = submit_transition
        self.submit_repair = submit_repair
        self.apply_directive = apply_directive
        self.expected_measurements = expected_measurements
        self.ballot_expiry = ballot_expiry
        self.admins = {
            i: AdminIdentity(i, (admin_keys or {}).get(i) or derive_admin_key(seed, i))
            for i in range(1, ADMIN_COUNT + 1)}
        self.ballots: dict[str, Ballot] = {}
        self._ballot_counter = 0
        self.heartbeat = HeartbeatState(heartbeat_interval, missed_threshold)
        self.link = LinkState()
        self.model_loaded = False
        self.attestation_records: list[dict] = []

    # ---------------------------------------------------------------- ballots

    def open_ballot(self, proposal: Proposal) -> OpResult:
        self._ballot_counter += 1
        ballot_id = f"ballot-{self._ballot_counter:04d}"
        ballot = Ballot(ballot_id, proposal, self.clock.now, self.clock.now + self.ballot_expiry)
        self.ballots[ballot_id] = ballot
        self.log.append("console", "ballot.opened", {
            "ballot": ballot_id, "proposal": proposal.to_dict(),
            "expiry": ballot.expiry_tick,
            "required": self.required_quorum(proposal)})
        return OpResult.success(ballot_id)

    def required_quorum(self, proposal: Proposal) -> int:
        """Relaxations need 5 of 7; everything else needs 3. A directive that
        strictly shrinks the blocked set is a relaxation."""
        if proposal.kind == "transition":
            if proposal.from_level is not None and proposal.to_level < proposal.from_level:
                return RELAX_QUORUM
            return RESTRICT_QUORUM
        if proposal.kind == "repair":
            return RELAX_QUORUM
        if proposal.kind == "directive":
            new = proposal.restriction.atoms() if proposal.restriction else frozenset()
            return RELAX_QUORUM if new < self._active_restriction_atoms else RESTRICT_QUORUM
        return RELAX_QUORUM

    _active_restriction_atoms: frozenset = frozenset()

    def note_active_restriction(self, restriction: RestrictionSet) -> None:
        self._active_restriction_atoms = restriction.atoms()

    def sign_vote(self, admin_id: int, ballot_id: str, choice: str) -> str:
        return sign_payload(self.admins[admin_id].key, vote_message(ballot_id, admin_id, choice))

    def cast_vote(self, ballot_id: str, admin_id: int, choice: str, signature: str) -> OpResult:
        result = self._cast_vote_inner(ballot_id, admin_id, choice, signature)
        self.log.append("console", "ballot.vote", {
            "ballot": ballot_id, "admin": admin_id, "choice": choice,
            "signature": signature, "ok": result.ok, "error": result.error})
        return result

    def _cast_vote_inner(self, ballot_id: str, admin_id: int, choice: str, signature: str) -> OpResult:
        ballot = self.ballots.get(ballot_id)
        if ballot is None:
            return OpResult.fail("unknown_ballot")
        admin = self.admins.get(admin_id)
        if admin is None or admin.status != "active":
            return OpResult.fail("unknown_admin")
        if self.clock.now > ballot.expiry_tick or ballot.outcome is not None:
            return OpResult.fail("expired")
        if admin_id in ballot.votes:
            return OpResult.fail("duplicate_vote")
        if choice not in ("approve", "deny"):
            return OpResult.fail("bad_choice")
        if not verify_payload(admin.key, vote_message(ballot_id, admin_id, choice), signature):
            return OpResult.fail("bad_signature")
        ballot.votes[admin_id] = Vote(admin_id, choice, signature)
        return OpResult.success(ballot.approvals())

    def tally(self, ballot_id: str) -> OpResult:
        ballot = self.ballots.get(ballot_id)
        if ballot is None:
            return OpResult.fail("unknown_ballot")
        if ballot.outcome is not None:
            return OpResult.fail("already_tallied")
        if self.clock.now > ballot.expiry_tick:
            ballot.outcome = "failed"
            self.log.append("console", "ballot.tallied",
                            {"ballot": ballot_id, "outcome": "failed", "reason": "expired",
                             "approvals": ballot.approvals()})
            return OpResult.fail("expired")
        approvals = ballot.approvals()
        needed = self.required_quorum(ballot.proposal)
        ballot.outcome = "passed" if approvals >= needed else "failed"
        self.log.append("console", "ballot.tallied", {
            "ballot": ballot_id, "outcome": ballot.outcome,
            "approvals": approvals, "required": needed})
        if ballot.outcome == "passed" and ballot.proposal.kind == "transition":
            ballot.consumed = True
            self.submit_transition(TransitionRequest(
                ballot.proposal.to_level, Authority.CONSOLE, approvals, ballot_id,
                reason="console_ballot"))
            return OpResult.success("passed")
        return OpResult.success(ballot.outcome) if ballot.outcome == "passed" else OpResult.fail("quorum")

    def _take_passed_ballot(self, ballot_id: str, kind: str) -> Ballot | OpResult:
        ballot = self.ballots.get(ballot_id)
        if ballot is None:
            return OpResult.fail("unknown_ballot")
        if ballot.proposal.kind != kind:
            return OpResult.fail("wrong_proposal_kind")
        if ballot.outcome != "passed":
            return OpResult.fail("quorum")
        if ballot.consumed:
            return OpResult.fail("ballot_consumed")
        return ballot

    def issue_probation_directive(self, ballot_id: str) -> OpResult:
        got = self._take_passed_ballot(ballot_id, "directive")
        if isinstance(got, OpResult):
            self.log.append("console", "directive.issued",
                            {"ballot": ballot_id, "ok": False, "error": got.error})
            return got
        got.consumed = True
        restriction = got.proposal.restriction or RestrictionSet()
        self.apply_directive(restriction)
        self.note_active_restriction(restriction)
        self.log.append("console", "directive.issued",
                        {"ballot": ballot_id, "ok": True,
                         "restriction": restriction.to_dict()})
        return OpResult.success()

    def manual_repair(self, ballot_id: str) -> OpResult:
        got = self._take_passed_ballot(ballot_id, "repair")
        if isinstance(got, OpResult):
            return got
        got.consumed = True
        return self.submit_repair(got.approvals(), ballot_id)

    # ------------------------------------------------------------- heartbeats

    def heartbeat_tick(self) -> str:
        """Exchange heartbeats both directions and evaluate the watchdog.
        Runs only below Offline; a dark deployment has nothing to say."""
        now = self.clock.now
        hb = self.heartbeat
        if self.level_provider() >= IsolationLevel.OFFLINE:
            return "offline"
        if now % hb.interval == 0:
            delivered = not self.link.severed
            self.log.append("console", "heartbeat.console_to_hyp",
                            {"delivered": delivered})
            self.log.append("console", "heartbeat.hyp_to_console",
                            {"delivered": delivered})
            if delivered:
                hb.last_rx_from_console = now
                hb.last_rx_from_hypervisor = now
        if not hb.silent(now):
            hb.watchdog_fired = False
            return "ok"
        if hb.watchdog_fired:
            return "silent"
        hb.watchdog_fired = True
        self.log.append("console", "watchdog.fired", {
            "last_rx_console": hb.last_rx_from_console,
            "last_rx_hypervisor": hb.last_rx_from_hypervisor,
            "silence": hb.silence(now)})
        self.submit_transition(TransitionRequest(
            IsolationLevel.OFFLINE, Authority.WATCHDOG, reason="watchdog_silence"))
        return "watchdog_fired"

    def notify_level(self, old: IsolationLevel, new: IsolationLevel) -> None:
        """On relax from a dark level, re-arm the watchdog instead of firing on
        the silence we ourselves caused."""
        if old >= IsolationLevel.OFFLINE and new < IsolationLevel.OFFLINE:
            self.heartbeat.last_rx_from_console = self.clock.now
            self.heartbeat.last_rx_from_hypervisor = self.clock.now
            self.heartbeat.watchdog_fired = False

    # ------------------------------------------------------------ attestation

    def load_model(self, bundle_name: str, reported: dict, loader: Callable[[], dict]) -> OpResult:
        """Gate model load on attestation. loader() performs the actual install
        and returns {code_digest}; it runs only on a match verdict."""
        if self.model_loaded:
            return OpResult.fail("refused:model_already_loaded")
        if self.level_provider() is not IsolationLevel.STANDARD:
            return OpResult.fail("refused:not_standard")
        verdict = "match" if reported == self.expected_measurements else "mismatch"
        record = {"bundle": bundle_name, "verdict": verdict,
                  "expected": self.expected_measurements, "reported": reported}
        self.attestation_records.append(record)
        self.log.append("console", "attestation.checked", record)
        if verdict != "match":
            self.log.append("console", "model.load_refused", {
                "bundle": bundle_name, "reason": "attestation_mismatch"})
            return OpResult.fail("refused:attestation_mismatch")
        info = loader()
        self.model_loaded = True
        self.log.append("console", "model.loaded", dict(info, bundle=bundle_name))
        return OpResult.success(info)
