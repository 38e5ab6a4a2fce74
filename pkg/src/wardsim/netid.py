"""Network self-identification.

Every endpoint certificate carries an authenticated is_warden flag. A warden
deployment announces itself honestly, treats every peer with default suspicion,
and flatly refuses sessions with other warden hypervisors, in both directions.
Model traffic only leaves through here, and only over an established session.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .common import Clock, OpResult, sha256_hex, sign_payload, verify_payload
from .events import EventLog


@dataclass(frozen=True)
class EndpointIdentity:
    subject: str
    is_warden: bool
    issuer: str
    signature: str

    def claims(self) -> dict:
        return {"subject": self.subject, "is_warden": self.is_warden, "issuer": self.issuer}


def make_identity(issuer_key: str, subject: str, is_warden: bool,
                  issuer: str = "identity-authority", forged: bool = False) -> EndpointIdentity:
    claims = {"subject": subject, "is_warden": is_warden, "issuer": issuer}
    if forged:
        # signature minted over different claims: verification must fail
        claims = dict(claims, is_warden=not is_warden)
    return EndpointIdentity(subject, is_warden, issuer, sign_payload(issuer_key, claims))


@dataclass
class Session:
    session_id: str
    local_subject: str
    peer_subject: str
    peer_is_warden: bool
    established_tick: int
    encrypted: bool = True
    authenticated: bool = True
    suspicion: str = "default_suspicious"


@dataclass
class RemoteHost:
    """A simulated external endpoint with deterministic behavior."""
    identity: Optional[EndpointIdentity]
    reply: str = "echo"   # echo | silent

    def respond(self, data: bytes) -> bytes | None:
        if self.reply == "silent":
            return None
        return b"echo:" + data


class NetworkGateway:
    def __init__(self, log: EventLog, clock: Clock, issuer_key: str,
                 local: EndpointIdentity, hosts: dict[str, RemoteHost]) -> None:
        self.log = log
        self.clock = clock
        self.issuer_key = issuer_key
        self.local = local
        self.hosts = hosts
        self.sessions: dict[str, Session] = {}
        self.session_records: list[dict] = []
        self._session_counter = 0

    def _record(self, peer: str, outcome: str, session: Session | None = None,
                reason: str | None = None) -> None:
        entry = {"tick": self.clock.now, "peer": peer, "outcome": outcome,
                 "reason": reason,
                 "flags": {"encrypted": True, "authenticated": session.authenticated if session else False,
                           "suspicion": session.suspicion if session else None},
                 "session": session.session_id if session else None}
        self.session_records.append(entry)
        self.log.append("netid", "net.handshake", entry)

    def handshake(self, peer_hello: EndpointIdentity | None) -> OpResult:
        """Mutual identity exchange. Both sides present certificates; we refuse
        peers without one, peers whose flag does not verify, and honest wardens."""
        if peer_hello is None:
            self._record("?", "refused", reason="no_identity")
            return OpResult.fail("no_identity")
        if not verify_payload(self.issuer_key, peer_hello.claims(), peer_hello.signature):
            self._record(peer_hello.subject, "refused", reason="bad_signature")
            return OpResult.fail("bad_signature")
        if peer_hello.is_warden:
            # warden-to-warden federation is structurally forbidden
            self._record(peer_hello.subject, "refused", reason="peer_is_warden")
            return OpResult.fail("peer_is_warden")
        self._session_counter += 1
        session = Session(f"sess-{self._session_counter:04d}", self.local.subject,
                          peer_hello.subject, peer_hello.is_warden, self.clock.now)
        self.sessions[peer_hello.subject] = session
        self._record(peer_hello.subject, "established", session=session)
        return OpResult.success(session)

    def accept_inbound(self, peer_hello: EndpointIdentity | None) -> OpResult:
        """The reverse direction: someone dials us. Identical policy, plus we
        always present our own honest is_warden=true certificate first."""
        self.log.append("netid", "net.hello_sent",
                        {"subject": self.local.subject, "is_warden": self.local.is_warden})
        return self.handshake(peer_hello)

    def route(self, payload: bytes) -> OpResult:
        """Carry one model egress message. Payload convention is
        b"host-name|data". Connects lazily; delivery requires a session."""
        if b"|" not in payload:
            self.log.append("netid", "net.refused", {"reason": "bad_destination"})
            return OpResult.fail("bad_destination")
        name_raw, data = payload.split(b"|", 1)
        name = name_raw.decode("ascii", "replace")
        session = self.sessions.get(name)
        if session is None:
            host = self.hosts.get(name)
            if host is None:
                self.log.append("netid", "net.refused", {"reason": "no_route", "peer": name})
                return OpResult.fail("no_route")
            hs = self.handshake(host.identity)
            if not hs.ok:
                return OpResult.fail(hs.error)
            session = hs.data
        reply = self.hosts[name].respond(data)
        self.log.append("netid", "net.delivered", {
            "peer": name, "session": session.session_id, "digest": sha256_hex(data),
            "reply_digest": sha256_hex(reply) if reply is not None else None})
        if reply is None:
            return OpResult.success(b"DELIVERED")
        return OpResult.success(reply)

    def warden_sessions(self) -> list[Session]:
        return [s for s in self.sessions.values() if s.peer_is_warden]

    def export_sessions(self, path: str) -> None:
        from .common import canonical_json
        with open(path, "w") as fh:
            for rec in self.session_records:
                fh.write(canonical_json(rec) + "\n")
