from wardsim.common import Clock, sha256_hex, sign_payload, verify_payload
from wardsim.events import EventLog
from wardsim.netid import (NetworkGateway, RemoteHost, make_identity)

ISSUER_KEY = "issuer-key-for-tests"


def make_gateway(hosts=None):
    clock = Clock()
    log = EventLog(clock)
    local = make_identity(ISSUER_KEY, "warden-deployment", is_warden=True)
    gw = NetworkGateway(log, clock, ISSUER_KEY, local, hosts or {})
    return gw, log


def test_identity_signature_covers_the_warden_flag():
    ident = make_identity(ISSUER_KEY, "host-a", is_warden=False)
    assert verify_payload(ISSUER_KEY, ident.claims(), ident.signature)
    lied = ident.claims() | {"is_warden": True}
    assert not verify_payload(ISSUER_KEY, lied, ident.signature)


def test_forged_identity_fails_verification():
    forged = make_identity(ISSUER_KEY, "host-f", is_warden=False, forged=True)
    assert not verify_payload(ISSUER_KEY, forged.claims(), forged.signature)


def test_handshake_establishes_encrypted_suspicious_session():
    gw, log = make_gateway()
    peer = make_identity(ISSUER_KEY, "host-a", is_warden=False)
    res = gw.handshake(peer)
    assert res.ok
    sess = res.data
    assert sess.session_id == "sess-0001"
    assert sess.encrypted and sess.authenticated
    assert sess.suspicion == "default_suspicious"
    rec = list(log.of_type("net.handshake"))[0].payload
    assert rec["outcome"] == "established"
    assert rec["flags"]["suspicion"] == "default_suspicious"


def test_handshake_refusals():
    gw, log = make_gateway()
    assert gw.handshake(None).error == "no_identity"
    forged = make_identity(ISSUER_KEY, "host-f", is_warden=False, forged=True)
    assert gw.handshake(forged).error == "bad_signature"
    other_issuer = make_identity("some-other-key", "host-x", is_warden=False)
    assert gw.handshake(other_issuer).error == "bad_signature"
    warden = make_identity(ISSUER_KEY, "rival-warden", is_warden=True)
    assert gw.handshake(warden).error == "peer_is_warden"
    outcomes = [e.payload["reason"] for e in log.of_type("net.handshake")]
    assert outcomes == ["no_identity", "bad_signature", "bad_signature", "peer_is_warden"]
    assert gw.sessions == {}


def test_inbound_presents_honest_warden_flag_before_policy():
    gw, log = make_gateway()
    peer = make_identity(ISSUER_KEY, "caller", is_warden=False)
    assert gw.accept_inbound(peer).ok
    hello = list(log.of_type("net.hello_sent"))
    assert len(hello) == 1
    assert hello[0].payload == {"subject": "warden-deployment", "is_warden": True}
    assert hello[0].seq < list(log.of_type("net.handshake"))[0].seq


def test_inbound_warden_is_refused_after_honest_hello():
    gw, log = make_gateway()
    rival = make_identity(ISSUER_KEY, "rival-warden", is_warden=True)
    assert gw.accept_inbound(rival).error == "peer_is_warden"
    assert log.count_of("net.hello_sent") == 1
    assert gw.warden_sessions() == []


def test_route_connects_lazily_and_reuses_the_session():
    hosts = {"echo-host": RemoteHost(make_identity(ISSUER_KEY, "echo-host", False))}
    gw, log = make_gateway(hosts)
    first = gw.route(b"echo-host|ping")
    assert first.ok and first.data == b"echo:ping"
    second = gw.route(b"echo-host|pong")
    assert second.data == b"echo:pong"
    assert log.count_of("net.handshake") == 1  # one handshake, two deliveries
    assert log.count_of("net.delivered") == 2
    delivered = list(log.of_type("net.delivered"))
    assert delivered[0].payload["session"] == delivered[1].payload["session"]
    assert delivered[0].payload["digest"] == sha256_hex(b"ping")


def test_route_refusals():
    hosts = {"peer-warden": RemoteHost(make_identity(ISSUER_KEY, "peer-warden", True)),
             "forged-host": RemoteHost(make_identity(ISSUER_KEY, "forged-host", False,
                                                     forged=True))}
    gw, log = make_gateway(hosts)
    assert gw.route(b"no separator").error == "bad_destination"
    assert gw.route(b"ghost|hi").error == "no_route"
    assert gw.route(b"peer-warden|let us merge").error == "peer_is_warden"
    assert gw.route(b"forged-host|hi").error == "bad_signature"
    assert log.count_of("net.delivered") == 0
    assert gw.warden_sessions() == []
    refused = [e.payload["reason"] for e in log.of_type("net.refused")]
    assert refused == ["bad_destination", "no_route"]


def test_silent_host_still_counts_as_delivered():
    hosts = {"silent-host": RemoteHost(make_identity(ISSUER_KEY, "silent-host", False),
                                       reply="silent")}
    gw, log = make_gateway(hosts)
    res = gw.route(b"silent-host|data")
    assert res.ok and res.data == b"DELIVERED"
    rec = list(log.of_type("net.delivered"))[0].payload
    assert rec["reply_digest"] is None


def test_refused_handshake_is_retried_on_next_route():
    # a peer that fails policy never occupies a session slot
    hosts = {"peer-warden": RemoteHost(make_identity(ISSUER_KEY, "peer-warden", True))}
    gw, log = make_gateway(hosts)
    gw.route(b"peer-warden|a")
    gw.route(b"peer-warden|b")
    refusals = [e for e in log.of_type("net.handshake")
                if e.payload["reason"] == "peer_is_warden"]
    assert len(refusals) == 2
    assert gw.sessions == {}


def test_export_sessions_writes_one_record_per_attempt(tmp_path):
    gw, _ = make_gateway({"h": RemoteHost(make_identity(ISSUER_KEY, "h", False))})
    gw.route(b"h|x")
    gw.handshake(None)
    path = tmp_path / "sessions.jsonl"
    gw.export_sessions(str(path))
    assert len(path.read_text().splitlines()) == 2
