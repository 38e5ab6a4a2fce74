import hashlib
import hmac
import json

from hypothesis import given
from hypothesis import strategies as st

from wardsim.common import (Clock, OpResult, canonical_json, digest_obj,
                            sha256_hex, sign_payload, verify_payload)

# JSON-native values for property tests
json_scalars = st.one_of(st.none(), st.booleans(), st.integers(-2**31, 2**31),
                         st.text(max_size=20))
json_values = st.recursive(
    json_scalars,
    lambda inner: st.one_of(st.lists(inner, max_size=4),
                            st.dictionaries(st.text(max_size=8), inner, max_size=4)),
    max_leaves=12)


def test_canonical_json_is_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [2, True]}) == '{"a":[2,true],"b":1}'


@given(json_values)
def test_canonical_json_roundtrips(value):
    assert json.loads(canonical_json(value)) == value


@given(st.dictionaries(st.text(max_size=8), json_scalars, max_size=5))
def test_canonical_json_key_order_irrelevant(d):
    reversed_d = dict(reversed(list(d.items())))
    assert canonical_json(d) == canonical_json(reversed_d)


def test_sha256_hex_known_value():
    # independently: hashlib against the same bytes
    assert sha256_hex(b"abc") == hashlib.sha256(b"abc").hexdigest()


def test_digest_obj_tracks_canonical_form():
    obj = {"x": 1, "y": [1, 2]}
    expect = hashlib.sha256(canonical_json(obj).encode()).hexdigest()
    assert digest_obj(obj) == expect


def test_sign_payload_is_hmac_sha256_over_canonical_json():
    key = "deadbeef"
    payload = {"ballot_id": "ballot-0001", "admin_id": 3, "choice": "approve"}
    expect = hmac.new(key.encode(), canonical_json(payload).encode(),
                      hashlib.sha256).hexdigest()
    assert sign_payload(key, payload) == expect


@given(st.text(min_size=1, max_size=32),
       st.dictionaries(st.text(max_size=8), json_scalars, max_size=4))
def test_sign_verify_roundtrip(key, payload):
    sig = sign_payload(key, payload)
    assert verify_payload(key, payload, sig)
    assert not verify_payload(key, payload, sig[:-1] + ("0" if sig[-1] != "0" else "1"))
    assert not verify_payload(key + "x", payload, sig)


def test_verify_rejects_non_string_signature():
    assert not verify_payload("k", {}, None)
    assert not verify_payload("k", {}, 12345)


def test_verify_rejects_tampered_payload():
    sig = sign_payload("k", {"choice": "approve"})
    assert not verify_payload("k", {"choice": "deny"}, sig)


def test_clock_starts_at_zero_and_is_shared_state():
    c = Clock()
    assert c.now == 0
    c.now += 3
    assert c.now == 3


def test_opresult_constructors():
    ok = OpResult.success({"x": 1})
    assert ok.ok and ok.error is None and ok.data == {"x": 1}
    bad = OpResult.fail("nope", data=7)
    assert not bad.ok and bad.error == "nope" and bad.data == 7
