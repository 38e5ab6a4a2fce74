/**
 * Client-side vote signing.
 *
 * Admin keys in the simulation derive deterministically from the scenario
 * seed, so test fixtures can hold the full keyring. A vote signature is
 * HMAC-SHA256 over the canonical JSON of the vote message, keyed by the
 * admin's hex key string (the key is used as UTF-8 text, not decoded hex).
 */
import { createHash, createHmac } from "node:crypto";

import { canonicalJson } from "./protocol.js";

export const ADMIN_COUNT = 7;

export interface VoteMessage {
  ballot_id: string;
  admin_id: number;
  choice: "approve" | "deny";
}

export function deriveAdminKey(seed: number, adminId: number): string {
  return createHash("sha256")
    .update(`admin-key:${seed}:${adminId}`)
    .digest("hex");
}

/** Full keyring for a scenario seed: admin id -> signing key. */
export function keyring(seed: number): Map<number, string> {
  const ring = new Map<number, string>();
  for (let id = 1; id <= ADMIN_COUNT; id++) {
    ring.set(id, deriveAdminKey(seed, id));
  }
  return ring;
}

export function signVote(key: string, msg: VoteMessage): string {
  return createHmac("sha256", key)
    .update(canonicalJson(msg))
    .digest("hex");
}

/** Convenience: signature for (ballot, admin, choice) under a scenario seed. */
export function signedVote(seed: number, ballotId: string, adminId: number,
                           choice: "approve" | "deny") {
  const signature = signVote(deriveAdminKey(seed, adminId),
                             { ballot_id: ballotId, admin_id: adminId, choice });
  return { ballot: ballotId, admin: adminId, choice, signature };
}
