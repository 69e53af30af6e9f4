"""Peer collaboration protocol: discovery, authentication, services, trust.

Messages are JSON envelopes {v, type, body} signed with a pre-shared keyed
hash. Anything arriving from a peer whose last authentication failed is
discarded. Trust is a scalar reputation updated by declared evidence only.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .kernel import SimTime

PROTOCOL_VERSION = 1
TRUST_INITIAL = 0.5
TRUST_FLOOR_FOR_NEGOTIATION = 0.3


class CollabError(Exception):
    pass


class NotAuthenticatedError(CollabError):
    pass


@dataclass(frozen=True)
class AgentIdentity:
    name: str
    key_id: str
    discoverable: bool = True


@dataclass
class ServiceRecord:
    agent: str
    services: list[str]
    memory: float
    storage: float
    cpu: float
    t: SimTime

    def covers(self, requirements: dict) -> bool:
        service = requirements.get("service")
        if service is not None and service not in self.services:
            return False
        return (self.memory >= requirements.get("memory", 0)
                and self.storage >= requirements.get("storage", 0)
                and self.cpu >= requirements.get("cpu", 0))


class ResponseKind(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    PROPOSE = "propose"


@dataclass(frozen=True)
class NegotiationRequest:
    task_id: str
    requirements: dict
    terms: dict  # e.g. {"start_at": t}


@dataclass(frozen=True)
class NegotiationResponse:
    kind: ResponseKind
    counter_terms: Optional[dict] = None

    def __post_init__(self):
        if self.kind is ResponseKind.PROPOSE and self.counter_terms is None:
            raise ValueError("propose requires counter terms")


@dataclass(frozen=True)
class Agreement:
    parties: tuple[str, str]
    task_id: str
    terms: dict
    registered_at: SimTime


# -- keyed-hash signatures -------------------------------------------------------

def sign(key: str, payload: bytes) -> str:
    return hmac.new(key.encode(), payload, hashlib.sha256).hexdigest()


def verify(key: str, payload: bytes, signature: Optional[str]) -> bool:
    if not signature:
        return False
    return hmac.compare_digest(sign(key, payload), signature)


def encode_envelope(msg_type: str, body: dict) -> bytes:
    return json.dumps({"v": PROTOCOL_VERSION, "type": msg_type, "body": body},
                      sort_keys=True).encode()


def decode_envelope(payload: bytes) -> tuple[str, dict]:
    try:
        envelope = json.loads(payload.decode())
        if envelope.get("v") != PROTOCOL_VERSION:
            raise CollabError(f"unsupported protocol version {envelope.get('v')}")
        return envelope["type"], envelope["body"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CollabError(f"malformed envelope: {exc}") from exc


def challenge_response(key: str, nonce: str, name: str) -> str:
    return sign(key, (nonce + "\x00" + name).encode())


@dataclass(frozen=True)
class AuthResult:
    ok: bool
    reason: Optional[str] = None  # "bad-signature" | "unknown-key" | "replayed-nonce"


def authenticate(peer: AgentIdentity, nonce: str, response_tag: str,
                 keyring: dict[str, str], used_nonces: set[str]) -> AuthResult:
    """Verify a challenge response under the peer's pre-shared key."""
    if nonce in used_nonces:
        return AuthResult(False, "replayed-nonce")
    key = keyring.get(peer.key_id)
    if key is None:
        return AuthResult(False, "unknown-key")
    used_nonces.add(nonce)
    if not hmac.compare_digest(challenge_response(key, nonce, peer.name), response_tag):
        return AuthResult(False, "bad-signature")
    return AuthResult(True)


# -- discovery / services / negotiation -------------------------------------------

def discover(directory: list[AgentIdentity], reachable: set[str]) -> list[AgentIdentity]:
    """Reachable agents that chose to be discoverable."""
    return [a for a in directory if a.discoverable and a.name in reachable]


@dataclass
class TrustBook:
    scores: dict[str, float] = field(default_factory=dict)

    def score(self, peer: str) -> float:
        return self.scores.get(peer, TRUST_INITIAL)

    def update(self, peer: str, evidence: str) -> float:
        """auth-fail is hard distrust; everything else is incremental."""
        if evidence == "auth-fail":
            value = 0.0
        else:
            delta = {"bad-data": -0.2, "agreement-broken": -0.3, "agreement-honored": 0.1}
            if evidence not in delta:
                raise ValueError(f"unknown trust evidence {evidence!r}")
            value = min(1.0, max(0.0, self.score(peer) + delta[evidence]))
        self.scores[peer] = value
        return value

    def eligible(self, peer: str) -> bool:
        return self.score(peer) >= TRUST_FLOOR_FOR_NEGOTIATION


class CollabState:
    """Per-agent collaboration bookkeeping."""

    def __init__(self, me: AgentIdentity, keyring: dict[str, str]):
        self.me = me
        self.keyring = keyring
        self.authenticated: set[str] = set()
        self.service_records: dict[str, ServiceRecord] = {}
        self.agreements: list[Agreement] = []
        self.trust = TrustBook()
        self.used_nonces: set[str] = set()
        self.active_tasks: set[str] = set()   # negotiations in flight, by task id
        self.rejected_peers: int = 0

    def session_open(self, peer: str) -> bool:
        return peer in self.authenticated

    def complete_auth(self, peer: AgentIdentity, nonce: str, response_tag: str) -> AuthResult:
        result = authenticate(peer, nonce, response_tag, self.keyring, self.used_nonces)
        if result.ok:
            self.authenticated.add(peer.name)
        else:
            self.authenticated.discard(peer.name)
            self.trust.update(peer.name, "auth-fail")
        return result

    def declare_services(self, record: ServiceRecord) -> None:
        if not self.session_open(record.agent) and record.agent != self.me.name:
            raise NotAuthenticatedError(f"{record.agent} has no authenticated session")
        self.service_records[record.agent] = record

    def query_services(self, peer: str) -> ServiceRecord:
        if not self.session_open(peer):
            raise NotAuthenticatedError(f"{peer} has no authenticated session")
        if peer not in self.service_records:
            raise CollabError(f"no service record for {peer}")
        return self.service_records[peer]

    def pick_negotiation_target(self, requirements: dict) -> Optional[str]:
        """Match requirements against declared services, skipping distrusted peers."""
        candidates = [
            name for name, record in sorted(self.service_records.items())
            if name != self.me.name and self.session_open(name)
            and self.trust.eligible(name) and record.covers(requirements)
        ]
        return candidates[0] if candidates else None

    def register_agreement(self, peer: str, task_id: str, terms: dict, t: SimTime) -> Agreement:
        agreement = Agreement((self.me.name, peer), task_id, terms, t)
        self.agreements.append(agreement)
        return agreement

    def has_conflicting_agreement(self, terms: dict) -> bool:
        start = terms.get("start_at")
        return any(a.terms.get("start_at") == start for a in self.agreements)


def respond_to_negotiation(request: NegotiationRequest, my_record: ServiceRecord,
                           busy_until: Optional[SimTime],
                           conflicting: bool) -> NegotiationResponse:
    """Responder policy: accept when able now, defer when busy, else reject."""
    if not my_record.covers(request.requirements) or conflicting:
        return NegotiationResponse(ResponseKind.REJECT)
    start_at = request.terms.get("start_at", 0)
    if busy_until is not None and busy_until > start_at:
        return NegotiationResponse(ResponseKind.PROPOSE, {"start_at": busy_until})
    return NegotiationResponse(ResponseKind.ACCEPT)
