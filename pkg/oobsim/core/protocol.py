"""
Node and sink state machines for many-to-one pairing over an adversarial channel.

The operations in this module advance one session by one protocol round. The
batch runner drives n sessions in parallel on a simpy virtual clock measured in
integer milliseconds, routing every message through a WirelessChannel that
applies the configured adversary rules and records a transcript.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import simpy
from rich.console import Console

from oobsim.core.errors import (CommitmentMismatch, ConfigError, InvalidState,
                                LengthMismatch, MalformedMessage)
from oobsim.core.sas_crypto import (KEY_BYTES, SALT_BYTES, BitString, Commitment,
                                    Decommitment, KeyPair, SasValue, commit,
                                    compute_sas, derive_link_key, keygen,
                                    open_commitment)
from oobsim.core.taxonomy import (MAX_BATCH_SAS_BITS, MIN_BATCH_SAS_BITS,
                                  AdversaryAction, AdversaryRule, Direction,
                                  MatchStatus, PayloadField, ProtocolFailure,
                                  SessionState, SinkState, SyncStatus,
                                  TranscriptEvent)
from oobsim.core.transcript import (ChallengePayload, CommitPayload, OpenPayload,
                                    TranscriptEntry, WirelessMessage)

console = Console(stderr=True)

# Seed stream roles, combined with (seed, session_id)
NODE_STREAM = 0
SINK_STREAM = 1
SINK_KEY_STREAM = 2
ADVERSARY_STREAM = 3

TIMEOUT_HOLD_TIMES = 10


def session_rng(seed: int, session_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, session_id, stream])


@dataclass
class NodeSession:
    """Device A of one pairing instance."""
    session_id: int
    keys: KeyPair
    k: int
    rng: np.random.Generator
    state: SessionState = SessionState.IDLE
    r_a: Optional[BitString] = None
    commitment: Optional[Commitment] = None
    decommitment: Optional[Decommitment] = None
    peer_pk: Optional[bytes] = None
    sas: Optional[SasValue] = None
    deadline: Optional[int] = None
    link_key: Optional[bytes] = None
    failure: Optional[ProtocolFailure] = None


@dataclass
class SinkSession:
    """Device B's side of one pairing instance."""
    session_id: int
    keys: KeyPair
    k: int
    rng: np.random.Generator
    state: SinkState = SinkState.IDLE
    r_b: Optional[BitString] = None
    peer_pk: Optional[bytes] = None
    peer_commitment: Optional[Commitment] = None
    expected_sas: Optional[SasValue] = None
    match_status: MatchStatus = MatchStatus.FREE
    sync_status: SyncStatus = SyncStatus.UNKNOWN
    failure: Optional[ProtocolFailure] = None

    def mark(self, status: MatchStatus) -> None:
        """Move a Free computed SAS to Used or Mismatched, exactly once."""
        if self.match_status != MatchStatus.FREE:
            raise InvalidState(
                f"Session {self.session_id} is already {self.match_status.value}"
            )
        self.match_status = status


def _expect_state(actual, expected, what: str) -> None:
    if actual != expected:
        raise InvalidState(f"{what} requires state '{expected.value}', not '{actual.value}'")


def _expect_message(msg: WirelessMessage, session_id: int, round_: int) -> None:
    if msg.round != round_ or not msg.well_formed:
        raise MalformedMessage(f"Expected a round {round_} message, got round {msg.round}")
    if msg.session_id != session_id:
        raise MalformedMessage(
            f"Message for session {msg.session_id} delivered to session {session_id}"
        )


def node_round1(session: NodeSession) -> WirelessMessage:
    """Pick R_A, commit to it and emit (pk_A, c_A)."""
    _expect_state(session.state, SessionState.IDLE, "Round 1")
    session.r_a = BitString.random(session.rng, session.k)
    salt = session.rng.bytes(SALT_BYTES)
    session.commitment, session.decommitment = commit(session.keys.public_key, session.r_a, salt)
    session.state = SessionState.COMMITTED
    return WirelessMessage(
        session.session_id, 1, CommitPayload(session.keys.public_key, session.commitment)
    )


def sink_round2(session: SinkSession, msg: WirelessMessage) -> WirelessMessage:
    """Store (pk_A, c_A), pick R_B and emit (pk_B, R_B)."""
    _expect_state(session.state, SinkState.IDLE, "Round 2")
    _expect_message(msg, session.session_id, 1)
    session.peer_pk = msg.payload.pk_a
    session.peer_commitment = msg.payload.commitment
    session.r_b = BitString.random(session.rng, session.k)
    session.state = SinkState.CHALLENGED
    return WirelessMessage(
        session.session_id, 2, ChallengePayload(session.keys.public_key, session.r_b)
    )


def node_round3(session: NodeSession, msg: WirelessMessage) -> Tuple[WirelessMessage, SasValue]:
    """Compute SAS_A = R_B xor H_{R_A}(pk_B) and emit the decommitment."""
    _expect_state(session.state, SessionState.COMMITTED, "Round 3")
    _expect_message(msg, session.session_id, 2)
    if msg.payload.r_b.length != session.k:
        raise LengthMismatch(
            f"R_B has {msg.payload.r_b.length} bits, session expects {session.k}"
        )
    session.peer_pk = msg.payload.pk_b
    session.sas = compute_sas(msg.payload.r_b, session.r_a, msg.payload.pk_b)
    session.state = SessionState.AWAITING_START
    return WirelessMessage(session.session_id, 3, OpenPayload(session.decommitment)), session.sas


def sink_expected_sas(session: SinkSession, msg: WirelessMessage) -> SasValue:
    """Open c_A and compute the SAS the sink expects to see on some display."""
    _expect_state(session.state, SinkState.CHALLENGED, "Opening")
    _expect_message(msg, session.session_id, 3)
    try:
        r_a = open_commitment(session.peer_pk, session.peer_commitment, msg.payload.decommitment)
        expected = compute_sas(session.r_b, r_a, session.keys.public_key)
    except CommitmentMismatch:
        session.state = SinkState.FAILED
        session.failure = ProtocolFailure.COMMITMENT_MISMATCH
        raise
    except LengthMismatch:
        session.state = SinkState.FAILED
        session.failure = ProtocolFailure.LENGTH_MISMATCH
        raise
    session.expected_sas = expected
    session.state = SinkState.OPENED
    return expected


def node_start_transmission(session: NodeSession) -> None:
    """Start Transmission received: the node begins blinking its SAS."""
    _expect_state(session.state, SessionState.AWAITING_START, "Start Transmission")
    session.state = SessionState.SAS_EMITTED


def node_end_transmission(session: NodeSession, now: int, delta_ms: int) -> None:
    """Last frame shown: open the default-acceptance window."""
    _expect_state(session.state, SessionState.SAS_EMITTED, "End of transmission")
    session.deadline = now + delta_ms
    session.state = SessionState.AWAITING_DECISION


def finalize_session(node: NodeSession, admin_turnoff: bool, now: int) -> SessionState:
    """
    Settle the node's decision.

    A turn-off before the deadline rejects the instance. Without one the node
    accepts once the deadline has passed and derives its link key.
    """
    _expect_state(node.state, SessionState.AWAITING_DECISION, "Finalize")
    if admin_turnoff and now < node.deadline:
        node.state = SessionState.REJECTED
    elif now >= node.deadline:
        node.state = SessionState.ACCEPTED
        node.link_key = derive_link_key(node.keys.private_key, node.peer_pk)
    else:
        raise InvalidState(
            f"Session {node.session_id} is undecided until {node.deadline} ms"
        )
    return node.state


def sink_link_key(session: SinkSession) -> bytes:
    if session.state != SinkState.OPENED:
        raise InvalidState(f"Session {session.session_id} has no authenticated peer")
    return derive_link_key(session.keys.private_key, session.peer_pk)


class AdversaryPolicy:
    """
    Man-in-the-middle with full control of the wireless channel.

    Substituted public keys are the adversary's own; other substituted fields
    are drawn from the adversary's seeded generator.
    """

    def __init__(self, rules: Iterable[AdversaryRule] = (), seed: int = 0):
        self.rules = list(rules)
        self.rng = session_rng(seed, 0, ADVERSARY_STREAM)
        self.keys = keygen(self.rng.bytes(KEY_BYTES))

    def rule_for(self, session_id: int, round_: int) -> Optional[AdversaryRule]:
        """The first rule matching the session and round wins."""
        for rule in self.rules:
            if rule.round == round_ and rule.session in (None, session_id):
                return rule
        return None

    def targets(self, session_id: int) -> bool:
        return any(rule.session in (None, session_id) for rule in self.rules)

    def substitute(self, msg: WirelessMessage, payload_field: PayloadField) -> WirelessMessage:
        p = msg.payload
        if payload_field in (PayloadField.PK_A, PayloadField.PK_B):
            value = self.keys.public_key
        elif payload_field == PayloadField.C_A:
            value = Commitment(self.rng.bytes(len(p.commitment.digest)))
        elif payload_field == PayloadField.R_B:
            value = BitString.random(self.rng, p.r_b.length)
        elif payload_field == PayloadField.D_A:
            nonce = p.decommitment.nonce
            value = BitString.random(self.rng, nonce.length)
            if value == nonce:
                value = nonce.flip(0)
        else:
            value = self.rng.bytes(SALT_BYTES)
        return msg.with_field(payload_field, value)


class WirelessChannel:
    """Adversary-mediated message delivery with a full transcript."""

    def __init__(self, env: simpy.Environment, policy: AdversaryPolicy, latency_ms: int):
        self.env = env
        self.policy = policy
        self.latency_ms = latency_ms
        self.transcript: List[TranscriptEntry] = []
        self._inboxes: Dict[Tuple[int, Direction], simpy.Store] = {}
        self._observed: Dict[Tuple[int, int], simpy.Event] = {}

    def inbox(self, session_id: int, direction: Direction) -> simpy.Store:
        key = (session_id, direction)
        if key not in self._inboxes:
            self._inboxes[key] = simpy.Store(self.env)
        return self._inboxes[key]

    def _observation(self, session_id: int, round_: int) -> simpy.Event:
        key = (session_id, round_)
        if key not in self._observed:
            self._observed[key] = self.env.event()
        return self._observed[key]

    def _record(self, direction: Direction, event: TranscriptEvent, msg: WirelessMessage) -> None:
        self.transcript.append(TranscriptEntry(int(self.env.now), direction, event, msg))

    def send(self, msg: WirelessMessage) -> None:
        direction = Direction.TO_NODE if msg.round == 2 else Direction.TO_SINK
        self._record(direction, TranscriptEvent.SENT, msg)
        seen = self._observation(msg.session_id, msg.round)
        if not seen.triggered:
            seen.succeed(msg)

        rule = self.policy.rule_for(msg.session_id, msg.round)
        action = rule.action if rule else AdversaryAction.PASS
        if action == AdversaryAction.DROP:
            self._record(direction, TranscriptEvent.DROPPED, msg)
        elif action == AdversaryAction.DELAY:
            self.env.process(self._deliver(msg, direction, self.latency_ms + rule.delay_ms))
        elif action == AdversaryAction.SUBSTITUTE:
            forged = self.policy.substitute(msg, rule.field)
            self.env.process(self._deliver(forged, direction, self.latency_ms))
        elif action == AdversaryAction.REPLAY:
            if rule.source_session is None or rule.source_session == msg.session_id:
                self.env.process(self._deliver(msg, direction, self.latency_ms))
                self.env.process(self._deliver(msg, direction, 2 * self.latency_ms))
            else:
                self.env.process(self._cross_wire(msg, direction, rule.source_session))
        else:
            self.env.process(self._deliver(msg, direction, self.latency_ms))

    def _deliver(self, msg: WirelessMessage, direction: Direction, delay: int):
        yield self.env.timeout(delay)
        self._record(direction, TranscriptEvent.DELIVERED, msg)
        yield self.inbox(msg.session_id, direction).put(msg)

    def _cross_wire(self, msg: WirelessMessage, direction: Direction, source: int):
        # Swallow msg and deliver the source session's payload in its place
        self._record(direction, TranscriptEvent.DROPPED, msg)
        observed = yield self._observation(source, msg.round)
        yield from self._deliver(observed.with_session(msg.session_id), direction, self.latency_ms)


@dataclass
class BatchRun:
    """n paired sessions after the wireless phase."""
    n: int
    k: int
    nodes: List[NodeSession]
    sinks: List[SinkSession]
    clock: int
    sink_keys: KeyPair
    transcript: List[TranscriptEntry] = field(default_factory=list)

    def ready(self) -> List[int]:
        """Sessions whose node holds a SAS and waits for Start Transmission."""
        return [n.session_id for n in self.nodes if n.state == SessionState.AWAITING_START]

    def computed(self) -> List[SinkSession]:
        """Sink sessions with an expected SAS, in discovery order."""
        return [s for s in self.sinks if s.state == SinkState.OPENED]


class BatchRunner:
    """Runs the wireless phase of one batch on a discrete-event clock."""

    def __init__(
        self,
        n: int,
        k: int,
        policy: Optional[AdversaryPolicy] = None,
        seed: int = 0,
        hold_time_ms: int = 250,
        latency_ms: int = 5,
    ):
        if n < 1:
            raise ConfigError("A batch needs at least one node")
        if not MIN_BATCH_SAS_BITS <= k <= MAX_BATCH_SAS_BITS:
            raise ConfigError(
                f"k must be between {MIN_BATCH_SAS_BITS} and {MAX_BATCH_SAS_BITS}, got {k}"
            )
        self.n = n
        self.k = k
        self.seed = seed
        self.timeout_ms = TIMEOUT_HOLD_TIMES * hold_time_ms
        self.env = simpy.Environment()
        self.policy = policy or AdversaryPolicy(seed=seed)
        self.channel = WirelessChannel(self.env, self.policy, latency_ms)

        self.sink_keys = keygen(session_rng(seed, 0, SINK_KEY_STREAM).bytes(KEY_BYTES))
        self.nodes = []
        self.sinks = []
        for i in range(n):
            node_rng = session_rng(seed, i, NODE_STREAM)
            self.nodes.append(NodeSession(i, keygen(node_rng.bytes(KEY_BYTES)), k, node_rng))
            self.sinks.append(SinkSession(i, self.sink_keys, k, session_rng(seed, i, SINK_STREAM)))

    def _receive(self, session_id: int, direction: Direction, round_: int, since: int):
        """Wait for the awaited round; other rounds and duplicates are discarded."""
        inbox = self.channel.inbox(session_id, direction)
        while True:
            remaining = since + self.timeout_ms - self.env.now
            if remaining <= 0:
                return None
            get = inbox.get()
            result = yield get | self.env.timeout(remaining)
            if get not in result:
                get.cancel()
                return None
            msg = result[get]
            if msg.round == round_:
                return msg

    def _fail(self, session, cause: ProtocolFailure, detail: str) -> None:
        session.failure = cause
        if isinstance(session, SinkSession):
            session.state = SinkState.FAILED
        console.print(f"[yellow]Session {session.session_id}:[/] {detail}")

    def _node(self, node: NodeSession):
        msg = node_round1(node)
        sent_at = self.env.now
        self.channel.send(msg)
        reply = yield from self._receive(node.session_id, Direction.TO_NODE, 2, sent_at)
        if reply is None:
            node.failure = ProtocolFailure.TIMEOUT
            console.print(f"[yellow]Session {node.session_id}:[/] node timed out waiting for round 2")
            return
        try:
            opening, _ = node_round3(node, reply)
        except (LengthMismatch, MalformedMessage) as e:
            node.failure = (
                ProtocolFailure.LENGTH_MISMATCH if isinstance(e, LengthMismatch)
                else ProtocolFailure.MALFORMED_MESSAGE
            )
            console.print(f"[yellow]Session {node.session_id}:[/] {e}")
            return
        self.channel.send(opening)

    def _sink(self, sink: SinkSession):
        msg = yield from self._receive(sink.session_id, Direction.TO_SINK, 1, 0)
        if msg is None:
            self._fail(sink, ProtocolFailure.TIMEOUT, "sink timed out waiting for round 1")
            return
        try:
            challenge = sink_round2(sink, msg)
        except MalformedMessage as e:
            self._fail(sink, ProtocolFailure.MALFORMED_MESSAGE, str(e))
            return
        sent_at = self.env.now
        self.channel.send(challenge)
        opening = yield from self._receive(sink.session_id, Direction.TO_SINK, 3, sent_at)
        if opening is None:
            self._fail(sink, ProtocolFailure.TIMEOUT, "sink timed out waiting for round 3")
            return
        try:
            sink_expected_sas(sink, opening)
        except (CommitmentMismatch, LengthMismatch, MalformedMessage) as e:
            if sink.state != SinkState.FAILED:
                self._fail(sink, ProtocolFailure.MALFORMED_MESSAGE, str(e))
            else:
                console.print(f"[yellow]Session {sink.session_id}:[/] {e}")

    def run(self) -> BatchRun:
        procs = []
        for node, sink in zip(self.nodes, self.sinks):
            procs.append(self.env.process(self._sink(sink)))
            procs.append(self.env.process(self._node(node)))
        self.env.run(until=self.env.all_of(procs))
        finished = int(self.env.now)
        # Late deliveries still reach the transcript; unused timeouts just expire
        self.env.run()
        return BatchRun(
            n=self.n,
            k=self.k,
            nodes=self.nodes,
            sinks=self.sinks,
            clock=finished,
            sink_keys=self.sink_keys,
            transcript=self.channel.transcript,
        )


def run_batch(
    n: int,
    k: int,
    adversary: Optional[AdversaryPolicy] = None,
    seed: int = 0,
    hold_time_ms: int = 250,
    latency_ms: int = 5,
) -> BatchRun:
    """Advance n parallel sessions through rounds 1 to 3."""
    return BatchRunner(n, k, adversary, seed, hold_time_ms, latency_ms).run()


def honest_pair(
    session_id: int,
    node_keys: KeyPair,
    sink_keys: KeyPair,
    k: int,
    rng: np.random.Generator,
) -> Tuple[NodeSession, SinkSession]:
    """A fresh node and sink session sharing one generator."""
    return NodeSession(session_id, node_keys, k, rng), SinkSession(session_id, sink_keys, k, rng)

