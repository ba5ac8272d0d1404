"""
Wireless messages, their byte layout and channel transcripts.

Message layout (big-endian):

    b"OW" | u16 session_id | u8 round | u8 field count | fields

Each field is `u16 length | bytes`. Round 1 carries (pk_A, c_A), round 2 carries
(pk_B, R_B) and round 3 carries (nonce, salt). Bit strings are encoded as
`u8 bit length | bits packed MSB-first`.

Transcript layout:

    b"OOBT" | u8 version | u32 entry count | entries

Each entry is `u32 time_ms | u8 direction | u8 event | u32 length | message`.
"""
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Tuple, Union

from oobsim.core.errors import MalformedMessage
from oobsim.core.sas_crypto import BitString, Commitment, Decommitment
from oobsim.core.taxonomy import Direction, PayloadField, TranscriptEvent

MESSAGE_TAG = b"OW"
TRANSCRIPT_MAGIC = b"OOBT"
TRANSCRIPT_VERSION = 1

_DIRECTIONS = list(Direction)
_EVENTS = list(TranscriptEvent)


@dataclass(frozen=True)
class CommitPayload:
    """Round 1: node public key and commitment."""
    pk_a: bytes
    commitment: Commitment


@dataclass(frozen=True)
class ChallengePayload:
    """Round 2: sink public key and sink nonce."""
    pk_b: bytes
    r_b: BitString


@dataclass(frozen=True)
class OpenPayload:
    """Round 3: decommitment of the node nonce."""
    decommitment: Decommitment


Payload = Union[CommitPayload, ChallengePayload, OpenPayload]

_PAYLOAD_ROUND = {CommitPayload: 1, ChallengePayload: 2, OpenPayload: 3}


@dataclass(frozen=True)
class WirelessMessage:
    """One protocol flow on the insecure wireless channel."""
    session_id: int
    round: int
    payload: Payload

    @property
    def well_formed(self) -> bool:
        return _PAYLOAD_ROUND.get(type(self.payload)) == self.round

    def with_session(self, session_id: int) -> "WirelessMessage":
        return replace(self, session_id=session_id)

    def with_field(self, field: PayloadField, value) -> "WirelessMessage":
        """Return a copy with one payload field replaced."""
        p = self.payload
        if field == PayloadField.PK_A and isinstance(p, CommitPayload):
            payload = replace(p, pk_a=value)
        elif field == PayloadField.C_A and isinstance(p, CommitPayload):
            payload = replace(p, commitment=value)
        elif field == PayloadField.PK_B and isinstance(p, ChallengePayload):
            payload = replace(p, pk_b=value)
        elif field == PayloadField.R_B and isinstance(p, ChallengePayload):
            payload = replace(p, r_b=value)
        elif field == PayloadField.D_A and isinstance(p, OpenPayload):
            payload = replace(p, decommitment=replace(p.decommitment, nonce=value))
        elif field == PayloadField.SALT and isinstance(p, OpenPayload):
            payload = replace(p, decommitment=replace(p.decommitment, salt=value))
        else:
            raise MalformedMessage(
                f"Round {self.round} message has no field '{field.value}'"
            )
        return replace(self, payload=payload)


@dataclass(frozen=True)
class TranscriptEntry:
    """A message as seen by the channel at one virtual instant."""
    time_ms: int
    direction: Direction
    event: TranscriptEvent
    message: WirelessMessage


def _encode_bits(bits: BitString) -> bytes:
    return struct.pack(">B", bits.length) + bits.to_bytes()


def _decode_bits(data: bytes) -> BitString:
    if not data:
        raise MalformedMessage("Empty bit string field")
    length = data[0]
    packed = data[1:]
    if len(packed) != (length + 7) // 8:
        raise MalformedMessage("Bit string length does not match its bytes")
    pad = len(packed) * 8 - length
    value = int.from_bytes(packed, "big") >> pad if packed else 0
    try:
        return BitString(value, length)
    except ValueError as e:
        raise MalformedMessage(str(e)) from e


def _fields(message: WirelessMessage) -> List[bytes]:
    p = message.payload
    if isinstance(p, CommitPayload):
        return [p.pk_a, p.commitment.digest]
    if isinstance(p, ChallengePayload):
        return [p.pk_b, _encode_bits(p.r_b)]
    return [_encode_bits(p.decommitment.nonce), p.decommitment.salt]


def encode_message(message: WirelessMessage) -> bytes:
    if not message.well_formed:
        raise MalformedMessage(f"Payload does not belong to round {message.round}")
    fields = _fields(message)
    parts = [MESSAGE_TAG, struct.pack(">HBB", message.session_id, message.round, len(fields))]
    for field in fields:
        parts.append(struct.pack(">H", len(field)))
        parts.append(field)
    return b"".join(parts)


def decode_message(data: bytes) -> WirelessMessage:
    """Parse one encoded message, raising MalformedMessage on any inconsistency."""
    if len(data) < 6 or data[:2] != MESSAGE_TAG:
        raise MalformedMessage("Missing message tag")
    session_id, round_, count = struct.unpack(">HBB", data[2:6])
    fields = []
    offset = 6
    for _ in range(count):
        if offset + 2 > len(data):
            raise MalformedMessage("Truncated field header")
        (length,) = struct.unpack(">H", data[offset:offset + 2])
        offset += 2
        if offset + length > len(data):
            raise MalformedMessage("Truncated field")
        fields.append(data[offset:offset + length])
        offset += length
    if offset != len(data):
        raise MalformedMessage("Trailing bytes after message")
    if count != 2:
        raise MalformedMessage(f"Expected 2 fields, got {count}")

    try:
        if round_ == 1:
            payload = CommitPayload(fields[0], Commitment(fields[1]))
        elif round_ == 2:
            payload = ChallengePayload(fields[0], _decode_bits(fields[1]))
        elif round_ == 3:
            payload = OpenPayload(Decommitment(_decode_bits(fields[0]), fields[1]))
        else:
            raise MalformedMessage(f"Unknown round {round_}")
    except ValueError as e:
        raise MalformedMessage(str(e)) from e
    return WirelessMessage(session_id, round_, payload)


def dump_transcript(entries: List[TranscriptEntry]) -> bytes:
    parts = [TRANSCRIPT_MAGIC, struct.pack(">BI", TRANSCRIPT_VERSION, len(entries))]
    for entry in entries:
        body = encode_message(entry.message)
        parts.append(struct.pack(
            ">IBBI",
            entry.time_ms,
            _DIRECTIONS.index(entry.direction),
            _EVENTS.index(entry.event),
            len(body),
        ))
        parts.append(body)
    return b"".join(parts)


def load_transcript(data: bytes) -> List[TranscriptEntry]:
    if data[:4] != TRANSCRIPT_MAGIC:
        raise MalformedMessage("Not a transcript")
    if len(data) < 9:
        raise MalformedMessage("Truncated transcript header")
    version, count = struct.unpack(">BI", data[4:9])
    if version != TRANSCRIPT_VERSION:
        raise MalformedMessage(f"Unsupported transcript version {version}")

    entries = []
    offset = 9
    for _ in range(count):
        if offset + 10 > len(data):
            raise MalformedMessage("Truncated transcript entry")
        time_ms, direction, event, length = struct.unpack(">IBBI", data[offset:offset + 10])
        offset += 10
        try:
            header: Tuple[Direction, TranscriptEvent] = (_DIRECTIONS[direction], _EVENTS[event])
        except IndexError:
            raise MalformedMessage("Unknown direction or event code")
        entries.append(TranscriptEntry(
            time_ms=time_ms,
            direction=header[0],
            event=header[1],
            message=decode_message(data[offset:offset + length]),
        ))
        offset += length
    if offset != len(data):
        raise MalformedMessage("Trailing bytes after transcript")
    return entries


def write_transcript(path: Path, entries: List[TranscriptEntry]) -> None:
    Path(path).write_bytes(dump_transcript(entries))


def read_transcript(path: Path) -> List[TranscriptEntry]:
    return load_transcript(Path(path).read_bytes())
