"""RMX1 frame messages for streamed generation.

Every message starts with a 10-byte header::

    "RMX1" | u8 msg_type | u8 person_id | u32 frame_index (little-endian)

Frame messages (0x01 subject, 0x02 generated) follow it with 51 little-endian
float32 coordinates, 214 bytes in total. End-of-stream (0x03) is the bare
header. Error messages (0x04) add a u16 byte count and a UTF-8 reason.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import BadLengthError, BadMagicError, BadPayloadError, ProtocolError, UnknownMessageTypeError
from .skeleton import FEATS_PER_PERSON

MAGIC = b"RMX1"
HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size
PAYLOAD_SIZE = FEATS_PER_PERSON * 4
FRAME_MESSAGE_SIZE = HEADER_SIZE + PAYLOAD_SIZE
_REASON_LEN = struct.Struct("<H")
MAX_REASON_BYTES = 0xFFFF


class MsgType(enum.IntEnum):
    SUBJECT_FRAME = 0x01
    GENERATED_FRAME = 0x02
    END_OF_STREAM = 0x03
    ERROR = 0x04


_FRAME_TYPES = (MsgType.SUBJECT_FRAME, MsgType.GENERATED_FRAME)


@dataclass(frozen=True, eq=False)
class FrameMessage:
    """One protocol message.

    ``payload`` is a read-only (51,) float32 array for frame messages and None
    otherwise; ``reason`` is only set on error messages.
    """

    msg_type: MsgType
    person_id: int = 0
    frame_index: int = 0
    payload: np.ndarray | None = None
    reason: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if self.person_id not in (0, 1):
            raise BadPayloadError(f"person_id must be 0 or 1, got {self.person_id}")
        if not 0 <= self.frame_index <= 0xFFFFFFFF:
            raise BadPayloadError(f"frame_index {self.frame_index} does not fit in u32")
        if self.msg_type in _FRAME_TYPES:
            if self.payload is None:
                raise BadPayloadError("frame messages need a 51-value payload")
            payload = np.array(self.payload, dtype="<f4").reshape(-1)
            if payload.shape != (FEATS_PER_PERSON,):
                raise BadPayloadError(f"payload must hold {FEATS_PER_PERSON} values, got {payload.size}")
            payload.flags.writeable = False
            object.__setattr__(self, "payload", payload)
        elif self.payload is not None:
            raise BadPayloadError(f"{self.msg_type.name} messages carry no coordinates")
        if self.msg_type is MsgType.ERROR:
            reason = self.reason or ""
            if len(reason.encode("utf-8")) > MAX_REASON_BYTES:
                raise BadPayloadError("error reason longer than 65535 bytes")
            object.__setattr__(self, "reason", reason)
        elif self.reason is not None:
            raise BadPayloadError("only error messages carry a reason")

    def __eq__(self, other):
        if not isinstance(other, FrameMessage):
            return NotImplemented
        return encode_frame(self) == encode_frame(other)

    __hash__ = None

    @property
    def joints(self) -> np.ndarray:
        """Payload as a float64 (17, 3) array."""
        if self.payload is None:
            raise ProtocolError(f"{self.msg_type.name} message has no coordinates")
        return self.payload.astype(np.float64).reshape(-1, 3)

    @classmethod
    def frame(cls, msg_type: MsgType, person_id: int, frame_index: int, joints) -> "FrameMessage":
        return cls(msg_type, person_id, frame_index, np.asarray(joints, dtype=np.float64).reshape(-1))

    @classmethod
    def error(cls, reason: str, frame_index: int = 0, person_id: int = 1) -> "FrameMessage":
        return cls(MsgType.ERROR, person_id, frame_index, reason=reason)

    @classmethod
    def end(cls, frame_index: int = 0, person_id: int = 0) -> "FrameMessage":
        return cls(MsgType.END_OF_STREAM, person_id, frame_index)


def encode_frame(msg: FrameMessage) -> bytes:
    head = HEADER.pack(MAGIC, int(msg.msg_type), msg.person_id, msg.frame_index)
    if msg.msg_type in _FRAME_TYPES:
        return head + msg.payload.tobytes()
    if msg.msg_type is MsgType.ERROR:
        raw = msg.reason.encode("utf-8")
        return head + _REASON_LEN.pack(len(raw)) + raw
    return head


def _decode_header(buf: bytes) -> tuple[MsgType, int, int]:
    if len(buf) < HEADER_SIZE:
        raise BadLengthError(f"need at least {HEADER_SIZE} header bytes, got {len(buf)}")
    magic, msg_type, person_id, frame_index = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise UnknownMessageTypeError(f"unknown message type 0x{msg_type:02x}") from None
    if person_id not in (0, 1):
        raise BadPayloadError(f"person_id must be 0 or 1, got {person_id}")
    return kind, person_id, frame_index


def _body_length(kind: MsgType, after_header: bytes) -> int:
    """Bytes expected after the header; needs the first 2 body bytes for errors."""
    if kind in _FRAME_TYPES:
        return PAYLOAD_SIZE
    if kind is MsgType.END_OF_STREAM:
        return 0
    if len(after_header) < _REASON_LEN.size:
        raise BadLengthError("error message is missing its reason length")
    return _REASON_LEN.size + _REASON_LEN.unpack_from(after_header)[0]


def _build(kind: MsgType, person_id: int, frame_index: int, body: bytes) -> FrameMessage:
    if kind in _FRAME_TYPES:
        return FrameMessage(kind, person_id, frame_index, np.frombuffer(body, dtype="<f4"))
    if kind is MsgType.ERROR:
        try:
            reason = body[_REASON_LEN.size :].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadPayloadError(f"error reason is not UTF-8: {exc}") from None
        return FrameMessage(kind, person_id, frame_index, reason=reason)
    return FrameMessage(kind, person_id, frame_index)


def decode_frame(buf: bytes) -> FrameMessage:
    """Decode exactly one message; any leftover or missing byte is an error."""
    buf = bytes(buf)
    kind, person_id, frame_index = _decode_header(buf)
    body = buf[HEADER_SIZE:]
    expected = _body_length(kind, body)
    if len(body) != expected:
        raise BadLengthError(f"{kind.name} message needs {HEADER_SIZE + expected} bytes, got {len(buf)}")
    return _build(kind, person_id, frame_index, body)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> FrameMessage | None:
    """Read one message from a byte stream; None on a clean EOF between messages."""
    head = _read_exact(stream, HEADER_SIZE)
    if not head:
        return None
    kind, person_id, frame_index = _decode_header(head)
    if kind is MsgType.ERROR:
        prefix = _read_exact(stream, _REASON_LEN.size)
        n = _body_length(kind, prefix) - _REASON_LEN.size
        body = prefix + _read_exact(stream, n)
    else:
        body = _read_exact(stream, _body_length(kind, b""))
    return decode_frame(head + body)


def write_message(stream: BinaryIO, msg: FrameMessage) -> None:
    stream.write(encode_frame(msg))
    stream.flush()
