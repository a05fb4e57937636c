"""
Random Linear Network Coding over GF(2^8)

A message is split into K equal-length packets x_1..x_K. Every coded packet
carries a random coefficient vector and the matching combination of the
source packets. A receiver row-reduces what it gets and can rebuild the
message from any K linearly independent packets, no matter which source
produced them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import galois
import numpy as np

from config.defaults import FIELD_POLYNOMIAL

GF = galois.GF(2**8, irreducible_poly=FIELD_POLYNOMIAL)

# message_id (4), K (2) | coefficients (K) | payload length (4) | payload
_HEADER = struct.Struct(">IH")
_LENGTH = struct.Struct(">I")


class DimensionMismatch(ValueError):
    """Coefficient vector length does not match the decoder's K."""


class NotYetDecodable(RuntimeError):
    """decode() called before K independent packets were absorbed."""


class WireFormatError(ValueError):
    """Truncated or inconsistent wire data."""


@dataclass(frozen=True)
class SourceMessage:
    """A message divided into K payload vectors of equal length."""
    message_id: int
    packets: Tuple[bytes, ...]

    def __post_init__(self):
        if not self.packets:
            raise ValueError("A message needs at least one packet (K >= 1)")
        lengths = {len(p) for p in self.packets}
        if len(lengths) != 1:
            raise ValueError(f"Message {self.message_id}: packets differ in length {sorted(lengths)}")

    @property
    def k(self) -> int:
        return len(self.packets)

    @property
    def payload_size(self) -> int:
        return len(self.packets[0])

    @cached_property
    def symbols(self) -> galois.FieldArray:
        """K x L field matrix of the source packets."""
        return GF(np.frombuffer(b"".join(self.packets), dtype=np.uint8).reshape(self.k, -1))

    @classmethod
    def random(cls, message_id: int, k: int, payload_size: int,
               rng: np.random.Generator) -> "SourceMessage":
        data = rng.integers(0, 256, size=(k, payload_size), dtype=np.uint8)
        return cls(message_id=message_id, packets=tuple(row.tobytes() for row in data))


@dataclass(frozen=True)
class CodedPacket:
    """
    One linear combination of a message's source packets.

    `key` (message id + coefficient bytes) is the packet identity used for
    duplicate suppression. The hop trace is simulator metadata and is not
    part of the wire format.
    """
    message_id: int
    coefficients: bytes
    payload: bytes
    origin: int = 0
    created_slot: int = 0
    packet_id: int = 0
    trace: Tuple[int, ...] = ()
    key: Tuple[int, bytes] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not any(self.coefficients):
            raise ValueError("All-zero coefficient vector is never innovative")
        if not self.trace:
            object.__setattr__(self, "trace", (self.origin,))
        elif self.trace[0] != self.origin:
            raise ValueError("Hop trace must begin with the packet's origin")
        object.__setattr__(self, "key", (self.message_id, self.coefficients))

    @property
    def k(self) -> int:
        return len(self.coefficients)

    def extended(self, node: int) -> "CodedPacket":
        """Copy of this packet with `node` appended to its hop trace."""
        return replace(self, trace=self.trace + (node,))

    # ------------------------------------------------------------------
    # Wire format
    # ------------------------------------------------------------------
    def to_wire(self) -> bytes:
        return (_HEADER.pack(self.message_id, self.k) + self.coefficients
                + _LENGTH.pack(len(self.payload)) + self.payload)

    @classmethod
    def from_wire(cls, data: bytes, origin: int = 0, created_slot: int = 0) -> Tuple["CodedPacket", int]:
        """Parse one packet; returns (packet, bytes consumed)."""
        if len(data) < _HEADER.size:
            raise WireFormatError("Truncated packet header")
        message_id, k = _HEADER.unpack_from(data, 0)
        offset = _HEADER.size
        if len(data) < offset + k + _LENGTH.size:
            raise WireFormatError(f"Truncated coefficient vector for message {message_id}")
        coefficients = bytes(data[offset:offset + k])
        offset += k
        (length,) = _LENGTH.unpack_from(data, offset)
        offset += _LENGTH.size
        if len(data) < offset + length:
            raise WireFormatError(f"Truncated payload for message {message_id}")
        payload = bytes(data[offset:offset + length])
        try:
            packet = cls(message_id=message_id, coefficients=coefficients, payload=payload,
                         origin=origin, created_slot=created_slot)
        except ValueError as e:
            raise WireFormatError(str(e)) from e
        return packet, offset + length


def write_packet_trace(path, packets: Sequence[CodedPacket]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(p.to_wire() for p in packets))


def read_packet_trace(path) -> List[CodedPacket]:
    data = Path(path).read_bytes()
    packets = []
    offset = 0
    while offset < len(data):
        packet, used = CodedPacket.from_wire(data[offset:])
        packets.append(packet)
        offset += used
    return packets


# ============================================================
# ENCODING
# ============================================================

def encode(message: SourceMessage, rng: np.random.Generator, origin: int = 0,
           created_slot: int = 0, packet_id: int = 0,
           coefficients: Optional[Sequence[int]] = None) -> CodedPacket:
    """
    Draw a random nonzero coefficient vector and combine the source packets.

    Explicit `coefficients` bypass the draw.
    """
    if coefficients is None:
        coeffs = rng.integers(0, 256, size=message.k, dtype=np.uint8)
        while not coeffs.any():
            coeffs = rng.integers(0, 256, size=message.k, dtype=np.uint8)
    else:
        coeffs = np.asarray(coefficients, dtype=np.uint8)
        if coeffs.shape != (message.k,):
            raise DimensionMismatch(f"Expected {message.k} coefficients, got {coeffs.size}")

    payload = GF(coeffs) @ message.symbols
    return CodedPacket(
        message_id=message.message_id,
        coefficients=coeffs.tobytes(),
        payload=np.asarray(payload, dtype=np.uint8).tobytes(),
        origin=origin,
        created_slot=created_slot,
        packet_id=packet_id,
    )


# ============================================================
# DECODING
# ============================================================

class DecoderState:
    """
    Incremental Gauss-Jordan decoder for one message.

    The basis is kept in reduced row echelon form, each row augmented with
    its payload, so a full-rank basis already holds the decoded packets.
    """

    def __init__(self, message_id: int, k: int):
        if k < 1:
            raise ValueError("K must be at least 1")
        self.message_id = message_id
        self.k = k
        self._pivots: List[int] = []
        self._basis: Optional[galois.FieldArray] = None  # rank x (K + payload), RREF

    @property
    def rank(self) -> int:
        return len(self._pivots)

    @property
    def decodable(self) -> bool:
        return self.rank == self.k

    @property
    def coefficient_matrix(self) -> np.ndarray:
        """Coefficient part of the basis, rows ordered by pivot column."""
        if self._basis is None:
            return np.zeros((0, self.k), dtype=np.uint8)
        return np.asarray(self._basis[:, :self.k], dtype=np.uint8)

    def absorb(self, packet: CodedPacket) -> bool:
        """Add a packet; returns True iff it raised the rank."""
        if packet.message_id != self.message_id:
            raise DimensionMismatch(
                f"Packet of message {packet.message_id} fed to decoder of message {self.message_id}"
            )
        if packet.k != self.k:
            raise DimensionMismatch(f"Expected {self.k} coefficients, got {packet.k}")
        if self.decodable:
            return False

        row = GF(np.frombuffer(packet.coefficients + packet.payload, dtype=np.uint8).copy())
        if self._basis is not None:
            # basis is RREF: one product clears every pivot column of the new row
            row = row - row[self._pivots] @ self._basis

        nonzero = np.flatnonzero(np.asarray(row[:self.k], dtype=np.uint8))
        if nonzero.size == 0:
            return False

        pivot = int(nonzero[0])
        row = row / row[pivot]
        if self._basis is None:
            stacked = np.asarray(row, dtype=np.uint8)[np.newaxis, :]
        else:
            basis = self._basis - self._basis[:, [pivot]] * row
            stacked = np.vstack([np.asarray(basis, dtype=np.uint8),
                                 np.asarray(row, dtype=np.uint8)[np.newaxis, :]])
        pivots = self._pivots + [pivot]
        order = np.argsort(pivots)
        self._pivots = [pivots[i] for i in order]
        self._basis = GF(stacked[order])
        return True

    def decode(self) -> List[bytes]:
        if not self.decodable:
            raise NotYetDecodable(f"Message {self.message_id}: rank {self.rank} of {self.k}")
        return [np.asarray(row[self.k:], dtype=np.uint8).tobytes() for row in self._basis]


def absorb(state: DecoderState, packet: CodedPacket) -> Tuple[DecoderState, bool]:
    innovative = state.absorb(packet)
    return state, innovative


def decode(state: DecoderState) -> List[bytes]:
    return state.decode()


def rank_deficiency_probability(k: int, field_size: int = 256) -> float:
    """Chance that k uniformly random vectors in GF(q)^k are linearly dependent."""
    full_rank = 1.0
    for i in range(1, k + 1):
        full_rank *= 1.0 - field_size ** (-i)
    return 1.0 - full_rank
