# packet_forge/icmp.py
"""
ICMP echo request construction.

The checksum is the internet ones'-complement checksum over the whole ICMP
message with the checksum field zeroed. The kernel prepends the 20-byte IPv4
header, so an empty payload gives the 28-byte on-wire packet.
"""
import struct
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from main.exceptions import PacketSizeError

ICMP_ECHO_REQUEST = 8
ICMP_ECHO_CODE = 0
ICMP_HEADER_LEN = 8
IPV4_HEADER_LEN = 20

_HEADER = struct.Struct('!BBHHH')
_U16 = struct.Struct('!H')


def compute_checksum(data) -> int:
    """Ones' complement of the ones'-complement sum of big-endian 16-bit words."""
    data = bytes(data)
    if len(data) % 2:
        data += b'\x00'
    if not data:
        return 0xFFFF

    total = int(np.frombuffer(data, dtype='>u2').sum(dtype=np.uint64))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def payload_budget(mtu=None) -> int:
    """Largest payload that keeps IP + ICMP + payload within the MTU."""
    mtu = mtu if mtu is not None else getattr(settings, 'FLOOD_MTU_BYTES', 1500)
    return mtu - IPV4_HEADER_LEN - ICMP_HEADER_LEN


def _check_u16(name, value):
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"{name} must fit in 16 bits, got {value}")


@dataclass(frozen=True)
class IcmpEchoPacket:
    icmp_type: int
    code: int
    checksum: int
    identifier: int
    sequence: int
    payload: bytes = b''

    def serialize(self) -> bytes:
        header = _HEADER.pack(self.icmp_type, self.code, self.checksum, self.identifier, self.sequence)
        return header + self.payload

    @property
    def icmp_length(self) -> int:
        return ICMP_HEADER_LEN + len(self.payload)

    @property
    def wire_size(self) -> int:
        """Size on the wire including the IPv4 header."""
        return IPV4_HEADER_LEN + self.icmp_length

    def verify(self) -> bool:
        zeroed = _HEADER.pack(self.icmp_type, self.code, 0, self.identifier, self.sequence) + self.payload
        return compute_checksum(zeroed) == self.checksum

    @classmethod
    def parse(cls, data) -> 'IcmpEchoPacket':
        """Parse an ICMP message (no IP header) and validate its checksum."""
        data = bytes(data)
        if len(data) < ICMP_HEADER_LEN:
            raise ValueError(f"ICMP message too short: {len(data)} bytes")
        icmp_type, code, checksum, identifier, sequence = _HEADER.unpack_from(data)
        packet = cls(icmp_type, code, checksum, identifier, sequence, data[ICMP_HEADER_LEN:])
        if icmp_type != ICMP_ECHO_REQUEST or code != ICMP_ECHO_CODE:
            raise ValueError(f"not an echo request: type={icmp_type} code={code}")
        if not packet.verify():
            raise ValueError(f"bad ICMP checksum 0x{checksum:04X}")
        return packet


def build_echo_request(identifier: int, sequence: int, payload=b'', mtu=None) -> IcmpEchoPacket:
    """Build an echo request with a valid checksum."""
    _check_u16('identifier', identifier)
    _check_u16('sequence', sequence)
    payload = bytes(payload)

    budget = payload_budget(mtu)
    if len(payload) > budget:
        raise PacketSizeError(f"payload of {len(payload)} bytes exceeds the MTU budget of {budget} bytes")

    header = _HEADER.pack(ICMP_ECHO_REQUEST, ICMP_ECHO_CODE, 0, identifier, sequence)
    checksum = compute_checksum(header + payload)
    return IcmpEchoPacket(ICMP_ECHO_REQUEST, ICMP_ECHO_CODE, checksum, identifier, sequence, payload)


class EchoRequestTemplate:
    """
    Renders echo requests for one sender, updating only the sequence word.

    The checksum is updated incrementally from the sum of the fixed words, so
    rendering costs a few integer operations instead of a pass over the message.
    The returned buffer is reused between calls.
    """

    def __init__(self, identifier: int, payload=b'', mtu=None):
        base = build_echo_request(identifier, 0, payload, mtu=mtu)
        self.identifier = identifier
        self._buffer = bytearray(base.serialize())
        # folded sum of every word except checksum and sequence
        self._partial = ~base.checksum & 0xFFFF

    def __len__(self):
        return len(self._buffer)

    def render(self, sequence: int) -> bytearray:
        sequence &= 0xFFFF
        total = self._partial + sequence
        total = (total & 0xFFFF) + (total >> 16)
        _U16.pack_into(self._buffer, 2, ~total & 0xFFFF)
        _U16.pack_into(self._buffer, 6, sequence)
        return self._buffer
