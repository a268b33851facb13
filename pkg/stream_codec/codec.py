# stream_codec/codec.py
"""
Solution packet framing.

    A5 5A | version (01) | msg_id (10) | payload_len u16 LE (30) | payload | crc u16 LE

Payload: tow_us u64, sys_time_us u64, east/north/up_mm i32, fix_status u8,
pad u8, all little-endian. The CRC is CRC-16/CCITT-FALSE over version..payload.
"""
import logging
import struct
from dataclasses import dataclass, field

from device_sim.samples import FixStatus, SolutionSample

logger = logging.getLogger(__name__)

SYNC = b'\xa5\x5a'
VERSION = 0x01
MSG_SOLUTION = 0x10
HEADER = struct.Struct('<2sBBH')
PAYLOAD = struct.Struct('<QQiiiBB')
CRC = struct.Struct('<H')
PAYLOAD_LEN = PAYLOAD.size  # 30
PACKET_LEN = HEADER.size + PAYLOAD_LEN + CRC.size  # 38


def _crc_table(poly=0x1021):
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return tuple(table)


CRC_TABLE = _crc_table()


def crc16_ccitt(data, init=0xFFFF) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor."""
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ CRC_TABLE[(crc >> 8) ^ b]
    return crc


def encode(sample: SolutionSample) -> bytes:
    try:
        payload = PAYLOAD.pack(
            sample.tow_us, sample.sys_time_us, sample.east_mm, sample.north_mm, sample.up_mm,
            int(sample.fix_status), 0,
        )
    except struct.error as e:
        raise ValueError(f"sample does not fit the solution packet: {e}")
    body = HEADER.pack(SYNC, VERSION, MSG_SOLUTION, PAYLOAD_LEN)[2:] + payload
    return SYNC + body + CRC.pack(crc16_ccitt(body))


def decode_packet(packet) -> SolutionSample:
    """Decode exactly one packet; ValueError describes the first check that fails."""
    if len(packet) != PACKET_LEN:
        raise ValueError(f"solution packet must be {PACKET_LEN} bytes, got {len(packet)}")
    sync, version, msg_id, payload_len = HEADER.unpack_from(packet)
    if sync != SYNC:
        raise ValueError("missing sync word")
    if version != VERSION or msg_id != MSG_SOLUTION or payload_len != PAYLOAD_LEN:
        raise ValueError(f"unsupported header: version={version} msg_id={msg_id:#x} len={payload_len}")
    (crc,) = CRC.unpack_from(packet, PACKET_LEN - CRC.size)
    if crc16_ccitt(packet[2:PACKET_LEN - CRC.size]) != crc:
        raise ValueError("CRC mismatch")
    tow_us, sys_time_us, east, north, up, fix, _pad = PAYLOAD.unpack_from(packet, HEADER.size)
    try:
        fix_status = FixStatus(fix)
    except ValueError:
        raise ValueError(f"unknown fix status {fix}")
    return SolutionSample(tow_us, sys_time_us, east, north, up, fix_status)


@dataclass
class DecodeDiagnostics:
    packets_ok: int = 0
    crc_failures: int = 0
    header_failures: int = 0
    bytes_skipped: int = 0
    truncated_tail_bytes: int = 0

    def as_dict(self):
        return {
            'packets_ok': self.packets_ok,
            'crc_failures': self.crc_failures,
            'header_failures': self.header_failures,
            'bytes_skipped': self.bytes_skipped,
            'truncated_tail_bytes': self.truncated_tail_bytes,
        }


@dataclass
class StreamDecoder:
    """
    Incremental decoder. ``feed`` yields every complete, valid sample in the
    buffered bytes; a failed candidate costs one byte and scanning resumes at
    the next sync word.
    """
    diagnostics: DecodeDiagnostics = field(default_factory=DecodeDiagnostics)
    _buffer: bytearray = field(default_factory=bytearray, repr=False)

    def feed(self, chunk):
        buf = self._buffer
        buf.extend(chunk)
        diag = self.diagnostics
        i = 0
        while True:
            start = buf.find(SYNC, i)
            if start < 0:
                # keep a trailing A5 that may be half of the next sync word
                keep_from = len(buf) - 1 if buf.endswith(SYNC[:1]) else len(buf)
                diag.bytes_skipped += max(0, keep_from - i)
                i = max(i, keep_from)
                break
            diag.bytes_skipped += start - i
            i = start
            if len(buf) - i < PACKET_LEN:
                break
            candidate = bytes(buf[i:i + PACKET_LEN])
            try:
                sample = decode_packet(candidate)
            except ValueError as e:
                if 'CRC' in str(e):
                    diag.crc_failures += 1
                else:
                    diag.header_failures += 1
                diag.bytes_skipped += 1
                i += 1
                continue
            diag.packets_ok += 1
            i += PACKET_LEN
            yield sample
        del buf[:i]

    def finish(self) -> DecodeDiagnostics:
        """Account for whatever partial packet is left in the buffer."""
        if self._buffer:
            self.diagnostics.truncated_tail_bytes = len(self._buffer)
            logger.debug(f"Stream ended with {len(self._buffer)} undecoded bytes")
            self._buffer.clear()
        return self.diagnostics


def decode_stream(chunks):
    """Decode an iterable of byte chunks; returns (samples, diagnostics)."""
    decoder = StreamDecoder()
    if isinstance(chunks, (bytes, bytearray, memoryview)):
        chunks = (chunks,)
    samples = []
    for chunk in chunks:
        samples.extend(decoder.feed(chunk))
    return samples, decoder.finish()


def iter_file_chunks(path, chunk_size=65536):
    with open(path, 'rb') as f:
        while chunk := f.read(chunk_size):
            yield chunk


def decode_file(path):
    samples, diagnostics = decode_stream(iter_file_chunks(path))
    logger.info(f"Decoded {path}: {diagnostics.packets_ok} packets, {diagnostics.crc_failures} CRC failures, "
                f"{diagnostics.bytes_skipped} bytes skipped")
    return samples, diagnostics
