import json
import random
import socket
import struct
import tempfile
import threading
import time
from pathlib import Path

from django.test import SimpleTestCase

from device_sim.samples import FixStatus, SolutionSample
from device_sim.tests import serve_in_thread
from main.exceptions import EndpointError
from timing_analysis.metrics import mean_sample_rate
from timing_analysis.series import TimingSeries
from .codec import (
    PACKET_LEN, StreamDecoder, crc16_ccitt, decode_file, decode_packet, decode_stream, encode,
)
from .recorder import CaptureMeta, meta_path_for, record


def reference_crc(data, poly=0x1021, init=0xFFFF):
    """Bit-at-a-time CRC-16/CCITT-FALSE."""
    crc = init
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
    return crc


def random_sample(rng):
    return SolutionSample(
        tow_us=rng.randrange(604800 * 10**6),
        sys_time_us=rng.randrange(2**64),
        east_mm=rng.randrange(-2**31, 2**31),
        north_mm=rng.randrange(-2**31, 2**31),
        up_mm=rng.randrange(-2**31, 2**31),
        fix_status=rng.choice(list(FixStatus)),
    )


def sample_stream(n, seed=0):
    rng = random.Random(seed)
    tow = 345600 * 10**6
    samples = []
    for _ in range(n):
        tow += rng.randint(5_000, 25_000)
        samples.append(SolutionSample(tow, tow + rng.randint(1_000, 80_000), rng.randint(-50, 50),
                                      rng.randint(-50, 50), rng.randint(-80, 80), FixStatus.FIXED))
    return samples


class SendOnce:
    """Loopback TCP server that sends a fixed payload to one client, then closes."""

    def __init__(self, payload, hold_s=0.0):
        self.payload = payload
        self.hold_s = hold_s
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.bind(('127.0.0.1', 0))
        self.sock.listen()
        self.port = self.sock.getsockname()[1]
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        conn, _ = self.sock.accept()
        with conn:
            conn.sendall(self.payload)
            time.sleep(self.hold_s)
        self.sock.close()

    def join(self):
        self._thread.join(10)


class CrcTests(SimpleTestCase):

    def test_check_value(self):
        self.assertEqual(crc16_ccitt(b'123456789'), 0x29B1)

    def test_matches_bitwise_reference(self):
        rng = random.Random(1021)
        for _ in range(1000):
            data = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 64)))
            self.assertEqual(crc16_ccitt(data), reference_crc(data), data.hex())


class PacketTests(SimpleTestCase):

    def test_fixed_length(self):
        rng = random.Random(36)
        for _ in range(100):
            self.assertEqual(len(encode(random_sample(rng))), PACKET_LEN)
        self.assertEqual(PACKET_LEN, 38)

    def test_all_zero_sample_byte_image(self):
        packet = encode(SolutionSample(0, 0, 0, 0, 0, FixStatus.NONE))
        self.assertEqual(packet[:6], bytes([0xA5, 0x5A, 0x01, 0x10, 0x1E, 0x00]))
        self.assertEqual(packet[6:36], bytes(30))
        self.assertEqual(packet[36:], struct.pack('<H', reference_crc(packet[2:36])))

    def test_round_trip(self):
        rng = random.Random(10_000)
        samples = [random_sample(rng) for _ in range(10_000)]
        decoded, diagnostics = decode_stream(b''.join(encode(s) for s in samples))
        self.assertEqual(decoded, samples)
        self.assertEqual(diagnostics.bytes_skipped, 0)
        self.assertEqual(diagnostics.packets_ok, 10_000)

    def test_out_of_range_sample(self):
        with self.assertRaises(ValueError):
            encode(SolutionSample(-1, 0, 0, 0, 0))

    def test_decode_packet_checks(self):
        packet = bytearray(encode(sample_stream(1)[0]))
        with self.assertRaises(ValueError):
            decode_packet(packet[:-1])
        packet[3] = 0x11
        with self.assertRaises(ValueError):
            decode_packet(packet)


class StreamDecoderTests(SimpleTestCase):

    def test_concatenated_packets(self):
        samples = sample_stream(50)
        decoded, diagnostics = decode_stream(b''.join(encode(s) for s in samples))
        self.assertEqual(decoded, samples)
        self.assertEqual(diagnostics.bytes_skipped, 0)

    def test_garbage_between_packets(self):
        rng = random.Random(16)
        samples = sample_stream(40)
        parts = []
        for s in samples:
            parts.append(encode(s))
            parts.append(bytes(rng.getrandbits(8) for _ in range(16)))
        decoded, diagnostics = decode_stream(b''.join(parts))
        self.assertEqual(decoded, samples)
        self.assertGreaterEqual(diagnostics.bytes_skipped, 16)

    def test_flipped_crc_drops_one_packet(self):
        samples = sample_stream(20)
        stream = bytearray(b''.join(encode(s) for s in samples))
        stream[7 * PACKET_LEN + 36] ^= 0xFF
        decoded, diagnostics = decode_stream(bytes(stream))
        self.assertEqual(decoded, samples[:7] + samples[8:])
        self.assertGreaterEqual(diagnostics.crc_failures, 1)

    def test_one_percent_corruption(self):
        rng = random.Random(99)
        samples = sample_stream(2000)
        stream = bytearray(b''.join(encode(s) for s in samples))
        corrupted_packets = set()
        for pos in rng.sample(range(len(stream)), len(stream) // 100):
            stream[pos] ^= rng.randint(1, 255)
            corrupted_packets.add(pos // PACKET_LEN)
        intact = [s for i, s in enumerate(samples) if i not in corrupted_packets]
        decoded, _ = decode_stream(bytes(stream))
        recovered = set(decoded)
        self.assertGreaterEqual(sum(1 for s in intact if s in recovered), 0.95 * len(intact))
        # resync never yields a sample that was not sent
        self.assertTrue(recovered <= set(samples))

    def test_arbitrary_chunking(self):
        rng = random.Random(5)
        samples = sample_stream(100)
        data = b''.join(encode(s) for s in samples)
        decoder = StreamDecoder()
        decoded = []
        i = 0
        while i < len(data):
            step = rng.randint(1, 50)
            decoded.extend(decoder.feed(data[i:i + step]))
            i += step
        self.assertEqual(decoded, samples)
        self.assertEqual(decoder.finish().bytes_skipped, 0)

    def test_truncated_tail(self):
        samples = sample_stream(5)
        data = b''.join(encode(s) for s in samples) + encode(sample_stream(1, seed=7)[0])[:10]
        decoded, diagnostics = decode_stream(data)
        self.assertEqual(decoded, samples)
        self.assertEqual(diagnostics.truncated_tail_bytes, 10)

    def test_empty_stream(self):
        decoded, diagnostics = decode_stream(b'')
        self.assertEqual(decoded, [])
        self.assertEqual(diagnostics.packets_ok, 0)


class RecorderTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.capture = Path(self.tmp.name) / 'capture.anb'

    def test_byte_transparent_capture(self):
        samples = sample_stream(300)
        payload = b''.join(encode(s) for s in samples)
        server = SendOnce(payload)
        meta = record(('127.0.0.1', server.port), self.capture)
        server.join()
        self.assertEqual(self.capture.read_bytes(), payload)
        self.assertEqual(meta.bytes_captured, len(payload))
        self.assertFalse(meta.terminated_early)
        self.assertEqual(decode_file(self.capture)[0], decode_stream(payload)[0])
        sidecar = CaptureMeta.read(meta_path_for(self.capture))
        self.assertEqual(sidecar.endpoint, f"127.0.0.1:{server.port}")
        self.assertEqual(sidecar.bytes_captured, len(payload))

    def test_zero_length_capture(self):
        server = SendOnce(b'', hold_s=0.5)
        meta = record(('127.0.0.1', server.port), self.capture, duration_s=0)
        server.join()
        self.assertEqual(meta.bytes_captured, 0)
        self.assertEqual(self.capture.read_bytes(), b'')

    def test_early_close_is_flagged(self):
        server = SendOnce(encode(sample_stream(1)[0]))
        meta = record(('127.0.0.1', server.port), self.capture, duration_s=5.0)
        server.join()
        self.assertTrue(meta.terminated_early)
        self.assertEqual(meta.bytes_captured, PACKET_LEN)

    def test_gap_in_stream_is_recorded(self):
        class Gappy(SendOnce):
            def _run(self):
                conn, _ = self.sock.accept()
                with conn:
                    conn.sendall(self.payload)
                    time.sleep(0.8)
                    conn.sendall(self.payload)
                self.sock.close()

        server = Gappy(encode(sample_stream(1)[0]))
        meta = record(('127.0.0.1', server.port), self.capture)
        server.join()
        self.assertEqual(len(meta.connection_gaps), 1)
        self.assertGreaterEqual(meta.connection_gaps[0][1], 0.5)

    def test_connect_failure(self):
        with socket.socket() as placeholder:
            placeholder.bind(('127.0.0.1', 0))
            port = placeholder.getsockname()[1]
        with self.assertRaises(EndpointError):
            record(('127.0.0.1', port), self.capture)

    def test_nominal_device_capture_rate(self):
        thread, port, result = serve_in_thread(duration_s=30.0, seed=3, time_scale=30.0, wait_for_client=True)
        meta = record(('127.0.0.1', port), self.capture)
        thread.join(10)
        samples, diagnostics = decode_file(self.capture)
        self.assertEqual(diagnostics.crc_failures, 0)
        rate = mean_sample_rate(TimingSeries.from_samples(samples))
        self.assertTrue(55.0 <= rate <= 65.0, rate)
        self.assertEqual(meta.bytes_captured, PACKET_LEN * result['summary'].samples_emitted)
        json.loads(meta_path_for(self.capture).read_text())
