import os
import random
import socket
import struct
import threading
import time
from unittest import mock

from django.test import SimpleTestCase, override_settings

from main.exceptions import EndpointError, PacketSizeError, PrivilegeError
from .flood import FloodConfig, TokenBucket, TransportMode, flood
from .icmp import EchoRequestTemplate, IcmpEchoPacket, build_echo_request, compute_checksum


def reference_checksum(data):
    """Word-by-word ones'-complement sum with explicit carry folding."""
    if len(data) % 2:
        data = data + b'\x00'
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


class UdpReceiver:
    """Counts datagrams on an ephemeral loopback port."""

    def __init__(self, keep=False):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 * 1024 * 1024)
        self.sock.bind(('127.0.0.1', 0))
        self.sock.settimeout(0.2)
        self.port = self.sock.getsockname()[1]
        self.count = 0
        self.keep = keep
        self.datagrams = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        while not self._stop.is_set():
            try:
                data = self.sock.recv(2048)
            except socket.timeout:
                continue
            self.count += 1
            if self.keep:
                self.datagrams.append(data)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        time.sleep(0.3)
        self._stop.set()
        self._thread.join()
        self.sock.close()


class ChecksumTests(SimpleTestCase):

    def test_echo_header_vector(self):
        self.assertEqual(compute_checksum(bytes([0x08, 0, 0, 0, 0, 0, 0, 0])), 0xF7FF)

    def test_all_zero_message(self):
        self.assertEqual(compute_checksum(bytes(8)), 0xFFFF)

    def test_matches_reference_on_random_inputs(self):
        rng = random.Random(1071)
        for _ in range(1000):
            data = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 96)))
            self.assertEqual(compute_checksum(data), reference_checksum(data), data.hex())

    def test_random_64_byte_message(self):
        data = os.urandom(64)
        self.assertEqual(compute_checksum(data), reference_checksum(data))


class EchoRequestTests(SimpleTestCase):

    def test_empty_payload_is_28_bytes_on_the_wire(self):
        packet = build_echo_request(1, 1)
        self.assertEqual(len(packet.serialize()), 8)
        self.assertEqual(packet.wire_size, 28)
        self.assertEqual((packet.icmp_type, packet.code), (8, 0))

    def test_zero_identifier_and_sequence_checksum(self):
        self.assertEqual(build_echo_request(0, 0).checksum, 0xF7FF)

    def test_payload_length_adds_to_serialization(self):
        packet = build_echo_request(1, 2, bytes(4))
        self.assertEqual(len(packet.serialize()), 12)

    def test_stored_checksum_verifies(self):
        rng = random.Random(7)
        for _ in range(200):
            packet = build_echo_request(rng.randrange(65536), rng.randrange(65536), os.urandom(rng.randint(0, 40)))
            raw = bytearray(packet.serialize())
            raw[2:4] = b'\x00\x00'
            self.assertEqual(compute_checksum(raw), packet.checksum)
            self.assertEqual(IcmpEchoPacket.parse(packet.serialize()), packet)

    @override_settings(FLOOD_MTU_BYTES=100)
    def test_payload_over_mtu_budget(self):
        build_echo_request(1, 1, bytes(72))
        with self.assertRaises(PacketSizeError):
            build_echo_request(1, 1, bytes(73))

    def test_parse_rejects_corrupted_checksum(self):
        raw = bytearray(build_echo_request(3, 4).serialize())
        raw[3] ^= 0x01
        with self.assertRaises(ValueError):
            IcmpEchoPacket.parse(raw)

    def test_template_matches_full_build(self):
        template = EchoRequestTemplate(0x1234, b'abc')
        for sequence in (0, 1, 2, 255, 4096, 65534, 65535, 65536):
            expected = build_echo_request(0x1234, sequence & 0xFFFF, b'abc').serialize()
            self.assertEqual(bytes(template.render(sequence)), expected)


class TokenBucketTests(SimpleTestCase):

    def test_grants_never_exceed_rate_plus_one(self):
        bucket = TokenBucket(rate=1000, burst=64, start=0.0)
        granted = 0
        for step in range(20001):
            granted += bucket.take(step * 0.00005)
        self.assertLessEqual(granted, 1000 + 1)
        self.assertGreaterEqual(granted, 990)

    def test_burst_cap(self):
        bucket = TokenBucket(rate=1000, burst=10, start=0.0)
        self.assertEqual(bucket.take(1.0), 10)

    def test_wait_hint_points_at_next_token(self):
        bucket = TokenBucket(rate=10, burst=1, start=0.0)
        self.assertEqual(bucket.take(0.0), 1)
        self.assertEqual(bucket.take(0.01), 0)
        self.assertAlmostEqual(bucket.wait_hint(0.01), 0.09)


class FloodTests(SimpleTestCase):

    def udp_config(self, port, **overrides):
        fields = dict(
            target_address='127.0.0.1', target_port=port, attacker_count=1,
            target_rate_pps=1000, duration_s=1.0, transport_mode=TransportMode.UDP_FALLBACK,
        )
        fields.update(overrides)
        return FloodConfig(**fields)

    def test_one_pps_for_three_seconds(self):
        with UdpReceiver() as receiver:
            stats = flood(self.udp_config(receiver.port, target_rate_pps=1, duration_s=3.0))
        self.assertLessEqual(abs(stats.packets_sent - 3), 1)

    def test_ten_thousand_pps_on_loopback(self):
        with UdpReceiver() as receiver:
            stats = flood(self.udp_config(receiver.port, target_rate_pps=10_000, duration_s=1.0))
        self.assertAlmostEqual(stats.packets_sent, 10_000, delta=2_000)
        self.assertLessEqual(stats.achieved_rate_pps, 10_000 * 1.05)

    def test_hundred_thousand_pps_matches_receipts(self):
        with UdpReceiver() as receiver:
            stats = flood(self.udp_config(receiver.port, target_rate_pps=100_000, duration_s=5.0))
        self.assertAlmostEqual(stats.achieved_rate_pps, 100_000, delta=20_000)
        self.assertLessEqual(stats.achieved_rate_pps, 100_000 * 1.05)
        self.assertAlmostEqual(stats.achieved_rate_pps, stats.packets_sent / stats.wall_duration_s)
        self.assertLessEqual(receiver.count, stats.packets_sent)
        self.assertGreaterEqual(receiver.count, 0.5 * stats.packets_sent)

    def test_two_attackers_double_the_aggregate(self):
        with UdpReceiver() as receiver:
            single = flood(self.udp_config(receiver.port, target_rate_pps=2_000, duration_s=1.0))
            double = flood(self.udp_config(receiver.port, target_rate_pps=4_000, attacker_count=2, duration_s=1.0))
        self.assertAlmostEqual(double.achieved_rate_pps / single.achieved_rate_pps, 2.0, delta=0.4)
        self.assertEqual(len(double.per_sender), 2)

    def test_sequences_increase_per_sender(self):
        with UdpReceiver(keep=True) as receiver:
            flood(self.udp_config(receiver.port, target_rate_pps=500, attacker_count=2, duration_s=0.5))
        by_sender = {}
        for datagram in receiver.datagrams:
            packet = IcmpEchoPacket.parse(datagram)
            by_sender.setdefault(packet.identifier, []).append(packet.sequence)
        self.assertEqual(len(by_sender), 2)
        for sequences in by_sender.values():
            self.assertEqual(sequences, sorted(sequences))
            self.assertEqual(sequences[0], 0)

    def test_stop_signal_from_another_thread(self):
        stop = threading.Event()
        threading.Timer(0.2, stop.set).start()
        with UdpReceiver() as receiver:
            started = time.monotonic()
            stats = flood(self.udp_config(receiver.port, target_rate_pps=100, duration_s=30.0), stop)
        self.assertLess(time.monotonic() - started, 2.0)
        self.assertLess(stats.packets_sent, 100)


    def test_unbound_port_loses_nothing_to_port_unreachable(self):
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as placeholder:
            placeholder.bind(('127.0.0.1', 0))
            port = placeholder.getsockname()[1]
        stats = flood(self.udp_config(port, target_rate_pps=2_000, duration_s=1.0))
        self.assertEqual(stats.send_errors, 0)
        self.assertAlmostEqual(stats.packets_sent, 2_000, delta=300)

    def test_oversize_payload_opens_no_sockets(self):
        config = self.udp_config(9, attacker_count=3, payload_len=70_000)
        with mock.patch('packet_forge.flood.open_sender_socket') as opener:
            with self.assertRaises(PacketSizeError):
                flood(config)
        opener.assert_not_called()
    def test_unresolvable_target(self):
        with self.assertRaises(EndpointError):
            flood(self.udp_config(9, target_address='no-such-host.invalid'))

    def test_raw_mode_without_privileges(self):
        if os.geteuid() == 0:
            self.skipTest("running as root; raw sockets are permitted")
        config = self.udp_config(9, transport_mode=TransportMode.RAW_ICMP)
        with self.assertRaises(PrivilegeError) as ctx:
            flood(config)
        self.assertIn('raw-icmp', str(ctx.exception))

    def test_config_rejects_zero_attackers(self):
        with self.assertRaises(Exception):
            FloodConfig(attacker_count=0, target_rate_pps=10)


class WirePacketSizeTests(SimpleTestCase):

    def test_header_layout(self):
        packet = build_echo_request(0xBEEF, 0x0102)
        icmp_type, code, checksum, identifier, sequence = struct.unpack('!BBHHH', packet.serialize())
        self.assertEqual((icmp_type, code, identifier, sequence), (8, 0, 0xBEEF, 0x0102))
        self.assertEqual(checksum, packet.checksum)
