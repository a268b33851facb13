# packet_forge/flood.py
"""
Sustained echo-request flood from one or more logical attackers.

Each attacker runs in its own thread with its own socket, identifier and
sequence counter. Pacing is a token bucket per attacker; waits of 1 ms or more
sleep on the stop event, shorter ones spin.
"""
import logging
import os
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt

from main.exceptions import EndpointError, PrivilegeError
from .icmp import EchoRequestTemplate

logger = logging.getLogger(__name__)

SLEEP_THRESHOLD_S = 0.001


class TransportMode(str, Enum):
    RAW_ICMP = 'raw-icmp'
    UDP_FALLBACK = 'udp-fallback'

    @classmethod
    def from_cli(cls, value: str) -> 'TransportMode':
        aliases = {'icmp': cls.RAW_ICMP, 'udp': cls.UDP_FALLBACK}
        return aliases.get(value) or cls(value)


class FloodConfig(BaseModel):
    """Flood parameters; target_rate_pps is the aggregate over all attackers."""
    model_config = ConfigDict(frozen=True)

    target_address: str = '127.0.0.1'
    target_port: int = Field(default_factory=lambda: getattr(settings, 'FLOOD_UDP_PORT', 9), ge=1, le=65535)
    attacker_count: PositiveInt = 1
    target_rate_pps: PositiveInt = 300_000
    duration_s: PositiveFloat = 1.0
    payload_len: NonNegativeInt = 0
    transport_mode: TransportMode = TransportMode.UDP_FALLBACK


@dataclass
class FloodStats:
    packets_sent: int = 0
    send_errors: int = 0
    wall_duration_s: float = 0.0
    offered_rate_pps: float = 0.0
    transport_mode: str = TransportMode.UDP_FALLBACK.value
    per_sender: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def achieved_rate_pps(self) -> float:
        if self.wall_duration_s <= 0:
            return 0.0
        return self.packets_sent / self.wall_duration_s

    def record(self, sender: int, sent: int, errors: int = 0):
        with self._lock:
            self.packets_sent += sent
            self.send_errors += errors
            self.per_sender[sender] = self.per_sender.get(sender, 0) + sent

    def as_dict(self) -> dict:
        return {
            'packets_sent': self.packets_sent,
            'send_errors': self.send_errors,
            'wall_duration_s': self.wall_duration_s,
            'offered_rate_pps': self.offered_rate_pps,
            'achieved_rate_pps': self.achieved_rate_pps,
            'transport_mode': self.transport_mode,
            'per_sender': {str(k): v for k, v in sorted(self.per_sender.items())},
        }


class TokenBucket:
    """Grants packets at `rate` per second with at most `burst` per grant."""

    def __init__(self, rate: float, burst: int, start: float):
        self.rate = float(rate)
        self.burst = max(1, int(burst))
        self._start = start
        self._granted = 0

    def take(self, now: float) -> int:
        allowed = int((now - self._start) * self.rate) + 1
        available = allowed - self._granted
        if available <= 0:
            return 0
        granted = min(available, self.burst)
        self._granted += granted
        return granted

    def wait_hint(self, now: float) -> float:
        """Seconds until the next token becomes available."""
        next_at = self._start + self._granted / self.rate
        return max(0.0, next_at - now)


def resolve_destination(mode: TransportMode, host: str, port: int) -> tuple:
    """Resolve the flood target to a sendto() address; raises EndpointError."""
    try:
        address = socket.gethostbyname(host)
    except socket.gaierror as e:
        raise EndpointError(f"cannot resolve flood target {host!r}: {e}") from e
    return (address, 0) if mode is TransportMode.RAW_ICMP else (address, port)


def open_sender_socket(mode: TransportMode, host: str, port: int) -> socket.socket:
    """
    Create an unconnected sender socket; raises PrivilegeError or EndpointError.

    The socket stays unconnected so ICMP port-unreachable replies are never
    reported back as ECONNREFUSED on the next send.
    """
    resolve_destination(mode, host, port)
    try:
        if mode is TransportMode.RAW_ICMP:
            return socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
        return socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    except PermissionError as e:
        raise PrivilegeError(mode.value, str(e)) from e


def _attacker_loop(index, sock, destination, template, rate, burst, deadline, start_barrier, stop_signal, stats):
    sendto = sock.sendto
    sequence = 0
    start_barrier.wait()
    bucket = TokenBucket(rate, burst, time.perf_counter())

    while not stop_signal.is_set():
        now = time.perf_counter()
        if now >= deadline:
            break
        granted = bucket.take(now)
        if not granted:
            wait = bucket.wait_hint(now)
            if wait >= SLEEP_THRESHOLD_S:
                stop_signal.wait(min(wait, deadline - now))
            else:
                time.sleep(0)
            continue

        sent = errors = 0
        for _ in range(granted):
            try:
                sendto(template.render(sequence), destination)
                sent += 1
            except OSError:
                errors += 1
            sequence = (sequence + 1) & 0xFFFF
        stats.record(index, sent, errors)


def flood(config: FloodConfig, stop_signal: Optional[threading.Event] = None) -> FloodStats:
    """
    Emit echo requests toward the target until the duration elapses or the
    stop signal fires. Replies are never read.
    """
    stop_signal = stop_signal or threading.Event()
    burst = getattr(settings, 'FLOOD_BURST_LIMIT', 64)
    count = config.attacker_count
    per_sender_rate = config.target_rate_pps / count

    base_identifier = os.getpid() & 0xFFFF
    templates = [
        EchoRequestTemplate((base_identifier + i) & 0xFFFF, bytes(config.payload_len))
        for i in range(count)
    ]
    destination = resolve_destination(config.transport_mode, config.target_address, config.target_port)

    sockets = []
    try:
        for _ in range(count):
            sockets.append(open_sender_socket(config.transport_mode, config.target_address, config.target_port))
    except Exception:
        for sock in sockets:
            sock.close()
        raise

    stats = FloodStats(offered_rate_pps=float(config.target_rate_pps), transport_mode=config.transport_mode.value)
    start_barrier = threading.Barrier(count + 1)

    logger.info(
        f"Flood starting: {count} attacker(s) -> {config.target_address} "
        f"at {config.target_rate_pps} pps for {config.duration_s}s ({config.transport_mode.value})"
    )
    try:
        with ThreadPoolExecutor(max_workers=count, thread_name_prefix='attacker') as pool:
            deadline = time.perf_counter() + config.duration_s
            futures = [
                pool.submit(
                    _attacker_loop, i, sockets[i], destination, templates[i], per_sender_rate, burst,
                    deadline, start_barrier, stop_signal, stats,
                )
                for i in range(count)
            ]
            start_barrier.wait()
            started = time.perf_counter()
            try:
                for future in futures:
                    future.result()
            except BaseException:
                stop_signal.set()
                raise
            stats.wall_duration_s = time.perf_counter() - started
    finally:
        for sock in sockets:
            sock.close()

    logger.info(
        f"Flood finished: sent={stats.packets_sent} errors={stats.send_errors} "
        f"achieved={stats.achieved_rate_pps:.0f} pps over {stats.wall_duration_s:.2f}s"
    )
    return stats
