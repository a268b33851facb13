# device_sim/server.py
"""
TCP front end of the simulated device.

One producer coroutine paces the simulated samples onto the wall clock and
fans the encoded packets out to one bounded queue per client. A slow client
loses its oldest packets; the producer never waits on a socket.
"""
import asyncio
import logging
import time
from dataclasses import asdict, dataclass

from django.conf import settings

from main.exceptions import EndpointError
from stream_codec.codec import encode
from .degradation import DegradationScript, simulate_run
from .samples import LatencyModel, gps_tow_from_unix
from .schedule import SamplingSchedule

logger = logging.getLogger(__name__)

CLIENT_DRAIN_TIMEOUT_S = 5.0


@dataclass
class StreamSummary:
    host: str
    port: int
    duration_s: float
    time_scale: float
    start_tow_s: float | None = None
    start_unix: float | None = None
    samples_generated: int = 0
    samples_emitted: int = 0
    samples_dropped: int = 0
    samples_suppressed: int = 0
    queue_overflows: int = 0
    clients_served: int = 0
    stopped_early: bool = False

    def as_dict(self):
        return asdict(self)


class _Client:
    def __init__(self, peer, queue_size):
        self.peer = peer
        self.queue = asyncio.Queue(maxsize=queue_size)
        self.done = asyncio.Event()


class DeviceServer:

    def __init__(self, schedule: SamplingSchedule, duration_s: float, seed=0, script: DegradationScript = None,
                 time_scale=1.0, wait_for_client=False, start_tow_s=None, latency: LatencyModel = None,
                 queue_size=None):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.schedule = schedule
        self.duration_s = duration_s
        self.seed = seed
        self.script = script
        self.time_scale = time_scale
        self.wait_for_client = wait_for_client
        self.start_tow_s = start_tow_s
        self.latency = latency or LatencyModel()
        self.queue_size = queue_size or getattr(settings, 'DEVICE_SIM_QUEUE_SIZE', 4096)
        self._clients = set()
        self._first_client = None
        self.summary = None

    async def serve(self, host, port, on_listening=None, stop_event=None) -> StreamSummary:
        self._first_client = asyncio.Event()
        try:
            server = await asyncio.start_server(self._handle_client, host, port)
        except OSError as e:
            raise EndpointError(f"Cannot bind device simulator to {host}:{port}: {e}")

        bound_port = server.sockets[0].getsockname()[1]
        self.summary = StreamSummary(host=host, port=bound_port, duration_s=self.duration_s,
                                     time_scale=self.time_scale)
        logger.info(f"Device simulator listening on {host}:{bound_port}")
        if on_listening is not None:
            on_listening(bound_port)

        async with server:
            try:
                if self.wait_for_client and not await self._await_first_client(stop_event):
                    self.summary.stopped_early = True
                    return self.summary
                await self._produce(stop_event)
            finally:
                await self._close_clients()
        logger.info(
            f"Device simulator finished: {self.summary.samples_emitted} emitted, "
            f"{self.summary.samples_dropped} dropped, {self.summary.samples_suppressed} suppressed, "
            f"{self.summary.queue_overflows} queue overflows"
        )
        return self.summary

    async def _await_first_client(self, stop_event) -> bool:
        while not self._first_client.is_set():
            if stop_event is not None and stop_event.is_set():
                return False
            try:
                await asyncio.wait_for(self._first_client.wait(), timeout=0.1)
            except asyncio.TimeoutError:
                continue
        return True

    async def _produce(self, stop_event):
        loop = asyncio.get_running_loop()
        start_unix = time.time()
        start_tow = self.start_tow_s if self.start_tow_s is not None else gps_tow_from_unix(start_unix)
        run = simulate_run(self.schedule, self.duration_s, self.seed, script=self.script,
                           start_tow_s=start_tow, latency=self.latency)

        summary = self.summary
        summary.start_tow_s = start_tow
        summary.start_unix = start_unix
        summary.samples_generated = run.generated
        summary.samples_dropped = run.dropped
        summary.samples_suppressed = run.suppressed

        t_start = loop.time()
        for sample, offset in zip(run.samples, run.emit_offsets_s):
            if stop_event is not None and stop_event.is_set():
                summary.stopped_early = True
                return
            delay = t_start + offset / self.time_scale - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            self._publish(encode(sample))
            summary.samples_emitted += 1

        remaining = t_start + self.duration_s / self.time_scale - loop.time()
        while remaining > 0:
            if stop_event is not None and stop_event.is_set():
                summary.stopped_early = True
                return
            await asyncio.sleep(min(remaining, 0.1))
            remaining = t_start + self.duration_s / self.time_scale - loop.time()

    def _publish(self, packet):
        for client in list(self._clients):
            self._enqueue(client, packet)

    def _enqueue(self, client, packet):
        try:
            client.queue.put_nowait(packet)
        except asyncio.QueueFull:
            client.queue.get_nowait()
            self.summary.queue_overflows += 1
            client.queue.put_nowait(packet)

    async def _close_clients(self):
        clients = list(self._clients)
        for client in clients:
            self._enqueue(client, None)
        for client in clients:
            try:
                await asyncio.wait_for(client.done.wait(), timeout=CLIENT_DRAIN_TIMEOUT_S)
            except asyncio.TimeoutError:
                logger.warning(f"Client {client.peer} did not drain within {CLIENT_DRAIN_TIMEOUT_S} s")

    async def _handle_client(self, reader, writer):
        peer = writer.get_extra_info('peername')
        client = _Client(peer, self.queue_size)
        self._clients.add(client)
        if self.summary is not None:
            self.summary.clients_served += 1
        logger.info(f"Client connected: {peer}")
        self._first_client.set()
        try:
            while True:
                packet = await client.queue.get()
                if packet is None:
                    break
                writer.write(packet)
                await writer.drain()
        except (ConnectionError, OSError) as e:
            logger.info(f"Client {peer} disconnected: {e}")
        finally:
            self._clients.discard(client)
            client.done.set()
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


def stream(endpoint, schedule: SamplingSchedule = None, script: DegradationScript = None, duration_s=30.0,
           seed=0, time_scale=1.0, wait_for_client=False, start_tow_s=None, latency: LatencyModel = None,
           on_listening=None, stop_event=None) -> StreamSummary:
    """
    Serve one simulated run on ``endpoint`` (host, port) and return its summary.

    Blocks for ``duration_s / time_scale`` wall seconds, plus the wait for the
    first client when ``wait_for_client`` is set. ``stop_event`` is a
    threading.Event that ends the run early.
    """
    host, port = endpoint
    server = DeviceServer(
        schedule or SamplingSchedule(), duration_s, seed=seed, script=script, time_scale=time_scale,
        wait_for_client=wait_for_client, start_tow_s=start_tow_s, latency=latency,
    )
    return asyncio.run(server.serve(host, port, on_listening=on_listening, stop_event=stop_event))
