# stream_codec/recorder.py
"""Verbatim capture of the device byte stream, with a JSON sidecar."""
import json
import logging
import socket
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from tenacity import RetryError, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from main.exceptions import EndpointError

logger = logging.getLogger(__name__)

CAPTURE_SUFFIX = '.anb'
RECV_SIZE = 65536
POLL_INTERVAL_S = 0.1
GAP_THRESHOLD_S = 0.5


@dataclass
class CaptureMeta:
    capture_start_unix: float
    endpoint: str
    duration_s: float | None
    bytes_captured: int = 0
    terminated_early: bool = False
    connection_gaps: list = field(default_factory=list)  # [offset_s, length_s] without data
    run_start_tow_s: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2))

    @classmethod
    def read(cls, path) -> 'CaptureMeta':
        data = json.loads(Path(path).read_text())
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def meta_path_for(capture_path) -> Path:
    return Path(capture_path).with_suffix('.json')


@retry(
    stop=stop_after_attempt(5),
    wait=wait_exponential(multiplier=0.2, min=0.2, max=2),
    retry=retry_if_exception_type(ConnectionRefusedError),
)
def _connect(host, port, timeout):
    return socket.create_connection((host, port), timeout=timeout)


def open_capture_connection(host, port, timeout=5.0):
    """Connect to the device, retrying while it is still coming up."""
    try:
        return _connect(host, port, timeout)
    except RetryError as e:
        raise EndpointError(f"Device at {host}:{port} refused every connection attempt: {e.last_attempt.exception()}")
    except OSError as e:
        raise EndpointError(f"Cannot connect to device at {host}:{port}: {e}")


def record(endpoint, out_path, duration_s=None, stop_event=None, run_start_tow_s=None, sock=None,
           meta_path=None) -> CaptureMeta:
    """
    Write the raw byte stream from ``endpoint`` (host, port) to ``out_path``.

    Stops after ``duration_s`` wall seconds, when ``stop_event`` is set, or when
    the device closes the connection. A close before ``duration_s`` is flagged
    as early termination; with ``duration_s=None`` the close is the normal end.
    The sidecar metadata goes to ``meta_path``, by default next to the capture
    with a .json suffix.
    """
    host, port = endpoint
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sock = sock or open_capture_connection(host, port)
    sock.settimeout(POLL_INTERVAL_S)

    meta = CaptureMeta(
        capture_start_unix=time.time(), endpoint=f"{host}:{port}", duration_s=duration_s,
        run_start_tow_s=run_start_tow_s,
    )
    started = time.monotonic()
    last_data = started
    logger.info(f"Capture started: {meta.endpoint} -> {out_path}")

    with sock, open(out_path, 'wb') as f:
        while True:
            now = time.monotonic()
            if duration_s is not None and now - started >= duration_s:
                break
            if stop_event is not None and stop_event.is_set():
                break
            try:
                chunk = sock.recv(RECV_SIZE)
            except socket.timeout:
                continue
            except OSError as e:
                logger.warning(f"Capture connection lost: {e}")
                meta.terminated_early = duration_s is not None
                break
            if not chunk:
                meta.terminated_early = duration_s is not None and time.monotonic() - started < duration_s
                break
            now = time.monotonic()
            if now - last_data > GAP_THRESHOLD_S:
                meta.connection_gaps.append([round(last_data - started, 6), round(now - last_data, 6)])
            last_data = now
            f.write(chunk)
            meta.bytes_captured += len(chunk)

    meta.write(meta_path or meta_path_for(out_path))
    logger.info(
        f"Capture finished: {meta.bytes_captured} bytes, {len(meta.connection_gaps)} gaps"
        + (", terminated early" if meta.terminated_early else "")
    )
    return meta
