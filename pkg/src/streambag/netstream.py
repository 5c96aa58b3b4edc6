"""Socket transport for labeled instance streams, plus load generation.

Wire protocol: length-prefixed UTF-8 frames over one TCP connection.
  frame     := u32 big-endian payload length, then that many payload bytes
  handshake := first frame, the dataset header text (@relation/@attribute/@data)
  row       := "seq,send_timestamp_ns," + one CSV instance row (class last,
               nominal values as tokens)
  end       := zero-length frame

The receiver side runs one reader thread that stamps arrival times at frame
completion and feeds a bounded queue; the executor's blocking pop on that
queue is what yields the CPU while the stream is idle. The generator paces
sends with a one-token bucket so the mean rate stays exact under scheduler
jitter without allowing bursts.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

from .data import (
    Instance,
    Schema,
    SchemaError,
    RecordError,
    StreamRecord,
    _row_to_instance,
    format_arff_header,
    format_csv_row,
    parse_arff_header,
)

MAX_FRAME_BYTES = 1 << 24  # sanity cap on a declared frame length
_HEADER = struct.Struct(">I")


class ProtocolError(Exception):
    """Malformed frame, bad handshake, or out-of-order stream."""


class CalibrationError(Exception):
    """Capacity calibration could not produce a usable rate."""


# -- framing ---------------------------------------------------------------


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_HEADER.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    """Read exactly n bytes; None on a clean EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        data = sock.recv(n - got)
        if not data:
            if got == 0:
                return None
            raise ProtocolError(f"connection closed mid-frame ({got}/{n} bytes)")
        chunks.append(data)
        got += len(data)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Next frame payload; None signals the zero-length end-of-stream frame."""
    header = _recv_exact(sock, 4)
    if header is None:
        raise ProtocolError("connection closed before end-of-stream frame")
    (length,) = _HEADER.unpack(header)
    if length == 0:
        return None
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame length {length} exceeds cap {MAX_FRAME_BYTES}")
    return _recv_exact(sock, length)


def encode_row(schema: Schema, seq: int, sent_at: int, inst: Instance) -> bytes:
    return f"{seq},{sent_at},{format_csv_row(schema, inst)}".encode()


def decode_row(schema: Schema, payload: bytes, received_at: int) -> StreamRecord:
    try:
        text = payload.decode()
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"frame is not valid UTF-8: {exc}") from None
    parts = text.split(",", 2)
    if len(parts) != 3:
        raise ProtocolError(f"row frame needs seq,timestamp,fields: {text[:80]!r}")
    try:
        seq = int(parts[0])
        sent_at = int(parts[1])
    except ValueError:
        raise ProtocolError(f"bad seq/timestamp prefix in {text[:80]!r}") from None
    try:
        inst = _row_to_instance(parts[2].split(","), schema, seq)
    except RecordError as exc:
        raise ProtocolError(str(exc)) from None
    return StreamRecord(seq, inst, sent_at, received_at)


# -- receiver ----------------------------------------------------------------


class RecordFeed:
    """Reader thread pushing records into a bounded queue.

    The queue yields StreamRecord items, then None at end of stream; a
    transport error is forwarded as an exception instance.
    """

    def __init__(self, sock: socket.socket, schema: Schema, capacity: int = 4):
        self.schema = schema
        self.queue: queue.Queue = queue.Queue(maxsize=max(1, capacity))
        self._sock = sock
        self._thread: threading.Thread | None = None

    def start(self) -> "RecordFeed":
        if self._thread is None:
            self._thread = threading.Thread(target=self._read_loop, daemon=True,
                                            name="streambag-receiver")
            self._thread.start()
        return self

    def _read_loop(self) -> None:
        expected_seq = 0
        try:
            while True:
                payload = recv_frame(self._sock)
                received_at = time.time_ns()
                if payload is None:
                    self.queue.put(None)
                    return
                record = decode_row(self.schema, payload, received_at)
                if record.seq != expected_seq:
                    raise ProtocolError(
                        f"sequence gap: expected {expected_seq}, got {record.seq}")
                expected_seq += 1
                self.queue.put(record)
        except Exception as exc:  # forwarded to the consumer
            self.queue.put(exc)

    def __iter__(self):
        self.start()
        while True:
            item = self.queue.get()
            if item is None:
                return
            if isinstance(item, Exception):
                raise item
            yield item


def receive_stream(sock: socket.socket, capacity: int = 4) -> tuple[Schema, RecordFeed]:
    """Read the handshake and hand back the schema plus a lazy record feed."""
    payload = recv_frame(sock)
    if payload is None:
        raise ProtocolError("stream ended before handshake")
    try:
        text = payload.decode()
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"handshake is not valid UTF-8: {exc}") from None
    try:
        schema = parse_arff_header(iter(enumerate(text.splitlines(), start=1)))
    except SchemaError as exc:
        raise ProtocolError(f"handshake parse failure: {exc}") from None
    return schema, RecordFeed(sock, schema, capacity)


# -- generator ----------------------------------------------------------------


@dataclass(slots=True)
class SendLogEntry:
    seq: int
    scheduled_at: int  # ns, what the pacer aimed for
    sent_at: int       # ns, when sendall returned control


def generate_load(sock: socket.socket, schema: Schema, rows: list[Instance],
                  rate: float | None, duration: float | None = None,
                  count: int | None = None) -> list[SendLogEntry]:
    """Stream rows (looping in order) at the target rate; returns the send log.

    rate=None streams unthrottled. The zero-length terminator frame is always
    sent, even on error. Socket backpressure blocks the sender; nothing is
    ever dropped.
    """
    if rate is not None and rate <= 0:
        raise ValueError("rate must be positive")
    if not rows:
        raise ValueError("dataset is empty")
    log: list[SendLogEntry] = []
    try:
        send_frame(sock, format_arff_header(schema).encode())
        start = time.monotonic()
        end = start + duration if duration is not None else None
        tokens = 1.0
        refill_at = start
        seq = 0
        i = 0
        while True:
            if count is not None and seq >= count:
                break
            now = time.monotonic()
            if end is not None and now >= end:
                break
            if rate is not None:
                tokens = min(1.0, tokens + (now - refill_at) * rate)
                refill_at = now
                if tokens < 1.0:
                    wait = (1.0 - tokens) / rate
                    if end is not None and now + wait >= end:
                        break
                    time.sleep(wait)
                    now = time.monotonic()
                    tokens = min(1.0, tokens + (now - refill_at) * rate)
                    refill_at = now
                tokens -= 1.0
            scheduled = time.time_ns()
            send_frame(sock, encode_row(schema, seq, scheduled, rows[i]))
            log.append(SendLogEntry(seq, scheduled, time.time_ns()))
            seq += 1
            i += 1
            if i == len(rows):
                i = 0
    finally:
        try:
            send_frame(sock, b"")
        except OSError:
            pass
    return log


def calibrate_capacity(address: tuple[str, int], schema: Schema,
                       rows: list[Instance], warmup: float = 30.0) -> float:
    """Measure a processor's steady-state consumption rate in instances/second.

    Streams unthrottled at the endpoint for the warmup window and counts the
    sends that land in its final two thirds; TCP backpressure ties the send
    rate to the processor's consumption rate once buffers fill.
    """
    if warmup <= 0:
        raise CalibrationError("warmup window must be positive")
    sock = socket.create_connection(address)
    try:
        # A small send buffer keeps the backpressure coupling tight.
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 64 * 1024)
        log = generate_load(sock, schema, rows, rate=None, duration=warmup)
    except OSError as exc:
        raise CalibrationError(f"endpoint failure during calibration: {exc}") from None
    finally:
        sock.close()
    if not log:
        raise CalibrationError("no instances were sent during the warmup window")
    cut = log[0].sent_at + int(warmup / 3.0 * 1e9)
    steady = [e for e in log if e.sent_at >= cut]
    window_s = (log[-1].sent_at - cut) / 1e9
    if len(steady) < 2 or window_s <= 0:
        raise CalibrationError("insufficient steady-state window")
    ips = len(steady) / window_s
    if ips < 1.0:
        raise CalibrationError(f"processor consumed below 1 instance/s ({ips:.3f})")
    return ips
