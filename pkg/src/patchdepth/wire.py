"""Binary frame protocol for serving noise predictions from another process.

Frame layout (all integers little-endian):

    magic   4 bytes  "EPS1"
    version u16      1
    kind    u8       0 handshake, 1 request, 2 response, 3 error
    t       u32      timestep (requests/responses); error-message byte length (kind 3)
    H, W, C u32 x 3  payload dimensions
    payload 4*H*W*C bytes float32 LE, row-major, channel-last

23-byte header, 23 + 4*H*W*C bytes total. Kind 0 carries (T, beta_start,
beta_end) as three float32 values with dims (1, 3, 1) and must be echoed back
by the server before any request. Kind 3 carries a UTF-8 message padded with
zeros to a multiple of 4 bytes, dims (1, ceil(len/4), 1), exact length in t.

Transports: a TCP byte stream ("host:port" / "tcp:host:port") or a child
process speaking the same frames on stdin/stdout ("cmd:<command line>").
One request is in flight per connection at a time.
"""

from __future__ import annotations

import select
import shlex
import socket
import struct
import subprocess
import time

import numpy as np

MAGIC = b"EPS1"
VERSION = 1
KIND_HANDSHAKE = 0
KIND_REQUEST = 1
KIND_RESPONSE = 2
KIND_ERROR = 3

_HEADER = struct.Struct("<4sHBIIII")
HEADER_SIZE = _HEADER.size  # 23


class ProtocolError(RuntimeError):
    pass


class ServerError(RuntimeError):
    """kind=3 frame received; message is the server-supplied text."""


class DenoiserUnavailable(RuntimeError):
    """Transport failure (timeout, refused connection, dead peer)."""


def encode_frame(kind: int, t: int, dims: tuple, payload: bytes) -> bytes:
    h, w, c = dims
    if len(payload) != 4 * h * w * c:
        raise ProtocolError(f"payload length {len(payload)} != 4*{h}*{w}*{c}")
    return _HEADER.pack(MAGIC, VERSION, kind, t, h, w, c) + payload


def decode_header(header: bytes):
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"short header: {len(header)} bytes")
    magic, version, kind, t, h, w, c = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if kind not in (KIND_HANDSHAKE, KIND_REQUEST, KIND_RESPONSE, KIND_ERROR):
        raise ProtocolError(f"unknown frame kind {kind}")
    return kind, t, (h, w, c)


def encode_request(y_t, t: int) -> bytes:
    """Request frame for a single-channel grid; refuses non-finite grids."""
    grid = np.asarray(y_t)
    if grid.ndim != 2:
        raise ProtocolError(f"expected a 2D grid, got shape {grid.shape}")
    if not np.isfinite(grid).all():
        raise ProtocolError("grid contains non-finite values; refusing to encode")
    payload = grid.astype("<f4").tobytes()
    return encode_frame(KIND_REQUEST, int(t), (grid.shape[0], grid.shape[1], 1), payload)


def decode_response(data: bytes, expected_dims: tuple, expected_t: int | None = None):
    """Decode a response frame, validating dims (and t when given) against the request."""
    kind, t, dims = decode_header(data[:HEADER_SIZE])
    payload = data[HEADER_SIZE:]
    if len(payload) != 4 * dims[0] * dims[1] * dims[2]:
        raise ProtocolError(f"payload length {len(payload)} does not match dims {dims}")
    if kind == KIND_ERROR:
        raise ServerError(error_message(t, payload))
    if kind != KIND_RESPONSE:
        raise ProtocolError(f"expected response frame, got kind {kind}")
    if dims != expected_dims:
        raise ProtocolError(f"response dims {dims} != request dims {expected_dims}")
    if expected_t is not None and t != expected_t:
        raise ProtocolError(f"response timestep {t} != request timestep {expected_t}")
    grid = np.frombuffer(payload, dtype="<f4").reshape(dims[0], dims[1])
    return grid.astype(np.float64)


def encode_error(message: str) -> bytes:
    raw = message.encode("utf-8")
    w = (len(raw) + 3) // 4
    return encode_frame(KIND_ERROR, len(raw), (1, w, 1), raw.ljust(4 * w, b"\x00"))


def error_message(t: int, payload: bytes) -> str:
    return payload[:t].decode("utf-8", errors="replace")


def encode_handshake(T: int, beta_start: float, beta_end: float) -> bytes:
    payload = np.array([T, beta_start, beta_end], dtype="<f4").tobytes()
    return encode_frame(KIND_HANDSHAKE, 0, (1, 3, 1), payload)


def decode_handshake(t: int, dims: tuple, payload: bytes):
    if dims != (1, 3, 1):
        raise ProtocolError(f"handshake dims {dims} != (1, 3, 1)")
    vals = np.frombuffer(payload, dtype="<f4")
    return int(vals[0]), float(vals[1]), float(vals[2])


# ---------------------------------------------------------------- transports

class _SocketTransport:
    def __init__(self, host, port, timeout):
        self.host, self.port, self.timeout = host, port, timeout
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)

    def send(self, data):
        self.sock.sendall(data)

    def recv_exact(self, n):
        chunks = []
        got = 0
        while got < n:
            chunk = self.sock.recv(n - got)
            if not chunk:
                raise DenoiserUnavailable("connection closed by peer")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class _SubprocessTransport:
    def __init__(self, argv, timeout):
        self.argv, self.timeout = argv, timeout
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )

    def send(self, data):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise DenoiserUnavailable(f"child process pipe closed: {exc}") from exc

    def recv_exact(self, n):
        out = b""
        deadline = time.monotonic() + self.timeout
        fd = self.proc.stdout.fileno()
        while len(out) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DenoiserUnavailable(f"timed out after {self.timeout}s waiting for child")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = self.proc.stdout.read(n - len(out))
            if not chunk:
                raise DenoiserUnavailable("child process closed its stdout")
            out += chunk
        return out

    def close(self):
        for pipe in (self.proc.stdin, self.proc.stdout):
            try:
                pipe.close()
            except OSError:
                pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


def _parse_endpoint(endpoint):
    """Accepts "host:port", "tcp:host:port" or "cmd:<command line>"."""
    if isinstance(endpoint, (list, tuple)):
        return ("cmd", list(endpoint))
    if endpoint.startswith("cmd:"):
        return ("cmd", shlex.split(endpoint[4:]))
    spec = endpoint[4:] if endpoint.startswith("tcp:") else endpoint
    host, sep, port = spec.rpartition(":")
    if not sep:
        raise ValueError(f"cannot parse endpoint {endpoint!r}")
    return ("tcp", (host or "127.0.0.1", int(port)))


class RemoteDenoiser:
    """Denoiser that round-trips each prediction through a served endpoint.

    Connects eagerly and performs the schedule handshake. A transport failure
    triggers one reconnect (with a fresh handshake) and a resend; a second
    failure is surfaced as DenoiserUnavailable for the sampling loop to wrap.
    """

    def __init__(self, endpoint, schedule_params=(1000, 1e-4, 0.02), timeout=120.0):
        self.endpoint = endpoint
        self.schedule_params = schedule_params
        self.timeout = timeout
        self.transport = None
        self._connect()

    def _connect(self):
        kind, target = _parse_endpoint(self.endpoint)
        try:
            if kind == "tcp":
                self.transport = _SocketTransport(*target, timeout=self.timeout)
            else:
                self.transport = _SubprocessTransport(target, timeout=self.timeout)
        except (OSError, subprocess.SubprocessError) as exc:
            raise DenoiserUnavailable(f"cannot reach {self.endpoint!r}: {exc}") from exc
        self._handshake()

    def _handshake(self):
        T, b0, b1 = self.schedule_params
        self.transport.send(encode_handshake(T, b0, b1))
        kind, t, dims, payload = self._read_frame()
        if kind == KIND_ERROR:
            raise ServerError(error_message(t, payload))
        if kind != KIND_HANDSHAKE:
            raise ProtocolError(f"expected handshake ack, got kind {kind}")

    def _read_frame(self):
        header = self.transport.recv_exact(HEADER_SIZE)
        kind, t, dims = decode_header(header)
        payload = self.transport.recv_exact(4 * dims[0] * dims[1] * dims[2])
        return kind, t, dims, payload

    def _round_trip(self, frame, dims, t):
        self.transport.send(frame)
        header = self.transport.recv_exact(HEADER_SIZE)
        payload_len = 4 * np.prod(decode_header(header)[2], dtype=np.int64)
        payload = self.transport.recv_exact(int(payload_len))
        return decode_response(header + payload, dims, t)

    def predict_eps(self, y_t, t):
        grid = np.asarray(y_t, dtype=np.float64)
        frame = encode_request(grid, t)
        dims = (grid.shape[0], grid.shape[1], 1)
        try:
            return self._round_trip(frame, dims, int(t))
        except (DenoiserUnavailable, socket.timeout, OSError) as exc:
            self.close()
            try:
                self._connect()
                return self._round_trip(frame, dims, int(t))
            except (DenoiserUnavailable, socket.timeout, OSError) as retry_exc:
                raise DenoiserUnavailable(
                    f"remote denoiser failed and reconnect failed: {retry_exc}"
                ) from exc

    def close(self):
        if self.transport is not None:
            self.transport.close()
            self.transport = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
