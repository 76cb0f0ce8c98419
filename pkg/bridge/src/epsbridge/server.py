"""EPS1 frame protocol server.

Frame: "EPS1" magic, u16 version=1, u8 kind, u32 t, u32 H/W/C, then
4*H*W*C payload bytes of float32 little-endian. Kinds: 0 handshake
(payload = three float32: T, beta_start, beta_end; echoed back as the ack),
1 request, 2 response, 3 error (UTF-8 message zero-padded to 4*H*W*C, exact
byte length in t). A malformed frame or a handshake for a different schedule
gets a kind-3 response and the connection closes. One request is answered at
a time, in order.
"""

from __future__ import annotations

import socket
import struct
import sys
from dataclasses import dataclass

import numpy as np

MAGIC = b"EPS1"
VERSION = 1
HEADER = struct.Struct("<4sHBIIII")

KIND_HANDSHAKE = 0
KIND_REQUEST = 1
KIND_RESPONSE = 2
KIND_ERROR = 3


@dataclass
class ServerConfig:
    mode: str = "zero"  # zero | identity | gaussian | model
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    prior_mean: float = 0.5
    prior_var: float = 0.01
    model_path: str | None = None
    limit: int | None = None  # serve at most this many requests (fault injection)

    def __post_init__(self):
        if self.mode not in ("zero", "identity", "gaussian", "model"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "model" and not self.model_path:
            raise ValueError("model mode requires model_path")


class Predictor:
    """Maps (y_t grid float32, timestep) to a noise-estimate grid float32."""

    def __init__(self, config: ServerConfig):
        self.config = config
        beta = np.linspace(config.beta_start, config.beta_end, config.T)
        self.alpha_bar = np.cumprod(1.0 - beta)
        self._model = None
        if config.mode == "model":
            self._model = _load_model(config.model_path)

    def abar(self, t: int) -> float:
        if not (1 <= t <= self.config.T):
            raise ValueError(f"timestep {t} outside schedule 1..{self.config.T}")
        return float(self.alpha_bar[t - 1])

    def __call__(self, grid: np.ndarray, t: int) -> np.ndarray:
        mode = self.config.mode
        if mode == "zero":
            return np.zeros_like(grid)
        if mode == "identity":
            return grid
        if mode == "gaussian":
            # exact noise posterior for a per-pixel Gaussian prior N(mu, var)
            ab = self.abar(t)
            mu, var = self.config.prior_mean, self.config.prior_var
            gain = np.sqrt(ab) * var / (ab * var + 1.0 - ab)
            clean = mu + gain * (grid.astype(np.float64) - np.sqrt(ab) * mu)
            eps = (grid.astype(np.float64) - np.sqrt(ab) * clean) / np.sqrt(1.0 - ab)
            return eps.astype(np.float32)
        return self._run_model(grid, t)

    def _run_model(self, grid, t):
        import torch

        with torch.no_grad():
            y = torch.from_numpy(grid.astype(np.float32))[None, None]
            out = self._model(y, torch.tensor([int(t)]))
            if out.shape[1] > 1:  # learned-variance heads carry extra channels
                out = out[:, :1]
        return out[0, 0].numpy().astype(np.float32)


def _load_model(path):
    try:
        import torch
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise RuntimeError("model mode needs torch installed (pip install epsbridge[model])") from exc
    return torch.jit.load(path, map_location="cpu").eval()


def _error_frame(message: str) -> bytes:
    raw = message.encode("utf-8")
    w = (len(raw) + 3) // 4
    return HEADER.pack(MAGIC, VERSION, KIND_ERROR, len(raw), 1, w, 1) + raw.ljust(4 * w, b"\x00")


def _read_exact(read, n: int):
    out = b""
    while len(out) < n:
        chunk = read(n - len(out))
        if not chunk:
            return None
        out += chunk
    return out


def serve_connection(read, write, config: ServerConfig, state: dict | None = None) -> None:
    """Answer frames on one byte stream until EOF, an error, or the limit.

    state carries the process-wide served-request counter so a request limit
    survives reconnects (fault-injection behaviour).
    """
    predictor = Predictor(config)
    state = state if state is not None else {"served": 0}
    while True:
        header = _read_exact(read, HEADER.size)
        if header is None:
            return
        try:
            magic, version, kind, t, h, w, c = HEADER.unpack(header)
        except struct.error:
            write(_error_frame("unreadable header"))
            return
        if magic != MAGIC or version != VERSION:
            write(_error_frame("bad magic or version"))
            return
        payload = _read_exact(read, 4 * h * w * c)
        if payload is None:
            return
        if kind == KIND_HANDSHAKE:
            if (h, w, c) != (1, 3, 1):
                write(_error_frame("malformed handshake"))
                return
            got = np.frombuffer(payload, dtype="<f4")
            want = np.array([config.T, config.beta_start, config.beta_end], dtype="<f4")
            if not np.array_equal(got, want):
                write(_error_frame("schedule mismatch"))
                return
            write(header + payload)  # ack echoes the handshake
            continue
        if kind != KIND_REQUEST:
            write(_error_frame(f"unexpected frame kind {kind}"))
            return
        if config.limit is not None and state["served"] >= config.limit:
            return  # fault injection: disappear mid-protocol
        grid = np.frombuffer(payload, dtype="<f4").reshape(h, w * c)
        try:
            eps = predictor(grid.reshape(h, w) if c == 1 else grid, int(t))
        except Exception as exc:
            write(_error_frame(f"prediction failed: {exc}"))
            return
        state["served"] += 1
        write(HEADER.pack(MAGIC, VERSION, KIND_RESPONSE, t, h, w, c) + eps.astype("<f4").tobytes())


def serve_stdio(config: ServerConfig) -> None:
    def write(data):
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()

    serve_connection(sys.stdin.buffer.read, write, config)


def serve_tcp(config: ServerConfig, host: str = "127.0.0.1", port: int = 0, ready=None):
    """Listen and serve clients one at a time; returns only when closed."""
    listener = socket.socket()
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, port))
    listener.listen(1)
    if ready is not None:
        ready(listener.getsockname()[1])
    state = {"served": 0}
    try:
        while True:
            conn, _ = listener.accept()
            with conn:
                serve_connection(conn.recv, conn.sendall, config, state)
    except OSError:
        return
    finally:
        listener.close()
