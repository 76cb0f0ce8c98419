"""Loopback stub servers for wire-protocol tests.

Not part of the package: a minimal independent implementation of the frame
format, usable as an in-thread TCP server or as a child process on
stdin/stdout (python tests/wire_stub.py MODE). Modes: zero (all-zero
responses), echo (returns the request payload), die-after-N (serves N
requests then exits mid-protocol).
"""

import socket
import struct
import sys
import threading

HEADER = struct.Struct("<4sHBIIII")


def read_exact(read, n):
    out = b""
    while len(out) < n:
        chunk = read(n - len(out))
        if not chunk:
            return None
        out += chunk
    return out


def serve_stream(read, write, mode="zero", limit=None):
    served = 0
    while True:
        header = read_exact(read, HEADER.size)
        if header is None:
            return
        magic, version, kind, t, h, w, c = HEADER.unpack(header)
        payload = read_exact(read, 4 * h * w * c)
        if payload is None:
            return
        if magic != b"EPS1" or version != 1:
            write(_error("bad frame"))
            return
        if kind == 0:
            write(HEADER.pack(b"EPS1", 1, 0, t, h, w, c) + payload)  # ack echoes
            continue
        if kind != 1:
            write(_error(f"unexpected kind {kind}"))
            return
        if limit is not None and served >= limit:
            return  # simulate a crash: vanish mid-conversation
        served += 1
        body = payload if mode == "echo" else b"\x00" * len(payload)
        write(HEADER.pack(b"EPS1", 1, 2, t, h, w, c) + body)


def _error(message):
    raw = message.encode()
    w = (len(raw) + 3) // 4
    return HEADER.pack(b"EPS1", 1, 3, len(raw), 1, w, 1) + raw.ljust(4 * w, b"\x00")


class TcpStub:
    """Singleest-client TCP stub; serves connections until closed."""

    def __init__(self, mode="zero", limit=None, accept_once=False):
        self.mode, self.limit, self.accept_once = mode, limit, accept_once
        self.listener = socket.socket()
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen(4)
        self.port = self.listener.getsockname()[1]
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            with conn:
                serve_stream(conn.recv, conn.sendall, self.mode, self.limit)
            if self.accept_once:
                self.listener.close()
                return

    @property
    def endpoint(self):
        return f"127.0.0.1:{self.port}"

    def close(self):
        try:
            self.listener.close()
        except OSError:
            pass


if __name__ == "__main__":
    mode = sys.argv[1] if len(sys.argv) > 1 else "zero"
    limit = int(sys.argv[2]) if len(sys.argv) > 2 else None
    serve_stream(sys.stdin.buffer.read, lambda b: (sys.stdout.buffer.write(b), sys.stdout.buffer.flush()), mode, limit)
