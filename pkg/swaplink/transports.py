"""
Byte-stream transports: in-process pipe pair, TCP socket, serial port

All expose write(data), read(max_bytes, timeout) -> bytes (empty on timeout)
and close().
"""

import queue
import socket
from typing import Optional, Tuple

import serial

from swaplink.channel import ChannelSim


class MemoryTransport:
    """One end of an in-process full-duplex pipe"""

    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox
        self._pending = bytearray()
        self.closed = False

    @classmethod
    def pair(cls) -> Tuple["MemoryTransport", "MemoryTransport"]:
        a_to_b: "queue.Queue[bytes]" = queue.Queue()
        b_to_a: "queue.Queue[bytes]" = queue.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    def write(self, data: bytes):
        if self.closed:
            raise ConnectionError("Transport closed")
        self._outbox.put(bytes(data))

    def read(self, max_bytes: int = 4096, timeout: Optional[float] = None) -> bytes:
        if self.closed:
            raise ConnectionError("Transport closed")
        if not self._pending:
            try:
                self._pending.extend(self._inbox.get(timeout=timeout) if timeout else self._inbox.get_nowait())
            except queue.Empty:
                return b""
        while len(self._pending) < max_bytes:
            try:
                self._pending.extend(self._inbox.get_nowait())
            except queue.Empty:
                break
        out = bytes(self._pending[:max_bytes])
        del self._pending[:max_bytes]
        return out

    def close(self):
        self.closed = True


class SocketTransport:
    """TCP byte stream (loopback for two-process runs)"""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.closed = False
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> "SocketTransport":
        return cls(socket.create_connection((host, port), timeout=timeout))

    @classmethod
    def serve_once(cls, host: str, port: int, timeout: float = 30.0) -> "SocketTransport":
        """Accept a single peer"""
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((host, port))
            server.listen(1)
            server.settimeout(timeout)
            conn, _ = server.accept()
        return cls(conn)

    def write(self, data: bytes):
        if self.closed:
            raise ConnectionError("Transport closed")
        self.sock.sendall(data)

    def read(self, max_bytes: int = 4096, timeout: Optional[float] = None) -> bytes:
        """Empty bytes on timeout; ConnectionError once the peer has closed"""
        if self.closed:
            raise ConnectionError("Transport closed")
        self.sock.settimeout(timeout if timeout else 1e-3)
        try:
            data = self.sock.recv(max_bytes)
        except socket.timeout:
            return b""
        if not data:
            self.closed = True
            raise ConnectionError("Peer closed the connection")
        return data

    def close(self):
        self.closed = True
        self.sock.close()


class SerialTransport:
    """
    Serial port byte stream (radio modem or USB-UART)

    Args:
        port: Device path or pyserial URL (loop:// for a loopback)
        baud: Line rate
    """

    def __init__(self, port: str, baud: int = 115200):
        self.port = serial.serial_for_url(port, baudrate=baud, timeout=0)

    def write(self, data: bytes):
        self.port.write(data)

    def read(self, max_bytes: int = 4096, timeout: Optional[float] = None) -> bytes:
        self.port.timeout = timeout or 0
        first = self.port.read(1)
        if not first:
            return b""
        waiting = min(self.port.in_waiting, max_bytes - 1)
        return first + (self.port.read(waiting) if waiting else b"")

    def close(self):
        self.port.close()


class LossyTransport:
    """Applies a ChannelSim's drop/corruption to every write of an inner transport"""

    def __init__(self, inner, channel: ChannelSim):
        self.inner = inner
        self.channel = channel

    def write(self, data: bytes):
        mangled = self.channel.mangle(data)
        if mangled is not None:
            self.inner.write(mangled)

    def read(self, max_bytes: int = 4096, timeout: Optional[float] = None) -> bytes:
        return self.inner.read(max_bytes, timeout)

    def close(self):
        self.inner.close()
