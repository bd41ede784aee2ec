"""
Observation uplink

The control loop offers one packet per tick; the uplink keeps every
`decimation`-th one and queues it without blocking. The link side drains the
queue at the line rate. A full queue drops the new packet.
"""

import math
import queue
from typing import Iterable, Iterator, List, Optional

import structlog

from swaplink.channel import ChannelSim
from swaplink.frames import Frame, FrameError, FrameType, decode_frame, encode_frame, framed_size
from swaplink.packets import OBS_PACKET_SIZE, ObsPacket

logger = structlog.get_logger(__name__)

OBS_FRAME_SIZE = framed_size(OBS_PACKET_SIZE)


def max_obs_rate(byte_rate: float) -> int:
    """Observations per second one link direction can carry"""
    return int(byte_rate // OBS_FRAME_SIZE)


class ObsUplink:
    """
    Args:
        control_rate_hz: Control loop rate
        target_rate_hz: Requested uplink rate, capped at max_obs_rate(byte_rate)
        byte_rate: Line rate in bytes per second
        queue_size: Outbound frames kept while the line is busy
    """

    def __init__(self, control_rate_hz: float, target_rate_hz: float, byte_rate: float = 11520.0,
                 queue_size: int = 64):
        cap = max_obs_rate(byte_rate)
        if cap < 1:
            raise ValueError(f"Line rate {byte_rate} B/s cannot carry one observation per second")
        self.rate_hz = min(float(target_rate_hz), float(cap), float(control_rate_hz))
        if self.rate_hz <= 0:
            raise ValueError("Uplink rate must be positive")
        assert self.rate_hz * OBS_FRAME_SIZE <= byte_rate
        self.decimation = max(1, math.ceil(control_rate_hz / self.rate_hz))
        self.byte_rate = byte_rate
        self._queue: "queue.Queue[bytes]" = queue.Queue(maxsize=queue_size)
        self._seq = 0
        self._credit = 0.0
        self.offered = 0
        self.queued = 0
        self.dropped = 0

    def offer(self, packet: ObsPacket) -> bool:
        """Control side: never blocks. False when decimated away or dropped."""
        self.offered += 1
        if packet.tick % self.decimation != 0:
            return False
        frame = encode_frame(Frame(FrameType.OBS, self._seq, packet.encode()))
        try:
            self._queue.put_nowait(frame)
        except queue.Full:
            self.dropped += 1
            return False
        self._seq = (self._seq + 1) & 0xFFFF
        self.queued += 1
        return True

    def pump(self, elapsed_s: float) -> List[bytes]:
        """Link side: frames the line can carry in elapsed_s"""
        self._credit = min(self._credit + elapsed_s * self.byte_rate, self.byte_rate)
        out = []
        while self._credit >= OBS_FRAME_SIZE:
            try:
                frame = self._queue.get_nowait()
            except queue.Empty:
                break
            self._credit -= len(frame)
            out.append(frame)
        return out

    def get(self, timeout: Optional[float] = None) -> Optional[bytes]:
        """Blocking drain for a sender thread"""
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def pending(self) -> int:
        return self._queue.qsize()


def obs_uplink(packets: Iterable[ObsPacket], channel: ChannelSim, control_rate_hz: float,
               target_rate_hz: float, queue_size: int = 64) -> Iterator[Frame]:
    """
    Run a packet stream through an uplink and a simulated channel

    Yields the OBS frames that arrive intact, in arrival order.
    """
    uplink = ObsUplink(control_rate_hz, target_rate_hz, channel.byte_rate, queue_size)
    dt = 1.0 / control_rate_hz
    for packet in packets:
        uplink.offer(packet)
        for data in uplink.pump(dt):
            delivered = channel.transmit(data)
            if delivered is None:
                continue
            try:
                frame = decode_frame(delivered)
            except FrameError:
                continue
            if frame.type is FrameType.OBS:
                yield frame
    if uplink.dropped:
        logger.debug("uplink dropped packets", dropped=uplink.dropped, queued=uplink.queued)
