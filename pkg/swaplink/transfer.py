"""
Model transfer over a frame link

Three phases, each retried until answered or the retry limit is hit:
    1. MODEL_META (version, total length, image CRC)  -> ACK
    2. MODEL_CHUNK stream, `window` frames in flight    -> ACK / NAK per frame
    3. COMMIT (image CRC, version)                      -> COMMIT_ACK after the
       receiver re-verifies the whole image, or NAK and discard
ACK and NAK payloads carry the receiver's contiguous byte count, so the
sender always knows where to resume.
"""

import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import structlog

from swaplink.channel import ChannelSim, LinkSettings
from swaplink.frames import (
    MAX_PAYLOAD,
    Frame,
    FrameError,
    FrameReader,
    FrameType,
    crc32,
    decode_frame,
    encode_frame,
    framed_size,
)
from swaplink.packets import (
    CHUNK_HEADER_SIZE,
    NAK_BAD_FRAME,
    NAK_BAD_OFFSET,
    NAK_CRC_MISMATCH,
    NAK_INCOMPLETE,
    NAK_NO_TRANSFER,
    NAK_TOO_LARGE,
    ModelMeta,
    decode_ack,
    decode_chunk,
    decode_commit,
    decode_commit_ack,
    decode_nak,
    encode_ack,
    encode_chunk,
    encode_commit,
    encode_commit_ack,
    encode_nak,
)

logger = structlog.get_logger(__name__)

CHUNK_SIZE = MAX_PAYLOAD - CHUNK_HEADER_SIZE
META_PAYLOAD = 10
COMMIT_PAYLOAD = 6
ACK_PAYLOAD = 4
COMMIT_ACK_PAYLOAD = 2


class TransferFailed(RuntimeError):
    """Retries exhausted or the receiver rejected the image"""


@dataclass(frozen=True)
class ModelImage:
    data: bytes
    version: int

    @property
    def crc(self) -> int:
        return crc32(self.data)


@dataclass
class TransferReport:
    success: bool = False
    version: int = 0
    image_bytes: int = 0
    frames_sent: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    retransmissions: int = 0
    naks: int = 0
    elapsed_s: float = 0.0
    commit_time: Optional[float] = None
    errors: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


class ReceiverState(Enum):
    IDLE = "idle"
    RECEIVING = "receiving"


class ModelReceiver:
    """
    Receiving end of the transfer protocol

    Args:
        settings: Link settings (idle timeout, size limit)
        on_complete: Called with each verified image, before COMMIT_ACK is sent
    """

    def __init__(self, settings: Optional[LinkSettings] = None,
                 on_complete: Optional[Callable[[ModelImage], None]] = None):
        self.settings = settings or LinkSettings()
        self.on_complete = on_complete
        self.state = ReceiverState.IDLE
        self.meta: Optional[ModelMeta] = None
        self.buffer = bytearray()
        self._spans: Dict[int, int] = {}
        self.contiguous = 0
        self.completed: Optional[ModelImage] = None
        self.last_activity = 0.0
        self.discarded = 0
        self.reader = FrameReader()

    def _discard(self, reason: str):
        logger.warning("partial image discarded", reason=reason, received=self.contiguous,
                       total=self.meta.total if self.meta else 0)
        self.state = ReceiverState.IDLE
        self.meta = None
        self.buffer = bytearray()
        self._spans = {}
        self.contiguous = 0
        self.discarded += 1

    def poll(self, now: float):
        """Drop a stalled partial image"""
        if self.state is ReceiverState.RECEIVING and now - self.last_activity > self.settings.idle_timeout_s:
            self._discard("idle timeout")

    def _ack(self, seq: int) -> Frame:
        return Frame(FrameType.ACK, seq, encode_ack(self.contiguous))

    def _nak(self, seq: int, reason: int) -> Frame:
        return Frame(FrameType.NAK, seq, encode_nak(self.contiguous, reason))

    def handle(self, frame: Frame, now: float) -> List[Frame]:
        """Process one decoded frame; returns the frames to send back"""
        self.poll(now)
        self.last_activity = now
        try:
            if frame.type is FrameType.MODEL_META:
                return [self._on_meta(frame)]
            if frame.type is FrameType.MODEL_CHUNK:
                return [self._on_chunk(frame)]
            if frame.type is FrameType.COMMIT:
                return [self._on_commit(frame)]
        except ValueError as e:
            logger.debug("malformed transfer payload", frame=frame.type.name, error=str(e))
            return [self._nak(frame.seq, NAK_BAD_FRAME)]
        return []

    def _on_meta(self, frame: Frame) -> Frame:
        meta = ModelMeta.decode(frame.payload)
        if meta.total == 0 or meta.total > self.settings.max_image_size:
            return self._nak(frame.seq, NAK_TOO_LARGE)
        if self.state is ReceiverState.RECEIVING and meta == self.meta:
            return self._ack(frame.seq)
        if self.state is ReceiverState.RECEIVING:
            logger.info("transfer restarted", old_version=self.meta.version, new_version=meta.version)
        self.state = ReceiverState.RECEIVING
        self.meta = meta
        self.buffer = bytearray(meta.total)
        self._spans = {}
        self.contiguous = 0
        return self._ack(frame.seq)

    def _on_chunk(self, frame: Frame) -> Frame:
        if self.state is not ReceiverState.RECEIVING:
            return self._nak(frame.seq, NAK_NO_TRANSFER)
        offset, data = decode_chunk(frame.payload)
        if not data or offset + len(data) > self.meta.total:
            return self._nak(frame.seq, NAK_BAD_OFFSET)
        self.buffer[offset:offset + len(data)] = data
        self._spans[offset] = offset + len(data)
        while self.contiguous in self._spans:
            self.contiguous = self._spans[self.contiguous]
        return self._ack(frame.seq)

    def _on_commit(self, frame: Frame) -> Frame:
        crc, version = decode_commit(frame.payload)
        done = self.completed
        if self.state is ReceiverState.IDLE and done is not None and done.version == version and done.crc == crc:
            # COMMIT_ACK was lost; confirm again
            return Frame(FrameType.COMMIT_ACK, frame.seq, encode_commit_ack(version))
        if self.state is not ReceiverState.RECEIVING:
            return self._nak(frame.seq, NAK_NO_TRANSFER)
        if self.contiguous < self.meta.total:
            return self._nak(frame.seq, NAK_INCOMPLETE)
        image = bytes(self.buffer)
        if crc32(image) != self.meta.crc or crc != self.meta.crc or version != self.meta.version:
            nak = self._nak(frame.seq, NAK_CRC_MISMATCH)
            self._discard("image CRC mismatch at commit")
            return nak
        self.completed = ModelImage(image, version)
        self.state = ReceiverState.IDLE
        self.meta = None
        self.buffer = bytearray()
        self._spans = {}
        self.contiguous = 0
        logger.debug("image verified", version=version, size=len(image))
        if self.on_complete is not None:
            self.on_complete(self.completed)
        return Frame(FrameType.COMMIT_ACK, frame.seq, encode_commit_ack(version))

    def feed_datagram(self, data: bytes, now: float) -> List[bytes]:
        """One whole frame per call (simulated link)"""
        try:
            frame = decode_frame(data)
        except FrameError as e:
            logger.debug("bad frame", error=type(e).__name__)
            self.poll(now)
            return [encode_frame(self._nak(0, NAK_BAD_FRAME))]
        return [encode_frame(f) for f in self.handle(frame, now)]

    def feed(self, data: bytes, now: float) -> List[bytes]:
        """Arbitrary byte-stream pieces (transport link)"""
        self.reader.push(data)
        errors = self.reader.error_count
        out = [encode_frame(f) for frame in self.reader.pop() for f in self.handle(frame, now)]
        if self.reader.error_count > errors:
            out.append(encode_frame(self._nak(0, NAK_BAD_FRAME)))
        return out


class SimulatedLink:
    """Sender-side view of a ChannelSim with a ModelReceiver at the far end"""

    def __init__(self, channel: ChannelSim, receiver: ModelReceiver):
        self.channel = channel
        self.receiver = receiver
        self.bytes_sent = 0
        self.bytes_received = 0

    def now(self) -> float:
        return self.channel.clock

    def exchange(self, data: bytes) -> List[Frame]:
        self.bytes_sent += len(data)
        delivered = self.channel.transmit(data)
        if delivered is None:
            return []
        replies = []
        for response in self.receiver.feed_datagram(delivered, self.channel.clock):
            self.bytes_received += len(response)
            back = self.channel.transmit(response)
            if back is None:
                continue
            try:
                replies.append(decode_frame(back))
            except FrameError:
                continue
        return replies

    def wait(self, seconds: float):
        self.channel.wait(seconds)

    def abandon(self):
        self.channel.wait(self.receiver.settings.idle_timeout_s * 1.01)
        self.receiver.poll(self.channel.clock)


class TransportLink:
    """
    Sender-side view of a byte-stream transport (memory pipe, socket, serial)

    The ground end of the link also carries the observation uplink: OBS
    frames arriving between replies go to on_obs and never count as replies.
    """

    def __init__(self, transport, settings: LinkSettings, on_obs: Optional[Callable[[Frame], None]] = None):
        self.transport = transport
        self.settings = settings
        self.on_obs = on_obs
        self.reader = FrameReader()
        self.bytes_sent = 0
        self.bytes_received = 0
        self.obs_frames = 0

    def now(self) -> float:
        return time.monotonic()

    def _route(self, frames: List[Frame]) -> List[Frame]:
        replies = []
        for frame in frames:
            if frame.type is FrameType.OBS:
                self.obs_frames += 1
                if self.on_obs is not None:
                    self.on_obs(frame)
            else:
                replies.append(frame)
        return replies

    def _read(self, timeout: float) -> List[Frame]:
        chunk = self.transport.read(4096, max(0.0, timeout))
        if not chunk:
            return []
        self.bytes_received += len(chunk)
        self.reader.push(chunk)
        return self._route(self.reader.pop())

    def exchange(self, data: bytes) -> List[Frame]:
        self.transport.write(data)
        self.bytes_sent += len(data)
        deadline = time.monotonic() + self.settings.ack_timeout_s
        frames: List[Frame] = []
        while not frames and time.monotonic() < deadline:
            frames = self._read(deadline - time.monotonic())
        return frames

    def drain(self, timeout: float) -> int:
        """Route uplink traffic while no transfer is running; returns the frames read"""
        before = self.obs_frames
        stray = self._read(timeout)
        if stray:
            logger.debug("unexpected frames outside a transfer", count=len(stray))
        return self.obs_frames - before + len(stray)

    def wait(self, seconds: float):
        # exchange() already blocked for the ack timeout
        pass

    def abandon(self):
        pass


def clean_transfer_bytes(image_size: int) -> int:
    """Bytes on the wire, both directions, for a loss-free transfer"""
    chunks = [min(CHUNK_SIZE, image_size - off) for off in range(0, image_size, CHUNK_SIZE)]
    forward = framed_size(META_PAYLOAD) + sum(framed_size(CHUNK_HEADER_SIZE + c) for c in chunks) \
        + framed_size(COMMIT_PAYLOAD)
    backward = framed_size(ACK_PAYLOAD) * (1 + len(chunks)) + framed_size(COMMIT_ACK_PAYLOAD)
    return forward + backward


class _Sender:
    def __init__(self, image: ModelImage, link, settings: LinkSettings, report: TransferReport):
        self.image = image
        self.link = link
        self.settings = settings
        self.report = report

    def _exhausted(self, attempts: int) -> bool:
        return 0 <= self.settings.max_retries < attempts

    def _send(self, frame: Frame) -> List[Frame]:
        self.report.frames_sent += 1
        replies = self.link.exchange(encode_frame(frame))
        self.report.naks += sum(1 for r in replies if r.type is FrameType.NAK)
        return replies

    def request(self, frame: Frame, accept: Callable[[Frame], Optional[bool]], phase: str) -> Frame:
        """Send until accept() returns True for a reply; False aborts"""
        attempts = 0
        while True:
            replies = self._send(frame)
            nak_seen = False
            for reply in replies:
                verdict = accept(reply)
                if verdict is True:
                    return reply
                if verdict is False:
                    raise TransferFailed(f"{phase} rejected by receiver")
                nak_seen = nak_seen or reply.type is FrameType.NAK
            attempts += 1
            if self._exhausted(attempts):
                raise TransferFailed(f"{phase}: no answer after {attempts} attempts")
            self.report.retransmissions += 1
            logger.debug("retransmit", phase=phase, attempt=attempts)
            if not nak_seen:
                self.link.wait(self.settings.ack_timeout_s)

    def run(self):
        data = self.image.data
        offsets = list(range(0, len(data), CHUNK_SIZE))
        meta = ModelMeta(self.image.version, len(data), self.image.crc)

        def meta_reply(reply: Frame) -> Optional[bool]:
            if reply.type is FrameType.ACK and reply.seq == 0:
                return True
            if reply.type is FrameType.NAK and decode_nak(reply.payload)[1] == NAK_TOO_LARGE:
                return False
            return None

        self.request(Frame(FrameType.MODEL_META, 0, meta.encode()), meta_reply, "meta")

        base = 0
        sent = set()
        attempts = 0
        while base < len(offsets):
            end = min(base + self.settings.window, len(offsets))
            received_to = 0
            nak_seen = False
            for i in range(base, end):
                if i in sent:
                    self.report.retransmissions += 1
                sent.add(i)
                chunk = data[offsets[i]:offsets[i] + CHUNK_SIZE]
                frame = Frame(FrameType.MODEL_CHUNK, (i + 1) & 0xFFFF, encode_chunk(offsets[i], chunk))
                for reply in self._send(frame):
                    if reply.type is FrameType.ACK:
                        received_to = max(received_to, decode_ack(reply.payload))
                    elif reply.type is FrameType.NAK:
                        offset, reason = decode_nak(reply.payload)
                        if reason == NAK_NO_TRANSFER:
                            raise TransferFailed("receiver dropped the transfer")
                        received_to = max(received_to, offset)
                        nak_seen = True
            new_base = min(len(offsets), -(-received_to // CHUNK_SIZE))
            if new_base > base:
                base = new_base
                attempts = 0
                continue
            attempts += 1
            if self._exhausted(attempts):
                raise TransferFailed(f"chunk at offset {offsets[base]}: no progress after {attempts} attempts")
            if not nak_seen:
                self.link.wait(self.settings.ack_timeout_s)

        def commit_reply(reply: Frame) -> Optional[bool]:
            if reply.type is FrameType.COMMIT_ACK and decode_commit_ack(reply.payload) == self.image.version:
                return True
            if reply.type is FrameType.NAK and decode_nak(reply.payload)[1] in (
                    NAK_CRC_MISMATCH, NAK_INCOMPLETE, NAK_NO_TRANSFER, NAK_BAD_OFFSET):
                return False
            return None

        seq = (len(offsets) + 1) & 0xFFFF
        self.request(Frame(FrameType.COMMIT, seq, encode_commit(self.image.crc, self.image.version)),
                     commit_reply, "commit")


def send_model(image: ModelImage, link, settings: Optional[LinkSettings] = None) -> TransferReport:
    """
    Push one model image through the three-phase handshake

    Args:
        image: Serialized network plus version
        link: SimulatedLink or TransportLink
        settings: Window, ack timeout and retry limit

    Returns:
        TransferReport; success is False (with errors) when the transfer failed,
        in which case the receiver ends up discarding its partial image
    """
    settings = settings or LinkSettings()
    report = TransferReport(version=image.version, image_bytes=len(image.data))
    start = link.now()
    if not image.data:
        report.errors.append("empty image")
        return report
    try:
        _Sender(image, link, settings, report).run()
        report.success = True
        report.commit_time = link.now()
    except TransferFailed as e:
        logger.warning("transfer failed", version=image.version, error=str(e))
        report.errors.append(str(e))
        link.abandon()
    except ConnectionError as e:
        logger.warning("link lost", version=image.version, error=str(e))
        report.errors.append(f"link lost: {e}")
    report.elapsed_s = link.now() - start
    report.bytes_sent = link.bytes_sent
    report.bytes_received = link.bytes_received
    logger.info("transfer finished", version=image.version, success=report.success,
                retransmissions=report.retransmissions, elapsed_s=round(report.elapsed_s, 3))
    return report


def receive_model(transport, receiver: ModelReceiver, timeout_s: float = 30.0) -> ModelImage:
    """
    Serve the receiving side over a byte-stream transport until one image verifies

    Raises:
        TransferFailed: No verified image before the timeout
        ConnectionError: The transport closed
    """
    previous = receiver.completed
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        chunk = transport.read(4096, 0.05)
        now = time.monotonic()
        if not chunk:
            receiver.poll(now)
            continue
        for response in receiver.feed(chunk, now):
            transport.write(response)
        if receiver.completed is not None and receiver.completed is not previous:
            return receiver.completed
    raise TransferFailed(f"No verified image within {timeout_s} s")
