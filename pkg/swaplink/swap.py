"""
Staged model swap

install() decodes and verifies an image on the receive path and parks the
network in a single slot; take_if_ready() hands it to the control loop
exactly once, at a tick boundary. The control loop only ever swaps whole
Mlp objects, so it never sees a partially written network.
"""

import threading
import time
from dataclasses import dataclass
from typing import Optional

import structlog

from nn.mlp import Mlp
from nn.serialization import ImageDecodeError, deserialize
from swaplink.transfer import ModelImage

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class StagedModel:
    net: Mlp
    version: int
    installed_at: float


class SwapBuffer:
    """
    Single-producer/single-consumer staging slot

    Args:
        input_size: Observation width the node feeds its policy
        output_size: Policy output width the node expects
    """

    def __init__(self, input_size: int, output_size: int):
        self.input_size = input_size
        self.output_size = output_size
        self._lock = threading.Lock()
        self._staged: Optional[StagedModel] = None
        self.error: Optional[str] = None
        self.installs = 0
        self.rejections = 0

    def install(self, image: ModelImage, now: Optional[float] = None) -> bool:
        """
        Decode, verify and stage an image

        Returns:
            True when staged. On failure the slot is cleared, `error` is set
            and the active policy is untouched.
        """
        try:
            net = deserialize(image.data)
            if net.input_size != self.input_size or net.output_size != self.output_size:
                raise ImageDecodeError(
                    f"Network maps {net.input_size}->{net.output_size}, node needs "
                    f"{self.input_size}->{self.output_size}", 0)
        except ImageDecodeError as e:
            with self._lock:
                self._staged = None
                self.error = str(e)
                self.rejections += 1
            logger.warning("model image rejected", version=image.version, error=str(e))
            return False

        staged = StagedModel(net, image.version, time.monotonic() if now is None else now)
        with self._lock:
            self._staged = staged
            self.error = None
            self.installs += 1
        logger.debug("model staged", version=image.version, layers=net.layer_sizes)
        return True

    def take_if_ready(self) -> Optional[StagedModel]:
        """The staged model, at most once per install"""
        with self._lock:
            staged, self._staged = self._staged, None
        return staged

    @property
    def ready(self) -> bool:
        with self._lock:
            return self._staged is not None
