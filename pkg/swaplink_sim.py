"""
swaplink-sim command line

    python swaplink_sim.py --transfers 10000 --drop-prob 0.2 --corrupt-prob 1e-3 --randomize --seed 0
    python swaplink_sim.py --transport memory --transfers 5
    python swaplink_sim.py --transport socket --port 47800
    python swaplink_sim.py --transport serial --device /dev/ttyUSB0 /dev/ttyUSB1

Pushes serialized model images through the transfer protocol and counts
successes, explicit failures and (never expected) accepted images that
differ from what was sent. Writes swaplink_sim.json and transfers.csv.
"""

import argparse
import json
import sys
import threading
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

import config
from nn.mlp import init_mlp
from nn.serialization import serialize
from swaplink.channel import ChannelSim, LinkSettings
from swaplink.transfer import (
    ModelImage,
    ModelReceiver,
    SimulatedLink,
    TransferFailed,
    TransportLink,
    clean_transfer_bytes,
    receive_model,
    send_model,
)
from swaplink.transports import LossyTransport, MemoryTransport, SerialTransport, SocketTransport
from swaplink.uplink import max_obs_rate

logger = structlog.get_logger(__name__)


def random_image(rng: np.random.Generator, version: int, max_hidden: int = 64) -> ModelImage:
    """Serialized network with random hidden widths (13 inputs, 4 outputs)"""
    hidden = tuple(int(rng.integers(4, max_hidden + 1)) for _ in range(int(rng.integers(1, 3))))
    net = init_mlp((13, *hidden, 4), rng)
    return ModelImage(serialize(net), version & 0xFFFF)


def simulated_transfers(transfers: int, settings: LinkSettings, drop_prob: float, corrupt_prob: float,
                        seed: int, randomize: bool = False, max_hidden: int = 64) -> Dict:
    """
    Back-to-back transfers into one receiver over a simulated channel

    Args:
        transfers: Number of images to send
        settings: Link settings
        drop_prob, corrupt_prob: Channel loss (upper bounds when randomize is set)
        seed: Seed for images and channel
        randomize: Draw fresh loss rates per transfer, uniform up to the given values
        max_hidden: Widest hidden layer of the random images

    Returns:
        Dictionary with success, counters and one row per transfer
    """
    rng = np.random.default_rng(seed)
    receiver = ModelReceiver(settings)
    channel = ChannelSim.from_settings(settings, corrupt_prob, drop_prob, seed=seed + 1)
    rows = []
    mismatched = 0
    for index in range(transfers):
        if randomize:
            channel.drop_prob = float(rng.uniform(0.0, drop_prob))
            channel.corrupt_prob = float(rng.uniform(0.0, corrupt_prob))
        image = random_image(rng, index + 1, max_hidden)
        previous = receiver.completed
        report = send_model(image, SimulatedLink(channel, receiver), settings)
        accepted = receiver.completed is not None and receiver.completed is not previous
        if accepted and receiver.completed.data != image.data:
            mismatched += 1
            logger.error("receiver accepted a corrupted image", transfer=index)
        rows.append({"transfer": index, "version": image.version, "image_bytes": len(image.data),
                     "drop_prob": channel.drop_prob, "corrupt_prob": channel.corrupt_prob,
                     "success": report.success, "accepted": accepted,
                     "retransmissions": report.retransmissions, "naks": report.naks,
                     "bytes_sent": report.bytes_sent, "bytes_received": report.bytes_received,
                     "clean_bytes": clean_transfer_bytes(len(image.data)), "elapsed_s": report.elapsed_s,
                     "error": "; ".join(report.errors)})
    return _summarize(rows, mismatched, settings)


def _summarize(rows: List[Dict], mismatched: int, settings: LinkSettings) -> Dict:
    table = pd.DataFrame(rows)
    failures = table[~table["success"]] if len(table) else table
    silent = int((failures["error"] == "").sum()) if len(failures) else 0
    return {
        "success": mismatched == 0 and silent == 0,
        "transfers": len(table),
        "successes": int(table["success"].sum()) if len(table) else 0,
        "failures": len(failures),
        "silent_failures": silent,
        "mismatched_images": mismatched,
        "mean_elapsed_s": float(table.loc[table["success"], "elapsed_s"].mean()) if len(table) else float("nan"),
        "mean_retransmissions": float(table["retransmissions"].mean()) if len(table) else float("nan"),
        "byte_rate": settings.byte_rate,
        "obs_rate_cap": max_obs_rate(settings.byte_rate),
        "rows": rows,
    }


def stream_transfers(transfers: int, settings: LinkSettings, drop_prob: float, corrupt_prob: float, seed: int,
                     transport: str = "memory", host: str = "127.0.0.1", port: int = 47800,
                     devices: Tuple[str, str] = ("", "")) -> Dict:
    """
    Transfers over a real byte stream with the receiver on its own thread

    transport "serial" opens two ports joined by a null-modem cable or a
    pty pair (socat), ground end first.
    """
    if transport == "memory":
        ground_end, drone_end = MemoryTransport.pair()
    elif transport == "serial":
        ground_end = SerialTransport(devices[0], settings.baud)
        drone_end = SerialTransport(devices[1], settings.baud)
    else:
        accepted: Dict[str, SocketTransport] = {}
        server = threading.Thread(target=lambda: accepted.update(end=SocketTransport.serve_once(host, port)),
                                  daemon=True)
        server.start()
        ground_end = _connect_with_retry(host, port)
        server.join(timeout=5.0)
        drone_end = accepted["end"]
    if drop_prob > 0 or corrupt_prob > 0:
        ground_end = LossyTransport(ground_end, ChannelSim.from_settings(settings, corrupt_prob, drop_prob, seed=seed + 1))
        drone_end = LossyTransport(drone_end, ChannelSim.from_settings(settings, corrupt_prob, drop_prob, seed=seed + 2))

    rng = np.random.default_rng(seed)
    receiver = ModelReceiver(settings)
    rows = []
    mismatched = 0
    for index in range(transfers):
        image = random_image(rng, index + 1)
        received: Dict[str, ModelImage] = {}

        def serve():
            try:
                received["image"] = receive_model(drone_end, receiver, timeout_s=30.0)
            except (TransferFailed, ConnectionError) as e:
                logger.warning("receiver gave up", error=str(e))

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        report = send_model(image, TransportLink(ground_end, settings), settings)
        thread.join(timeout=35.0)
        got = received.get("image")
        if got is not None and got.data != image.data:
            mismatched += 1
        rows.append({"transfer": index, "version": image.version, "image_bytes": len(image.data),
                     "drop_prob": drop_prob, "corrupt_prob": corrupt_prob, "success": report.success,
                     "accepted": got is not None, "retransmissions": report.retransmissions, "naks": report.naks,
                     "bytes_sent": report.bytes_sent, "bytes_received": report.bytes_received,
                     "clean_bytes": clean_transfer_bytes(len(image.data)), "elapsed_s": report.elapsed_s,
                     "error": "; ".join(report.errors)})
    ground_end.close()
    drone_end.close()
    return _summarize(rows, mismatched, settings)


def _connect_with_retry(host: str, port: int, attempts: int = 50) -> SocketTransport:
    last = None
    for _ in range(attempts):
        try:
            return SocketTransport.connect(host, port)
        except OSError as e:
            last = e
            threading.Event().wait(0.05)
    raise ConnectionError(f"Could not reach {host}:{port}: {last}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Model transfer protocol simulator")
    parser.add_argument("--transfers", type=int, default=100)
    parser.add_argument("--drop-prob", type=float, default=0.0, help="Per-frame loss probability")
    parser.add_argument("--corrupt-prob", type=float, default=0.0, help="Per-byte bit-flip probability")
    parser.add_argument("--randomize", action="store_true", help="Draw loss rates per transfer up to the given values")
    parser.add_argument("--baud", type=int, default=None, help="Line rate (default from config)")
    parser.add_argument("--window", type=int, default=None, help="Chunk frames in flight")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--transport", choices=["sim", "memory", "socket", "serial"], default="sim")
    parser.add_argument("--port", type=int, default=47800, help="Loopback TCP port (socket transport)")
    parser.add_argument("--device", nargs=2, metavar=("GROUND", "DRONE"), default=("", ""),
                        help="Serial ports of the two link ends (serial transport)")
    parser.add_argument("--config", help="Key-value config file")
    parser.add_argument("--out", default="runs/swaplink", help="Output directory")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    config.configure_logging(args.verbose)

    overrides = {}
    if args.baud is not None:
        overrides["link.baud"] = str(args.baud)
    if args.window is not None:
        overrides["link.window"] = str(args.window)
    try:
        values = config.load_values(args.config, overrides)
        settings = config.build(LinkSettings, values, "link")
    except (config.ConfigError, ValueError) as e:
        print(f"Config error: {e}", file=sys.stderr)
        return 2
    if args.transport == "serial" and not all(args.device):
        print("--transport serial needs --device GROUND DRONE", file=sys.stderr)
        return 2

    if args.transport == "sim":
        report = simulated_transfers(args.transfers, settings, args.drop_prob, args.corrupt_prob, args.seed,
                                     args.randomize)
    else:
        report = stream_transfers(args.transfers, settings, args.drop_prob, args.corrupt_prob, args.seed,
                                  args.transport, port=args.port, devices=tuple(args.device))

    resolved = {"link": config.to_dict(settings), "drop_prob": args.drop_prob, "corrupt_prob": args.corrupt_prob,
                "randomize": args.randomize, "seed": args.seed, "transport": args.transport}
    digest = config.config_hash(resolved)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame(report.pop("rows"))
    table["config_hash"] = digest
    table.to_csv(out / "transfers.csv", index=False)
    report.update(config_hash=digest, config=resolved)
    (out / "swaplink_sim.json").write_text(json.dumps(report, indent=2))

    print(f"\n{report['successes']}/{report['transfers']} transfers succeeded, "
          f"{report['failures']} failed explicitly, {report['mismatched_images']} mismatched images")
    print(f"Observation cap at {settings.baud} baud: {report['obs_rate_cap']} obs/s")
    print(f"Saved results to {out}\n")
    return 0 if report["success"] else 1


if __name__ == "__main__":
    sys.exit(main())
