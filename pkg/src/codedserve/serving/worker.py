"""Model instances: pull a query, maybe stall, run inference, reply."""

from __future__ import annotations

import logging
import socket
import sys
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import WeightFileError, load_weights
from . import wire
from .frontend import DEPLOYED, parity_role
from .wire import Frame, MsgType

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Slowdown:
    """With probability ``p`` a request is held for an extra ``added_ms``."""

    p: float = 0.0
    added_ms: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"slowdown probability must be in [0, 1], got {self.p}")
        if self.added_ms < 0:
            raise ValueError(f"added delay must be >= 0, got {self.added_ms}")

    def draw(self, rng):
        # p == 0 never consumes randomness, so it can never inject a delay
        return self.p > 0 and rng.random() < self.p


@dataclass
class WorkerConfig:
    model_path: str
    role: str = DEPLOYED
    parity_row: int = 0
    slowdown: Slowdown = field(default_factory=Slowdown)
    host: str = "127.0.0.1"
    port: int = 0
    seed: int = 0

    @property
    def queue_role(self):
        return parity_role(self.parity_row) if self.role == "parity" else self.role


def register_frame(cfg):
    flags = wire.FLAG_PARITY if cfg.role == "parity" else 0
    # position carries the parity row; backup workers set it to 255
    position = cfg.parity_row if cfg.role == "parity" else (255 if cfg.role == "backup" else 0)
    return Frame(MsgType.REGISTER, position=position, flags=flags)


def serve_connection(sock, model, slowdown, rng):
    """Answer query frames on ``sock`` until shutdown or end of stream. Returns frames served."""
    served = 0
    while True:
        frame = wire.read_frame(sock)
        if frame is None or frame.msg_type is MsgType.SHUTDOWN:
            return served
        if frame.msg_type is not MsgType.QUERY:
            log.warning("worker ignoring unexpected %s frame", frame.msg_type.name)
            continue
        if slowdown.draw(rng):
            time.sleep(slowdown.added_ms / 1000.0)
        output = model.forward(frame.payload)
        wire.write_frame(sock, Frame(MsgType.PREDICTION, frame.query_id, frame.group_id,
                                     frame.position, frame.flags, output))
        served += 1


def worker_loop(cfg: WorkerConfig):
    """Connect to the frontend, register, and serve until shut down.

    Exits the process with status 1 if the model cannot be loaded or the
    frontend is unreachable.
    """
    try:
        model = load_weights(cfg.model_path)
    except (OSError, WeightFileError) as exc:
        print(f"worker: cannot load model {cfg.model_path}: {exc}", file=sys.stderr)
        sys.exit(1)
    rng = np.random.default_rng(cfg.seed)
    try:
        sock = socket.create_connection((cfg.host, cfg.port))
    except OSError as exc:
        print(f"worker: cannot connect to {cfg.host}:{cfg.port}: {exc}", file=sys.stderr)
        sys.exit(1)
    with sock:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        wire.write_frame(sock, register_frame(cfg))
        served = serve_connection(sock, model, cfg.slowdown, rng)
    log.info("worker %s served %d queries", cfg.queue_role, served)
    sys.exit(0)


class ThreadWorker(threading.Thread):
    """Worker that pulls straight from an in-process :class:`Frontend`."""

    def __init__(self, frontend, role, model, slowdown=Slowdown(), seed=0, name=None):
        super().__init__(name=name or f"worker-{role}", daemon=True)
        self.frontend = frontend
        self.role = role
        self.model = model
        self.slowdown = slowdown
        self.rng = np.random.default_rng(seed)
        self.served = 0

    def run(self):
        while True:
            env = self.frontend.pull(self.role)
            if env is None:
                return
            if self.slowdown.draw(self.rng):
                time.sleep(self.slowdown.added_ms / 1000.0)
            output = self.model.forward(env.payload.ravel())
            self.frontend.on_result(env.query_id, output)
            self.served += 1
