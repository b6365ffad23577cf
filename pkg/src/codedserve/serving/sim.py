"""Deterministic in-process transport: a discrete-event driver around :class:`Frontend`.

Workers pull from the frontend exactly as the socket workers do, run real
model inference for their outputs, but take virtual time: a fixed service
time plus an optional injected slowdown. Runs are bit-for-bit reproducible
given the seeds.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .worker import Slowdown


@dataclass
class SimWorker:
    name: str
    role: str
    model: object
    service_ms: float
    slowdown: Slowdown = field(default_factory=Slowdown)
    seed: int | tuple = 0
    busy: bool = False
    served: int = 0
    delayed: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def service_time(self):
        delay = self.service_ms
        if self.slowdown.draw(self.rng):
            self.delayed += 1
            delay += self.slowdown.added_ms
        return delay / 1000.0


class Simulation:
    def __init__(self, frontend, workers):
        self.frontend = frontend
        self.workers = list(workers)
        self.now = 0.0
        self.responses = []
        self.dispatch_log = []
        self._events = []
        self._seq = itertools.count()
        self._timer_at = None

    def _push(self, when, kind, data):
        heapq.heappush(self._events, (when, next(self._seq), kind, data))

    def _dispatch(self):
        for w in self.workers:
            if w.busy:
                continue
            env = self.frontend.pull(w.role, block=False)
            if env is None:
                continue
            w.busy = True
            w.served += 1
            self.dispatch_log.append((self.now, w.name, env.query_id, env.parity))
            output = w.model.forward(env.payload.ravel())
            self._push(self.now + w.service_time(), "done", (w, env.query_id, output))

    def _arm_timer(self):
        t = self.frontend.next_timer()
        if t is not None and (self._timer_at is None or t < self._timer_at):
            self._timer_at = t
            self._push(t, "timer", None)

    def run(self, arrivals, payloads):
        """Replay queries ``payloads[i]`` arriving at ``arrivals[i]`` seconds.

        Returns the responses in the order they were produced.
        """
        for i, t in enumerate(arrivals):
            self._push(float(t), "arrival", i)
        while self._events:
            self.now, _, kind, data = heapq.heappop(self._events)
            if kind == "arrival":
                self.frontend.submit(payloads[data], now=self.now)
            elif kind == "done":
                w, env_id, output = data
                w.busy = False
                self.responses += self.frontend.on_result(env_id, output, now=self.now)
            else:
                if self._timer_at is not None and self.now >= self._timer_at:
                    self._timer_at = None
                self.responses += self.frontend.poll(now=self.now)
            self._dispatch()
            self._arm_timer()
        return self.responses
