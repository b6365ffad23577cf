"""Replay a Poisson workload through one serving mode and measure it."""

from __future__ import annotations

import logging
import math
import os
import subprocess
import sys
import tempfile
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..model import MlpModel, load_weights, save_weights
from ..parity import AccuracyReport
from ..serving.config import ServingConfig
from ..serving.frontend import BACKUP, DEPLOYED, Frontend, Mode, ResponseKind, parity_role
from ..serving.sim import Simulation, SimWorker
from ..serving.worker import Slowdown, ThreadWorker
from .workload import generate_poisson, latency_summary

log = logging.getLogger(__name__)

TRANSPORTS = ("sim", "thread", "tcp")


@dataclass
class ExperimentConfig:
    serving: ServingConfig = field(default_factory=ServingConfig)
    n_queries: int = 10_000
    # None picks load_fraction of the measured capacity of the m deployed workers
    qps: float | None = None
    load_fraction: float = 0.6
    inference_ms: float = 1.0
    transport: str = "sim"


@dataclass
class ModelBundle:
    """Models and the query pool a run draws its workload from."""

    deployed: MlpModel
    parity: list = field(default_factory=list)
    backup: MlpModel | None = None
    queries: np.ndarray | None = None
    labels: np.ndarray | None = None

    @classmethod
    def load(cls, model_dir, k, r=1, queries=None, labels=None):
        model_dir = Path(model_dir)
        deployed = load_weights(model_dir / "deployed.pmw")
        parity = [load_weights(model_dir / parity_filename(k, j)) for j in range(r)]
        backup_path = model_dir / "backup.pmw"
        backup = load_weights(backup_path) if backup_path.exists() else None
        return cls(deployed, parity, backup, queries, labels)


def parity_filename(k, row=0):
    return f"parity_k{k}_r{row}.pmw"


@dataclass
class ExperimentReport:
    mode: str
    qps: float
    duration: float
    n_queries: int
    latencies: dict
    exact_count: int
    reconstructed_count: int
    default_count: int
    accuracy: AccuracyReport
    transport: str = "sim"
    duplicate_replies: int = 0
    stats: dict = field(default_factory=dict)
    workers: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.accuracy, dict):
            self.accuracy = AccuracyReport(**self.accuracy)
        lat = self.latencies
        if not lat["median"] <= lat["p99"] <= lat["p99.5"] <= lat["p99.9"]:
            raise ValueError(f"latency percentiles out of order: {lat}")
        if self.exact_count + self.reconstructed_count + self.default_count != self.n_queries:
            raise ValueError("response counts do not add up to the number of queries")

    @property
    def gap(self):
        """Tail gap: 99.9th percentile minus median latency (ms)."""
        return self.latencies["p99.9"] - self.latencies["median"]

    def to_dict(self):
        return asdict(self)


def _workers_for(mode, cfg, bundle, inference_ms):
    """Worker specs ``(name, role, model, service_ms)`` for a mode."""
    m, k, r = cfg.workers, cfg.k, cfg.r
    extra = math.ceil(m / k)
    specs = [(f"d{i}", DEPLOYED, bundle.deployed, inference_ms) for i in range(m)]
    if mode is Mode.PARM:
        if len(bundle.parity) < r:
            raise ValueError(f"parm mode with r={r} needs {r} parity models, got {len(bundle.parity)}")
        for j in range(r):
            pm = bundle.parity[j]
            cost = inference_ms * pm.flops() / bundle.deployed.flops()
            specs += [(f"p{j}.{i}", parity_role(j), pm, cost) for i in range(extra)]
    elif mode is Mode.EQUAL_RESOURCES:
        specs += [(f"d{m + i}", DEPLOYED, bundle.deployed, inference_ms) for i in range(extra * r)]
    elif mode is Mode.APPROX_BACKUP:
        if bundle.backup is None:
            raise ValueError("approx_backup mode needs a backup model")
        cost = inference_ms * bundle.backup.flops() / bundle.deployed.flops()
        specs += [(f"b{i}", BACKUP, bundle.backup, cost) for i in range(extra)]
    return specs


def measure_capacity(cfg, inference_ms, n=4000):
    """Throughput (qps) of ``cfg.workers`` deployed workers, stragglers included, under saturation."""
    slow = Slowdown(cfg.slowdown_p, cfg.slowdown_ms)
    probe = _NullModel()
    workers = [SimWorker(f"d{i}", DEPLOYED, probe, inference_ms, slow, (cfg.seed, i))
               for i in range(cfg.workers)]
    fe = Frontend(cfg, (1,), 1, mode=Mode.EQUAL_RESOURCES)
    sim = Simulation(fe, workers)
    sim.run(np.zeros(n), np.zeros((n, 1), dtype=np.float32))
    return n / sim.now


class _NullModel:
    def forward(self, x):
        return np.zeros(1, dtype=np.float32)


def _workload(config, bundle):
    cfg = config.serving
    rng = np.random.default_rng((cfg.seed, 1))
    idx = rng.integers(0, len(bundle.queries), size=config.n_queries)
    qps = config.qps
    if qps is None:
        qps = config.load_fraction * measure_capacity(cfg, config.inference_ms)
    arrivals = generate_poisson(qps, config.n_queries, seed=(cfg.seed, 2))
    return qps, arrivals, idx


def run_experiment(config: ExperimentConfig, mode, bundle: ModelBundle, default_prediction=None):
    """Serve ``config.n_queries`` Poisson arrivals in ``mode`` and summarize latency and accuracy."""
    mode = Mode(mode)
    if config.transport not in TRANSPORTS:
        raise ValueError(f"unknown transport {config.transport!r}; expected one of {TRANSPORTS}")
    if bundle.queries is None or bundle.labels is None:
        raise ValueError("the model bundle carries no query pool")
    cfg = config.serving
    qps, arrivals, idx = _workload(config, bundle)
    payloads = np.asarray(bundle.queries, dtype=np.float32)[idx]
    labels = np.asarray(bundle.labels)[idx]
    specs = _workers_for(mode, cfg, bundle, config.inference_ms)
    slow = Slowdown(cfg.slowdown_p, cfg.slowdown_ms)

    input_shape = payloads.shape[1:]
    if config.transport == "sim":
        fe = Frontend(cfg, input_shape, bundle.deployed.n_outputs, mode, default_prediction)
        workers = [SimWorker(name, role, model, service, slow, (cfg.seed, i))
                   for i, (name, role, model, service) in enumerate(specs)]
        responses = Simulation(fe, workers).run(arrivals, payloads)
        duration = float(arrivals[-1]) if len(arrivals) else 0.0
    else:
        fe, responses, duration = _run_realtime(config, mode, bundle, specs, slow, arrivals, payloads,
                                                default_prediction)

    return summarize(mode, config, qps, duration, responses, labels, fe, specs)


def summarize(mode, config, qps, duration, responses, labels, frontend, specs):
    seen = Counter(r.query_id for r in responses)
    duplicates = sum(c - 1 for c in seen.values() if c > 1)
    first = {}
    for r in responses:
        first.setdefault(r.query_id, r)
    n = config.n_queries
    if len(first) != n:
        raise RuntimeError(f"{n - len(first)} of {n} queries never received a response")
    # query ids increase with submission order
    ordered = [first[qid] for qid in sorted(first)]
    latencies = [r.latency_ms for r in ordered]
    kinds = Counter(r.kind for r in ordered)
    correct = {kind: 0 for kind in ResponseKind}
    for r, label in zip(ordered, labels):
        correct[r.kind] += int(np.argmax(r.output) == label)
    n_exact = kinds[ResponseKind.EXACT]
    n_degraded = n - n_exact
    accuracy = AccuracyReport.from_counts(correct[ResponseKind.EXACT], n_exact,
                                          correct[ResponseKind.RECONSTRUCTED] + correct[ResponseKind.DEFAULT],
                                          n_degraded)
    return ExperimentReport(
        mode=mode.value, qps=float(qps), duration=float(duration), n_queries=n,
        latencies=latency_summary(latencies),
        exact_count=n_exact,
        reconstructed_count=kinds[ResponseKind.RECONSTRUCTED],
        default_count=kinds[ResponseKind.DEFAULT],
        accuracy=accuracy, transport=config.transport, duplicate_replies=duplicates,
        stats=dict(frontend.stats), workers=dict(Counter(role for _, role, _, _ in specs)),
    )


def _run_realtime(config, mode, bundle, specs, slow, arrivals, payloads, default_prediction):
    from ..serving.server import FrontendServer

    cfg = config.serving
    responses = []
    fe = Frontend(cfg, payloads.shape[1:], bundle.deployed.n_outputs, mode, default_prediction,
                  on_response=responses.append)
    procs, threads, server = [], [], None
    tmp = tempfile.TemporaryDirectory(prefix="codedserve-")
    try:
        if config.transport == "tcp":
            server = FrontendServer(fe).start()
            host, port = server.address
            paths = {}
            for i, (name, role, model, _) in enumerate(specs):
                path = paths.get(id(model))
                if path is None:
                    path = paths[id(model)] = os.path.join(tmp.name, f"{name}.pmw")
                    save_weights(model, path)
                procs.append(subprocess.Popen(_worker_argv(path, role, host, port, slow, cfg.seed, i)))
            server.wait_for_workers(len(specs))
        else:
            for i, (name, role, model, _) in enumerate(specs):
                t = ThreadWorker(fe, role, model, slow, seed=(cfg.seed, i), name=name)
                t.start()
                threads.append(t)
            poller = _Poller(fe)
            poller.start()
            threads.append(poller)

        start = time.monotonic()
        for t, payload in zip(arrivals, payloads):
            delay = start + t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            fe.submit(payload)
        duration = time.monotonic() - start
        end = time.monotonic() + 30.0 + cfg.slo_ms / 1000.0
        while fe.unanswered() and time.monotonic() < end:
            time.sleep(0.005)
        # give in-flight late results a moment so duplicates would show up
        time.sleep(0.05)
    finally:
        if server is not None:
            server.stop()
        fe.shutdown()
        for p in procs:
            try:
                p.wait(timeout=10)
            except subprocess.TimeoutExpired:
                p.kill()
        for t in threads:
            t.join(timeout=2.0)
        tmp.cleanup()
    return fe, list(responses), duration


def _worker_argv(path, role, host, port, slow, seed, index):
    argv = [sys.executable, "-m", "codedserve", "worker", "--model", path, "--connect", f"{host}:{port}",
            "--slowdown-p", str(slow.p), "--slowdown-ms", str(slow.added_ms), "--seed", str(seed * 1000 + index)]
    if role.startswith("parity"):
        argv += ["--role", "parity", "--row", role[len("parity"):]]
    else:
        argv += ["--role", role]
    return argv


class _Poller:
    def __init__(self, frontend, interval=0.001):
        self.frontend = frontend
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self):
        self._thread.start()

    def _run(self):
        while not self._stop.wait(self.interval):
            self.frontend.poll()

    def join(self, timeout=None):
        self._stop.set()
        self._thread.join(timeout)

