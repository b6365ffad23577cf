"""Socket transport for the frontend.

Each accepted connection announces itself with its first frame: a
``REGISTER`` frame makes it a worker, a ``QUERY`` frame makes it a client.
Worker connections are served pull-style: the handler thread takes the next
envelope for the worker's role only once the previous prediction came back.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from . import wire
from .frontend import BACKUP, DEPLOYED, ResponseKind, parity_role
from .wire import Frame, FrameError, MsgType

log = logging.getLogger(__name__)


def role_of(frame):
    if frame.flags & wire.FLAG_PARITY:
        return parity_role(frame.position)
    return BACKUP if frame.position == 255 else DEPLOYED


class FrontendServer:
    def __init__(self, frontend, host="127.0.0.1", port=0, poll_interval=0.001):
        self.frontend = frontend
        self.poll_interval = poll_interval
        self._sock = socket.create_server((host, port))
        self._stop = threading.Event()
        self._threads = []
        self._lock = threading.Lock()
        self._workers = {}
        self._clients = {}  # frontend query id -> (conn, send lock, client query id)
        # held across submit + mapping so the delivery thread never sees a response first
        self._submit_lock = threading.Lock()
        self._outbox = queue.Queue()
        self._chained = frontend.on_response
        frontend.on_response = self._deliver

    @property
    def address(self):
        return self._sock.getsockname()[:2]

    def _spawn(self, target, *args):
        t = threading.Thread(target=target, args=args, daemon=True)
        t.start()
        self._threads.append(t)

    def start(self):
        self._spawn(self._accept_loop)
        self._spawn(self._timer_loop)
        self._spawn(self._delivery_loop)
        return self

    def registered(self, role=None):
        with self._lock:
            return sum(1 for r in self._workers.values() if role is None or r == role)

    def wait_for_workers(self, n, timeout=30.0):
        end = time.monotonic() + timeout
        while self.registered() < n:
            if time.monotonic() > end:
                raise TimeoutError(f"only {self.registered()} of {n} workers registered")
            time.sleep(0.01)

    def stop(self):
        self._stop.set()
        self.frontend.shutdown()
        self._outbox.put(None)
        try:
            self._sock.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)

    def _timer_loop(self):
        while not self._stop.wait(self.poll_interval):
            self.frontend.poll()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._spawn(self._handle, conn)

    def _handle(self, conn):
        with conn:
            try:
                first = wire.read_frame(conn)
            except (FrameError, OSError) as exc:
                log.warning("rejecting connection: %s", exc)
                return
            if first is None:
                return
            if first.msg_type is MsgType.REGISTER:
                self._serve_worker(conn, role_of(first))
            elif first.msg_type is MsgType.QUERY:
                self._serve_client(conn, first)
            else:
                log.warning("unexpected first frame %s", first.msg_type.name)

    def _serve_worker(self, conn, role):
        key = id(conn)
        with self._lock:
            self._workers[key] = role
        try:
            while True:
                env = self.frontend.pull(role)
                if env is None:
                    wire.write_frame(conn, Frame(MsgType.SHUTDOWN))
                    return
                flags = wire.FLAG_PARITY if env.parity else 0
                wire.write_frame(conn, Frame(MsgType.QUERY, env.query_id, env.group_id, env.position,
                                             flags, env.payload.ravel()))
                reply = wire.read_frame(conn)
                if reply is None:
                    log.warning("worker (%s) disconnected with query %d in flight", role, env.query_id)
                    return
                self.frontend.on_result(reply.query_id, reply.payload)
        except (FrameError, OSError) as exc:
            log.warning("worker (%s) connection failed: %s", role, exc)
        finally:
            with self._lock:
                self._workers.pop(key, None)

    def _serve_client(self, conn, first):
        send_lock = threading.Lock()
        frame = first
        try:
            while frame is not None:
                if frame.msg_type is MsgType.SHUTDOWN:
                    return
                if frame.msg_type is MsgType.QUERY:
                    payload = frame.payload.reshape(self.frontend.input_shape)
                    with self._submit_lock:
                        qid = self.frontend.submit(payload)
                        self._clients[qid] = (conn, send_lock, frame.query_id)
                frame = wire.read_frame(conn)
        except (FrameError, OSError, ValueError) as exc:
            log.warning("client connection failed: %s", exc)

    def _deliver(self, resp):
        # runs under the frontend lock: hand off, never block here
        self._outbox.put(resp)
        if self._chained is not None:
            self._chained(resp)

    def _delivery_loop(self):
        while True:
            resp = self._outbox.get()
            if resp is None:
                return
            with self._submit_lock:
                target = self._clients.pop(resp.query_id, None)
            if target is not None:
                self._send_response(target, resp)

    @staticmethod
    def _send_response(target, resp):
        conn, send_lock, client_qid = target
        flags = 0
        if resp.kind is ResponseKind.RECONSTRUCTED:
            flags |= wire.FLAG_APPROXIMATE
        elif resp.kind is ResponseKind.DEFAULT:
            flags |= wire.FLAG_APPROXIMATE | wire.FLAG_DEFAULT
        try:
            with send_lock:
                wire.write_frame(conn, Frame(MsgType.PREDICTION, client_qid, 0, 0, flags, resp.output))
        except OSError as exc:
            log.warning("cannot deliver response %d: %s", client_qid, exc)
