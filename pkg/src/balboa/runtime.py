"""Wall-clock reactor for engines on real sockets.

The reactor thread owns the engine.  Other threads hand it work through
``post`` or ``call_sync``; timers and readable file descriptors are
dispatched from the same loop, so engine state is never shared.
"""
from __future__ import annotations

import heapq
import logging
import selectors
import socket
import threading
import time
from concurrent.futures import Future
from typing import Callable, Optional

log = logging.getLogger(__name__)


class _Timer:
    __slots__ = ("time", "fn", "args", "cancelled")

    def __init__(self, t, fn, args):
        self.time = t
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class ThreadedReactor:
    def __init__(self, name: str = "balboa-reactor"):
        self._heap: list = []
        self._seq = 0
        self._lock = threading.Lock()
        self._sel = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._sel.register(self._wake_r, selectors.EVENT_READ, None)
        self._running = False
        self._thread: Optional[threading.Thread] = None
        self.name = name
        self.errors = 0

    @staticmethod
    def now() -> int:
        return time.monotonic_ns()

    def call_at(self, t: int, fn: Callable, *args) -> _Timer:
        ev = _Timer(int(t), fn, args)
        with self._lock:
            self._seq += 1
            heapq.heappush(self._heap, (ev.time, self._seq, ev))
        self._wake()
        return ev

    def call_later(self, dt: int, fn: Callable, *args) -> _Timer:
        return self.call_at(self.now() + int(dt), fn, *args)

    def post(self, fn: Callable, *args) -> None:
        self.call_at(0, fn, *args)

    def in_loop(self) -> bool:
        return threading.current_thread() is self._thread

    def call_sync(self, fn: Callable, *args, timeout: Optional[float] = 10.0):
        """Run ``fn`` on the loop and return its result (or raise its error)."""
        if self.in_loop() or not self._running:
            return fn(*args)
        fut: Future = Future()

        def run():
            try:
                fut.set_result(fn(*args))
            except BaseException as exc:
                fut.set_exception(exc)

        self.post(run)
        return fut.result(timeout)

    def add_reader(self, fileobj, fn: Callable[[], None]) -> None:
        self._sel.register(fileobj, selectors.EVENT_READ, fn)
        self._wake()

    def remove_reader(self, fileobj) -> None:
        try:
            self._sel.unregister(fileobj)
        except (KeyError, ValueError):
            pass

    def _wake(self) -> None:
        try:
            self._wake_w.send(b"\0")
        except OSError:
            pass

    def _run_due(self) -> Optional[float]:
        while True:
            with self._lock:
                if not self._heap:
                    return None
                t, _, ev = self._heap[0]
                if ev.cancelled:
                    heapq.heappop(self._heap)
                    continue
                delay = (t - self.now()) / 1e9
                if delay > 0:
                    return delay
                heapq.heappop(self._heap)
            try:
                ev.fn(*ev.args)
            except Exception:
                self.errors += 1
                log.exception("reactor callback failed")

    def _loop(self) -> None:
        while self._running:
            delay = self._run_due()
            timeout = 0.05 if delay is None else min(delay, 0.05)
            for key, _ in self._sel.select(timeout):
                if key.data is None:
                    try:
                        while self._wake_r.recv(4096):
                            pass
                    except BlockingIOError:
                        pass
                    continue
                try:
                    key.data()
                except Exception:
                    self.errors += 1
                    log.exception("reader callback failed")

    def start(self) -> "ThreadedReactor":
        if not self._running:
            self._running = True
            self._thread = threading.Thread(target=self._loop, name=self.name, daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        self._wake()
        if self._thread is not None and not self.in_loop():
            self._thread.join(timeout=2.0)
        self._sel.close()
        self._wake_r.close()
        self._wake_w.close()

    def run_until(self, predicate: Callable[[], bool], timeout_ns: Optional[int] = None) -> bool:
        """Block the calling thread until ``predicate`` holds."""
        deadline = None if timeout_ns is None else self.now() + timeout_ns
        while not predicate():
            if deadline is not None and self.now() >= deadline:
                return predicate()
            time.sleep(0.0005)
        return True
