"""Workers over TCP: newline-delimited text frames.

Worker to controller::

    HELLO <name>
    RESULT <id> <float>
    UPDATE <id> <float>
    FAILED <id> <reason>
    KILLED <id>
    BYE

Controller to worker::

    EVAL <id> <x1> ... <xd>
    KILL <id>
    TERMINATE

Floats use Python's shortest round-trip repr. A connection that sends an
unknown or malformed frame, or drops, is closed and its in-flight
evaluation is marked failed, which sends the point through the retry path.
"""

from __future__ import annotations

import logging
import math
import socket
import threading

import numpy as np

from .errors import ProtocolError

__all__ = ["WorkerServer", "RemoteWorker", "WorkerClient", "run_worker", "format_frame", "parse_frame"]

logger = logging.getLogger(__name__)

_ARITY = {
    "HELLO": 1, "RESULT": 2, "UPDATE": 2, "FAILED": 2, "KILLED": 1, "BYE": 0,
    "KILL": 1, "TERMINATE": 0,
}


def format_frame(kind, *fields) -> bytes:
    parts = [kind]
    for f in fields:
        parts.append(repr(float(f)) if isinstance(f, (float, np.floating)) else str(f))
    return (" ".join(parts) + "\n").encode("utf-8")


def parse_frame(line: str) -> tuple:
    """Split and type-check a frame.

    :raises ProtocolError: unknown verb or wrong fields
    """
    parts = line.strip().split()
    if not parts:
        raise ProtocolError("empty frame")
    kind, fields = parts[0], parts[1:]
    try:
        if kind == "EVAL":
            if len(fields) < 2:
                raise ProtocolError("EVAL needs an id and coordinates")
            return kind, int(fields[0]), [float(v) for v in fields[1:]]
        if kind not in _ARITY:
            raise ProtocolError(f"unknown frame {kind!r}")
        if kind == "HELLO":
            # names may contain spaces
            return kind, " ".join(fields) or "worker"
        if len(fields) != _ARITY[kind]:
            raise ProtocolError(f"{kind} takes {_ARITY[kind]} fields")
        if kind in ("RESULT", "UPDATE"):
            return kind, int(fields[0]), float(fields[1])
        if kind == "FAILED":
            return kind, int(fields[0]), fields[1]
        if kind in ("KILLED", "KILL"):
            return kind, int(fields[0])
        return (kind,)
    except ValueError as exc:
        raise ProtocolError(f"malformed frame {line.strip()!r}") from exc


class RemoteWorker:
    """Controller-side proxy for one TCP connection."""

    def __init__(self, conn, addr, controller):
        self.conn = conn
        self.addr = addr
        self.controller = controller
        self.name = None
        self.wid = None
        self._post = None
        self._send_lock = threading.Lock()
        self._closed = False

    def start(self, post):
        self._post = post

    def _send(self, data: bytes):
        with self._send_lock:
            if self._closed:
                return
            try:
                self.conn.sendall(data)
            except OSError:
                logger.info("send to %s failed", self.name)
                self.close()

    def eval(self, rid, x):
        self._send(format_frame("EVAL", rid, *[float(v) for v in x]))

    def kill(self, rid):
        self._send(format_frame("KILL", rid))

    def terminate(self):
        self._send(format_frame("TERMINATE"))
        self.close()

    def close(self):
        self._closed = True
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.conn.close()

    def serve(self):
        """Read frames until the connection ends; runs on its own thread."""
        post = self.controller.post
        greeted = False
        try:
            for line in self.conn.makefile("r", encoding="utf-8"):
                frame = parse_frame(line)
                kind = frame[0]
                if not greeted:
                    if kind != "HELLO":
                        raise ProtocolError("first frame must be HELLO")
                    self.name = frame[1]
                    greeted = True
                    self._post = post
                    post(("hello", self))
                elif kind == "RESULT":
                    post(("result", self, frame[1], frame[2]))
                elif kind == "UPDATE":
                    post(("update", self, frame[1], frame[2]))
                elif kind == "FAILED":
                    post(("failed", self, frame[1], frame[2]))
                elif kind == "KILLED":
                    post(("killed", self, frame[1]))
                elif kind == "BYE":
                    post(("bye", self))
                    return
                else:
                    raise ProtocolError(f"unexpected frame {kind!r} from a worker")
        except (ProtocolError, OSError, UnicodeDecodeError) as exc:
            logger.warning("dropping worker %s: %s", self.name or self.addr, exc)
        finally:
            self.close()
        if greeted:
            post(("lost", self))


class WorkerServer:
    """Accept TCP workers on ``(host, port)`` and register them with ``controller``.

    ``port=0`` picks a free port; read it back from :attr:`port`.
    """

    def __init__(self, controller, host="127.0.0.1", port=0):
        self.controller = controller
        self.sock = socket.create_server((host, port))
        self.host, self.port = self.sock.getsockname()[:2]
        self._thread = threading.Thread(target=self._accept, daemon=True)
        self._stopped = False
        self.connections = []

    def start(self):
        self._thread.start()
        return self

    def _accept(self):
        while not self._stopped:
            try:
                conn, addr = self.sock.accept()
            except OSError:
                return
            proxy = RemoteWorker(conn, addr, self.controller)
            self.connections.append(proxy)
            threading.Thread(target=proxy.serve, daemon=True).start()

    def close(self):
        self._stopped = True
        self.sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


class WorkerClient:
    """Worker side: evaluates ``objective`` for every EVAL frame.

    Evaluation runs on a helper thread so KILL frames are read while it
    runs; a killed evaluation reports ``KILLED`` and its value is dropped.

    :param die_after: Fault injection: exit the process abruptly on
        receiving this many EVAL frames (before replying)
    """

    def __init__(self, host, port, objective, name="worker", die_after=None, exit_fn=None):
        self.objective = getattr(objective, "eval", objective)
        self.name = name
        self.die_after = die_after
        self.exit_fn = exit_fn
        self.sock = socket.create_connection((host, port))
        self._send_lock = threading.Lock()
        self._killed = set()
        self._lock = threading.Lock()
        self.num_evals = 0

    def send(self, kind, *fields):
        with self._send_lock:
            self.sock.sendall(format_frame(kind, *fields))

    def _evaluate(self, rid, x):
        try:
            value = float(self.objective(np.array(x)))
            ok = math.isfinite(value)
        except Exception as exc:
            logger.info("evaluation %d raised %s", rid, exc)
            value, ok = None, False
        with self._lock:
            killed = rid in self._killed
        try:
            if killed:
                self.send("KILLED", rid)
            elif ok:
                self.send("RESULT", rid, value)
            else:
                self.send("FAILED", rid, "error")
        except OSError:
            pass

    def run(self):
        """Serve until TERMINATE or the connection closes."""
        self.send("HELLO", self.name)
        try:
            for line in self.sock.makefile("r", encoding="utf-8"):
                frame = parse_frame(line)
                if frame[0] == "EVAL":
                    self.num_evals += 1
                    if self.die_after is not None and self.num_evals >= self.die_after:
                        self._die()
                        return
                    threading.Thread(target=self._evaluate, args=frame[1:], daemon=True).start()
                elif frame[0] == "KILL":
                    with self._lock:
                        self._killed.add(frame[1])
                elif frame[0] == "TERMINATE":
                    break
                else:
                    raise ProtocolError(f"unexpected frame {frame[0]!r} from the controller")
        except OSError:
            pass
        finally:
            self.close()

    def _die(self):
        if self.exit_fn is not None:
            self.exit_fn()
        self.close()

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def run_worker(host, port, objective, name="worker", die_after=None):
    """Connect to a controller and serve evaluations until told to stop."""
    WorkerClient(host, port, objective, name, die_after).run()
