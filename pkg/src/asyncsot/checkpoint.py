"""Snapshots of a running optimization, written after every state change.

A snapshot is one JSON document::

    {"format_version": 1, "sha256": <hex digest of payload>, "payload": {...}}

where the payload holds the strategy state (queue, pending entries, data,
sampling state, generator state) and, for the simulated-time controller,
the controller state (clock, event queue, records, trace). Files are
replaced atomically, so a crash leaves either the old or the new snapshot.

Resuming a simulated run restores its in-flight evaluations exactly, which
makes the continuation identical to an uninterrupted run. Controllers that
cannot snapshot their workers get the in-flight points re-queued instead.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

from .errors import CheckpointError

__all__ = ["FORMAT_VERSION", "Checkpointer", "snapshot", "write_snapshot", "read_snapshot", "resume"]

FORMAT_VERSION = 1


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def snapshot(controller) -> dict:
    """Payload describing ``controller`` and its strategy right now."""
    state = getattr(controller, "state_dict", None)
    return {
        "strategy": controller.strategy.state_dict(),
        "controller": state() if state else None,
        "controller_type": type(controller).__name__,
    }


def write_snapshot(payload, path):
    """Atomically write ``payload`` to ``path``."""
    doc = {"format_version": FORMAT_VERSION, "sha256": _digest(payload), "payload": payload}
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=folder)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_snapshot(path) -> dict:
    """Load and verify a snapshot, returning its payload.

    :raises CheckpointError: unreadable file, wrong version or bad checksum
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read snapshot {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError(f"{path} is not a snapshot")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"snapshot format_version {doc['format_version']} != supported {FORMAT_VERSION}")
    payload = doc.get("payload")
    if payload is None or doc.get("sha256") != _digest(payload):
        raise CheckpointError(f"snapshot {path} failed its integrity check")
    return payload


class Checkpointer:
    """Listener that snapshots ``controller`` to ``path`` after every change.

    :param every: Write only every ``every``-th change (1 writes all of them)
    """

    def __init__(self, controller, path, every=1):
        self.controller = controller
        self.path = path
        self.every = max(int(every), 1)
        self.count = 0
        self.writes = 0
        controller.add_listener(self)

    def __call__(self, controller):
        self.count += 1
        if self.count % self.every == 0:
            self.save()

    def save(self):
        write_snapshot(snapshot(self.controller), self.path)
        self.writes += 1


def resume(path, controller):
    """Load the snapshot at ``path`` into a freshly built ``controller``.

    ``controller`` (and its strategy) must have been built with the same
    configuration as the checkpointed run. Nothing is modified if the
    snapshot is invalid.

    :returns: ``controller``, ready to :meth:`run`
    """
    payload = read_snapshot(path)
    kind = payload.get("controller_type")
    if kind != type(controller).__name__:
        raise CheckpointError(f"snapshot was taken from a {kind}, not a {type(controller).__name__}")
    ctrl_state = payload["controller"]
    if ctrl_state is not None:
        controller.load_state_dict(ctrl_state, payload["strategy"])
    else:
        controller.strategy.load_state_dict(payload["strategy"], requeue_pending=True)
    return controller
