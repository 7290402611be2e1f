"""Edge-to-cloud forwarding with at-least-once delivery and cloud dedup.

The sink contract is a single ``send(envelope) -> bool`` (ack/nack).  The
forwarder retries each envelope with exponential backoff until acked or the
per-call attempt cap is hit; a record is marked forwarded only after an ack.
Sinks deduplicate by envelope_id, so however often delivery is retried the
cloud holds each reading exactly once.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .edge import EdgeRecord, EdgeStore

BACKOFF_BASE_S = 0.1
BACKOFF_FACTOR = 2.0
MAX_ATTEMPTS = 5


class ForwardBusyError(RuntimeError):
    """Another forwarding pass already holds the store's forward lock."""


@dataclass(frozen=True)
class CloudEnvelope:
    """At-least-once delivery unit; ``attempt`` counts from 1 and climbs on retry."""

    envelope_id: tuple[int, int]  # (device_id, seq)
    body: dict
    attempt: int = 1

    def __post_init__(self) -> None:
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


class CloudSink(Protocol):
    def send(self, envelope: CloudEnvelope) -> bool:
        """Deliver one envelope; True = ack, False = nack."""
        ...


class InMemoryCloudSink:
    """Test sink with seeded fault injection.

    ``fail_first_attempts``: nack (and drop) every envelope whose attempt
    counter is at or below this value.  ``nack_rate``: probability a send is
    dropped and nacked.  ``store_then_nack_rate``: probability the envelope is
    stored but the ack is lost, which is the case dedup exists for.
    """

    def __init__(
        self,
        fail_first_attempts: int = 0,
        nack_rate: float = 0.0,
        store_then_nack_rate: float = 0.0,
        seed: int = 0,
    ) -> None:
        if not 0.0 <= nack_rate + store_then_nack_rate <= 1.0:
            raise ValueError("fault rates must sum to at most 1")
        self.fail_first_attempts = fail_first_attempts
        self.nack_rate = nack_rate
        self.store_then_nack_rate = store_then_nack_rate
        self._rng = np.random.default_rng(seed)
        self.envelopes: list[CloudEnvelope] = []
        self._ids: set[tuple[int, int]] = set()
        self.send_calls = 0

    def _store(self, envelope: CloudEnvelope) -> None:
        if envelope.envelope_id not in self._ids:
            self._ids.add(envelope.envelope_id)
            self.envelopes.append(envelope)

    def send(self, envelope: CloudEnvelope) -> bool:
        self.send_calls += 1
        if envelope.attempt <= self.fail_first_attempts:
            return False
        r = float(self._rng.random())
        if r < self.nack_rate:
            return False
        if r < self.nack_rate + self.store_then_nack_rate:
            self._store(envelope)
            return False
        self._store(envelope)
        return True

    def ids(self) -> set[tuple[int, int]]:
        return set(self._ids)


class FileCloudSink:
    """Durable sink: one append-only NDJSON log plus a dedup index.

    The index is rebuilt from the log on open, so reopening never readmits
    an envelope_id that was already stored.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._ids: set[tuple[int, int]] = set()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    obj = json.loads(line)
                    self._ids.add((obj["device_id"], obj["seq"]))
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def send(self, envelope: CloudEnvelope) -> bool:
        if envelope.envelope_id not in self._ids:
            obj = {
                "device_id": envelope.envelope_id[0],
                "seq": envelope.envelope_id[1],
                "body": envelope.body,
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
            self._ids.add(envelope.envelope_id)
        return True

    def ids(self) -> set[tuple[int, int]]:
        return set(self._ids)

    def __len__(self) -> int:
        return len(self._ids)


def make_envelope(record: EdgeRecord, attempt: int = 1) -> CloudEnvelope:
    key = (record.reading.device_id, record.reading.seq)
    return CloudEnvelope(envelope_id=key, body=record.to_json_obj(), attempt=attempt)


def forward_batch(
    store: EdgeStore,
    cloud_sink: CloudSink,
    max_batch: int | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> int:
    """Forward up to ``max_batch`` unforwarded records; returns the ack count.

    Each envelope gets at most MAX_ATTEMPTS sends per call, sleeping
    base * factor**(attempt-1) after each nack.  Unacked records stay
    unforwarded and remain eligible for the next call.  Single-flight: a
    concurrent call on the same store raises ForwardBusyError.
    """
    if not store.forward_lock.acquire(blocking=False):
        raise ForwardBusyError("a forwarding pass is already running for this store")
    try:
        forwarded = 0
        for record in store.unforwarded(max_batch):
            envelope = make_envelope(record)
            while True:
                if cloud_sink.send(envelope):
                    store.mark_forwarded(*envelope.envelope_id)
                    forwarded += 1
                    break
                if envelope.attempt >= MAX_ATTEMPTS:
                    break
                sleep(BACKOFF_BASE_S * BACKOFF_FACTOR ** (envelope.attempt - 1))
                envelope = replace(envelope, attempt=envelope.attempt + 1)
        return forwarded
    finally:
        store.forward_lock.release()
