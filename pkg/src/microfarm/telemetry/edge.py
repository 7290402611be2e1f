"""Append-only edge store for decoded sensor readings.

One newline-delimited JSON file per device plus a small append-only sidecar
(``forwarded.log``) marking which records have been acknowledged by the
cloud.  Records are never rewritten in place, so reopening a store after a
crash recovers every appended record; the sidecar replays forwarded marks.

Duplicate suppression: a (device_id, seq) pair repeats within the trailing
half of the 16-bit sequence space (2^15 behind the device's newest seq) is
still appended, but flagged ``duplicate`` and never forwarded.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator

from .codec import SensorReading, decode_reading

SEQ_MOD = 1 << 16
DUP_WINDOW = 1 << 15


class StorageError(OSError):
    """Edge store could not be read or appended."""


@dataclass(frozen=True)
class EdgeRecord:
    """One ingested reading plus its reception metadata."""

    reading: SensorReading
    received_at_ms: float
    rssi_dbm: float
    snr_db: float
    forwarded: bool = False
    duplicate: bool = False

    def to_json_obj(self) -> dict:
        r = self.reading
        return {
            "device_id": r.device_id,
            "seq": r.seq,
            "n_ppm": r.n_ppm,
            "p_ppm": r.p_ppm,
            "k_ppm": r.k_ppm,
            "temp_centi_c": r.temp_centi_c,
            "ph_centi": r.ph_centi,
            "received_at_ms": self.received_at_ms,
            "rssi_dbm": self.rssi_dbm,
            "snr_db": self.snr_db,
            "forwarded": self.forwarded,
            "duplicate": self.duplicate,
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "EdgeRecord":
        reading = SensorReading(
            device_id=obj["device_id"],
            seq=obj["seq"],
            n_ppm=obj["n_ppm"],
            p_ppm=obj["p_ppm"],
            k_ppm=obj["k_ppm"],
            temp_centi_c=obj["temp_centi_c"],
            ph_centi=obj["ph_centi"],
        )
        return EdgeRecord(
            reading=reading,
            received_at_ms=obj["received_at_ms"],
            rssi_dbm=obj["rssi_dbm"],
            snr_db=obj["snr_db"],
            forwarded=obj["forwarded"],
            duplicate=obj["duplicate"],
        )


def _seq_in_window(seq: int, anchor: int) -> bool:
    # Half of the wrapping 16-bit space behind (and including) the anchor.
    return (anchor - seq) % SEQ_MOD < DUP_WINDOW


class EdgeStore:
    """Durable per-device record logs under one directory.

    ``clock`` returns the current edge time in ms; it defaults to a virtual
    counter advancing 1 ms per ingest so tests and demo runs are
    deterministic.  Appends are serialized by an internal lock; forwarding
    passes take ``forward_lock`` (single-flight, see cloud.forward_batch).
    """

    def __init__(self, root: str | Path, clock: Callable[[], float] | None = None) -> None:
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create store directory {self.root}: {exc}") from exc
        self._ticks = 0
        self._clock = clock if clock is not None else self._virtual_clock
        self._write_lock = threading.Lock()
        self.forward_lock = threading.Lock()
        self._records: list[EdgeRecord] = []
        self._seen: dict[int, set[int]] = {}
        self._anchor: dict[int, int] = {}
        self._last_received_at: dict[int, float] = {}
        self._forwarded_ids: set[tuple[int, int]] = set()
        self._load()

    def _virtual_clock(self) -> float:
        self._ticks += 1
        return float(self._ticks)

    def _device_path(self, device_id: int) -> Path:
        return self.root / f"device_{device_id}.ndjson"

    def _forward_log_path(self) -> Path:
        return self.root / "forwarded.log"

    def _load(self) -> None:
        log = self._forward_log_path()
        if log.exists():
            for line in log.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    dev, seq = line.split()
                    self._forwarded_ids.add((int(dev), int(seq)))
        for path in sorted(self.root.glob("device_*.ndjson")):
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = EdgeRecord.from_json_obj(json.loads(line))
                key = (rec.reading.device_id, rec.reading.seq)
                if key in self._forwarded_ids and not rec.duplicate:
                    rec = replace(rec, forwarded=True)
                self._track(rec)
                self._records.append(rec)

    def _track(self, rec: EdgeRecord) -> None:
        dev, seq = rec.reading.device_id, rec.reading.seq
        if not rec.duplicate:
            seen = self._seen.setdefault(dev, set())
            seen.add(seq)
            anchor = self._anchor.get(dev)
            if anchor is None or not _seq_in_window(seq, anchor):
                self._anchor[dev] = seq
            # Drop seen entries that fell out of the window so a wrapped
            # sequence number counts as fresh again.
            anchor = self._anchor[dev]
            seen.difference_update({s for s in seen if not _seq_in_window(s, anchor)})
        prev = self._last_received_at.get(dev)
        if prev is None or rec.received_at_ms > prev:
            self._last_received_at[dev] = rec.received_at_ms

    def _is_duplicate(self, device_id: int, seq: int) -> bool:
        anchor = self._anchor.get(device_id)
        if anchor is None:
            return False
        seen = self._seen.get(device_id, set())
        return seq in seen and _seq_in_window(seq, anchor)

    def ingest(self, frame_payload: bytes, link: tuple[float, float]) -> EdgeRecord:
        """Decode one frame, stamp it with the edge clock, append it.

        Decode errors propagate unchanged; write failures raise StorageError.
        """
        reading = decode_reading(frame_payload)
        with self._write_lock:
            now = float(self._clock())
            # Per-device receive times must never run backwards in the log.
            prev = self._last_received_at.get(reading.device_id)
            if prev is not None and now < prev:
                now = prev
            rec = EdgeRecord(
                reading=reading,
                received_at_ms=now,
                rssi_dbm=float(link[0]),
                snr_db=float(link[1]),
                forwarded=False,
                duplicate=self._is_duplicate(reading.device_id, reading.seq),
            )
            line = json.dumps(rec.to_json_obj(), separators=(",", ":")) + "\n"
            try:
                with open(self._device_path(reading.device_id), "a", encoding="utf-8") as fh:
                    fh.write(line)
            except OSError as exc:
                raise StorageError(f"append failed: {exc}") from exc
            self._track(rec)
            self._records.append(rec)
            return rec

    def records(self, device_id: int | None = None) -> list[EdgeRecord]:
        if device_id is None:
            return list(self._records)
        return [r for r in self._records if r.reading.device_id == device_id]

    def unforwarded(self, limit: int | None = None) -> list[EdgeRecord]:
        """Records still owed to the cloud: not forwarded, not duplicates."""
        out = []
        for rec in self._records:
            if rec.duplicate or rec.forwarded:
                continue
            key = (rec.reading.device_id, rec.reading.seq)
            if key in self._forwarded_ids:
                continue
            out.append(rec)
            if limit is not None and len(out) >= limit:
                break
        return out

    def mark_forwarded(self, device_id: int, seq: int) -> None:
        key = (device_id, seq)
        if key in self._forwarded_ids:
            return
        try:
            with open(self._forward_log_path(), "a", encoding="utf-8") as fh:
                fh.write(f"{device_id} {seq}\n")
        except OSError as exc:
            raise StorageError(f"forward mark failed: {exc}") from exc
        self._forwarded_ids.add(key)
        self._records = [
            replace(r, forwarded=True)
            if (r.reading.device_id, r.reading.seq) == key and not r.duplicate
            else r
            for r in self._records
        ]

    def __iter__(self) -> Iterator[EdgeRecord]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)
