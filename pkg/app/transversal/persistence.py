"""
Snapshot persistence providers and the container-level snapshot coordinator.

Providers:
  volatile - in-memory copy only; a new process restores Empty (None)
  durable  - checksummed snapshot files, write-new + fsync + atomic rename, keep last 3
  sql      - the same checksummed snapshot stored as rows through SQLAlchemy

Snapshot file layout (all integers big-endian)::

    magic      4 bytes   b"DSNP"
    version    2 bytes   1
    sequence   8 bytes
    checksum  32 bytes   SHA-256 of body
    length     8 bytes   body length
    body       JSON CloudSnapshot, UTF-8
"""
import hashlib
import logging
import os
import re
import struct
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from sqlalchemy import func, select
from sqlalchemy.exc import SQLAlchemyError

from app.database.base import init_db, make_engine, session_scope
from app.database.models import SnapshotRow
from app.errors import StoreCorrupt, StoreUnavailable
from app.transversal.schemas import CloudSnapshot

logger = logging.getLogger(__name__)

MAGIC = b"DSNP"
FORMAT_VERSION = 1
HEADER = struct.Struct(">4sHQ32sQ")
KEEP_SNAPSHOTS = 3
FILE_PATTERN = re.compile(r"^snapshot-(\d{12})\.dsnp$")


def encode_snapshot(snapshot: CloudSnapshot) -> bytes:
    body = snapshot.model_dump_json().encode("utf-8")
    digest = hashlib.sha256(body).digest()
    return HEADER.pack(MAGIC, FORMAT_VERSION, snapshot.snapshot_sequence, digest, len(body)) + body


def decode_snapshot(data: bytes) -> CloudSnapshot:
    """Parse one snapshot file; raises StoreCorrupt on any damage."""
    if len(data) < HEADER.size:
        raise StoreCorrupt("snapshot shorter than its header")
    magic, version, sequence, digest, length = HEADER.unpack_from(data)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise StoreCorrupt("bad magic or version")
    body = data[HEADER.size:]
    if len(body) != length or hashlib.sha256(body).digest() != digest:
        raise StoreCorrupt(f"snapshot {sequence} fails its checksum")
    try:
        snapshot = CloudSnapshot.model_validate_json(body)
    except ValidationError as e:
        raise StoreCorrupt(f"snapshot {sequence} body invalid", cause=str(e))
    if snapshot.snapshot_sequence != sequence:
        raise StoreCorrupt(f"snapshot {sequence} header and body disagree")
    return snapshot


class SnapshotProvider(ABC):
    name = ""

    @abstractmethod
    def persist(self, snapshot: CloudSnapshot) -> None:
        ...

    @abstractmethod
    def restore(self) -> Optional[CloudSnapshot]:
        """Highest-sequence intact snapshot, or None when the store is empty."""
        ...

    def max_sequence(self) -> int:
        """Highest sequence present in the store, intact or not; 0 when empty."""
        return 0


class VolatileProvider(SnapshotProvider):
    """Fast and unreliable: state lives only as long as this object."""

    name = "volatile"

    def __init__(self):
        self._latest: Optional[CloudSnapshot] = None

    def persist(self, snapshot: CloudSnapshot) -> None:
        self._latest = snapshot.model_copy(deep=True)

    def restore(self) -> Optional[CloudSnapshot]:
        return self._latest.model_copy(deep=True) if self._latest else None

    def max_sequence(self) -> int:
        return self._latest.snapshot_sequence if self._latest else 0


class DurableFileProvider(SnapshotProvider):
    name = "durable"

    def __init__(self, directory: str, keep: int = KEEP_SNAPSHOTS):
        self.directory = Path(directory)
        self.keep = keep
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StoreUnavailable(f"cannot create snapshot directory {directory}", cause=str(e))

    def _path_for(self, sequence: int) -> Path:
        return self.directory / f"snapshot-{sequence:012d}.dsnp"

    def _sequences(self) -> List[int]:
        found = []
        for entry in self.directory.iterdir():
            match = FILE_PATTERN.match(entry.name)
            if match:
                found.append(int(match.group(1)))
        return sorted(found)

    def persist(self, snapshot: CloudSnapshot) -> None:
        data = encode_snapshot(snapshot)
        final = self._path_for(snapshot.snapshot_sequence)
        tmp = final.with_suffix(".tmp")
        try:
            with open(tmp, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, final)
            self._fsync_directory()
        except OSError as e:
            raise StoreUnavailable(f"cannot write snapshot {snapshot.snapshot_sequence}", cause=str(e))
        older = [s for s in self._sequences() if s < snapshot.snapshot_sequence]
        for old in older[:max(0, len(older) - (self.keep - 1))]:
            try:
                self._path_for(old).unlink()
            except OSError as e:
                logger.warning(f"Could not prune snapshot {old}: {e}")

    def max_sequence(self) -> int:
        try:
            sequences = self._sequences()
        except OSError as e:
            raise StoreUnavailable(f"cannot list {self.directory}", cause=str(e))
        return sequences[-1] if sequences else 0

    def _fsync_directory(self) -> None:
        try:
            fd = os.open(self.directory, os.O_RDONLY)
        except OSError:
            return  # not supported on this platform
        try:
            os.fsync(fd)
        except OSError:
            pass
        finally:
            os.close(fd)

    def restore(self) -> Optional[CloudSnapshot]:
        try:
            sequences = self._sequences()
        except OSError as e:
            raise StoreUnavailable(f"cannot list {self.directory}", cause=str(e))
        if not sequences:
            return None
        for sequence in reversed(sequences):
            try:
                return decode_snapshot(self._path_for(sequence).read_bytes())
            except StoreCorrupt as e:
                logger.warning(f"Skipping torn or corrupt snapshot {sequence}: {e}")
            except OSError as e:
                logger.warning(f"Skipping unreadable snapshot {sequence}: {e}")
        raise StoreCorrupt(f"all {len(sequences)} snapshots in {self.directory} fail their checksum")


class SqlSnapshotProvider(SnapshotProvider):
    """Relational store: one row per snapshot, same checksum discipline."""

    name = "sql"

    def __init__(self, url: str, keep: int = KEEP_SNAPSHOTS):
        self.keep = keep
        try:
            self.engine = make_engine(url)
            init_db(self.engine)
        except SQLAlchemyError as e:
            raise StoreUnavailable(f"cannot open snapshot database {url}", cause=str(e))

    def persist(self, snapshot: CloudSnapshot) -> None:
        body = snapshot.model_dump_json().encode("utf-8")
        try:
            with session_scope(self.engine) as session:
                session.merge(SnapshotRow(
                    sequence=snapshot.snapshot_sequence,
                    version=FORMAT_VERSION,
                    checksum=hashlib.sha256(body).hexdigest(),
                    body=body,
                ))
                session.flush()
                stale = session.execute(
                    select(SnapshotRow.sequence).order_by(SnapshotRow.sequence.desc()).offset(self.keep)
                ).scalars().all()
                for sequence in stale:
                    session.delete(session.get(SnapshotRow, sequence))
        except SQLAlchemyError as e:
            raise StoreUnavailable(f"cannot persist snapshot {snapshot.snapshot_sequence}", cause=str(e))

    def restore(self) -> Optional[CloudSnapshot]:
        try:
            with session_scope(self.engine) as session:
                rows = session.execute(
                    select(SnapshotRow).order_by(SnapshotRow.sequence.desc())
                ).scalars().all()
                candidates = [(r.sequence, r.checksum, bytes(r.body)) for r in rows]
        except SQLAlchemyError as e:
            raise StoreUnavailable("cannot read snapshot rows", cause=str(e))
        if not candidates:
            return None
        for sequence, checksum, body in candidates:
            if hashlib.sha256(body).hexdigest() != checksum:
                logger.warning(f"Skipping snapshot row {sequence}: checksum mismatch")
                continue
            try:
                return CloudSnapshot.model_validate_json(body)
            except ValidationError as e:
                logger.warning(f"Skipping snapshot row {sequence}: {e.error_count()} validation errors")
        raise StoreCorrupt(f"all {len(candidates)} snapshot rows fail their checksum")

    def max_sequence(self) -> int:
        try:
            with session_scope(self.engine) as session:
                return session.execute(select(func.max(SnapshotRow.sequence))).scalar() or 0
        except SQLAlchemyError as e:
            raise StoreUnavailable("cannot read snapshot rows", cause=str(e))


def build_provider(name: str, path: Optional[str] = None) -> SnapshotProvider:
    if name == "volatile":
        return VolatileProvider()
    if name == "durable":
        if not path:
            raise StoreUnavailable("durable persistence needs persistence_path")
        return DurableFileProvider(path)
    if name == "sql":
        return SqlSnapshotProvider(path or "sqlite:///deskcloud-snapshots.db")
    raise StoreUnavailable(f"unknown persistence provider {name!r}")


class SnapshotCoordinator:
    """
    Composes the sections published by stateful services into one
    CloudSnapshot and hands it to the provider.

    Services publish from their own mailbox threads after each state change;
    composing never messages a service, so persisting from inside a handler
    cannot deadlock.
    """

    def __init__(self, provider: SnapshotProvider):
        self.provider = provider
        self._lock = threading.Lock()
        self._sections: Dict[str, Dict[str, Any]] = {}
        self._sequence = 0
        self._changed = False
        self._timer: Optional[threading.Thread] = None
        self._stopped = threading.Event()

    @property
    def sequence(self) -> int:
        return self._sequence

    def restore(self) -> Optional[CloudSnapshot]:
        # Numbering continues above anything stored, restorable or not.
        with self._lock:
            self._sequence = max(self._sequence, self.provider.max_sequence())
        snapshot = self.provider.restore()
        if snapshot is None:
            logger.info(f"No snapshot to restore from {self.provider.name} store")
            return None
        problems = snapshot.reference_errors()
        if problems:
            raise StoreCorrupt(f"snapshot {snapshot.snapshot_sequence} is inconsistent", cause="; ".join(problems[:5]))
        with self._lock:
            self._sequence = snapshot.snapshot_sequence
        logger.info(f"Restored snapshot {snapshot.snapshot_sequence} from {self.provider.name} store")
        return snapshot

    def publish(self, section: str, fields: Dict[str, Any]) -> None:
        with self._lock:
            self._sections[section] = fields
            self._changed = True

    def persist_now(self) -> Optional[int]:
        with self._lock:
            if not self._sections:
                return None
            merged: Dict[str, Any] = {}
            for fields in self._sections.values():
                merged.update(fields)
            self._sequence += 1
            snapshot = CloudSnapshot.model_validate({**merged, "snapshot_sequence": self._sequence})
            self.provider.persist(snapshot)
            self._changed = False
            return self._sequence

    def start_periodic(self, interval_s: float) -> None:
        def loop() -> None:
            while not self._stopped.wait(interval_s):
                if self._changed:
                    try:
                        self.persist_now()
                    except Exception as e:
                        logger.error(f"Periodic snapshot failed: {e}")

        self._timer = threading.Thread(target=loop, name="snapshot-timer", daemon=True)
        self._timer.start()

    def stop(self) -> None:
        self._stopped.set()
