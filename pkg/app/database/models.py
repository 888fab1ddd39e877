"""
SQLAlchemy models for the SQL snapshot store.
"""
from datetime import datetime

from sqlalchemy import Column, DateTime, Integer, LargeBinary, String

from app.database.base import Base


class SnapshotRow(Base):
    """
    One persisted cloud snapshot. ``body`` is the JSON snapshot; ``checksum``
    is its SHA-256 so a half-written row is detected and skipped on restore.
    """
    __tablename__ = "cloud_snapshots"

    sequence = Column(Integer, primary_key=True, autoincrement=False)
    version = Column(Integer, nullable=False, default=1)
    checksum = Column(String(64), nullable=False)
    body = Column(LargeBinary, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    def __repr__(self):
        return f"<SnapshotRow(sequence={self.sequence}, bytes={len(self.body or b'')})>"
