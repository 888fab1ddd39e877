"""
Database package: SQLAlchemy base and the snapshot table used by the SQL
persistence provider.
"""
from app.database.base import Base, init_db, make_engine, session_scope
from app.database.models import SnapshotRow

__all__ = ["Base", "init_db", "make_engine", "session_scope", "SnapshotRow"]
