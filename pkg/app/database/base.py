"""
SQLAlchemy engine and session management for the SQL snapshot store.
"""
from contextlib import contextmanager
from typing import Iterator

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool

# Base class for declarative models
Base = declarative_base()


def make_engine(url: str) -> Engine:
    """
    Build an engine for ``url``. In-memory SQLite shares one connection
    across threads so every session sees the same database.
    """
    if url.startswith("sqlite") and ":memory:" in url:
        return create_engine(url, connect_args={"check_same_thread": False}, poolclass=StaticPool)
    if url.startswith("sqlite"):
        return create_engine(url, connect_args={"check_same_thread": False})
    return create_engine(url, pool_pre_ping=True)  # Verify connections before using


def init_db(engine: Engine) -> None:
    """Create all tables on ``engine``."""
    from app.database.models import SnapshotRow  # noqa: F401 - populate metadata

    Base.metadata.create_all(bind=engine)


@contextmanager
def session_scope(engine: Engine) -> Iterator[Session]:
    """
    Transactional session bound to ``engine``.

    Usage:
        with session_scope(engine) as session:
            session.add(row)
    """
    session = sessionmaker(bind=engine, autocommit=False, autoflush=False, expire_on_commit=False)()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
