"""Database session management for the run store."""

from contextlib import contextmanager
from pathlib import Path
from typing import Generator, Optional, Union

from sqlalchemy import create_engine
from sqlalchemy.orm import Session, sessionmaker

from sake.db.models import Base

DATABASE_NAME = "run.db"

# Global engine and session factory
_engine = None
_SessionLocal = None
_database_url: Optional[str] = None


def get_database_url(run_dir: Union[str, Path]) -> str:
    """SQLite URL of the store inside a run directory."""
    return f"sqlite:///{Path(run_dir) / DATABASE_NAME}"


def get_engine():
    """Get or create the database engine."""
    global _engine
    if _engine is None:
        if _database_url is None:
            raise RuntimeError("run store not initialized; call init_db(run_dir) first")
        _engine = create_engine(_database_url, echo=False)
    return _engine


def get_session_factory():
    """Get or create the session factory."""
    global _SessionLocal
    if _SessionLocal is None:
        _SessionLocal = sessionmaker(bind=get_engine(), expire_on_commit=False)
    return _SessionLocal


def init_db(run_dir: Union[str, Path, None] = None, url: Optional[str] = None) -> None:
    """Bind the store to a run directory (or an explicit URL) and create all tables."""
    global _database_url
    target = url or get_database_url(run_dir)
    if target != _database_url:
        reset_engine()
        _database_url = target
    Base.metadata.create_all(get_engine())


@contextmanager
def get_session() -> Generator[Session, None, None]:
    """Get a database session with automatic commit/rollback."""
    session = get_session_factory()()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def reset_engine():
    """Reset the engine and session factory. Used for testing."""
    global _engine, _SessionLocal
    if _engine:
        _engine.dispose()
    _engine = None
    _SessionLocal = None
