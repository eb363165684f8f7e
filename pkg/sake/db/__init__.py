"""Per-run store: oracle cache and cell index."""

from sake.db.models import Base, CellRecord, CellStatus, OracleEntry
from sake.db.session import get_session, init_db, reset_engine

__all__ = [
    # Models
    "Base",
    "CellRecord",
    "OracleEntry",
    # Enums
    "CellStatus",
    # Session management
    "get_session",
    "init_db",
    "reset_engine",
]
