"""CRUD operations for the run store."""

from typing import Optional

from sqlalchemy import delete, func, select
from sqlalchemy.orm import Session

from sake.db.models import CellRecord, OracleEntry


# ============================================================================
# Oracle cache
# ============================================================================


def save_oracle(
    session: Session, system_key: str, system: str, per_seed: dict[int, dict[int, float]]
) -> int:
    """Replace the cached sweep for system_key; returns the number of rows written."""
    session.execute(delete(OracleEntry).where(OracleEntry.system_key == system_key))
    rows = [
        OracleEntry(system_key=system_key, system=system, window_len=L, seed=seed, error=error)
        for seed, curve in per_seed.items()
        for L, error in curve.items()
    ]
    session.add_all(rows)
    session.flush()
    return len(rows)


def load_oracle(session: Session, system_key: str) -> Optional[dict[int, dict[int, float]]]:
    """Cached per-seed errors for system_key, or None if nothing is cached."""
    stmt = (
        select(OracleEntry)
        .where(OracleEntry.system_key == system_key)
        .order_by(OracleEntry.seed, OracleEntry.window_len)
    )
    per_seed: dict[int, dict[int, float]] = {}
    for entry in session.scalars(stmt):
        per_seed.setdefault(entry.seed, {})[entry.window_len] = entry.error
    return per_seed or None


def count_oracle_entries(session: Session, system_key: Optional[str] = None) -> int:
    stmt = select(func.count(OracleEntry.id))
    if system_key is not None:
        stmt = stmt.where(OracleEntry.system_key == system_key)
    return session.scalar(stmt) or 0


# ============================================================================
# Cell index
# ============================================================================


def upsert_cell(session: Session, cell_key: str, **kwargs) -> CellRecord:
    """Create or update the record for cell_key."""
    record = session.scalars(select(CellRecord).where(CellRecord.cell_key == cell_key)).first()
    if record is None:
        record = CellRecord(cell_key=cell_key, **kwargs)
        session.add(record)
    else:
        for key, value in kwargs.items():
            setattr(record, key, value)
    session.flush()
    return record


def get_cells(session: Session, status: Optional[str] = None) -> list[CellRecord]:
    """All cell records, optionally filtered by status."""
    stmt = select(CellRecord).order_by(CellRecord.cell_key)
    if status is not None:
        stmt = stmt.where(CellRecord.status == status)
    return list(session.scalars(stmt))


def get_failed_cells(session: Session) -> list[CellRecord]:
    return get_cells(session, status="failed")
