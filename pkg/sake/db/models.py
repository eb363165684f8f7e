"""SQLAlchemy models for the per-run store."""

from datetime import datetime
from enum import Enum
from typing import Optional

from sqlalchemy import (
    CheckConstraint,
    DateTime,
    Float,
    Integer,
    String,
    Text,
    UniqueConstraint,
)
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, validates


class Base(DeclarativeBase):
    """Base class for all models."""

    pass


class CellStatus(str, Enum):
    """Cell outcome."""

    OK = "ok"
    FAILED = "failed"


class OracleEntry(Base):
    """Full-protocol rollout error for one (system, window, seed)."""

    __tablename__ = "oracle_entries"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    system_key: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    system: Mapped[str] = mapped_column(String(255), nullable=False)
    window_len: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    error: Mapped[float] = mapped_column(Float, nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=datetime.now)

    __table_args__ = (
        UniqueConstraint("system_key", "window_len", "seed", name="uq_oracle_system_window_seed"),
        CheckConstraint("window_len >= 1", name="check_window_positive"),
        CheckConstraint("error >= 0", name="check_error_non_negative"),
    )

    def __repr__(self) -> str:
        return f"<OracleEntry {self.system} L={self.window_len} seed={self.seed} M={self.error:.4g}>"


class CellRecord(Base):
    """Index entry for one experiment cell and its JSON file."""

    __tablename__ = "cells"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    cell_key: Mapped[str] = mapped_column(String(255), nullable=False, unique=True)
    system: Mapped[str] = mapped_column(String(255), nullable=False)
    method: Mapped[str] = mapped_column(String(50), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    perturbation: Mapped[str] = mapped_column(String(50), nullable=False, default="clean")
    representation: Mapped[str] = mapped_column(String(50), nullable=False)
    variant: Mapped[str] = mapped_column(String(50), nullable=False, default="default")
    status: Mapped[str] = mapped_column(String(20), nullable=False)
    error_message: Mapped[Optional[str]] = mapped_column(Text)
    cell_file: Mapped[Optional[str]] = mapped_column(String(512))
    updated_at: Mapped[datetime] = mapped_column(
        DateTime, default=datetime.now, onupdate=datetime.now
    )

    __table_args__ = (
        CheckConstraint("status IN ('ok', 'failed')", name="check_cell_status_enum"),
    )

    @validates("status")
    def validate_status(self, key, value):
        valid = [s.value for s in CellStatus]
        if value not in valid:
            raise ValueError(f"Invalid cell status: {value}. Must be one of {valid}")
        return value

    def __repr__(self) -> str:
        return f"<CellRecord {self.cell_key} {self.status}>"
