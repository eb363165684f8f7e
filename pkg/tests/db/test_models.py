"""Tests for run-store models and CRUD operations."""

import pytest
from sqlalchemy import create_engine
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session

from sake.db import crud
from sake.db.models import Base, CellRecord, OracleEntry
from sake.db.session import get_database_url, get_session, init_db


@pytest.fixture
def db_session():
    """Create an in-memory database session."""
    engine = create_engine("sqlite:///:memory:", echo=False)
    Base.metadata.create_all(engine)
    with Session(engine) as session:
        yield session


def _cell(**overrides):
    fields = dict(
        cell_key="lin__sake__seed0__clean__pca__default",
        system="lin",
        method="sake",
        seed=0,
        representation="pca",
        status="ok",
    )
    fields.update(overrides)
    return CellRecord(**fields)


class TestOracleEntryModel:
    def test_create_entry(self, db_session):
        entry = OracleEntry(system_key="abc", system="lin", window_len=3, seed=0, error=0.25)
        db_session.add(entry)
        db_session.commit()

        assert entry.id is not None
        assert entry.created_at is not None

    def test_unique_per_window_and_seed(self, db_session):
        db_session.add(OracleEntry(system_key="abc", system="lin", window_len=3, seed=0, error=0.25))
        db_session.commit()

        db_session.add(OracleEntry(system_key="abc", system="lin", window_len=3, seed=0, error=0.5))
        with pytest.raises(IntegrityError):
            db_session.commit()

    def test_negative_error_rejected(self, db_session):
        db_session.add(OracleEntry(system_key="abc", system="lin", window_len=1, seed=0, error=-1.0))
        with pytest.raises(IntegrityError):
            db_session.commit()


class TestCellRecordModel:
    def test_create_cell(self, db_session):
        cell = _cell()
        db_session.add(cell)
        db_session.commit()

        assert cell.id is not None
        assert cell.perturbation == "clean"
        assert cell.variant == "default"
        assert cell.error_message is None

    def test_invalid_status(self):
        with pytest.raises(ValueError, match="Invalid cell status"):
            _cell(status="pending")

    def test_cell_key_is_unique(self, db_session):
        db_session.add(_cell())
        db_session.commit()

        db_session.add(_cell(method="asha"))
        with pytest.raises(IntegrityError):
            db_session.commit()


class TestOracleCrud:
    def test_save_and_load(self, db_session):
        per_seed = {0: {1: 0.5, 2: 0.25}, 1: {1: 0.6, 2: 0.2}}
        assert crud.save_oracle(db_session, "abc", "lin", per_seed) == 4
        db_session.commit()

        assert crud.load_oracle(db_session, "abc") == per_seed
        assert crud.count_oracle_entries(db_session) == 4

    def test_save_replaces_previous_sweep(self, db_session):
        crud.save_oracle(db_session, "abc", "lin", {0: {1: 0.5, 2: 0.25}})
        crud.save_oracle(db_session, "abc", "lin", {0: {1: 0.4}})
        db_session.commit()

        assert crud.load_oracle(db_session, "abc") == {0: {1: 0.4}}

    def test_unknown_key(self, db_session):
        assert crud.load_oracle(db_session, "missing") is None
        assert crud.count_oracle_entries(db_session, "missing") == 0


class TestCellCrud:
    def test_upsert_updates_in_place(self, db_session):
        key = "lin__sake__seed0__clean__pca__default"
        fields = dict(system="lin", method="sake", seed=0, representation="pca")
        first = crud.upsert_cell(db_session, key, status="failed", error_message="[stage1] boom", **fields)
        second = crud.upsert_cell(db_session, key, status="ok", error_message=None, **fields)
        db_session.commit()

        assert first.id == second.id
        assert [c.status for c in crud.get_cells(db_session)] == ["ok"]
        assert crud.get_failed_cells(db_session) == []

    def test_filter_failed(self, db_session):
        fields = dict(system="lin", seed=0, representation="pca")
        crud.upsert_cell(db_session, "b", method="sake", status="failed", **fields)
        crud.upsert_cell(db_session, "a", method="asha", status="ok", **fields)
        db_session.commit()

        assert [c.cell_key for c in crud.get_cells(db_session)] == ["a", "b"]
        assert [c.cell_key for c in crud.get_failed_cells(db_session)] == ["b"]


class TestSession:
    def test_store_lives_in_run_directory(self, tmp_path):
        init_db(tmp_path)
        with get_session() as session:
            crud.save_oracle(session, "abc", "lin", {0: {1: 0.1}})

        assert get_database_url(tmp_path).endswith("run.db")
        assert (tmp_path / "run.db").exists()
        with get_session() as session:
            assert crud.load_oracle(session, "abc") == {0: {1: 0.1}}

    def test_rollback_on_error(self, tmp_path):
        init_db(tmp_path)
        with pytest.raises(RuntimeError):
            with get_session() as session:
                crud.save_oracle(session, "abc", "lin", {0: {1: 0.1}})
                raise RuntimeError("abort")

        with get_session() as session:
            assert crud.load_oracle(session, "abc") is None
