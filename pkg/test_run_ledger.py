#!/usr/bin/env python3
"""
Test the per-seed run ledger
"""

import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from errors import FormatError, ParameterError
from run_ledger import RunLedger, RunRecord, RunStatus


def record(seed, mvr, status=RunStatus.SUCCEEDED, rho=0.9, mode="same"):
    return RunRecord(seed=seed, mode=mode, status=status, final_mvr=mvr, rho_sr=rho, rho_si=rho / 2, rho_ri=rho / 3)


def test_empty_ledger(tmp_path):
    ledger = RunLedger(tmp_path / "ledger.json")
    assert ledger.records == []
    assert ledger.get_run_stats() == {"total": 0}
    assert ledger.best_seed() is None
    assert not (tmp_path / "ledger.json").exists()


def test_records_persist(tmp_path):
    path = tmp_path / "run" / "ledger.json"
    ledger = RunLedger(path)
    ledger.append(record(0, 0.95))
    ledger.append(record(1, 0.6, RunStatus.FAILED))
    reloaded = RunLedger(path)
    assert [r.seed for r in reloaded.records] == [0, 1]
    assert reloaded.records[1].status is RunStatus.FAILED
    assert reloaded.records[0].success


def test_duplicate_seed_is_rejected(tmp_path):
    ledger = RunLedger(tmp_path / "ledger.json")
    ledger.append(record(3, 0.9))
    with pytest.raises(ParameterError):
        ledger.append(record(3, 0.91))
    # the same seed under the other training condition is a different run
    ledger.append(record(3, 0.88, mode="diff"))
    assert len(ledger.records) == 2


def test_run_stats(tmp_path):
    ledger = RunLedger(tmp_path / "ledger.json")
    ledger.append(record(0, 0.9, rho=0.8))
    ledger.append(record(1, 1.0, rho=0.6))
    ledger.append(record(2, 0.5, RunStatus.FAILED, rho=0.9))
    stats = ledger.get_run_stats()
    assert (stats["total"], stats["succeeded"], stats["failed"]) == (3, 2, 1)
    assert stats["success_rate"] == pytest.approx(200 / 3)
    assert stats["mean_final_mvr"] == pytest.approx(0.8)
    assert stats["successful"]["seeds"] == [0, 1]
    assert stats["successful"]["rho_sr"] == pytest.approx(0.7)
    assert stats["failing"]["rho_sr"] == pytest.approx(0.9)


def test_best_seed_prefers_high_mvr_then_low_seed(tmp_path):
    ledger = RunLedger(tmp_path / "ledger.json")
    ledger.append(record(4, 0.97))
    ledger.append(record(2, 0.97))
    ledger.append(record(1, 0.99, RunStatus.FAILED))
    ledger.append(record(0, 0.85, mode="diff"))
    assert ledger.best_seed().seed == 2
    assert ledger.best_seed("diff").seed == 0


def test_corrupt_ledger_is_a_format_error(tmp_path):
    path = tmp_path / "ledger.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        RunLedger(path)
    path.write_text('{"records": [{"seed": 0}]}')
    with pytest.raises(FormatError):
        RunLedger(path)
