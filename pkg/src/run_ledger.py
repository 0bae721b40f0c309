#!/usr/bin/env python3
"""
Run Ledger
Append-only per-seed bookkeeping for training sweeps: success flag,
final MVR, alignment triple and artifact paths.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from errors import FormatError, ParameterError

logger = logging.getLogger(__name__)


class RunStatus(Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"


@dataclass
class RunRecord:
    seed: int
    mode: str
    status: RunStatus
    final_mvr: float
    rho_sr: Optional[float] = None
    rho_si: Optional[float] = None
    rho_ri: Optional[float] = None
    test_reward: Optional[float] = None
    artifacts: Dict[str, str] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status is RunStatus.SUCCEEDED


class RunLedger:
    """Per-seed run records persisted as JSON; records are only ever appended"""

    def __init__(self, ledger_file: str = "ledger.json"):
        self.ledger_file = Path(ledger_file)
        self.records: List[RunRecord] = []
        self.load_state()

    def load_state(self):
        """Load records from file"""
        if not self.ledger_file.exists():
            return
        try:
            with open(self.ledger_file, "r", encoding="utf-8") as f:
                data = json.load(f)
            records = []
            for item in data.get("records", []):
                # status string back to enum
                item["status"] = RunStatus(item["status"])
                records.append(RunRecord(**item))
            self.records = records
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            logger.error(f"Error loading ledger {self.ledger_file}: {e}")
            raise FormatError(f"ledger {self.ledger_file} is corrupt: {e}") from e

    def save_state(self):
        """Save records to file"""
        records_data = []
        for record in self.records:
            record_dict = asdict(record)
            record_dict["status"] = record.status.value
            records_data.append(record_dict)
        self.ledger_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self.ledger_file, "w", encoding="utf-8") as f:
            json.dump({"records": records_data}, f, indent=2)

    def append(self, record: RunRecord) -> RunRecord:
        """Record one completed seed"""
        if any(r.seed == record.seed and r.mode == record.mode for r in self.records):
            raise ParameterError(f"ledger already holds seed {record.seed} ({record.mode})")
        self.records.append(record)
        self.save_state()
        logger.info(f"Ledger: seed {record.seed} {record.status.value} (MVR {record.final_mvr:.4f})")
        return record

    def get_run_stats(self) -> Dict[str, Any]:
        """Success count and mean alignment over successful and failing seeds"""
        total = len(self.records)
        if total == 0:
            return {"total": 0}

        def mean_of(records, name):
            values = [getattr(r, name) for r in records if getattr(r, name) is not None]
            return float(np.mean(values)) if values else None

        groups = {
            "successful": [r for r in self.records if r.success],
            "failing": [r for r in self.records if not r.success],
        }
        stats = {
            "total": total,
            "succeeded": len(groups["successful"]),
            "failed": len(groups["failing"]),
            "success_rate": 100.0 * len(groups["successful"]) / total,
            "mean_final_mvr": mean_of(self.records, "final_mvr"),
        }
        for label, records in groups.items():
            stats[label] = {
                "seeds": [r.seed for r in records],
                "rho_sr": mean_of(records, "rho_sr"),
                "rho_si": mean_of(records, "rho_si"),
                "rho_ri": mean_of(records, "rho_ri"),
            }
        return stats

    def best_seed(self, mode: Optional[str] = None) -> Optional[RunRecord]:
        """Successful seed with the highest final MVR (lowest seed on ties)"""
        candidates = [r for r in self.records if r.success and (mode is None or r.mode == mode)]
        if not candidates:
            return None
        return min(candidates, key=lambda r: (-r.final_mvr, r.seed))
