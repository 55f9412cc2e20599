"""Append-only JSONL session journals.

One file per session under ``<root>/sessions/``; every record is written
and flushed before the HTTP response that reports it, so a crash can lose
at most an unacknowledged turn.
"""

from __future__ import annotations

import json
import os
from pathlib import Path


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        safe = "".join(c for c in session_id if c.isalnum() or c in "-_")
        return self.root / "sessions" / f"{safe}.jsonl"

    def append(self, session_id: str, record: dict) -> None:
        path = self._path(session_id)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def load(self, session_id: str) -> list[dict] | None:
        path = self._path(session_id)
        if not path.exists():
            return None
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return records

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "sessions").glob("*.jsonl"))
