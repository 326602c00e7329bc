"""Per-session provenance: an append-only JSON record of stages and runs."""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


class Provenance:
    """Stage log for one session.

    ``stages`` holds the current entry per stage name; an entry replaced by a
    re-execution moves to ``history``.  Every run appends to ``runs`` the
    status of each stage it touched (``ok``, ``skipped`` or ``failed``).
    """

    FILENAME = "provenance.json"

    def __init__(self, session_dir: Path, session_id: str):
        self.dir = Path(session_dir)
        self.path = self.dir / self.FILENAME
        self._lock = threading.Lock()
        if self.path.exists():
            self.doc = json.loads(self.path.read_text())
        else:
            self.doc = {"session_id": session_id, "stages": [], "history": [], "runs": []}
        self.doc["runs"].append({"run": len(self.doc["runs"]) + 1, "stages": {}, "status": None})

    @property
    def current_run(self) -> dict:
        return self.doc["runs"][-1]

    def rel(self, path) -> str:
        p = Path(path)
        try:
            return str(p.resolve().relative_to(self.dir.resolve()))
        except ValueError:
            return str(p)

    def prior(self, name: str) -> Optional[dict]:
        for entry in self.doc["stages"]:
            if entry["name"] == name:
                return entry
        return None

    def record(self, entry: dict) -> None:
        with self._lock:
            stages = self.doc["stages"]
            for i, old in enumerate(stages):
                if old["name"] == entry["name"]:
                    self.doc["history"].append(stages.pop(i))
                    break
            stages.append(entry)
            self.current_run["stages"][entry["name"]] = entry["status"]

    def mark(self, name: str, status: str) -> None:
        with self._lock:
            self.current_run["stages"][name] = status

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            self.doc[key] = value

    def finish(self, status: str, error: Optional[str] = None) -> None:
        self.current_run["status"] = status
        if error:
            self.current_run["error"] = error
        self.doc["status"] = status
        self.save()

    def save(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.doc, indent=2, sort_keys=True))
        tmp.replace(self.path)

    def output_index(self) -> Dict[str, List[str]]:
        """Map each recorded output path to the stage names that list it."""
        index: Dict[str, List[str]] = {}
        for entry in self.doc["stages"]:
            for out in entry.get("outputs", []):
                index.setdefault(out["path"], []).append(entry["name"])
        return index
