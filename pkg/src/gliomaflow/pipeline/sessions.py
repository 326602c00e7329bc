"""Discover sessions on disk: DICOM directories or JSON manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from ..dicom_ingest import SeriesRecord, assemble_series, load_manifest, read_dicom_path
from ..errors import DicomError, MissingMagic

log = logging.getLogger(__name__)


@dataclass
class RawSession:
    session_id: str
    series: List[SeriesRecord]
    dicom_files: Dict[str, Path] = field(default_factory=dict)  # sop_uid -> file
    images: Dict[str, Path] = field(default_factory=dict)  # series_uid -> NIfTI
    source_files: List[Path] = field(default_factory=list)
    problems: List[dict] = field(default_factory=list)
    kind: str = "dicom"


def _is_manifest(path: Path) -> bool:
    if path.suffix.lower() != ".json":
        return False
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError):
        return False
    return isinstance(doc, dict) and "session_id" in doc and "series" in doc


def session_from_manifest(path: Path) -> RawSession:
    m = load_manifest(path)
    return RawSession(m.session_id, m.series, images={k: Path(v) for k, v in m.images.items()},
                      source_files=[path] + [Path(v) for v in m.images.values()],
                      kind="manifest")


def session_from_files(session_id: str, files: List[Path]) -> Optional[RawSession]:
    metas, by_uid, problems, sources = [], {}, [], []
    for f in files:
        try:
            inst = read_dicom_path(f, allow_compressed=True)
        except MissingMagic:
            continue
        except DicomError as exc:
            problems.append({"file": str(f), "error": f"{type(exc).__name__}: {exc}"})
            continue
        metas.append(inst.meta)
        by_uid[inst.meta.sop_uid or str(f)] = f
        sources.append(f)
    if not metas and not problems:
        return None
    return RawSession(session_id, assemble_series(metas), by_uid, source_files=sources,
                      problems=problems)


def session_from_dicom_dir(session_id: str, directory: Path) -> Optional[RawSession]:
    return session_from_files(session_id, sorted(p for p in directory.rglob("*") if p.is_file()))


def discover_sessions(roots) -> List[RawSession]:
    """Sessions under each root.

    A ``.json`` manifest (file or inside a root) is one session.  Each child
    directory holding DICOM files is one session named after the directory;
    DICOM files directly inside a root form a session named after the root.
    """
    sessions: List[RawSession] = []
    for root in map(Path, roots):
        if root.is_file():
            if _is_manifest(root):
                sessions.append(session_from_manifest(root))
            continue
        if not root.is_dir():
            log.warning("input root does not exist", extra={"path": str(root)})
            continue
        loose = [p for p in sorted(root.iterdir()) if p.is_file()]
        for p in loose:
            if _is_manifest(p):
                sessions.append(session_from_manifest(p))
        non_manifest = [p for p in loose if not _is_manifest(p)]
        if non_manifest:
            tmp = session_from_files(root.name, non_manifest)
            if tmp:
                sessions.append(tmp)
        for child in sorted(p for p in root.iterdir() if p.is_dir()):
            s = session_from_dicom_dir(child.name, child)
            if s is not None:
                sessions.append(s)
    seen = set()
    for s in sessions:
        if s.session_id in seen:
            raise DicomError(f"duplicate session id {s.session_id!r}")
        seen.add(s.session_id)
    return sorted(sessions, key=lambda s: s.session_id)
