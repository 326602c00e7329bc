"""Scan-type cascade, orientation, exclusion rules and duplicate selection."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dicom_ingest import InstanceMeta, SeriesRecord, slice_normal
from .errors import AdapterFailure, ConfigError


class SequenceClass(str, enum.Enum):
    T1WI = "T1WI"
    GdT1WI = "GdT1WI"
    T2WI = "T2WI"
    FLAIR = "FLAIR"
    NonSegmentable = "NonSegmentable"

    @property
    def selectable(self) -> bool:
        return self is not SequenceClass.NonSegmentable


SEGMENTABLE_CLASSES = (SequenceClass.T1WI, SequenceClass.GdT1WI,
                       SequenceClass.T2WI, SequenceClass.FLAIR)
# a session needs at least one of these to be segmentable
CORE_CLASSES = frozenset({SequenceClass.GdT1WI, SequenceClass.T2WI, SequenceClass.FLAIR})


class Stage1(str, enum.Enum):
    Segmentable = "Segmentable"
    NonSegmentable = "NonSegmentable"


class Orientation(str, enum.Enum):
    Axial = "Axial"
    Coronal = "Coronal"
    Sagittal = "Sagittal"
    Unknown = "Unknown"


ORIENTATION_RANK = {
    Orientation.Axial: 2,
    Orientation.Coronal: 1,
    Orientation.Sagittal: 1,
    Orientation.Unknown: 0,
}


class Reason(str, enum.Enum):
    NoSeriesDescription = "NoSeriesDescription"
    NotOriginalPrimary = "NotOriginalPrimary"
    AngioFlag = "AngioFlag"
    Stage1NonSegmentable = "Stage1NonSegmentable"
    Stage2NonSegmentable = "Stage2NonSegmentable"
    NotPrioritized = "NotPrioritized"
    SessionNotSegmentable = "SessionNotSegmentable"


# -- ruleset -----------------------------------------------------------------

DEFAULT_RULESET = {
    "allow_tokens": [
        "t1", "t1w", "t1wi", "t2", "t2w", "t2wi", "flair", "mprage", "spgr", "bravo",
        "tfl", "fspgr", "vibe", "tse", "fse", "space", "cube", "post", "gd", "+c",
    ],
    "deny_tokens": [
        "scout", "localizer", "localiser", "loc", "survey", "3plane", "tri", "dwi",
        "dti", "adc", "trace", "swi", "gre", "perfusion", "perf", "dsc", "dce", "asl",
        "cbf", "cbv", "mra", "tof", "angio", "mip", "spine", "cspine", "tspine",
        "lspine", "spectroscopy", "mrs", "svs", "csi", "calibration", "cal", "asset",
        "fa", "b0", "b1000", "sub", "subtraction", "screensave", "screenshot",
        "report", "fmri", "bold", "mosaic",
    ],
    "contrast_markers": ["post", "gd", "+c", "+gd", "gad", "contrast", "t1c", "ce"],
    "flair_tokens": ["flair"],
    "t2_tokens": ["t2", "t2w", "t2wi"],
    "t1_tokens": ["t1", "t1w", "t1wi", "mprage", "spgr", "bravo", "tfl", "fspgr", "vibe",
                  "t1c"],
    "min_instances": 10,
}

_RULESET_KEYS = set(DEFAULT_RULESET)
_TOKEN_RE = re.compile(r"\+?[a-z0-9]+")


def tokenize(description: str) -> List[str]:
    """Lower-case and split a series description; ``'+c'`` survives as a token."""
    return _TOKEN_RE.findall(description.lower())


@dataclass(frozen=True)
class Ruleset:
    allow_tokens: FrozenSet[str]
    deny_tokens: FrozenSet[str]
    contrast_markers: FrozenSet[str]
    flair_tokens: FrozenSet[str]
    t2_tokens: FrozenSet[str]
    t1_tokens: FrozenSet[str]
    min_instances: int

    @classmethod
    def from_dict(cls, doc: dict) -> "Ruleset":
        unknown = set(doc) - _RULESET_KEYS
        if unknown:
            raise ConfigError(f"unknown ruleset keys: {sorted(unknown)}")
        merged = dict(DEFAULT_RULESET)
        merged.update(doc)
        try:
            min_instances = int(merged["min_instances"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"min_instances must be an integer: {exc}") from None
        if min_instances < 1:
            raise ConfigError("min_instances must be >= 1")
        sets = {}
        for key in _RULESET_KEYS - {"min_instances"}:
            values = merged[key]
            if isinstance(values, str) or not all(isinstance(v, str) for v in values):
                raise ConfigError(f"ruleset key {key!r} must be a list of strings")
            sets[key] = frozenset(v.lower() for v in values)
        return cls(min_instances=min_instances, **sets)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Ruleset":
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml
            doc = yaml.safe_load(text) or {}
        else:
            doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: ruleset must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        out = {k: sorted(getattr(self, k)) for k in _RULESET_KEYS - {"min_instances"}}
        out["min_instances"] = self.min_instances
        return out


def default_ruleset() -> Ruleset:
    return Ruleset.from_dict({})


def _matches(tokens: Sequence[str], description: str, vocab: Iterable[str]) -> bool:
    toks = set(tokens)
    low = description.lower()
    for v in vocab:
        if v in toks:
            return True
        # markers with punctuation (e.g. "+c") may be glued to other text
        if not v.isalnum() and v in low:
            return True
    return False


# -- cascade ------------------------------------------------------------------

def classify_stage1(series: SeriesRecord, ruleset: Ruleset | None = None) -> Stage1:
    rules = ruleset or default_ruleset()
    desc = series.description or ""
    tokens = tokenize(desc)
    if _matches(tokens, desc, rules.deny_tokens):
        return Stage1.NonSegmentable
    if series.n_instances < rules.min_instances:
        return Stage1.NonSegmentable
    if not _matches(tokens, desc, rules.allow_tokens):
        return Stage1.NonSegmentable
    return Stage1.Segmentable


ClassifierAdapter = Callable[[SeriesRecord, Optional[object]], Tuple[SequenceClass, float]]


def fallback_stage2(description: str, ruleset: Ruleset | None = None) -> SequenceClass:
    rules = ruleset or default_ruleset()
    tokens = tokenize(description)
    if _matches(tokens, description, rules.contrast_markers):
        return SequenceClass.GdT1WI
    if _matches(tokens, description, rules.flair_tokens):
        return SequenceClass.FLAIR
    if _matches(tokens, description, rules.t2_tokens):
        return SequenceClass.T2WI
    if _matches(tokens, description, rules.t1_tokens):
        return SequenceClass.T1WI
    return SequenceClass.NonSegmentable


def classify_stage2(series: SeriesRecord, vol=None, adapter: ClassifierAdapter | None = None,
                    ruleset: Ruleset | None = None) -> SequenceClass:
    if adapter is None:
        return fallback_stage2(series.description or "", ruleset)
    try:
        label, confidence = adapter(series, vol)
        label = SequenceClass(label)
    except AdapterFailure as exc:
        if exc.series_uid is None:
            exc.series_uid = series.series_uid
        raise
    except Exception as exc:
        raise AdapterFailure(f"stage-2 classifier failed: {exc}",
                             series_uid=series.series_uid) from exc
    if not 0.0 <= float(confidence) <= 1.0:
        raise AdapterFailure(f"classifier confidence {confidence} outside [0, 1]",
                             series_uid=series.series_uid)
    return label


def determine_orientation(meta: InstanceMeta) -> Orientation:
    iop = meta.image_orientation_patient
    if iop is None:
        return Orientation.Unknown
    normal = slice_normal(iop)
    if np.linalg.norm(normal) < 1e-6:
        return Orientation.Unknown
    axis = int(np.argmax(np.abs(normal)))
    return (Orientation.Sagittal, Orientation.Coronal, Orientation.Axial)[axis]


# -- exclusions and selection --------------------------------------------------

def exclusion_reason(series: SeriesRecord) -> Optional[Reason]:
    meta = series.first
    if meta.series_description is None or not meta.series_description.strip():
        return Reason.NoSeriesDescription
    image_type = "/".join(meta.image_type or ()).upper()
    if "ORIGINAL/PRIMARY" not in image_type:
        return Reason.NotOriginalPrimary
    if (meta.angio_flag or "").strip().upper() == "Y":
        return Reason.AngioFlag
    return None


def apply_exclusions(series: Iterable[SeriesRecord]):
    kept: List[SeriesRecord] = []
    excluded: List[Tuple[str, Reason]] = []
    for s in series:
        reason = exclusion_reason(s)
        if reason is None:
            kept.append(s)
        else:
            excluded.append((s.series_uid, reason))
    return kept, excluded


def priority_key(series: SeriesRecord, orientation: Orientation):
    """Sort key; the smallest key wins.

    Axial first, then more instances, then lowest series number, then uid.
    """
    number = series.series_number
    return (
        -ORIENTATION_RANK[orientation],
        -series.n_instances,
        number is None,
        number if number is not None else 0,
        series.series_uid,
    )


@dataclass
class CuratedSession:
    session_id: str
    selected: Dict[SequenceClass, SeriesRecord] = field(default_factory=dict)
    exclusions: List[Tuple[str, str]] = field(default_factory=list)
    session_excluded: bool = False
    orientations: Dict[str, Orientation] = field(default_factory=dict)
    decisions: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if SequenceClass.NonSegmentable in self.selected:
            raise ValueError("NonSegmentable cannot be selected")

    @property
    def available(self) -> FrozenSet[SequenceClass]:
        return frozenset(self.selected)

    def report(self) -> dict:
        return {
            "session_id": self.session_id,
            "session_excluded": self.session_excluded,
            "selected": {c.value: s.series_uid for c, s in sorted(
                self.selected.items(), key=lambda kv: SEGMENTABLE_CLASSES.index(kv[0]))},
            "exclusions": [{"series_uid": u, "reason": str(r)} for u, r in self.exclusions],
            "series": self.decisions,
        }


def select_scans(classified: Iterable[Tuple[SeriesRecord, SequenceClass, Orientation]],
                 session_id: str = "") -> CuratedSession:
    best: Dict[SequenceClass, Tuple[tuple, SeriesRecord]] = {}
    losers: List[Tuple[str, str]] = []
    orientations = {}
    entries = list(classified)
    for series, cls, orient in entries:
        orientations[series.series_uid] = orient
        if not cls.selectable:
            continue
        key = priority_key(series, orient)
        if cls not in best or key < best[cls][0]:
            best[cls] = (key, series)
    winners = {uid for _, (_, s) in best.items() for uid in [s.series_uid]}
    for series, cls, orient in entries:
        if cls.selectable and series.series_uid not in winners:
            losers.append((series.series_uid, Reason.NotPrioritized.value))
    selected = {cls: s for cls, (_, s) in best.items()}
    excluded = not (CORE_CLASSES & set(selected))
    return CuratedSession(session_id, selected, sorted(losers), excluded, orientations)


def curate_session(session_id: str, series: Sequence[SeriesRecord], *,
                   ruleset: Ruleset | None = None, adapter: ClassifierAdapter | None = None,
                   volumes: Optional[Dict[str, object]] = None,
                   stage2_calls: Optional[List[str]] = None) -> CuratedSession:
    """Exclusions, then stage 1, then stage 2 on survivors, then selection.

    ``stage2_calls`` (if given) collects the uids passed to stage 2, which
    lets callers audit the cascade order.
    """
    rules = ruleset or default_ruleset()
    ordered = sorted(series, key=lambda s: s.series_uid)
    kept, excluded = apply_exclusions(ordered)
    reasons: Dict[str, str] = {u: r.value for u, r in excluded}
    decisions: Dict[str, dict] = {}
    for s in ordered:
        decisions[s.series_uid] = {
            "series_uid": s.series_uid,
            "description": s.description,
            "n_instances": s.n_instances,
            "series_number": s.series_number,
            "mr_acq_type": s.first.mr_acq_type,
            "orientation": determine_orientation(s.first).value,
            "stage1": None,
            "stage2": None,
            "decision": "excluded" if s.series_uid in reasons else None,
            "reason": reasons.get(s.series_uid),
        }
    classified = []
    for s in kept:
        d = decisions[s.series_uid]
        s1 = classify_stage1(s, rules)
        d["stage1"] = s1.value
        if s1 is Stage1.NonSegmentable:
            d["decision"] = "excluded"
            d["reason"] = Reason.Stage1NonSegmentable.value
            excluded.append((s.series_uid, Reason.Stage1NonSegmentable))
            continue
        if stage2_calls is not None:
            stage2_calls.append(s.series_uid)
        vol = (volumes or {}).get(s.series_uid)
        cls = classify_stage2(s, vol, adapter, rules)
        d["stage2"] = cls.value
        if not cls.selectable:
            d["decision"] = "excluded"
            d["reason"] = Reason.Stage2NonSegmentable.value
            excluded.append((s.series_uid, Reason.Stage2NonSegmentable))
            continue
        classified.append((s, cls, Orientation(d["orientation"])))

    curated = select_scans(classified, session_id)
    for uid, reason in curated.exclusions:
        decisions[uid]["decision"] = "not_selected"
        decisions[uid]["reason"] = reason
    for cls, s in curated.selected.items():
        decisions[s.series_uid]["decision"] = f"selected:{cls.value}"
    curated.exclusions = sorted(
        [(u, r.value if isinstance(r, Reason) else r) for u, r in excluded] + curated.exclusions)
    if curated.session_excluded:
        curated.exclusions.append(("*", Reason.SessionNotSegmentable.value))
    curated.decisions = [decisions[s.series_uid] for s in ordered]
    return curated
