"""Which segmentation model runs for a given set of available sequences."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations
from typing import FrozenSet, Iterable, List

from ..curation import CuratedSession, SequenceClass, determine_orientation, priority_key
from ..errors import EmptySession

# column order of the per-combination model table: F, T1, T1c, T2
CANONICAL_ORDER = (SequenceClass.FLAIR, SequenceClass.T1WI,
                   SequenceClass.GdT1WI, SequenceClass.T2WI)


class RouteKind(str, enum.Enum):
    MultiClass = "MultiClass"
    BinaryWT = "BinaryWT"
    NoSegmentation = "NoSegmentation"


@dataclass(frozen=True)
class SegRoute:
    kind: RouteKind
    model_key: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "model_key": self.model_key}


def sequence_set(classes: Iterable) -> FrozenSet[SequenceClass]:
    out = frozenset(SequenceClass(c) for c in classes)
    if SequenceClass.NonSegmentable in out:
        raise ValueError("NonSegmentable is not a sequence")
    return out


def model_key(available: Iterable[SequenceClass]) -> str:
    present = set(available)
    names = [c.value for c in CANONICAL_ORDER if c in present]
    return "+".join(names) if names else "none"


def all_sequence_sets() -> List[FrozenSet[SequenceClass]]:
    """All 16 subsets of the four segmentable sequences."""
    return [frozenset(combo) for r in range(5) for combo in combinations(CANONICAL_ORDER, r)]


def route_segmentation(available: Iterable[SequenceClass]) -> SegRoute:
    present = sequence_set(available)
    if SequenceClass.GdT1WI in present:
        return SegRoute(RouteKind.MultiClass, model_key(present))
    if SequenceClass.T2WI in present or SequenceClass.FLAIR in present:
        return SegRoute(RouteKind.BinaryWT, model_key(present))
    return SegRoute(RouteKind.NoSegmentation, "none")


def select_registration_target(curated: CuratedSession) -> SequenceClass:
    if not curated.selected:
        raise EmptySession(f"session {curated.session_id!r} has no selected scans")

    def key(item):
        cls, series = item
        orient = curated.orientations.get(series.series_uid)
        if orient is None:
            orient = determine_orientation(series.first)
        # instance count dominates; the selection order breaks ties
        return (-series.n_instances, priority_key(series, orient))

    return min(curated.selected.items(), key=key)[0]
