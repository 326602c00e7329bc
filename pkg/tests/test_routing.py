from __future__ import annotations

import pytest

from builders import make_series
from gliomaflow.curation import CuratedSession, Orientation, SequenceClass
from gliomaflow.errors import EmptySession
from gliomaflow.pipeline.routing import (RouteKind, all_sequence_sets, model_key,
                                         route_segmentation, select_registration_target,
                                         sequence_set)

T1, GD, T2, FL = (SequenceClass.T1WI, SequenceClass.GdT1WI, SequenceClass.T2WI,
                  SequenceClass.FLAIR)


def expected_kind(s):
    """Route rule written out independently of the package."""
    if GD in s:
        return RouteKind.MultiClass
    if T2 in s or FL in s:
        return RouteKind.BinaryWT
    return RouteKind.NoSegmentation


def test_all_sixteen_subsets():
    sets = all_sequence_sets()
    assert len(sets) == 16 and len(set(sets)) == 16
    keys = set()
    for s in sets:
        route = route_segmentation(s)
        assert route.kind is expected_kind(s)
        keys.add(route.model_key)
    # 11 segmentable rows, plus "none" for the five non-segmentable subsets
    assert "none" in keys
    assert len(keys) == 1 + sum(1 for s in sets if expected_kind(s) is not RouteKind.NoSegmentation)


@pytest.mark.parametrize("avail,kind", [
    ({GD}, RouteKind.MultiClass),
    ({T1, FL}, RouteKind.BinaryWT),
    ({T1}, RouteKind.NoSegmentation),
    (set(), RouteKind.NoSegmentation),
])
def test_route_examples(avail, kind):
    assert route_segmentation(avail).kind is kind


def test_model_key_canonical_order():
    assert model_key({T2, FL}) == "FLAIR+T2WI"
    assert model_key({GD, T1, T2, FL}) == "FLAIR+T1WI+GdT1WI+T2WI"
    assert route_segmentation({T2, FL}).model_key == "FLAIR+T2WI"
    assert route_segmentation({T1}).model_key == "none"


def test_sequence_set_rejects_nonsegmentable():
    with pytest.raises(ValueError):
        sequence_set([SequenceClass.NonSegmentable])
    assert sequence_set(["T1WI", "FLAIR"]) == frozenset({T1, FL})


def _curated(entries):
    selected = {c: make_series(uid, "x", n, series_number=num) for c, uid, n, num in entries}
    orient = {s.series_uid: Orientation.Axial for s in selected.values()}
    return CuratedSession("S", selected, orientations=orient)


def test_registration_target_examples():
    assert select_registration_target(_curated([(T1, "a", 30, 1), (GD, "b", 120, 2)])) is GD
    assert select_registration_target(_curated([(FL, "a", 30, 1)])) is FL
    assert select_registration_target(_curated([(T2, "a", 60, 3), (FL, "b", 60, 4)])) is T2
    assert select_registration_target(_curated([(T2, "a", 60, 5), (FL, "b", 60, 4)])) is FL


def test_registration_target_empty():
    with pytest.raises(EmptySession):
        select_registration_target(CuratedSession("S"))
