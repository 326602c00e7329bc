"""Session discovery, routing, adapters, provenance and the stage runner."""

from .adapters import (AdapterRegistry, CallableAdapter, CommandAdapter, Invocation,
                       StageAdapter, StageKind)
from .provenance import Provenance
from .routing import (CANONICAL_ORDER, RouteKind, SegRoute, all_sequence_sets, model_key,
                      route_segmentation, select_registration_target)
from .runner import SessionResult, run_batch, run_pipeline, write_features_csv
from .sessions import RawSession, discover_sessions

__all__ = [
    "AdapterRegistry", "CallableAdapter", "CommandAdapter", "Invocation", "StageAdapter",
    "StageKind", "Provenance", "CANONICAL_ORDER", "RouteKind", "SegRoute",
    "all_sequence_sets", "model_key", "route_segmentation", "select_registration_target",
    "SessionResult", "run_batch", "run_pipeline", "write_features_csv", "RawSession",
    "discover_sessions",
]
