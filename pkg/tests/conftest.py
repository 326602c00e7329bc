from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import pytest

from gliomaflow.config import RunConfig
from gliomaflow.phantom import Phantom, make_phantom, phantom_config
from gliomaflow.pipeline import AdapterRegistry, discover_sessions, run_batch


class PhantomRun:
    """A phantom corpus plus helpers to run the pipeline over it."""

    def __init__(self, root: Path, session_ids=("PHANTOM01",), **phantom_kw):
        self.root = root
        self.phantoms: List[Phantom] = [make_phantom(root, sid, **phantom_kw)
                                        for sid in session_ids]

    @property
    def phantom(self) -> Phantom:
        return self.phantoms[0]

    def config(self, out: str = "run", **kw) -> RunConfig:
        doc = phantom_config(self.root / out, self.root / "dicom", **kw)
        return RunConfig.from_dict(doc, self.root, env={})

    def run(self, cfg: Optional[RunConfig] = None, registry: Optional[AdapterRegistry] = None,
            sessions=None):
        cfg = cfg or self.config()
        registry = registry or AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
        found = discover_sessions(cfg.input_roots)
        if sessions is not None:
            found = [s for s in found if s.session_id in sessions]
        return run_batch(found, cfg, registry)


@pytest.fixture
def phantom_run(tmp_path) -> PhantomRun:
    return PhantomRun(tmp_path)
