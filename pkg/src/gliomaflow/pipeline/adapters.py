"""Stage adapters: external tools behind a file-in/file-out contract.

An invocation descriptor is a JSON object::

    {"kind": ..., "inputs": [paths], "params": {...}, "outputs": [expected paths]}

A command adapter receives the descriptor path as its last argument and must
exit 0 having written every expected output.
"""

from __future__ import annotations

import enum
import json
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from ..errors import AdapterFailure, ConfigError, NiftiError
from ..nifti import read_nifti


class StageKind(str, enum.Enum):
    Registration = "Registration"
    BiasCorrection = "BiasCorrection"
    SkullStrip = "SkullStrip"
    Segmentation = "Segmentation"
    ClassifierStage2 = "ClassifierStage2"
    SegObjectExport = "SegObjectExport"


@dataclass
class Invocation:
    kind: StageKind
    inputs: List[str]
    params: dict
    outputs: List[str]

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind.value, "inputs": self.inputs,
                           "params": self.params, "outputs": self.outputs},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Invocation":
        doc = json.loads(text)
        return cls(StageKind(doc["kind"]), list(doc["inputs"]), dict(doc.get("params") or {}),
                   list(doc["outputs"]))


def validate_outputs(inv: Invocation, stage: str) -> None:
    """Outputs must exist; NIfTI outputs of one invocation must share a grid."""
    missing = [p for p in inv.outputs if not Path(p).is_file()]
    if missing:
        raise AdapterFailure(f"adapter did not produce {missing}", stage=stage)
    grid = None
    for p in inv.outputs:
        if not p.endswith(".nii"):
            continue
        try:
            geom = read_nifti(p).geometry
        except NiftiError as exc:
            raise AdapterFailure(f"unreadable output {p}: {exc}", stage=stage) from None
        if grid is None:
            grid = geom
        elif not grid.same_grid(geom):
            raise AdapterFailure(f"output {p} is not on the same grid as its siblings",
                                 stage=stage)


@dataclass
class StageAdapter:
    name: str
    kind: StageKind
    params: dict = field(default_factory=dict)
    timeout: float = 3600.0

    @property
    def identity(self) -> str:
        return f"{self.kind.value}:{self.name}"

    def run(self, inv: Invocation, workdir: Path, stage: str) -> None:
        raise NotImplementedError

    def __call__(self, inputs: Sequence[str], outputs: Sequence[str], params: dict,
                 workdir: Path, stage: str) -> Invocation:
        merged = dict(self.params)
        merged.update(params)
        inv = Invocation(self.kind, [str(p) for p in inputs], merged, [str(p) for p in outputs])
        for p in inv.outputs:
            Path(p).parent.mkdir(parents=True, exist_ok=True)
        self.run(inv, workdir, stage)
        validate_outputs(inv, stage)
        return inv


@dataclass
class CallableAdapter(StageAdapter):
    func: Optional[Callable[[Invocation], None]] = None

    def run(self, inv: Invocation, workdir: Path, stage: str) -> None:
        start = time.monotonic()
        try:
            self.func(inv)
        except AdapterFailure as exc:
            exc.stage = exc.stage or stage
            raise
        except Exception as exc:
            raise AdapterFailure(f"{self.name} raised {type(exc).__name__}: {exc}",
                                 stage=stage) from exc
        if time.monotonic() - start > self.timeout:
            raise AdapterFailure(f"{self.name} exceeded {self.timeout:g}s", stage=stage)


@dataclass
class CommandAdapter(StageAdapter):
    command: List[str] = field(default_factory=list)

    @property
    def identity(self) -> str:
        return f"{self.kind.value}:{' '.join(self.command)}"

    def run(self, inv: Invocation, workdir: Path, stage: str) -> None:
        workdir.mkdir(parents=True, exist_ok=True)
        desc = workdir / f"{stage}.invocation.json"
        desc.write_text(inv.to_json())
        try:
            proc = subprocess.run([*self.command, str(desc)], capture_output=True, text=True,
                                  timeout=self.timeout)
        except subprocess.TimeoutExpired:
            raise AdapterFailure(f"{self.name} timed out after {self.timeout:g}s",
                                 stage=stage) from None
        except OSError as exc:
            raise AdapterFailure(f"cannot launch {self.command}: {exc}", stage=stage) from None
        (workdir / f"{stage}.stdout.txt").write_text(proc.stdout)
        (workdir / f"{stage}.stderr.txt").write_text(proc.stderr)
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] or [""]
            raise AdapterFailure(f"{self.name} exited with status {proc.returncode}: {tail[0]}",
                                 stage=stage)


class AdapterRegistry:
    def __init__(self, adapters: Optional[Dict[StageKind, StageAdapter]] = None):
        self._adapters: Dict[StageKind, StageAdapter] = dict(adapters or {})

    def register(self, adapter: StageAdapter) -> None:
        self._adapters[adapter.kind] = adapter

    def get(self, kind: StageKind) -> Optional[StageAdapter]:
        return self._adapters.get(StageKind(kind))

    def __contains__(self, kind) -> bool:
        return StageKind(kind) in self._adapters

    def require(self, kind: StageKind, stage: str) -> StageAdapter:
        adapter = self.get(kind)
        if adapter is None:
            raise AdapterFailure(f"no {StageKind(kind).value} adapter registered", stage=stage)
        return adapter

    def kinds(self) -> List[str]:
        return sorted(k.value for k in self._adapters)

    @classmethod
    def from_config(cls, entries: Dict[str, dict], default_timeout: float) -> "AdapterRegistry":
        from . import mock

        reg = cls()
        for kind_name, entry in entries.items():
            kind = StageKind(kind_name)
            timeout = float(entry.get("timeout", default_timeout))
            params = dict(entry.get("params") or {})
            if entry.get("mock"):
                func = mock.MOCK_STAGES.get(kind)
                if func is None:
                    raise ConfigError(f"no built-in mock for adapter kind {kind.value}")
                reg.register(CallableAdapter(entry.get("name", f"mock-{kind.value}"), kind,
                                             params, timeout, func))
            else:
                cmd = [sys.executable if c == "{python}" else c for c in entry["command"]]
                reg.register(CommandAdapter(entry.get("name", cmd[0]), kind, params, timeout,
                                            cmd))
        return reg


def classifier_from_adapter(adapter: StageAdapter, workdir: Path):
    """Wrap a ClassifierStage2 stage adapter as a curation classifier callable.

    The adapter receives the series manifest entry as ``params['series']`` and
    writes ``{"label": ..., "confidence": ...}`` to its single output.
    """
    from ..curation import SequenceClass
    from ..dicom_ingest import series_manifest_entry

    def classify(series, vol=None):
        out = workdir / "classifier" / f"{series.series_uid}.json"
        adapter([], [str(out)], {"series": series_manifest_entry(series)},
                workdir / "classifier", "classify")
        doc = json.loads(out.read_text())
        return SequenceClass(doc["label"]), float(doc["confidence"])

    return classify
