"""Run configuration: one declarative YAML/JSON file per run."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .curation import Ruleset, default_ruleset
from .errors import ConfigError

ADAPTER_KINDS = ("Registration", "BiasCorrection", "SkullStrip", "Segmentation",
                 "ClassifierStage2", "SegObjectExport")
ADAPTER_ENTRY_KEYS = {"command", "mock", "params", "timeout", "name"}
THRESHOLD_KEYS = {"t_et", "t_nc", "t_ed"}

ENV_WORKERS = "GLIOMAFLOW_WORKERS"
ENV_TIMEOUT = "GLIOMAFLOW_ADAPTER_TIMEOUT"


@dataclass
class RunConfig:
    output_root: Path
    input_roots: List[Path] = field(default_factory=list)
    ruleset: Optional[Path] = None
    adapters: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    workers: int = 1
    thresholds: Dict[str, float] = field(
        default_factory=lambda: {"t_et": 3.0, "t_nc": -3.0, "t_ed": 3.0})
    bin_width: float = 25.0
    alpha: float = 0.05
    atlas_path: Optional[Path] = None
    adapter_timeout: float = 3600.0
    radiomics: bool = False
    refined_dir: Optional[Path] = None

    _rules: Optional[Ruleset] = field(default=None, repr=False, compare=False)

    @property
    def rules(self) -> Ruleset:
        if self._rules is None:
            self._rules = Ruleset.load(self.ruleset) if self.ruleset else default_ruleset()
        return self._rules

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Union[str, Path, None] = None,
                  env: Optional[dict] = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        allowed = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "output_root" not in doc:
            raise ConfigError("config needs 'output_root'")
        base = Path(base_dir) if base_dir else Path.cwd()

        def path(v):
            if v is None:
                return None
            p = Path(os.path.expanduser(str(v)))
            return p if p.is_absolute() else (base / p)

        thresholds = {"t_et": 3.0, "t_nc": -3.0, "t_ed": 3.0}
        raw_thr = doc.get("thresholds") or {}
        if not isinstance(raw_thr, dict) or set(raw_thr) - THRESHOLD_KEYS:
            raise ConfigError(f"thresholds accepts only {sorted(THRESHOLD_KEYS)}")
        try:
            thresholds.update({k: float(v) for k, v in raw_thr.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad threshold value: {exc}") from None

        adapters = {}
        for kind, entry in (doc.get("adapters") or {}).items():
            if kind not in ADAPTER_KINDS:
                raise ConfigError(f"unknown adapter kind {kind!r}; expected one of {ADAPTER_KINDS}")
            if not isinstance(entry, dict) or set(entry) - ADAPTER_ENTRY_KEYS:
                raise ConfigError(f"adapter {kind}: allowed keys are {sorted(ADAPTER_ENTRY_KEYS)}")
            if bool(entry.get("command")) == bool(entry.get("mock")):
                raise ConfigError(f"adapter {kind}: set exactly one of 'command' or 'mock'")
            if entry.get("command") is not None and (
                    isinstance(entry["command"], str)
                    or not all(isinstance(c, str) for c in entry["command"])):
                raise ConfigError(f"adapter {kind}: 'command' must be a list of strings")
            adapters[kind] = dict(entry)

        try:
            cfg = cls(
                output_root=path(doc["output_root"]),
                input_roots=[path(p) for p in doc.get("input_roots") or []],
                ruleset=path(doc.get("ruleset")),
                adapters=adapters,
                workers=int(doc.get("workers", 1)),
                thresholds=thresholds,
                bin_width=float(doc.get("bin_width", 25.0)),
                alpha=float(doc.get("alpha", 0.05)),
                atlas_path=path(doc.get("atlas_path")),
                adapter_timeout=float(doc.get("adapter_timeout", 3600.0)),
                radiomics=bool(doc.get("radiomics", False)),
                refined_dir=path(doc.get("refined_dir")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None

        env = os.environ if env is None else env
        try:
            if env.get(ENV_WORKERS):
                cfg.workers = int(env[ENV_WORKERS])
            if env.get(ENV_TIMEOUT):
                cfg.adapter_timeout = float(env[ENV_TIMEOUT])
        except ValueError as exc:
            raise ConfigError(f"bad environment override: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Union[str, Path], env: Optional[dict] = None) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            if path.suffix in (".yaml", ".yml"):
                import yaml
                doc = yaml.safe_load(text)
            else:
                doc = json.loads(text)
        except Exception as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent, env=env)

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.bin_width <= 0:
            raise ConfigError("bin_width must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.adapter_timeout <= 0:
            raise ConfigError("adapter_timeout must be positive")
        if self.ruleset is not None and not self.ruleset.exists():
            raise ConfigError(f"ruleset file {self.ruleset} does not exist")
        if self.atlas_path is not None and not self.atlas_path.exists():
            raise ConfigError(f"atlas {self.atlas_path} does not exist")
        _ = self.rules  # parse the ruleset now so errors surface before any session
