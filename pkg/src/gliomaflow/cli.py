"""Command-line entry point.

Exit codes: 0 success, 1 at least one session failed, 2 configuration or
usage error.  Logs go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .curation import SequenceClass, curate_session
from .errors import ConfigError, GliomaflowError
from .evaluation import (ConfusionMatrix, evaluation_report, segmentation_dice, write_dsc_csv,
                         write_report_json)
from .nifti import read_nifti
from .pipeline import AdapterRegistry, discover_sessions, route_segmentation, run_batch
from .pipeline.adapters import StageKind, classifier_from_adapter
from .pipeline.routing import CANONICAL_ORDER, RouteKind
from .volume import check_labels

log = logging.getLogger("gliomaflow")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
_STD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
               "level": record.levelname.lower(), "logger": record.name,
               "msg": record.getMessage()}
        doc.update({k: v for k, v in vars(record).items() if k not in _STD_ATTRS})
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc, default=str)


def setup_logging(verbose: bool = False, stream=None) -> None:
    root = logging.getLogger("gliomaflow")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


# -- helpers ---------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "paths", None):
        cfg.input_roots = [Path(p) for p in args.paths]
    return cfg


def _select_sessions(cfg: RunConfig, wanted: Optional[Sequence[str]]):
    sessions = discover_sessions(cfg.input_roots)
    if wanted:
        known = {s.session_id for s in sessions}
        for sid in sorted(set(wanted) - known):
            log.warning("requested session not found", extra={"session": sid})
        sessions = [s for s in sessions if s.session_id in set(wanted)]
    if not sessions:
        log.warning("no sessions found", extra={"roots": [str(r) for r in cfg.input_roots]})
    return sessions


def _parse_images(items: Sequence[str]) -> Dict[str, Path]:
    out = {}
    valid = {c.value for c in CANONICAL_ORDER}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or name not in valid:
            raise ConfigError(f"--image expects CLASS=PATH with CLASS in {sorted(valid)}: {item!r}")
        out[name] = Path(path)
    return out


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True), flush=True)


# -- subcommands -------------------------------------------------------------------

def cmd_curate(args) -> int:
    cfg = _load_config(args)
    registry = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    stage2 = registry.get(StageKind.ClassifierStage2)
    failed = 0
    for s in _select_sessions(cfg, args.sessions):
        out = cfg.output_root / s.session_id / "curation.json"
        try:
            classifier = None
            if stage2 is not None:
                classifier = classifier_from_adapter(stage2, out.parent / "adapters")
            curated = curate_session(s.session_id, s.series, ruleset=cfg.rules,
                                     adapter=classifier)
        except GliomaflowError as exc:
            failed += 1
            log.error("curation failed", extra={"session": s.session_id, "error": str(exc)})
            _emit({"session": s.session_id, "status": "failed", "error": str(exc)})
            continue
        report = curated.report()
        report["input_problems"] = s.problems
        report["ruleset"] = cfg.rules.to_dict()
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2, sort_keys=True))
        _emit({"session": s.session_id, "status": "excluded" if curated.session_excluded
               else "curated", "selected": report["selected"], "report": str(out)})
    return EXIT_FAILED if failed else EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.radiomics:
        cfg.radiomics = True
    registry = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    sessions = _select_sessions(cfg, args.sessions)
    if not sessions:
        return EXIT_OK
    results = run_batch(sessions, cfg, registry)
    for r in results:
        _emit({"session": r.session_id, "status": r.status, "error": r.error,
               "route": r.route.to_dict() if r.route else None, "stages": r.stages})
    return EXIT_FAILED if any(r.failed for r in results) else EXIT_OK


def cmd_segment(args) -> int:
    """Route by the supplied sequence set and call the segmentation adapter."""
    cfg = RunConfig.load(args.config)
    images = _parse_images(args.image)
    registry = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    available = frozenset(SequenceClass(k) for k in images)
    route = route_segmentation(available)
    if route.kind is RouteKind.NoSegmentation:
        _emit({"status": "skipped", "route": route.to_dict()})
        return EXIT_OK
    adapter = registry.require(StageKind.Segmentation, "segmentation")
    classes = [c.value for c in CANONICAL_ORDER if c in available]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        adapter([images[c] for c in classes], [out],
                {"route": route.kind.value, "model_key": route.model_key, "classes": classes,
                 "thresholds": dict(cfg.thresholds)},
                out.parent / "adapters", "segmentation")
        check_labels(read_nifti(out, is_label=True).voxels,
                     (0, 1) if route.kind is RouteKind.BinaryWT else (0, 1, 2, 4))
    except GliomaflowError as exc:
        log.error("segmentation failed", extra={"error": str(exc)})
        _emit({"status": "failed", "route": route.to_dict(), "error": str(exc)})
        return EXIT_FAILED
    _emit({"status": "ok", "route": route.to_dict(), "mask": str(out)})
    return EXIT_OK


def cmd_radiomics(args) -> int:
    from .radiomics import extract_all, write_features_csv

    bin_width = args.bin_width
    if bin_width is None:
        bin_width = RunConfig.load(args.config).bin_width if args.config else 25.0
    images = {k: read_nifti(p) for k, p in _parse_images(args.image).items()}
    mask = read_nifti(args.mask, is_label=True)
    fv = extract_all(images, mask, session_id=args.session_id, bin_width=bin_width,
                     binary_wt=args.binary_wt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features.json").write_text(json.dumps(fv.to_dict(), indent=1))
    write_features_csv([fv.to_dict()], out / "features.csv")
    _emit({"session": fv.session_id, "features": len(fv), "null": fv.n_null,
           "warnings": len(fv.warnings), "out": str(out)})
    return EXIT_OK


def _prediction_paths(pred_dir: Path) -> Dict[str, Path]:
    """``<sid>/postprocess/mask_patient.nii`` (run output) or ``<sid>.nii`` files."""
    found = {}
    for p in sorted(pred_dir.glob("*/postprocess/mask_patient.nii")):
        found[p.parent.parent.name] = p
    for p in sorted(pred_dir.glob("*.nii")):
        found.setdefault(p.stem, p)
    return found


def _is_binary_prediction(path: Path, voxels) -> bool:
    prov = path.parent.parent / "provenance.json"
    if path.name == "mask_patient.nii" and prov.is_file():
        route = json.loads(prov.read_text()).get("route") or {}
        return route.get("kind") == RouteKind.BinaryWT.value
    return set(np.unique(voxels).tolist()) <= {0, 1}


def _read_grades(path: Path) -> Dict[str, str]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "session_id" not in rows[0] or "grade" not in rows[0]:
        raise ConfigError(f"{path}: grades CSV needs 'session_id' and 'grade' columns")
    return {r["session_id"]: r["grade"] for r in rows}


def _read_classification(path: Path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "truth" not in rows[0] or "predicted" not in rows[0]:
        raise ConfigError(f"{path}: classification CSV needs 'truth' and 'predicted' columns")
    labels = [c.value for c in SequenceClass]
    extra = sorted({r[k] for r in rows for k in ("truth", "predicted")} - set(labels))
    return ConfusionMatrix.from_pairs([r["truth"] for r in rows], [r["predicted"] for r in rows],
                                      labels + extra)


def cmd_evaluate(args) -> int:
    from .plotting import plot_confusion, plot_dsc

    preds = _prediction_paths(Path(args.pred_dir))
    truths = {p.stem: p for p in sorted(Path(args.refined_dir).glob("*.nii"))}
    groups = _read_grades(Path(args.grades)) if args.grades else None
    confusion = _read_classification(Path(args.classification)) if args.classification else None
    alpha = RunConfig.load(args.config).alpha if args.config else args.alpha

    dsc, problems = {}, []
    for sid in sorted(set(preds) | set(truths)):
        if sid not in preds or sid not in truths:
            problems.append({"session": sid, "error": "UnpairedSession",
                             "missing": "prediction" if sid not in preds else "refined mask"})
            log.warning("unpaired session", extra={"session": sid})
            continue
        try:
            pred = read_nifti(preds[sid], is_label=True)
            truth = read_nifti(truths[sid], is_label=True)
            dsc[sid] = segmentation_dice(pred, truth, _is_binary_prediction(preds[sid], pred.voxels))
        except GliomaflowError as exc:
            problems.append({"session": sid, "error": f"{type(exc).__name__}: {exc}"})
            log.error("evaluation failed", extra={"session": sid, "error": str(exc)})

    report = evaluation_report(dsc, groups, confusion, alpha)
    report["problems"] = problems
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "evaluation.json")
    write_dsc_csv(dsc, out / "dsc.csv", groups)
    figures = []
    if dsc:
        figures.append(str(plot_dsc(dsc, out / "dsc.png", groups)))
    if confusion is not None:
        figures.append(str(plot_confusion(confusion, out / "confusion.png")))
    _emit({"evaluated": len(dsc), "problems": len(problems),
           "aggregate": {k: v["formatted"] for k, v in report["aggregate"].items()},
           "out": str(out), "figures": figures})
    return EXIT_OK


def cmd_inspect(args) -> int:
    target = Path(args.target)
    prov = target / "provenance.json" if target.is_dir() else target
    if not prov.is_file():
        raise ConfigError(f"no provenance found at {target}")
    doc = json.loads(prov.read_text())
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    last = (doc.get("runs") or [{}])[-1]
    print(f"session   {doc.get('session_id')}")
    print(f"status    {last.get('status')}  {last.get('error') or ''}".rstrip())
    route = doc.get("route") or {}
    print(f"route     {route.get('kind')} ({route.get('model_key')})")
    this_run = last.get("stages") or {}
    for entry in doc.get("stages") or []:
        name = entry.get("name", "?")
        print(f"  {name:<16} {this_run.get(name, entry.get('status')):<8} "
              f"{entry.get('adapter', ''):<28} {entry.get('wall_time_s', '')}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    from .phantom import make_phantom, phantom_config

    out = Path(args.out)
    atlas = None
    for n in range(args.count):
        ph = make_phantom(out, f"PHANTOM{n + 1:02d}", with_atlas=(n == 0))
        atlas = atlas or ph.atlas_path
    cfg = phantom_config("run", "dicom", radiomics=True, atlas_path=atlas.name)
    try:
        import yaml
        (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
        cfg_path = out / "config.yaml"
    except ImportError:  # pragma: no cover
        cfg_path = out / "config.json"
        cfg_path.write_text(json.dumps(cfg, indent=2))
    _emit({"sessions": args.count, "config": str(cfg_path), "truth": str(out / "truth")})
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gliomaflow",
                                description="MRI glioma curation, segmentation and radiomics pipeline")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug-level logs")
    sub = p.add_subparsers(dest="command", required=True)

    def with_sessions(sp):
        sp.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
        sp.add_argument("paths", nargs="*", help="input roots (override the config)")
        sp.add_argument("--sessions", nargs="+", metavar="ID", help="only these session ids")

    sp = sub.add_parser("curate", help="classify and select scans, one report per session")
    with_sessions(sp)
    sp.set_defaults(func=cmd_curate)

    sp = sub.add_parser("run", help="full pipeline with resumable provenance")
    with_sessions(sp)
    sp.add_argument("--radiomics", action="store_true", help="force feature extraction on")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("segment", help="route a sequence set and run the segmentation adapter")
    sp.add_argument("--config", required=True)
    sp.add_argument("--image", action="append", required=True, metavar="CLASS=PATH")
    sp.add_argument("--out", required=True, help="output mask path (.nii)")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("radiomics", help="extract the fixed feature vector for one session")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--image", action="append", default=[], metavar="CLASS=PATH")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--session-id", default="session")
    sp.add_argument("--bin-width", type=float)
    sp.add_argument("--binary-wt", action="store_true", help="mask is a binary whole-tumour mask")
    sp.add_argument("--config", help="take bin width from this run configuration")
    sp.set_defaults(func=cmd_radiomics)

    sp = sub.add_parser("evaluate", help="Dice against refined masks, tests and figures")
    sp.add_argument("pred_dir", help="run output root or directory of <session>.nii masks")
    sp.add_argument("refined_dir", help="directory of <session>.nii reference masks")
    sp.add_argument("--out", required=True)
    sp.add_argument("--grades", help="CSV with session_id,grade for stratified tests")
    sp.add_argument("--classification", help="CSV with truth,predicted scan types")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--config", help="take alpha from this run configuration")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("inspect", help="print a session's provenance")
    sp.add_argument("target", help="session output directory or provenance.json")
    sp.add_argument("--json", action="store_true", help="dump the raw JSON")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("phantom", help="write a synthetic DICOM corpus, truth masks and config")
    sp.add_argument("out")
    sp.add_argument("--count", type=int, default=1)
    sp.set_defaults(func=cmd_phantom)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error", extra={"error": str(exc)})
        return EXIT_CONFIG
    except GliomaflowError as exc:
        log.error("command failed", extra={"error": f"{type(exc).__name__}: {exc}"})
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
