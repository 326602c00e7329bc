"""Per-session orchestration with resumable, provenance-logged stages."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..config import RunConfig
from ..curation import CuratedSession, SequenceClass, curate_session
from ..dicom_ingest import SeriesRecord, read_dicom_path, series_to_volume
from ..errors import AdapterFailure, GliomaflowError, InvalidLabel, UnsupportedTransferSyntax
from ..nifti import read_nifti, write_nifti
from ..volume import (apply_affine, check_labels, class_masks, invert_affine, load_affine_text,
                      merge_mask_classes, normalize_intensity)
from .adapters import AdapterRegistry, CallableAdapter, StageKind, classifier_from_adapter
from .provenance import Provenance, sha256_file, sha256_json
from .routing import CANONICAL_ORDER, RouteKind, SegRoute, route_segmentation, select_registration_target
from .sessions import RawSession

log = logging.getLogger(__name__)

FEATURES_CSV = "features.csv"


@dataclass
class SessionResult:
    session_id: str
    status: str  # completed | excluded | failed
    session_dir: Path
    error: Optional[str] = None
    stages: Dict[str, str] = field(default_factory=dict)
    route: Optional[SegRoute] = None

    @property
    def failed(self) -> bool:
        return self.status == "failed"


class _StageFailed(Exception):
    pass


class SessionRun:
    """Executes the stage sequence for one session under ``session_dir``."""

    def __init__(self, session: RawSession, config: RunConfig, registry: AdapterRegistry,
                 session_dir: Path):
        self.session = session
        self.config = config
        self.registry = registry
        self.dir = session_dir
        self.prov = Provenance(session_dir, session.session_id)

    # -- stage plumbing ---------------------------------------------------------

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def stage(self, name: str, inputs: Sequence[Path], outputs: Sequence[Path], params: dict,
              action: Callable[[], None], identity: str = "builtin") -> str:
        in_hashes = [{"path": self.prov.rel(p), "sha256": sha256_file(p)} for p in inputs]
        key = sha256_json([name, identity, params, [h["sha256"] for h in in_hashes]])
        out_rel = [self.prov.rel(p) for p in outputs]
        prev = self.prov.prior(name)
        if (prev and prev["key"] == key and prev["status"] == "ok"
                and [o["path"] for o in prev["outputs"]] == out_rel
                and all(Path(p).is_file() and sha256_file(p) == o["sha256"]
                        for p, o in zip(outputs, prev["outputs"]))):
            self.prov.mark(name, "skipped")
            log.info("stage skipped", extra={"session": self.session.session_id, "stage": name})
            return "skipped"
        start = time.perf_counter()
        entry = {"name": name, "adapter": identity, "key": key,
                 "params_hash": sha256_json(params), "params": params, "inputs": in_hashes}
        try:
            action()
        except GliomaflowError as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}", outputs=[],
                         wall_time_s=round(time.perf_counter() - start, 6))
            self.prov.record(entry)
            log.error("stage failed", extra={"session": self.session.session_id, "stage": name,
                                             "error": str(exc)})
            raise _StageFailed(entry["error"]) from exc
        missing = [str(p) for p in outputs if not Path(p).is_file()]
        if missing:
            entry.update(status="failed", error=f"missing outputs {missing}", outputs=[])
            self.prov.record(entry)
            raise _StageFailed(entry["error"])
        entry.update(status="ok", wall_time_s=round(time.perf_counter() - start, 6),
                     outputs=[{"path": r, "sha256": sha256_file(p)}
                              for r, p in zip(out_rel, outputs)])
        self.prov.record(entry)
        log.info("stage done", extra={"session": self.session.session_id, "stage": name})
        return "ok"

    def adapter_stage(self, name: str, kind: StageKind, inputs, outputs, params) -> str:
        adapter = self.registry.get(kind)
        if adapter is None:
            # recorded as a failed stage so the audit trail shows why
            def missing():
                raise AdapterFailure(f"no {kind.value} adapter registered", stage=name)
            return self.stage(name, inputs, outputs, params, missing, f"{kind.value}:<missing>")
        identity = adapter.identity
        merged = dict(adapter.params)
        merged.update(params)

        def run():
            adapter(inputs, outputs, params, self.path("adapters"), name)
        return self.stage(name, inputs, outputs, merged, run, identity)

    # -- the workflow -------------------------------------------------------------

    def curate(self) -> CuratedSession:
        classifier = None
        stage2 = self.registry.get(StageKind.ClassifierStage2)
        if stage2 is not None:
            classifier = classifier_from_adapter(stage2, self.path("adapters"))
        curated = curate_session(self.session.session_id, self.session.series,
                                 ruleset=self.config.rules, adapter=classifier)
        report = curated.report()
        report["input_problems"] = self.session.problems
        report["ruleset"] = self.config.rules.to_dict()
        out = self.path("curation.json")

        def write():
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(report, indent=2, sort_keys=True))

        self.stage("curation", sorted(self.session.source_files), [out],
                   {"ruleset": self.config.rules.to_dict(),
                    "classifier": stage2.identity if stage2 else "fallback",
                    "report_sha256": sha256_json(report)}, write)
        self.prov.set("curation", {"path": "curation.json",
                                   "session_excluded": curated.session_excluded,
                                   "selected": report["selected"]})
        return curated

    def _series_inputs(self, series: SeriesRecord) -> List[Path]:
        if series.series_uid in self.session.images:
            return [self.session.images[series.series_uid]]
        files = []
        for inst in series.instances:
            f = self.session.dicom_files.get(inst.sop_uid)
            if f is None:
                raise UnsupportedTransferSyntax(
                    f"series {series.series_uid} has no pixel source (metadata-only input)")
            files.append(f)
        return files

    def convert(self, curated: CuratedSession, classes) -> Dict[SequenceClass, Path]:
        outputs = {c: self.path("native", f"{c.value}.nii") for c in classes}
        inputs, sources = [], {}
        for c in classes:
            try:
                sources[c] = self._series_inputs(curated.selected[c])
            except GliomaflowError as exc:
                def fail(exc=exc):
                    raise exc
                self.stage("convert", [], list(outputs.values()), {}, fail)
            inputs.extend(sources[c])

        def run():
            flags = {}
            for c in classes:
                series = curated.selected[c]
                src = sources[c]
                if series.series_uid in self.session.images:
                    vol = read_nifti(src[0])
                else:
                    insts = [read_dicom_path(f) for f in src]
                    by_uid = {i.meta.sop_uid: i.pixel_data for i in insts}
                    vol = series_to_volume(series, [by_uid[m.sop_uid] for m in series.instances])
                    flags[c.value] = {k: vol.meta[k] for k in
                                      ("position_fallback", "slice_spacing_uniform")}
                    if vol.meta["position_fallback"]:
                        log.warning("slice positions missing; instance-number order used",
                                    extra={"session": self.session.session_id,
                                           "series": series.series_uid})
                write_nifti(vol, outputs[c], description=f"{c.value} {series.series_uid}")
            self.prov.set("geometry_flags", flags)

        self.stage("convert", inputs, list(outputs.values()),
                   {"series": {c.value: curated.selected[c].series_uid for c in classes}}, run)
        return outputs

    def execute(self) -> SessionResult:
        sid = self.session.session_id
        result = SessionResult(sid, "failed", self.dir)
        try:
            curated = self.curate()
            if curated.session_excluded:
                result.status = "excluded"
                self.prov.set("route", route_segmentation(curated.available).to_dict())
                return result
            route = route_segmentation(curated.available)
            result.route = route
            self.prov.set("route", route.to_dict())
            self.run_processing(curated, route)
            result.status = "completed"
        except _StageFailed as exc:
            result.error = str(exc)
        except GliomaflowError as exc:
            result.error = f"{type(exc).__name__}: {exc}"
        finally:
            self.prov.finish(result.status, result.error)
            result.stages = dict(self.prov.current_run["stages"])
        return result

    def run_processing(self, curated: CuratedSession, route: SegRoute) -> None:
        cfg = self.config
        classes = [c for c in CANONICAL_ORDER if c in curated.selected]
        target = select_registration_target(curated)
        self.prov.set("registration_target", target.value)
        native = self.convert(curated, classes)

        ordered = [target] + [c for c in classes if c != target]
        reg_out = [self.path("registration", f"{c.value}.nii") for c in ordered]
        xform_path = self.path("registration", "patient2atlas.mat")
        atlas = str(cfg.atlas_path) if cfg.atlas_path else None
        atlas_hash = sha256_file(cfg.atlas_path) if cfg.atlas_path else None
        self.prov.set("atlas", {"path": atlas, "sha256": atlas_hash})
        self.adapter_stage("registration", StageKind.Registration,
                           [native[c] for c in ordered], reg_out + [xform_path],
                           {"target": target.value, "classes": [c.value for c in ordered],
                            "atlas": atlas, "atlas_sha256": atlas_hash,
                            "interpolation": "trilinear"})
        patient2atlas = load_affine_text(xform_path)
        self.prov.set("patient2atlas", patient2atlas.tolist())
        registered = dict(zip(ordered, reg_out))

        bias_out = {c: self.path("bias", f"{c.value}.nii") for c in classes}
        self.adapter_stage("bias_correction", StageKind.BiasCorrection,
                           [registered[c] for c in classes], list(bias_out.values()),
                           {"classes": [c.value for c in classes]})

        strip_out = {c: self.path("skullstrip", f"{c.value}.nii") for c in classes}
        brain_path = self.path("skullstrip", "brain_mask.nii")
        self.adapter_stage("skull_strip", StageKind.SkullStrip,
                           [bias_out[c] for c in classes], list(strip_out.values()) + [brain_path],
                           {"classes": [c.value for c in classes]})

        norm_out = {c: self.path("normalized", f"{c.value}.nii") for c in classes}

        def normalize():
            brain = read_nifti(brain_path, is_label=True)
            for c in classes:
                vol = read_nifti(strip_out[c])
                out = normalize_intensity(vol, brain.voxels.astype(bool))
                write_nifti(out.with_voxels(out.voxels.astype(np.float32)), norm_out[c])

        self.stage("normalize", [strip_out[c] for c in classes] + [brain_path],
                   list(norm_out.values()), {"percentiles": [5, 95], "inliers": "strict"},
                   normalize)

        if route.kind is RouteKind.NoSegmentation:
            return
        seg_path = self.path("segmentation", "mask_atlas.nii")
        self.adapter_stage("segmentation", StageKind.Segmentation,
                           [norm_out[c] for c in classes], [seg_path],
                           {"route": route.kind.value, "model_key": route.model_key,
                            "classes": [c.value for c in classes],
                            "thresholds": dict(cfg.thresholds)})
        seg_adapter = self.registry.get(StageKind.Segmentation)
        if isinstance(seg_adapter, CallableAdapter) and seg_adapter.name.startswith("mock"):
            self.prov.set("flags", {"mock_segmenter": True})
        binary = route.kind is RouteKind.BinaryWT
        self._check_route_labels(seg_path, binary, "segmentation")

        mask_path = seg_path
        refined = cfg.refined_dir / f"{self.session.session_id}.nii" if cfg.refined_dir else None
        if refined is not None and refined.is_file():
            refined_out = self.path("refinement", "mask_atlas.nii")

            def ingest():
                vol = read_nifti(refined, is_label=True)
                ref = read_nifti(seg_path, is_label=True)
                if not vol.geometry.same_grid(ref.geometry):
                    raise AdapterFailure("refined mask is not on the atlas grid", stage="refinement")
                check_labels(vol.voxels, (0, 1) if binary else (0, 1, 2, 4))
                write_nifti(vol.with_voxels(vol.voxels.astype(np.uint8)), refined_out)

            self.stage("refinement", [refined, seg_path], [refined_out], {}, ingest)
            mask_path = refined_out

        comp_names = ["WT"] if binary else ["TC", "WT"]
        comp_out = {n: self.path("postprocess", f"{n}_atlas.nii") for n in comp_names}

        def composites():
            mask = read_nifti(mask_path, is_label=True)
            regions = class_masks(mask.voxels, binary_wt=binary)
            for n in comp_names:
                write_nifti(mask.with_voxels(regions[n].astype(np.uint8)), comp_out[n])

        self.stage("composites", [mask_path], list(comp_out.values()),
                   {"binary_wt": binary}, composites)

        patient_out = [self.path("postprocess", "mask_patient.nii")] + [
            self.path("postprocess", f"{n}_patient.nii") for n in comp_names]

        def inverse_warp():
            atlas2patient = invert_affine(patient2atlas)
            ref = read_nifti(native[target]).geometry
            for src, dst in zip([mask_path] + [comp_out[n] for n in comp_names], patient_out):
                vol = read_nifti(src, is_label=True)
                write_nifti(apply_affine(vol, atlas2patient, ref, mode="nearest"), dst)

        self.stage("inverse_warp",
                   [mask_path] + [comp_out[n] for n in comp_names] + [xform_path, native[target]],
                   patient_out, {"interpolation": "nearest"}, inverse_warp)

        if StageKind.SegObjectExport in self.registry:
            self.adapter_stage("seg_export", StageKind.SegObjectExport,
                               [patient_out[0], native[target]],
                               [self.path("export", "segmentation.dcm")],
                               {"route": route.kind.value})

        if cfg.radiomics:
            from ..radiomics import extract_all
            feat_path = self.path("radiomics", "features.json")

            def features():
                images = {c: read_nifti(norm_out[c]) for c in classes}
                mask = read_nifti(mask_path, is_label=True)
                fv = extract_all(images, mask, session_id=self.session.session_id,
                                 bin_width=cfg.bin_width, binary_wt=binary)
                feat_path.parent.mkdir(parents=True, exist_ok=True)
                feat_path.write_text(json.dumps(fv.to_dict(), indent=1, sort_keys=False))

            self.stage("radiomics", [norm_out[c] for c in classes] + [mask_path], [feat_path],
                       {"bin_width": cfg.bin_width}, features)

    def _check_route_labels(self, path: Path, binary: bool, stage: str) -> None:
        vol = read_nifti(path, is_label=True)
        try:
            check_labels(vol.voxels, (0, 1) if binary else (0, 1, 2, 4))
        except InvalidLabel as exc:
            raise _StageFailed(f"AdapterFailure: segmentation labels violate route: {exc}") from None


def run_pipeline(session: RawSession, config: RunConfig, registry: AdapterRegistry,
                 out_root: Optional[Path] = None) -> SessionResult:
    root = Path(out_root or config.output_root)
    return SessionRun(session, config, registry, root / session.session_id).execute()


def run_batch(sessions: Sequence[RawSession], config: RunConfig, registry: AdapterRegistry,
              out_root: Optional[Path] = None) -> List[SessionResult]:
    """Run sessions on a bounded worker pool; one failure never stops the rest."""
    root = Path(out_root or config.output_root)
    root.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda s: run_pipeline(s, config, registry, root), sessions))
    if config.radiomics:
        write_features_csv(root)
    return results


def write_features_csv(root: Path) -> Optional[Path]:
    """Collect every session's feature vector into one fixed-width CSV."""
    from ..radiomics import write_features_csv as write_csv

    docs = [json.loads(f.read_text()) for f in sorted(root.glob("*/radiomics/features.json"))]
    if not docs:
        return None
    return write_csv(docs, root / FEATURES_CSV)
