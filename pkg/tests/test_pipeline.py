from __future__ import annotations

import json
import shutil

import numpy as np
import pytest

from builders import make_series
from conftest import PhantomRun
from gliomaflow.dicom_ingest import session_manifest
from gliomaflow.errors import AdapterFailure
from gliomaflow.evaluation import segmentation_dice
from gliomaflow.nifti import read_nifti, write_nifti
from gliomaflow.pipeline import AdapterRegistry, CallableAdapter, StageKind, discover_sessions
from gliomaflow.pipeline.adapters import Invocation
from gliomaflow.pipeline.mock import MOCK_STAGES, mock_segmenter
from gliomaflow.pipeline.provenance import sha256_file
from gliomaflow.radiomics import feature_names

ALL_STAGES = ["curation", "convert", "registration", "bias_correction", "skull_strip",
              "normalize", "segmentation", "composites", "inverse_warp"]


def _prov(result):
    return json.loads((result.session_dir / "provenance.json").read_text())


def test_phantom_end_to_end(phantom_run):
    (res,) = phantom_run.run()
    assert res.status == "completed", res.error
    assert res.route.kind.value == "MultiClass"
    assert [res.stages[s] for s in ALL_STAGES] == ["ok"] * len(ALL_STAGES)
    mask = read_nifti(res.session_dir / "postprocess" / "mask_patient.nii", is_label=True)
    truth = phantom_run.phantom.truth
    assert mask.geometry.same_grid(truth.geometry)
    assert segmentation_dice(mask.voxels, truth.voxels) == {"WT": 1.0, "TC": 1.0, "ET": 1.0}
    doc = _prov(res)
    assert doc["flags"]["mock_segmenter"] is True
    assert doc["patient2atlas"][0][3] == 3.0
    assert doc["registration_target"] == "T2WI"
    reg = next(e for e in doc["stages"] if e["name"] == "registration")
    assert reg["params"]["interpolation"] == "trilinear"
    assert doc["geometry_flags"]["GdT1WI"] == {"position_fallback": False,
                                              "slice_spacing_uniform": True}


def test_every_output_traced_to_one_stage(phantom_run):
    (res,) = phantom_run.run()
    doc = _prov(res)
    index = {}
    for entry in doc["stages"]:
        for out in entry["outputs"]:
            index.setdefault(out["path"], []).append(entry["name"])
            assert sha256_file(res.session_dir / out["path"]) == out["sha256"]
    assert all(len(v) == 1 for v in index.values())
    produced = {str(p.relative_to(res.session_dir)) for p in res.session_dir.rglob("*.nii")}
    assert produced <= set(index)


def test_rerun_skips_and_is_byte_identical(phantom_run):
    (first,) = phantom_run.run()
    mask = first.session_dir / "postprocess" / "mask_patient.nii"
    before = mask.read_bytes()
    (second,) = phantom_run.run()
    assert set(second.stages.values()) == {"skipped"}
    assert mask.read_bytes() == before
    assert len(_prov(second)["runs"]) == 2


def test_fresh_runs_are_byte_identical(phantom_run):
    (a,) = phantom_run.run(phantom_run.config("run_a"))
    (b,) = phantom_run.run(phantom_run.config("run_b"))
    for rel in ("postprocess/mask_patient.nii", "segmentation/mask_atlas.nii",
                "curation.json"):
        assert (a.session_dir / rel).read_bytes() == (b.session_dir / rel).read_bytes()


def test_changed_param_reruns_downstream(phantom_run):
    phantom_run.run()
    cfg = phantom_run.config(translation_mm=(1.0, 0.0, 0.0))
    (res,) = phantom_run.run(cfg)
    assert res.stages["curation"] == "skipped"
    assert res.stages["registration"] == "ok"
    assert len(_prov(res)["history"]) > 0


def test_missing_segmentation_adapter(phantom_run):
    cfg = phantom_run.config()
    del cfg.adapters["Segmentation"]
    (res,) = phantom_run.run(cfg)
    assert res.failed and "Segmentation" in res.error
    assert (res.session_dir / "curation.json").is_file()
    assert res.stages["segmentation"] == "failed"


def test_injected_failure(phantom_run):
    cfg = phantom_run.config()
    cfg.adapters["SkullStrip"]["params"]["fail"] = True
    (res,) = phantom_run.run(cfg)
    assert res.failed and res.stages["skull_strip"] == "failed"
    assert "segmentation" not in res.stages
    assert _prov(res)["status"] == "failed"


def test_batch_isolation(tmp_path):
    corpus = PhantomRun(tmp_path, ("P1", "P2"))
    alone = PhantomRun(tmp_path / "alone", ("P1",))

    def seg_failing_p2(inv: Invocation) -> None:
        if any("/P2/" in p for p in inv.inputs):
            raise AdapterFailure("planted failure")
        MOCK_STAGES[StageKind.Segmentation](inv)

    cfg = corpus.config()
    reg = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    reg.register(CallableAdapter("planted", StageKind.Segmentation, {}, 60.0, seg_failing_p2))
    results = {r.session_id: r for r in corpus.run(cfg, reg)}
    assert results["P2"].failed and results["P1"].status == "completed"

    (ref,) = alone.run()
    for rel in ("postprocess/mask_patient.nii", "normalized/GdT1WI.nii"):
        assert (results["P1"].session_dir / rel).read_bytes() == (ref.session_dir / rel).read_bytes()


def test_parallel_workers_match_serial(tmp_path):
    corpus = PhantomRun(tmp_path, ("P1", "P2"))
    serial = corpus.run(corpus.config("serial"))
    cfg = corpus.config("parallel")
    cfg.workers = 2
    parallel = corpus.run(cfg)
    for a, b in zip(serial, parallel):
        rel = "postprocess/mask_patient.nii"
        assert (a.session_dir / rel).read_bytes() == (b.session_dir / rel).read_bytes()


def test_binary_route_without_gd(tmp_path):
    run = PhantomRun(tmp_path)
    for f in run.phantom.dicom_dir.glob("s05_*.dcm"):
        f.unlink()
    (res,) = run.run()
    assert res.status == "completed", res.error
    assert res.route.kind.value == "BinaryWT" and res.route.model_key == "FLAIR+T2WI"
    mask = read_nifti(res.session_dir / "postprocess" / "mask_patient.nii", is_label=True)
    assert set(np.unique(mask.voxels)) <= {0, 1}
    truth_wt = run.phantom.truth.voxels > 0
    assert np.array_equal(mask.voxels > 0, truth_wt)
    assert not (res.session_dir / "postprocess" / "TC_patient.nii").exists()


def test_excluded_session_runs_no_processing(tmp_path):
    d = tmp_path / "dicom"
    d.mkdir()
    manifest = session_manifest("DWI_ONLY", [make_series("1.9", "AX DWI", 60)])
    (d / "dwi.json").write_text(json.dumps(manifest))
    from gliomaflow.config import RunConfig
    from gliomaflow.phantom import phantom_config
    cfg = RunConfig.from_dict(phantom_config(tmp_path / "run", d), tmp_path, env={})
    reg = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    from gliomaflow.pipeline import run_batch
    (res,) = run_batch(discover_sessions(cfg.input_roots), cfg, reg)
    assert res.status == "excluded"
    assert list(res.stages) == ["curation"]


def test_metadata_only_manifest_fails_at_convert(tmp_path):
    d = tmp_path / "dicom"
    d.mkdir()
    manifest = session_manifest("META", [make_series("1.9", "AX FLAIR", 30)])
    (d / "m.json").write_text(json.dumps(manifest))
    from gliomaflow.config import RunConfig
    from gliomaflow.phantom import phantom_config
    from gliomaflow.pipeline import run_batch
    cfg = RunConfig.from_dict(phantom_config(tmp_path / "run", d), tmp_path, env={})
    reg = AdapterRegistry.from_config(cfg.adapters, cfg.adapter_timeout)
    (res,) = run_batch(discover_sessions(cfg.input_roots), cfg, reg)
    assert res.failed and res.stages["convert"] == "failed"
    assert (res.session_dir / "curation.json").is_file()


def test_refinement_ingestion(phantom_run):
    (first,) = phantom_run.run()
    atlas_mask = read_nifti(first.session_dir / "segmentation" / "mask_atlas.nii", is_label=True)
    refined = atlas_mask.voxels.copy()
    refined[refined == 2] = 0  # expert removes the oedema
    refined_dir = phantom_run.root / "refined"
    write_nifti(atlas_mask.with_voxels(refined), refined_dir / "PHANTOM01.nii")
    cfg = phantom_run.config()
    cfg.refined_dir = refined_dir
    (res,) = phantom_run.run(cfg)
    assert res.stages["refinement"] == "ok"
    assert res.stages["segmentation"] == "skipped"
    mask = read_nifti(res.session_dir / "postprocess" / "mask_patient.nii", is_label=True)
    assert 2 not in np.unique(mask.voxels)
    truth = phantom_run.phantom.truth.voxels
    assert np.array_equal(mask.voxels == 4, truth == 4)


def test_refinement_bad_labels_fail(phantom_run):
    (first,) = phantom_run.run()
    atlas_mask = read_nifti(first.session_dir / "segmentation" / "mask_atlas.nii", is_label=True)
    bad = atlas_mask.voxels.copy()
    bad[0, 0, 0] = 3
    refined_dir = phantom_run.root / "refined"
    write_nifti(atlas_mask.with_voxels(bad), refined_dir / "PHANTOM01.nii")
    cfg = phantom_run.config()
    cfg.refined_dir = refined_dir
    (res,) = phantom_run.run(cfg)
    assert res.failed and res.stages["refinement"] == "failed"


def test_command_adapters(phantom_run):
    (res,) = phantom_run.run(phantom_run.config(command=True))
    assert res.status == "completed", res.error
    mask = read_nifti(res.session_dir / "postprocess" / "mask_patient.nii", is_label=True)
    assert segmentation_dice(mask.voxels, phantom_run.phantom.truth.voxels)["ET"] == 1.0
    assert (res.session_dir / "adapters" / "segmentation.invocation.json").is_file()


def test_command_adapter_failure_status(phantom_run):
    cfg = phantom_run.config(command=True)
    cfg.adapters["BiasCorrection"]["params"]["fail"] = True
    (res,) = phantom_run.run(cfg)
    assert res.failed and "status 1" in res.error


def test_radiomics_stage(phantom_run):
    (res,) = phantom_run.run(phantom_run.config(radiomics=True))
    assert res.status == "completed", res.error
    doc = json.loads((res.session_dir / "radiomics" / "features.json").read_text())
    assert len(doc["features"]) == 1930
    # no T1WI series: 5 classes x 93 features are null
    assert sum(v is None for v in doc["features"].values()) == 465
    header = (phantom_run.root / "run" / "features.csv").read_text().splitlines()[0]
    assert header.split(",") == ["session_id"] + feature_names()


def test_atlas_grid(tmp_path):
    run = PhantomRun(tmp_path, with_atlas=True)
    (res,) = run.run(run.config(atlas_path=run.phantom.atlas_path))
    assert res.status == "completed", res.error
    assert _prov(res)["atlas"]["sha256"] == sha256_file(run.phantom.atlas_path)


def test_mock_segmenter_examples():
    zeros = {"GdT1WI": np.zeros((4, 4, 4)), "FLAIR": np.zeros((4, 4, 4))}
    assert not mock_segmenter(zeros).any()
    fl = np.zeros((4, 4, 4))
    fl[1, 1, 1] = 10
    out = mock_segmenter({"FLAIR": fl})
    assert set(np.unique(out)) == {0, 1}
    with pytest.raises(ValueError):
        mock_segmenter({})
