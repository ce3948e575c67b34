import shutil

import numpy as np
import pytest
import yaml

from canopy_forge.errors import ConfigError, MalformedFile, StageFailure
from canopy_forge.geotiff import read_geotiff
from canopy_forge.pipeline import (PipelineConfig, config_from_mapping,
                                   run_pipeline, validate_config)
from canopy_forge.sampler import Manifest

from conftest import SCENE


class TestConfigValidation:
    def write(self, tmp_path, mapping):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(mapping))
        return path

    def test_minimal_config_gets_defaults(self, tmp_path):
        cfg = validate_config(self.write(tmp_path, {
            "catalog": "c.jsonl", "work_dir": "w"}))
        assert cfg.cell_size == 0.5
        assert cfg.smoothing_window == 10.0
        assert cfg.min_valid_fraction == 0.5
        assert cfg.k == 10.0
        assert cfg.theta == 0.5

    def test_negative_cell_size(self, tmp_path):
        with pytest.raises(ConfigError, match="cell_size"):
            validate_config(self.write(tmp_path, {
                "catalog": "c", "work_dir": "w", "cell_size": -0.5}))

    def test_unknown_key_strict(self, tmp_path):
        with pytest.raises(ConfigError, match="cellsize"):
            validate_config(self.write(tmp_path, {
                "catalog": "c", "work_dir": "w", "cellsize": 0.5}))

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="work_dir"):
            config_from_mapping({"catalog": "c"})

    def test_overlapping_classes(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"catalog": "c", "work_dir": "w",
                                 "ground_classes": [2, 3],
                                 "vegetation_classes": [3]})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            validate_config(tmp_path / "absent.yaml")


@pytest.fixture()
def pipeline_config(scene_catalog, tmp_path):
    catalog, _scene = scene_catalog
    return PipelineConfig(catalog=str(catalog), work_dir=str(tmp_path / "work"),
                          workers=2)


class TestRunPipeline:
    def test_full_run_summary(self, pipeline_config):
        summary = run_pipeline(pipeline_config)
        assert summary["index"]["records"] == 8
        assert summary["chm"]["tiles"] == 2
        assert summary["mosaic"]["sites"] == 1
        assert summary["harmonize"]["stacks"] == 3
        assert summary["tile"]["kept_tiles"] == 1
        assert summary["tile"]["images"] == 4

    def test_structured_log_lines(self, pipeline_config, caplog):
        import json
        import logging

        with caplog.at_level(logging.INFO, logger="canopy_forge"):
            run_pipeline(pipeline_config)
        events = [json.loads(r.message) for r in caplog.records]
        assert any(e.get("stage") == "chm" and e.get("event") == "tile_done"
                   and "tile" in e for e in events)
        assert any(e.get("stage") == "tile" and e.get("event") == "site_done"
                   for e in events)
        stages = {e["stage"] for e in events if "stage" in e}
        assert {"index", "fetch", "chm", "mosaic", "harmonize", "tile"} <= stages

    def test_expected_sample_contents(self, pipeline_config):
        run_pipeline(pipeline_config)
        work = pipeline_config.work_dir
        manifest = Manifest.read(f"{work}/manifest.jsonl")
        assert manifest.kept_tiles == 1
        entry = manifest.entries[0]
        assert entry.delta_t == [5.5, 3.5, 1.5]
        assert entry.mean_year == pytest.approx(SCENE.mean_cloud_year)

        # canopy height is exact over the block
        chm = read_geotiff(entry.chm_path)
        values = chm.values[chm.valid_mask()]
        np.testing.assert_allclose(values, 10.0, atol=1e-4)

        # expected valid fraction from fixture geometry: the canopy block
        # minus the zero-imagery patch, at 0.5 m cells over a 256^2 tile
        canopy_cells = int((SCENE.canopy[2] - SCENE.canopy[0]) / 0.5) * \
            int((SCENE.canopy[3] - SCENE.canopy[1]) / 0.5)
        zero_cells = int((SCENE.zero_patch[2] - SCENE.zero_patch[0]) / 0.5) * \
            int((SCENE.zero_patch[3] - SCENE.zero_patch[1]) / 0.5)
        assert entry.valid_fraction == pytest.approx(
            (canopy_cells - zero_cells) / 256 ** 2)

        # stack pixel values: constant bands resample to themselves
        stack = read_geotiff(entry.input_paths[0])
        bands = SCENE.bands_by_year[2016.0]
        assert stack.bands[0, 0, 0] == bands["r"]
        assert stack.bands[3, 0, 0] == bands["nir"]

    def test_rerun_skips_all_stages(self, pipeline_config):
        run_pipeline(pipeline_config)
        summary = run_pipeline(pipeline_config)
        assert all(info["skipped"] for info in summary.values())

    def test_determinism_byte_identical_manifests(self, scene_catalog, tmp_path):
        catalog, _ = scene_catalog
        manifests = []
        for name in ("run_a", "run_b"):
            config = PipelineConfig(catalog=str(catalog),
                                    work_dir=str(tmp_path / name), workers=2)
            run_pipeline(config)
            manifests.append((tmp_path / name / "manifest.jsonl").read_bytes())
        assert manifests[0] == manifests[1]

    # stage outputs that vanish when the pipeline dies right after the
    # named stage completed
    _CRASH_POINTS = {
        "fetch": ["chm", "mosaic", "stacks", "samples"],
        "chm": ["mosaic", "stacks", "samples"],
        "harmonize": ["samples"],
    }

    @pytest.mark.parametrize("crash_after", sorted(_CRASH_POINTS))
    def test_crash_resume_after_any_stage(self, scene_catalog, tmp_path,
                                          crash_after):
        from canopy_forge.pipeline import STAGES

        catalog, _ = scene_catalog
        work = tmp_path / "work"
        config = PipelineConfig(catalog=str(catalog), work_dir=str(work),
                                workers=2)
        run_pipeline(config)
        reference = (work / "manifest.jsonl").read_bytes()

        later = STAGES[STAGES.index(crash_after) + 1:]
        for stage in later:
            (work / "markers" / f"{stage}.json").unlink()
        for out in self._CRASH_POINTS[crash_after]:
            shutil.rmtree(work / out)
        (work / "manifest.jsonl").unlink()

        summary = run_pipeline(config)
        assert summary[crash_after]["skipped"] is True
        assert summary["tile"]["skipped"] is False
        assert (work / "manifest.jsonl").read_bytes() == reference

    def test_corrupt_cloud_fails_stage_but_produces_others(self, scene_catalog,
                                                           tmp_path):
        catalog, _ = scene_catalog
        work = tmp_path / "work"
        config = PipelineConfig(catalog=str(catalog), work_dir=str(work),
                                workers=2)
        # fetch stage copies sources; corrupt one copy before the chm stage
        from canopy_forge.pipeline import _Run, _stage_fetch, _stage_index

        run = _Run(config)
        run.work.mkdir(parents=True)
        run.mark_done("index", _stage_index(run))
        run.mark_done("fetch", _stage_fetch(run))
        bad = work / "tiles" / "pointcloud" / "cloud_w.laz"
        bad.write_bytes(bad.read_bytes()[:200])

        with pytest.raises(StageFailure) as info:
            run_pipeline(config)
        assert info.value.stage == "chm"
        assert isinstance(info.value.cause, MalformedFile)
        # the healthy tile was still produced
        assert (work / "chm" / "cloud_e.tif").exists()
        assert not (work / "markers" / "chm.json").exists()

        # repair the corrupt copy from its source and rerun to completion
        import json

        source = next(json.loads(line)["url"]
                      for line in catalog.read_text().splitlines()
                      if json.loads(line)["id"] == "cloud_w")
        shutil.copyfile(source, bad)
        summary = run_pipeline(config)
        assert summary["tile"]["kept_tiles"] == 1
