import csv
import json

import pytest
import torch

from canopy_predictor.data import SampleDataset
from canopy_predictor.errors import CheckpointMismatch, DataError
from canopy_predictor.model import CanopyHeightNet, ModelConfig
from canopy_predictor.train import (TrainConfig, load_checkpoint,
                                    make_optimizer_and_scheduler,
                                    save_checkpoint, train)


class TestDataset:
    def test_loads_four_samples(self, dataset_manifest):
        dataset = SampleDataset(dataset_manifest)
        assert len(dataset) == 4
        images, delta_t, target, mask = dataset[0]
        assert tuple(images.shape) == (3, 5, 64, 64)
        assert tuple(delta_t.shape) == (3,)
        assert delta_t.tolist() == [5.5, 3.5, 1.5]
        assert tuple(target.shape) == (64, 64)
        assert mask.sum() > 0
        assert images.min() >= 0 and images.max() <= 1

    def test_broken_entry_raises_data_error(self, dataset_manifest, tmp_path):
        lines = dataset_manifest.read_text().splitlines()
        broken = json.loads(lines[0])
        broken["chm_path"] = "does/not/exist.tif"
        broken["tile_id"] = "broken"
        (tmp_path / "samples").symlink_to(dataset_manifest.parent / "samples")
        bad_manifest = tmp_path / "manifest.jsonl"
        bad_manifest.write_text("\n".join(lines + [json.dumps(broken)]) + "\n")

        dataset = SampleDataset(bad_manifest)
        with pytest.raises(DataError, match="broken"):
            dataset[len(dataset) - 1]


class TestScheduler:
    def test_plateau_halves_learning_rate_after_patience(self):
        cfg = TrainConfig(learning_rate=1e-4, plateau_factor=0.5,
                          plateau_patience=5)
        model = CanopyHeightNet(ModelConfig(stem_channels=4, fused_channels=8,
                                            unet_base=8, unet_depth=1))
        optimizer, scheduler = make_optimizer_and_scheduler(model, cfg)

        lrs = []
        for _ in range(8):  # validation loss never improves
            scheduler.step(1.0)
            lrs.append(optimizer.param_groups[0]["lr"])
        # five plateau epochs tolerated, the next one halves
        assert lrs[4] == pytest.approx(1e-4)
        assert lrs[5] == pytest.approx(1e-4)
        assert lrs[6] == pytest.approx(5e-5)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_model_config):
        torch.manual_seed(0)
        model = CanopyHeightNet(tiny_model_config)
        model.eval()
        path = tmp_path / "model.pt"
        save_checkpoint(path, model, {"epoch": 3})

        back = load_checkpoint(path)
        images = torch.rand(1, 3, 5, 64, 64)
        delta_t = torch.tensor([[5.0, 3.0, 1.0]])
        with torch.no_grad():
            torch.testing.assert_close(model(images, delta_t),
                                       back(images, delta_t))

    def test_garbage_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path)

    def test_non_model_payload(self, tmp_path):
        path = tmp_path / "other.pt"
        torch.save({"something": 1}, path)
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path)


class TestTrainLoop:
    def test_short_run_writes_artifacts(self, dataset_manifest, tmp_path,
                                        tiny_model_config):
        cfg = TrainConfig(epochs=2, batch_size=2, learning_rate=1e-3,
                          val_fraction=0.25, seed=1)
        summary = train(dataset_manifest, tmp_path, cfg, tiny_model_config)
        assert (tmp_path / "checkpoint.pt").exists()
        assert (tmp_path / "last.pt").exists()
        assert len(summary["history"]) == 2

        with (tmp_path / "loss_curve.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["epoch", "train_loss", "val_loss", "learning_rate"]
        assert len(rows) == 3

    def test_unreadable_tile_skipped_not_fatal(self, dataset_manifest, tmp_path,
                                               tiny_model_config):
        lines = dataset_manifest.read_text().splitlines()
        broken = json.loads(lines[0])
        broken["chm_path"] = "missing.tif"
        broken["tile_id"] = "zz_broken"  # sorts last; lands in its own batch
        (tmp_path / "samples").symlink_to(dataset_manifest.parent / "samples")
        bad_manifest = tmp_path / "manifest.jsonl"
        bad_manifest.write_text("\n".join(lines + [json.dumps(broken)]) + "\n")

        cfg = TrainConfig(epochs=1, batch_size=1, val_fraction=0.0, seed=0)
        summary = train(bad_manifest, tmp_path / "run", cfg, tiny_model_config)
        assert summary["history"][0]["train_loss"] > 0
