"""Training loop: AdamW with plateau-driven learning-rate halving,
atomic checkpoints, and a CSV loss curve.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch
from torch.utils.data import DataLoader, Subset

from .data import SampleDataset
from .errors import CheckpointMismatch, DataError
from .losses import weighted_masked_mse
from .model import CanopyHeightNet, ModelConfig

logger = logging.getLogger("canopy_predictor")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    k: float = 10.0
    theta: float = 0.5
    val_fraction: float = 0.1
    num_workers: int = 0
    seed: int = 0
    device: str = "cpu"


def make_optimizer_and_scheduler(model: CanopyHeightNet, cfg: TrainConfig):
    """AdamW plus plateau-driven halving, exactly as the training loop
    wires them (factored out so tests can exercise the schedule)."""
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=cfg.plateau_factor, patience=cfg.plateau_patience)
    return optimizer, scheduler


def save_checkpoint(path, model: CanopyHeightNet, extra: dict | None = None):
    """Write atomically (temp + rename) so a crash never leaves a torn file."""
    path = Path(path)
    payload = {
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        **(extra or {}),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, map_location="cpu") -> CanopyHeightNet:
    try:
        payload = torch.load(Path(path), map_location=map_location,
                             weights_only=False)
    except Exception as exc:
        raise CheckpointMismatch(f"cannot load checkpoint {path}: {exc}") from exc
    if "model_config" not in payload or "state_dict" not in payload:
        raise CheckpointMismatch(f"{path} is not a model checkpoint")
    model = CanopyHeightNet(ModelConfig.from_dict(payload["model_config"]))
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointMismatch(str(exc)) from exc
    model.eval()
    return model


def _epoch_pass(model, loader, optimizer, cfg: TrainConfig, device, train: bool):
    model.train(train)
    total = 0.0
    batches = 0
    skipped = 0
    for batch in _tolerant_iter(loader):
        if batch is None:
            skipped += 1
            continue
        images, delta_t, target, mask = (t.to(device) for t in batch)
        with torch.set_grad_enabled(train):
            pred = model(images, delta_t)[:, 0]
            loss = weighted_masked_mse(pred, target, mask, cfg.k, cfg.theta)
            if train:
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        total += float(loss.detach())
        batches += 1
    if skipped:
        logger.warning("skipped %d unreadable batches", skipped)
    return total / max(batches, 1)


def _tolerant_iter(loader):
    """Yield batches, mapping per-tile DataError to a skip marker."""
    iterator = iter(loader)
    while True:
        try:
            yield next(iterator)
        except StopIteration:
            return
        except DataError as exc:
            logger.warning(json.dumps({"event": "tile_skipped", "error": str(exc)}))
            yield None


def train(manifest_path, out_dir, cfg: TrainConfig = TrainConfig(),
          model_config: ModelConfig = ModelConfig()) -> dict:
    """Optimize the weighted masked MSE over manifest samples.

    Writes ``checkpoint.pt`` (best validation loss) plus ``last.pt`` and a
    per-epoch ``loss_curve.csv`` under ``out_dir``; returns a summary with
    the loss history.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    device = torch.device(cfg.device)
    torch.manual_seed(cfg.seed)

    dataset = SampleDataset(manifest_path)
    if len(dataset) == 0:
        raise DataError(f"manifest {manifest_path} has no samples")
    n_val = min(int(len(dataset) * cfg.val_fraction), len(dataset) - 1)
    generator = torch.Generator().manual_seed(cfg.seed)
    order = torch.randperm(len(dataset), generator=generator).tolist()
    val_set = Subset(dataset, order[:n_val]) if n_val else None
    train_set = Subset(dataset, order[n_val:])

    train_loader = DataLoader(train_set, batch_size=cfg.batch_size, shuffle=True,
                              num_workers=cfg.num_workers, generator=generator)
    val_loader = (DataLoader(val_set, batch_size=cfg.batch_size,
                             num_workers=cfg.num_workers)
                  if val_set else None)

    model = CanopyHeightNet(model_config).to(device)
    optimizer, scheduler = make_optimizer_and_scheduler(model, cfg)

    history = []
    best_val = float("inf")
    curve_path = out_dir / "loss_curve.csv"
    with curve_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "val_loss", "learning_rate"])
        for epoch in range(1, cfg.epochs + 1):
            train_loss = _epoch_pass(model, train_loader, optimizer, cfg,
                                     device, train=True)
            if val_loader:
                val_loss = _epoch_pass(model, val_loader, optimizer, cfg,
                                       device, train=False)
            else:
                val_loss = train_loss
            scheduler.step(val_loss)
            lr = optimizer.param_groups[0]["lr"]
            writer.writerow([epoch, f"{train_loss:.6f}", f"{val_loss:.6f}",
                             f"{lr:.2e}"])
            handle.flush()
            history.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "lr": lr})
            logger.info(json.dumps(history[-1]))

            save_checkpoint(out_dir / "last.pt", model, {"epoch": epoch})
            if val_loss < best_val:
                best_val = val_loss
                save_checkpoint(out_dir / "checkpoint.pt", model,
                                {"epoch": epoch, "val_loss": val_loss})

    return {"epochs": cfg.epochs, "best_val_loss": best_val,
            "history": history, "checkpoint": str(out_dir / "checkpoint.pt"),
            "loss_curve": str(curve_path)}
