"""Command-line entry points: `preditree-train` and `preditree-predict`."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import PredictorError
from .model import ModelConfig
from .predict import predict_to_files
from .train import TrainConfig, train


def _setup_logging():
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger = logging.getLogger("canopy_predictor")
    logger.setLevel(logging.INFO)
    logger.addHandler(handler)


def train_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="preditree-train",
        description="Train the canopy-height prediction model on a sample manifest")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--learning-rate", type=float, default=1e-4)
    parser.add_argument("--weight-decay", type=float, default=0.01)
    parser.add_argument("--k", type=float, default=10.0)
    parser.add_argument("--theta", type=float, default=0.5)
    parser.add_argument("--val-fraction", type=float, default=0.1)
    parser.add_argument("--workers", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--stem-channels", type=int, default=32)
    parser.add_argument("--fused-channels", type=int, default=64)
    parser.add_argument("--unet-base", type=int, default=64)
    parser.add_argument("--unet-depth", type=int, default=4)
    parser.add_argument("--time-fusion", choices=("add", "concat"), default="add")
    parser.add_argument("--bands", type=int, nargs="+", default=[0, 1, 2, 3, 4],
                        help="input band indices kept (R G B NIR NDVI = 0..4)")
    args = parser.parse_args(argv)

    _setup_logging()
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.learning_rate,
                      weight_decay=args.weight_decay, k=args.k,
                      theta=args.theta, val_fraction=args.val_fraction,
                      num_workers=args.workers, seed=args.seed,
                      device=args.device)
    model_cfg = ModelConfig(stem_channels=args.stem_channels,
                            fused_channels=args.fused_channels,
                            unet_base=args.unet_base,
                            unet_depth=args.unet_depth,
                            time_fusion=args.time_fusion,
                            band_mask=tuple(args.bands))
    try:
        summary = train(args.manifest, args.out, cfg, model_cfg)
    except PredictorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"best_val_loss": summary["best_val_loss"],
                      "checkpoint": summary["checkpoint"],
                      "loss_curve": summary["loss_curve"]}))
    return 0


def predict_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="preditree-predict",
        description="Write prediction rasters for every manifest tile")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    _setup_logging()
    try:
        written = predict_to_files(args.checkpoint, args.manifest, args.out,
                                   args.device)
    except PredictorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} prediction rasters to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(train_main())
