"""File-level evaluation: score prediction rasters against a sample
manifest and emit a JSON report plus optional confusion renderings.

Per-tile metrics are kept as numerator/denominator pairs and merged at
the end, so the aggregate is identical no matter how tiles are ordered
or parallelized.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError
from .geotiff import read_geotiff
from .metrics import (LossConfig, confusion_map, masked_mae_parts,
                      render_confusion_png, weighted_masked_mse_parts)
from .sampler import Manifest, make_mask


def evaluate_manifest(manifest_path, pred_dir, cfg: LossConfig = LossConfig(),
                      report_path=None, png_dir=None) -> dict:
    """Score ``<tile_id>_pred.tif`` files in ``pred_dir`` against the
    manifest's canopy tiles. Masks are recomputed from the stored rasters
    exactly as they were during sampling."""
    manifest = Manifest.read(manifest_path)
    pred_dir = Path(pred_dir)
    if png_dir is not None:
        png_dir = Path(png_dir)
        png_dir.mkdir(parents=True, exist_ok=True)

    tiles = []
    totals = {"wmse": [0.0, 0.0], "mmse": [0.0, 0.0], "mmae": [0.0, 0.0]}
    counts_total = {"TP": 0, "FP": 0, "FN": 0, "TN": 0, "INVALID": 0}

    for entry in sorted(manifest.entries, key=lambda e: e.tile_id):
        pred_path = pred_dir / f"{entry.tile_id}_pred.tif"
        if not pred_path.exists():
            raise DataError(f"prediction missing for tile {entry.tile_id}: {pred_path}")
        try:
            chm = read_geotiff(entry.chm_path)
            inputs = [read_geotiff(p) for p in entry.input_paths]
            pred = read_geotiff(pred_path)
        except OSError as exc:
            raise DataError(f"tile {entry.tile_id}: {exc}") from exc

        mask = make_mask(chm, inputs)
        target = chm.values
        w_num, w_den = weighted_masked_mse_parts(pred.values, target, mask, cfg)
        m_num, m_den = weighted_masked_mse_parts(pred.values, target, mask,
                                                 LossConfig(k=0.0, theta=cfg.theta))
        a_num, a_den = masked_mae_parts(pred.values, target, mask, cfg.theta)
        conf, counts = confusion_map(pred.values, target, mask, cfg.theta)

        totals["wmse"][0] += w_num
        totals["wmse"][1] += w_den
        totals["mmse"][0] += m_num
        totals["mmse"][1] += m_den
        totals["mmae"][0] += a_num
        totals["mmae"][1] += a_den
        for key in counts_total:
            counts_total[key] += counts[key]

        tiles.append({
            "tile_id": entry.tile_id,
            "wmse": w_num / w_den if w_den else None,
            "mmse": m_num / m_den if m_den else None,
            "mmae": a_num / a_den if a_den else None,
            "valid_fraction": entry.valid_fraction,
            "confusion": counts,
        })
        if png_dir is not None:
            render_confusion_png(conf, png_dir / f"{entry.tile_id}_confusion.png")

    report = {
        "config": {"k": cfg.k, "theta": cfg.theta},
        # squared meters for the MSEs, meters for the MAE; no percent
        # normalization is applied
        "units": "meters",
        "tile_count": len(tiles),
        "aggregate": {
            name: (num / den if den else None)
            for name, (num, den) in totals.items()
        },
        "confusion": counts_total,
        "tiles": tiles,
    }
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
