"""Paired ablation runs: each axis trains the same base model twice with one switch flipped."""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .data import PoseSample
from .model import ModelConfig, RSNet
from .training import TrainConfig, train

# axis -> [(arm name, model config overrides)]
AXES: dict[str, list[tuple[str, dict]]] = {
    "skip": [("skip_on", {"use_skip": True}), ("skip_off", {"use_skip": False})],
    "block": [("layernorm_gelu", {"block_norm": "layernorm", "block_activation": "gelu"}),
              ("batchnorm_relu", {"block_norm": "batchnorm", "block_activation": "relu"})],
    "refinement": [("refine_on", {"use_refinement": True}), ("refine_off", {"use_refinement": False})],
}

CSV_FIELDS = ["axis", "arm", "seed", "num_parameters", "epochs", "train_loss", "mpjpe_mm",
              "pa_mpjpe_mm", "pck_150", "auc"]


def run_axis(axis: str, train_set: Sequence[PoseSample], eval_set: Sequence[PoseSample],
             base: ModelConfig, cfg: TrainConfig, seed: int = 42,
             out_dir: str | Path | None = None) -> list[dict]:
    """Train both arms of ``axis`` from the same seed; one row per arm."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    rows = []
    for arm, overrides in AXES[axis]:
        model = RSNet(replace(base, **overrides), seed=seed)
        arm_dir = None if out_dir is None else Path(out_dir) / axis / arm
        result = train(model, train_set, cfg, eval_set, out_dir=arm_dir)
        last = result.records[-1]
        rows.append({"axis": axis, "arm": arm, "seed": seed, "num_parameters": model.num_parameters(),
                     "epochs": cfg.epochs, "train_loss": last.train_loss, "mpjpe_mm": last.mpjpe_mm,
                     "pa_mpjpe_mm": last.pa_mpjpe_mm, "pck_150": last.pck_150, "auc": last.auc})
    return rows


def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)
