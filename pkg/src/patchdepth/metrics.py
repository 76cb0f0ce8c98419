"""Quantitative evaluation: brick IoU/mIoU, prompts, depth error, residuals.

mIoU aggregation follows the two-level rule: mean over bricks within each
patch first, then an unweighted mean over patches (patches without annotated
bricks are excluded). A global brick pool is available behind a flag but off
by default. The 0.3 IoU threshold used for display overlays is never applied
to the metric itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from patchdepth.imagefiles import read_pgm_mask, read_png_gray, write_pgm

DISPLAY_IOU_THRESHOLD = 0.3  # overlay filtering only, never metric filtering


@dataclass(frozen=True)
class InstanceMask:
    grid: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=bool))
        if not self.grid.any():
            raise ValueError("instance mask must contain at least one pixel")


@dataclass(frozen=True)
class PromptSet:
    positives: tuple  # ((u, v), ...) pixel coordinates, one per instance
    negatives: tuple = ()


def iou(gt: InstanceMask, pred: InstanceMask) -> float:
    """Intersection over union of two instance masks."""
    if gt.grid.shape != pred.grid.shape:
        raise ValueError(f"mask shapes differ: {gt.grid.shape} vs {pred.grid.shape}")
    inter = np.logical_and(gt.grid, pred.grid).sum()
    union = np.logical_or(gt.grid, pred.grid).sum()
    return float(inter) / float(union)


def miou(per_patch, pool_bricks: bool = False) -> float:
    """Mean IoU over bricks within each patch, then over patches.

    per_patch is a sequence of per-brick IoU sequences, one entry per patch;
    empty patches are skipped. pool_bricks=True averages one global brick pool
    instead (the alternative aggregation reading, off by default).
    """
    non_empty = [list(p) for p in per_patch if len(p) > 0]
    if not non_empty:
        raise ValueError("no annotated bricks in any patch")
    if pool_bricks:
        flat = [v for p in non_empty for v in p]
        return float(np.mean(flat))
    return float(np.mean([np.mean(p) for p in non_empty]))


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1))


def gen_prompts(gt_instances, mode: str = "pos", seed: int = 0) -> PromptSet:
    """Pixel prompts from GT instances: one positive per instance at its
    rounded centroid, plus (mode "pos_neg") one random pixel outside every
    instance. Deterministic per seed.

    Prompt coordinates are (u, v) = (column, row).
    """
    if mode not in ("pos", "pos_neg"):
        raise ValueError(f"mode must be 'pos' or 'pos_neg', got {mode!r}")
    instances = list(gt_instances)
    if not instances:
        raise ValueError("no GT instances to prompt from")
    positives = []
    union = np.zeros_like(instances[0].grid, dtype=bool)
    for inst in instances:
        rows, cols = np.nonzero(inst.grid)
        positives.append((_round_half_away(cols.mean()), _round_half_away(rows.mean())))
        union |= inst.grid
    negatives = ()
    if mode == "pos_neg":
        outside = np.flatnonzero(~union.ravel())
        if outside.size == 0:
            raise ValueError("no pixel outside the annotated regions")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x9E])))
        flat = int(outside[rng.integers(outside.size)])
        v, u = divmod(flat, union.shape[1])
        negatives = ((u, v),)
    return PromptSet(positives=tuple(positives), negatives=negatives)


def depth_metrics(restored, gt_dense, region):
    """(MSE, PSNR) over a pixel region, in the grids' (normalized) units.

    PSNR = 10*log10(1/MSE); a perfect match reports infinite PSNR.
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != np.shape(restored) or region.shape != np.shape(gt_dense):
        raise ValueError("shape mismatch between grids and region")
    if not region.any():
        raise ValueError("empty evaluation region")
    diff = np.asarray(restored, dtype=np.float64)[region] - np.asarray(gt_dense, dtype=np.float64)[region]
    mse = float(np.mean(diff * diff))
    psnr = float("inf") if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return mse, psnr


def match_instances(gt_instances, pred_instances):
    """Per-GT-brick IoU list against a set of predicted masks.

    When every GT label also appears among the predictions, masks pair by
    label; otherwise each GT brick greedily takes its best-overlapping unused
    prediction. Bricks with no match score 0.
    """
    gt_list = list(gt_instances)
    pred_list = list(pred_instances)
    if not gt_list:
        return []
    pred_labels = {p.label for p in pred_list}
    if all(g.label in pred_labels for g in gt_list):
        by_label = {p.label: p for p in pred_list}
        return [iou(g, by_label[g.label]) for g in gt_list]
    scores = np.zeros((len(gt_list), len(pred_list)))
    for i, g in enumerate(gt_list):
        for j, p in enumerate(pred_list):
            if g.grid.shape == p.grid.shape and np.logical_and(g.grid, p.grid).any():
                scores[i, j] = iou(g, p)
    out = [0.0] * len(gt_list)
    used = set()
    order = np.dstack(np.unravel_index(np.argsort(-scores, axis=None), scores.shape))[0]
    assigned = set()
    for i, j in order:
        if scores[i, j] <= 0:
            break
        if i in assigned or j in used:
            continue
        out[i] = float(scores[i, j])
        assigned.add(int(i))
        used.add(int(j))
    return out


def consistency_residual(result, problem) -> float:
    """Max absolute deviation from the observation over the observed set."""
    omega = problem.operator.omega
    if result.y0.shape != omega.shape:
        raise ValueError("result and problem shapes differ")
    if not omega.any():
        return 0.0
    return float(np.abs(result.y0[omega] - problem.observed[omega]).max())


# ---------------------------------------------------------------- mask files

def write_instance_masks(directory, patch_id: str, instances) -> None:
    """One 0/255 PGM per instance plus an index file mapping labels to files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for inst in instances:
        name = f"mask_{patch_id}_{inst.label:04d}.pgm"
        write_pgm(directory / name, inst.grid)
        lines.append(f"{inst.label} {name}")
    (directory / f"masks_{patch_id}.index").write_text("\n".join(lines) + "\n")


def read_instance_masks(directory, patch_id: str):
    """Read masks back from an index file, or fall back to a 16-bit PNG label map."""
    directory = Path(directory)
    index = directory / f"masks_{patch_id}.index"
    if index.exists():
        out = []
        for line in index.read_text().splitlines():
            if not line.strip():
                continue
            label, name = line.split(maxsplit=1)
            out.append(InstanceMask(grid=read_pgm_mask(directory / name), label=int(label)))
        return out
    png = directory / f"labels_{patch_id}.png"
    if png.exists():
        return read_label_map(png)
    raise FileNotFoundError(f"no mask index or label map for patch {patch_id} in {directory}")


def read_label_map(path):
    """Split a packed label image (PNG, label per pixel, 0 = background)."""
    labels = read_png_gray(path)
    return [
        InstanceMask(grid=labels == lab, label=int(lab))
        for lab in np.unique(labels[labels > 0])
    ]
