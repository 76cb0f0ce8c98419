"""Command-line pipeline: synth, project, restore, eval, pipeline.

Each stage reads and writes plain files (PLY clouds, PFM depth, PGM masks,
key=value manifests) so stages can run standalone or chained. Exit codes:
0 ok, 1 input error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from patchdepth import __version__
from patchdepth.camera import (
    BoundaryMask,
    DepthImage,
    EmptyProjectionError,
    boundary_mask,
    normalize_depth,
    project,
    world_to_camera,
)
from patchdepth.cloud import PlyParseError, VoxelGridParams, parse_ply, voxel_downsample, write_ply
from patchdepth.config import RunConfig
from patchdepth.denoisers import GaussianDenoiser, ZeroDenoiser, fit_gaussian_prior
from patchdepth.imagefiles import read_pfm, read_pgm_mask, write_pfm, write_pgm, write_png_gray16
from patchdepth.manifest import (
    format_record,
    frame_from_record,
    frame_record,
    intrinsics_from_record,
    intrinsics_record,
    read_manifest,
    write_manifest,
)
from patchdepth.metrics import (
    consistency_residual,
    depth_metrics,
    match_instances,
    miou,
    read_instance_masks,
    read_label_map,
)
from patchdepth.patches import build_frame, crop_patch, estimate_normals, orient_normal, sample_patches
from patchdepth.restore import (
    MaskOperator,
    RestorationError,
    RestorationProblem,
    RestorationResult,
    restore_patch,
)
from patchdepth.synth import MasonrySpec, degrade, make_surface, synth_ground_truth, synth_wall
from patchdepth.wire import DenoiserUnavailable, RemoteDenoiser

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


class InputError(Exception):
    pass


# ---------------------------------------------------------------- synth

def cmd_synth(args, config: RunConfig) -> int:
    spec = MasonrySpec(
        surface=args.surface,
        cylinder_radius=args.cylinder_radius,
        extent=(args.extent, args.extent),
    )
    cloud, _ = synth_wall(spec, density=args.density, noise_std=args.noise,
                          dropout=args.dropout, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_ply(cloud, "binary"))
    manifest = out.with_suffix(".manifest")
    write_manifest(manifest, [{
        "kind": "synth", "surface": args.surface,
        "cylinder_radius": args.cylinder_radius if args.cylinder_radius else 0.0,
        "extent": args.extent, "density": args.density, "noise": args.noise,
        "dropout": args.dropout, "seed": args.seed, "points": len(cloud),
        "version": __version__,
    }])
    print(f"wrote {out} ({len(cloud)} points) and {manifest}")
    return EXIT_OK


def _surface_from_manifest(path):
    rec = read_manifest(path)[0]
    if rec.get("kind") != "synth":
        raise InputError(f"{path} is not a synth manifest")
    radius = float(rec["cylinder_radius"])
    spec = MasonrySpec(
        surface=rec["surface"],
        cylinder_radius=radius if radius > 0 else None,
        extent=(float(rec["extent"]), float(rec["extent"])),
    )
    return make_surface(spec, int(rec["seed"]))


# ---------------------------------------------------------------- project

def cmd_project(args, config: RunConfig) -> int:
    cloud_path = Path(args.cloud)
    if not cloud_path.exists():
        raise InputError(f"cloud file not found: {cloud_path}")
    try:
        cloud = parse_ply(cloud_path.read_bytes())
    except PlyParseError as exc:
        raise InputError(f"cannot parse {cloud_path}: {exc}") from exc
    if len(cloud) == 0:
        raise InputError("point cloud is empty")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = config.camera.intrinsics()
    crop = config.patch.crop_params()
    seed = args.seed if args.seed is not None else config.diffusion.seed

    down = voxel_downsample(cloud, VoxelGridParams(config.patch.voxel_size))
    candidates = estimate_normals(down, config.patch.ball_radius)
    frames = []
    for center, normal in candidates:
        normal = orient_normal((center, normal), cloud, intr.d)
        frames.append(build_frame(center, normal))
    if not frames:
        raise InputError("no patch candidates (cloud too sparse for normal estimation)")
    k = min(args.patches, len(frames)) if args.patches else len(frames)
    chosen = sample_patches(frames, k, seed)

    surface = _surface_from_manifest(args.synth_manifest) if args.synth_manifest else None

    records = []
    emitted = 0
    for frame in chosen:
        patch = crop_patch(cloud, frame, crop)
        if patch.empty:
            continue
        pts_cam = world_to_camera(cloud.points[patch.indices], frame, intr.d)
        try:
            img = project(pts_cam, frame, intr)
        except EmptyProjectionError:
            continue
        norm = normalize_depth(img)
        mask = boundary_mask(norm)
        pid = f"{emitted:04d}"
        write_pfm(out_dir / f"depth_{pid}.pfm", norm.values)
        write_pgm(out_dir / f"valid_{pid}.pgm", norm.valid)
        write_pgm(out_dir / f"bbox_{pid}.pgm", mask.grid)
        rec = {"id": pid, **frame_record(frame), "s": crop.side, "t": crop.half_thickness,
               "members": int(patch.indices.size), "seed": seed,
               "zmin": norm.z_min, "zmax": norm.z_max, **intrinsics_record(intr)}
        records.append(rec)
        if surface is not None:
            gt = synth_ground_truth(surface, frame, intr)
            write_pfm(out_dir / f"gt_depth_{pid}.pfm", gt.dense_depth)
            write_pgm(out_dir / f"gt_present_{pid}.pgm", gt.present)
            write_png_gray16(out_dir / f"gt_labels_{pid}.png", gt.labels.astype(np.uint16))
        emitted += 1
    if emitted == 0:
        raise InputError("no patch produced a non-empty projection")
    write_manifest(out_dir / "patches.manifest", records)
    print(f"projected {emitted} patches into {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- degrade

def cmd_degrade(args, config: RunConfig) -> int:
    in_dir = Path(args.depth)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = _load_patch_records(in_dir)
    out_records = []
    for rec in records:
        pid = rec["id"]
        img = _load_depth_image(in_dir, rec)
        problem = degrade(img, keep_fraction=args.keep_fraction, noise_std=args.noise,
                          seed=int(rec["seed"]) + int(pid))
        write_pfm(out_dir / f"degraded_{pid}.pfm", problem.observed)
        write_pgm(out_dir / f"omega_{pid}.pgm", problem.operator.omega)
        write_pgm(out_dir / f"bbox_{pid}.pgm", problem.mask.grid)
        out_records.append({**rec, "sigma_y": problem.sigma_y, "keep": args.keep_fraction})
    write_manifest(out_dir / "degraded.manifest", out_records)
    print(f"degraded {len(out_records)} patches into {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- restore

def _load_patch_records(directory):
    directory = Path(directory)
    for name in ("degraded.manifest", "patches.manifest"):
        path = directory / name
        if path.exists():
            return read_manifest(path)
    raise InputError(f"no manifest found in {directory}")


def _load_depth_image(directory, rec, prefix="depth", valid_prefix="valid"):
    pid = rec["id"]
    values = read_pfm(Path(directory) / f"{prefix}_{pid}.pfm")
    valid = read_pgm_mask(Path(directory) / f"{valid_prefix}_{pid}.pgm")
    return DepthImage(
        values=np.where(valid, values, 0.0),
        valid=valid,
        frame=frame_from_record(rec),
        intrinsics=intrinsics_from_record(rec),
        z_min=float(rec["zmin"]),
        z_max=float(rec["zmax"]),
        normalized=True,
    )


def _load_problem(directory, rec, sigma_y):
    pid = rec["id"]
    directory = Path(directory)
    if (directory / f"degraded_{pid}.pfm").exists():
        img = _load_depth_image(directory, rec, prefix="degraded", valid_prefix="omega")
        sigma = float(rec.get("sigma_y", sigma_y))
    else:
        img = _load_depth_image(directory, rec)
        sigma = sigma_y
    grid = read_pgm_mask(directory / f"bbox_{pid}.pgm")
    rows, cols = np.nonzero(grid)
    rect = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
    mask = BoundaryMask(rect=rect, grid=grid)
    return RestorationProblem(y_tilde=img, operator=MaskOperator(img.valid), mask=mask, sigma_y=sigma)


def _make_denoiser(config: RunConfig, problem):
    kind = config.denoiser.kind
    if kind == "zero":
        return ZeroDenoiser()
    if kind == "gaussian":
        prior = fit_gaussian_prior(problem.observed[problem.operator.omega], problem.sigma_y)
        return GaussianDenoiser(prior, config.diffusion.schedule())
    if kind == "remote":
        if not config.denoiser.endpoint:
            raise InputError("remote denoiser needs --endpoint")
        params = (config.diffusion.T, config.diffusion.beta_start, config.diffusion.beta_end)
        return RemoteDenoiser(config.denoiser.endpoint, schedule_params=params)
    raise InputError(f"unknown denoiser kind {kind!r}")


def _restore_one(directory, rec, config: RunConfig):
    problem = _load_problem(directory, rec, config.restore.sigma_y)
    denoiser = _make_denoiser(config, problem)
    sched = config.diffusion.schedule()
    seed = int(rec["seed"]) + int(rec["id"])
    try:
        return restore_patch(problem, denoiser, sched, mode=config.restore.mode, seed=seed), problem
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()


def _restore_worker(job):
    directory, rec, config = job
    result, problem = _restore_one(directory, rec, config)
    return rec["id"], result, problem


def cmd_restore(args, config: RunConfig) -> int:
    in_dir = Path(args.depth)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = _load_patch_records(in_dir)
    failures = []
    outcomes = []
    jobs = [(in_dir, rec, config) for rec in records]
    if args.workers > 1 and config.denoiser.kind != "remote":
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = {pool.submit(_restore_worker, job): job[1]["id"] for job in jobs}
            for future, pid in futures.items():
                try:
                    outcomes.append(future.result())
                except (RestorationError, DenoiserUnavailable) as exc:
                    failures.append((pid, str(exc)))
                    print(f"patch {pid} failed: {exc}", file=sys.stderr)
        outcomes.sort(key=lambda item: item[0])
    else:
        for job in jobs:
            try:
                outcomes.append(_restore_worker(job))
            except (RestorationError, DenoiserUnavailable) as exc:
                failures.append((job[1]["id"], str(exc)))
                print(f"patch {job[1]['id']} failed: {exc}", file=sys.stderr)
    for pid, result, problem in outcomes:
        write_pfm(out_dir / f"restored_{pid}.pfm", result.y0)
        report = [
            f"patch={pid}",
            f"mode={result.mode}",
            f"seed={result.seed}",
            f"steps={len(result.lambda_trace)}",
            f"consistency_residual={consistency_residual(result, problem)!r}",
            f"wall_clock={result.wall_clock:.3f}",
            "lambda_trace=" + ",".join(repr(v) for v in result.lambda_trace),
            "gamma_trace=" + ",".join(repr(v) for v in result.gamma_trace),
            "residual_trace=" + ",".join(repr(v) for v in result.residual_trace),
        ]
        if result.diagnostics:
            report.append("diagnostics=" + ";".join(result.diagnostics))
        (out_dir / f"report_{pid}.txt").write_text("\n".join(report) + "\n")
    write_manifest(out_dir / "restored.manifest", records)
    done = len(outcomes)
    print(f"restored {done}/{len(records)} patches into {out_dir}"
          + (f" ({len(failures)} failed)" if failures else ""))
    return EXIT_OK if done else EXIT_RUNTIME


# ---------------------------------------------------------------- eval

def _normalize_gt(gt_depth, rec):
    zmin, zmax = float(rec["zmin"]), float(rec["zmax"])
    if zmax - zmin < 1e-9:
        return np.full_like(gt_depth, 0.5)
    return (gt_depth - zmin) / (zmax - zmin)


def cmd_eval(args, config: RunConfig) -> int:
    restored_dir = Path(args.restored)
    gt_dir = Path(args.gt)
    records = read_manifest(restored_dir / "restored.manifest")
    by_id = {rec["id"]: rec for rec in records}
    restored_ids = {p.stem.split("_")[1] for p in restored_dir.glob("restored_*.pfm")}
    gt_ids = {p.stem.split("_")[2] for p in gt_dir.glob("gt_depth_*.pfm")}
    orphans = sorted(restored_ids ^ gt_ids)
    if orphans:
        raise InputError(f"patch id mismatch between restored and gt: {orphans}")
    if not restored_ids:
        raise InputError("nothing to evaluate: no restored patches found")

    lines = []
    mses, psnrs, residuals, degraded_mses = [], [], [], []
    per_patch_ious = []
    for pid in sorted(restored_ids):
        rec = by_id[pid]
        restored = read_pfm(restored_dir / f"restored_{pid}.pfm")
        gt_depth = read_pfm(gt_dir / f"gt_depth_{pid}.pfm")
        gt_present = read_pgm_mask(gt_dir / f"gt_present_{pid}.pgm")
        bbox = read_pgm_mask(gt_dir / f"bbox_{pid}.pgm") if (gt_dir / f"bbox_{pid}.pgm").exists() \
            else read_pgm_mask(restored_dir / f"bbox_{pid}.pgm")
        region = gt_present & bbox
        gt_norm = _normalize_gt(gt_depth, rec)
        mse, psnr = depth_metrics(restored, gt_norm, region)
        mses.append(mse)
        psnrs.append(psnr)
        row = {"id": pid, "mse": mse, "psnr": psnr}

        degraded_dir = Path(args.degraded) if args.degraded else None
        if degraded_dir and (degraded_dir / f"degraded_{pid}.pfm").exists():
            problem = _load_problem(degraded_dir, {**rec}, config.restore.sigma_y)
            res = RestorationResult(y0=restored, mask=problem.mask)
            row["residual"] = consistency_residual(res, problem)
            residuals.append(row["residual"])
            deg_mse, _ = depth_metrics(problem.observed, gt_norm, region)
            degraded_mses.append(deg_mse)
            row["degraded_mse"] = deg_mse

        if args.masks:
            gt_instances = _load_gt_instances(gt_dir, pid)
            pred_instances = read_instance_masks(Path(args.masks), pid)
            ious = match_instances(gt_instances, pred_instances)
            per_patch_ious.append(ious)
            row["bricks"] = len(ious)
            row["mean_iou"] = float(np.mean(ious)) if ious else 0.0
        lines.append(format_record(row))

    summary = {
        "patches": len(lines),
        "mean_mse": float(np.mean(mses)),
        "mean_psnr": float(np.mean([p for p in psnrs if np.isfinite(p)])) if any(np.isfinite(p) for p in psnrs) else float("inf"),
    }
    if residuals:
        summary["max_residual"] = float(np.max(residuals))
        summary["mean_degraded_mse"] = float(np.mean(degraded_mses))
        summary["improved"] = sum(1 for m, d in zip(mses, degraded_mses) if m < d)
    if per_patch_ious:
        summary["miou"] = miou(per_patch_ious)
    report = "\n".join(lines) + "\n# summary\n" + format_record(summary) + "\n"
    out_path = Path(args.report) if args.report else restored_dir / "eval_report.txt"
    out_path.write_text(report)
    print(report, end="")
    return EXIT_OK


def _load_gt_instances(gt_dir, pid):
    gt_dir = Path(gt_dir)
    if (gt_dir / f"masks_{pid}.index").exists():
        return read_instance_masks(gt_dir, pid)
    return read_label_map(gt_dir / f"gt_labels_{pid}.png")


# ---------------------------------------------------------------- pipeline

def cmd_pipeline(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    synth_args = argparse.Namespace(
        surface=args.surface, cylinder_radius=args.cylinder_radius, extent=args.extent,
        density=args.density, noise=args.synth_noise, dropout=args.dropout,
        seed=args.seed if args.seed is not None else config.diffusion.seed,
        out=out_dir / "cloud.ply",
    )
    cmd_synth(synth_args, config)

    project_args = argparse.Namespace(
        cloud=out_dir / "cloud.ply", out=out_dir / "proj", patches=args.patches,
        seed=synth_args.seed, synth_manifest=out_dir / "cloud.manifest",
    )
    cmd_project(project_args, config)

    degrade_args = argparse.Namespace(
        depth=out_dir / "proj", out=out_dir / "degraded",
        keep_fraction=args.keep_fraction, noise=config.restore.sigma_y,
    )
    cmd_degrade(degrade_args, config)

    restore_args = argparse.Namespace(
        depth=out_dir / "degraded", out=out_dir / "restored", workers=args.workers,
    )
    code = cmd_restore(restore_args, config)
    if code != EXIT_OK:
        return code

    eval_args = argparse.Namespace(
        restored=out_dir / "restored", gt=out_dir / "proj", degraded=out_dir / "degraded",
        masks=None, report=out_dir / "eval_report.txt",
    )
    cmd_eval(eval_args, config)

    manifest = [{
        "kind": "pipeline", "seed": synth_args.seed, "config_sha256": config.digest(),
        "version": __version__, "mode": config.restore.mode,
        "denoiser": config.denoiser.kind, "patches": args.patches,
        "keep": args.keep_fraction, "sigma_y": config.restore.sigma_y,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }]
    write_manifest(out_dir / "run.manifest", manifest)
    (out_dir / "config.ini").write_text(config.to_text())
    print(f"pipeline complete in {manifest[0]['elapsed_s']}s; outputs in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="patchdepth", description=__doc__)
    parser.add_argument("--config", help="INI config file (sections patch/camera/diffusion/restore/denoiser)")
    parser.add_argument("--mode", choices=["masked", "vanilla"], help="restoration mode override")
    parser.add_argument("--denoiser", choices=["zero", "gaussian", "remote"], help="denoiser kind override")
    parser.add_argument("--endpoint", help="remote denoiser endpoint (host:port or cmd:...)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic masonry cloud")
    p.add_argument("--out", required=True)
    p.add_argument("--surface", choices=["plane", "cylinder"], default="plane")
    p.add_argument("--cylinder-radius", type=float, default=None, dest="cylinder_radius")
    p.add_argument("--extent", type=float, default=1.6)
    p.add_argument("--density", type=float, default=40000.0)
    p.add_argument("--noise", type=float, default=0.002)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("project", help="crop patches and render depth images")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patches", type=int, default=0, help="number of patches to sample (0 = all)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--synth-manifest", default=None, dest="synth_manifest",
                   help="synth manifest; when given, dense GT is rendered per patch")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("degrade", help="simulate sparsity and noise on projected depth")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-fraction", type=float, default=0.6, dest="keep_fraction")
    p.add_argument("--noise", type=float, default=0.16)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="run the diffusion restoration over a depth directory")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="score restored patches against ground truth")
    p.add_argument("--restored", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--degraded", default=None)
    p.add_argument("--masks", default=None, help="directory of predicted instance masks")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="synth -> project -> degrade -> restore -> eval")
    p.add_argument("--out", required=True)
    p.add_argument("--surface", choices=["plane", "cylinder"], default="plane")
    p.add_argument("--cylinder-radius", type=float, default=None, dest="cylinder_radius")
    p.add_argument("--extent", type=float, default=1.6)
    p.add_argument("--density", type=float, default=40000.0)
    p.add_argument("--synth-noise", type=float, default=0.002, dest="synth_noise")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--patches", type=int, default=8)
    p.add_argument("--keep-fraction", type=float, default=0.6, dest="keep_fraction")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _apply_overrides(args, config: RunConfig) -> RunConfig:
    if args.mode:
        config = config.override("restore", mode=args.mode)
    if args.denoiser:
        config = config.override("denoiser", kind=args.denoiser)
    if args.endpoint:
        config = config.override("denoiser", endpoint=args.endpoint)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config) if args.config else RunConfig()
        config = _apply_overrides(args, config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args, config)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RestorationError, DenoiserUnavailable, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
