"""Command-line pipeline: score -> project -> enhance -> dataset -> stats.

Each subcommand fans out over patients with bounded workers, continues past
per-patient failures, and summarizes them at the end (exit 1 if any failed,
2 for invalid configuration or input).  Project/enhance outputs are cached
by content hash, so re-runs with unchanged inputs and config do nothing.
Worker count never changes output bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bundles import (
    BundleError,
    read_bundle,
    read_keyvalue,
    write_bundle,
    write_keyvalue,
)
from .config import ConfigError, PipelineConfig, load_config
from .dataset import PatientRecord, build_manifest, build_split_plan, write_manifest, write_split
from .enhance import MODES, apply_mode
from .ingest import (
    agatston_score,
    gate_slice_coverage,
    load_mask,
    load_volume,
    resample_isotropic,
)
from .projector import DrrImage, ViewPose, render_drr
from .stats import compare_report, compare_runs, load_run_set, report_rows

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

VIEWS = {"pa": [ViewPose.pa()], "la": [ViewPose.la()], "both": [ViewPose.pa(), ViewPose.la()]}


def _hash_bundle(path: Path) -> str:
    h = hashlib.sha256()
    for name in ("header", "voxels.raw"):
        h.update((path / name).read_bytes())
    return h.hexdigest()[:16]


def _discover_patients(input_dir: Path, need_mask: bool) -> list[tuple[str, Path]]:
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory {input_dir} does not exist")
    found = []
    for child in sorted(input_dir.iterdir()):
        if not child.is_dir():
            continue
        if (child / "volume").is_dir():
            if need_mask and not (child / "mask").is_dir():
                continue
            found.append((child.name, child))
    return found


def _fan_out(items, fn, workers: int):
    """Run fn per item with bounded workers; (key, result|exception) pairs
    in deterministic key order."""
    if workers <= 1 or len(items) <= 1:
        results = []
        for item in items:
            try:
                results.append((item[0], fn(item)))
            except Exception as exc:  # noqa: BLE001 - per-patient isolation
                results.append((item[0], exc))
        return results
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [(item[0], pool.submit(fn, item)) for item in items]
        results = []
        for key, fut in futures:
            try:
                results.append((key, fut.result()))
            except Exception as exc:  # noqa: BLE001
                results.append((key, exc))
    return results


def _report_failures(results) -> list[str]:
    failures = []
    for key, res in results:
        if isinstance(res, Exception):
            failures.append(f"{key}: {res}")
    for line in failures:
        print(f"FAILED {line}", file=sys.stderr)
    return failures


def _write_preview(pixels: np.ndarray, path: Path) -> None:
    from PIL import Image

    data = np.round(pixels.astype(np.float64) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


# ---------------------------------------------------------------------------
# score


def cmd_score(args, cfg: PipelineConfig) -> int:
    patients = _discover_patients(args.input, need_mask=True)
    out_dir = Path(args.output) if args.output else None

    def work(item):
        pid, pdir = item
        volume = load_volume(pdir / "volume")
        mask = load_mask(pdir / "mask")
        if not gate_slice_coverage(volume, cfg.ingest.gate_min_slices):
            return ("rejected", volume.shape[2])
        label = agatston_score(volume, mask)
        return ("scored", label)

    results = _fan_out(patients, work, cfg.workers)
    failures = _report_failures(results)

    rows = []
    excluded = []
    for pid, res in results:
        if isinstance(res, Exception):
            continue
        kind, payload = res
        if kind == "rejected":
            excluded.append((pid, f"slice coverage {payload} < {cfg.ingest.gate_min_slices}"))
        else:
            rows.append((pid, payload.agatston, payload.binary))

    table = "patient_id\tagatston\tbinary\n" + "".join(
        f"{pid}\t{score!r}\t{binary}\n" for pid, score, binary in rows
    )
    sys.stdout.write(table)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "scores.tsv").write_text(table, "utf-8")
        (out_dir / "excluded.tsv").write_text(
            "patient_id\treason\n" + "".join(f"{p}\t{r}\n" for p, r in excluded), "utf-8"
        )
        write_keyvalue(
            out_dir / "provenance",
            {"config_hash": cfg.hash(), "gate_min_slices": cfg.ingest.gate_min_slices},
        )
    print(
        f"scored {len(rows)} gated {len(excluded)} failed {len(failures)}",
        file=sys.stderr,
    )
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# project


def _prepare_volume(pdir: Path, cfg: PipelineConfig):
    volume = load_volume(pdir / "volume")
    if not gate_slice_coverage(volume, cfg.ingest.gate_min_slices):
        return None
    target = cfg.ingest.target_spacing or volume.spacing[0]
    volume = resample_isotropic(volume, target)
    if cfg.upsample.enabled:
        from .enhance import upsample_sagittal

        volume = upsample_sagittal(volume, cfg.upsample.to_config())
        volume = resample_isotropic(volume, target)
    return volume


def cmd_project(args, cfg: PipelineConfig) -> int:
    patients = _discover_patients(args.input, need_mask=False)
    out_root = Path(args.output)
    poses = VIEWS[args.view]
    cfg_hash = cfg.hash()

    def work(item):
        pid, pdir = item
        source_hash = _hash_bundle(pdir / "volume")
        todo = []
        for pose in poses:
            cache_key = hashlib.sha256(
                f"{source_hash}:{cfg_hash}:{pose.view}".encode()
            ).hexdigest()[:16]
            dest = out_root / pid / pose.view
            prov_path = dest / "provenance"
            if prov_path.is_file() and (dest / "voxels.raw").is_file():
                if read_keyvalue(prov_path).get("cache_key") == cache_key:
                    continue
            todo.append((pose, dest, cache_key))
        if not todo:
            return ("cached", len(poses))

        volume = _prepare_volume(pdir, cfg)
        if volume is None:
            return ("gated", 0)
        for pose, dest, cache_key in todo:
            img = render_drr(volume, cfg.geometry, pose, workers=1)
            write_bundle(
                dest,
                {"spacing": (cfg.geometry.det_spacing,) * 2, "dtype": "f32", "patient_id": pid},
                img.pixels.T,  # bundle payload is x-fastest
            )
            prov = dict(img.provenance)
            prov["config_hash"] = cfg_hash
            prov["source_hash"] = source_hash
            prov["cache_key"] = cache_key
            write_keyvalue(dest / "provenance", prov)
            if cfg.png_preview:
                _write_preview(img.pixels, dest / "preview.png")
        return ("rendered", len(todo))

    results = _fan_out(patients, work, cfg.workers)
    failures = _report_failures(results)
    tally = {"rendered": 0, "cached": 0, "gated": 0}
    for _, res in results:
        if not isinstance(res, Exception):
            kind, n = res
            tally[kind] += n if kind != "gated" else 1
    print(
        f"rendered {tally['rendered']} cached {tally['cached']} "
        f"gated {tally['gated']} failed {len(failures)}"
    )
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# enhance


def _discover_rasters(root: Path) -> list[tuple[str, Path]]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"DRR directory {root} does not exist")
    found = []
    for pdir in sorted(root.iterdir()):
        if not pdir.is_dir():
            continue
        for view_dir in sorted(pdir.iterdir()):
            if view_dir.name in VIEWS and (view_dir / "voxels.raw").is_file():
                found.append((f"{pdir.name}/{view_dir.name}", view_dir))
    return found


def _load_drr(path: Path) -> DrrImage:
    meta, arr = read_bundle(path)
    prov_path = path / "provenance"
    prov = read_keyvalue(prov_path) if prov_path.is_file() else {}
    return DrrImage(pixels=np.ascontiguousarray(arr.T, dtype=np.float32), provenance=prov)


def cmd_enhance(args, cfg: PipelineConfig) -> int:
    rasters = _discover_rasters(args.input)
    out_root = Path(args.output)
    modes = list(MODES) if args.mode == "all" else [args.mode]
    cfg_hash = cfg.hash()

    def work(item):
        key, src_dir = item
        source_hash = _hash_bundle(src_dir)
        done = cached = 0
        for mode in modes:
            cache_key = hashlib.sha256(f"{source_hash}:{cfg_hash}:{mode}".encode()).hexdigest()[:16]
            dest = out_root / mode / key
            prov_path = dest / "provenance"
            if prov_path.is_file() and (dest / "voxels.raw").is_file():
                if read_keyvalue(prov_path).get("cache_key") == cache_key:
                    cached += 1
                    continue
            img = _load_drr(src_dir)
            out = apply_mode(img, cfg.enhance.to_config(mode))
            write_bundle(
                dest,
                {"spacing": (cfg.geometry.det_spacing,) * 2, "dtype": "f32",
                 "patient_id": img.provenance.get("patient_id", "")},
                out.pixels.T,
            )
            prov = dict(out.provenance)
            prov["mode"] = mode
            prov["config_hash"] = cfg_hash
            prov["source_hash"] = source_hash
            prov["cache_key"] = cache_key
            write_keyvalue(dest / "provenance", prov)
            done += 1
        return (done, cached)

    results = _fan_out(rasters, work, cfg.workers)
    failures = _report_failures(results)
    done = sum(r[0] for _, r in results if not isinstance(r, Exception))
    cached = sum(r[1] for _, r in results if not isinstance(r, Exception))
    print(f"enhanced {done} cached {cached} failed {len(failures)}")
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# dataset


def _read_scores(path: Path) -> list[tuple[str, float, str]]:
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or lines[0] != "patient_id\tagatston\tbinary":
        raise ValueError(f"{path}: bad scores header")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        pid, score, binary = line.split("\t")
        rows.append((pid, float(score), binary))
    return rows


def cmd_dataset(args, cfg: PipelineConfig) -> int:
    scores = _read_scores(Path(args.scores))
    drr_root = Path(args.drrs)
    out_dir = Path(args.output)
    mode = args.mode if args.mode and args.mode != "all" else "original"

    records = []
    for pid, score, binary in scores:
        paths = {}
        for view in ("pa", "la"):
            rel = Path(pid) / view
            if (drr_root / rel / "voxels.raw").is_file():
                paths[view] = str(rel)
        if not paths:
            raise FileNotFoundError(f"{pid}: no DRR bundles under {drr_root}")
        records.append(
            PatientRecord(patient_id=pid, agatston=score, binary=binary, mode=mode, drr_paths=paths)
        )

    manifest = build_manifest(records, root=drr_root)
    seeds = args.seed_list if args.seed_list is not None else list(cfg.dataset.seeds)
    plan = build_split_plan(manifest, k=args.folds or cfg.dataset.folds, seeds=seeds)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, out_dir / "manifest.tsv")
    split_dir = out_dir / "splits"
    split_dir.mkdir(exist_ok=True)
    for seed in plan.seeds:
        for fold in range(plan.n_folds):
            write_split(plan, seed, fold, split_dir / f"seed{seed}_fold{fold}.tsv")
    write_keyvalue(
        out_dir / "provenance",
        {"config_hash": cfg.hash(), "drr_root": str(drr_root), "seeds": ",".join(map(str, plan.seeds)),
         "folds": plan.n_folds, "mode": mode},
    )
    neg, pos = manifest.class_counts()
    print(
        f"manifest {len(manifest.records)} patients (negative {neg}, positive {pos}), "
        f"{len(plan.seeds) * plan.n_folds} split files"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats


def _read_comparison_spec(path: Path) -> list[tuple[str, Path, Path]]:
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or lines[0] != "name\truns_a\truns_b":
        raise ValueError(f"{path}: bad comparison spec header (name\\truns_a\\truns_b)")
    out = []
    base = Path(path).parent
    for line in lines[1:]:
        if not line.strip():
            continue
        name, a, b = line.split("\t")
        out.append((name, base / a, base / b))
    return out


def cmd_stats(args, cfg: PipelineConfig) -> int:
    if args.comparisons:
        spec = _read_comparison_spec(Path(args.comparisons))
    elif args.runs_a and args.runs_b:
        spec = [(args.name or "A vs B", Path(args.runs_a), Path(args.runs_b))]
    else:
        raise ValueError("stats needs --comparisons or both --runs-a and --runs-b")

    comparisons = [compare_runs(name, load_run_set(a), load_run_set(b)) for name, a, b in spec]
    table = compare_report(comparisons, alpha=args.alpha)
    sys.stdout.write(table)
    if args.output:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(table, "utf-8")
        machine = "comparison\tstatistic\tp_value\tsignificant\tmean_auc_a\tmean_auc_b\tn\tmethod\n"
        for c, row in zip(comparisons, report_rows(comparisons, args.alpha)):
            machine += (
                f"{c.name}\t{c.result.statistic!r}\t{c.result.p_value!r}\t"
                f"{int(c.result.p_value < args.alpha and not c.result.degenerate)}\t"
                f"{c.mean_a!r}\t{c.mean_b!r}\t{c.result.n}\t{c.result.method}\n"
            )
        (out_dir / "report.tsv").write_text(machine, "utf-8")
        write_keyvalue(out_dir / "provenance", {"config_hash": cfg.hash(), "alpha": args.alpha})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cacforge",
        description="Calcium-labeled synthetic radiograph dataset pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"cacforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--workers", type=int, default=None, help="parallel patients")

    p = sub.add_parser("score", help="Agatston scores and binary labels per patient")
    common(p)
    p.add_argument("--input", required=True, type=Path, help="cohort dir of volume+mask bundles")
    p.add_argument("--output", type=Path, default=None, help="where to write scores.tsv")

    p = sub.add_parser("project", help="render PA/LA DRRs")
    common(p)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--view", choices=sorted(VIEWS), default="both")
    p.add_argument("--upsample", action="store_true", help="enable pre-projection slice upsampling")

    p = sub.add_parser("enhance", help="apply enhancement modes to rendered DRRs")
    common(p)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--mode", choices=list(MODES) + ["all"], default="all")

    p = sub.add_parser("dataset", help="manifest plus stratified split plan")
    common(p)
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--drrs", required=True, type=Path, help="dir of <patient>/<view> bundles")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--mode", default="original", help="enhancement mode recorded in the manifest")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument(
        "--seed-list",
        type=lambda s: [int(x) for x in s.split(",") if x != ""],
        default=None,
        help="comma-separated split seeds (default 0,1,2,3,4)",
    )

    p = sub.add_parser("stats", help="paired signed-rank comparisons of run sets")
    common(p)
    p.add_argument("--comparisons", type=Path, default=None, help="TSV: name, runs_a, runs_b")
    p.add_argument("--runs-a", type=Path, default=None)
    p.add_argument("--runs-b", type=Path, default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--output", type=Path, default=None)
    return parser


_COMMANDS = {
    "score": cmd_score,
    "project": cmd_project,
    "enhance": cmd_enhance,
    "dataset": cmd_dataset,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"workers": getattr(args, "workers", None)}
        if getattr(args, "upsample", False):
            overrides["upsample.enabled"] = True
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, BundleError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception:  # noqa: BLE001 - last-resort diagnostics
        traceback.print_exc()
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
