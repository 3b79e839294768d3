"""Command line: segment -> detect -> evaluate, plus count regression."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flowers, metrics, raster
from .network import build_network, fcn_spec, random_weights, widths_from_weights
from .tiler import plan_tiles, render_heatmap, segment_full_image
from .weights import read_weights, write_weights

log = logging.getLogger("vineseg")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit status is 1."""


@dataclass
class PipelineConfig:
    model_path: Path | None = None
    patch_size: int = 1216
    margin: int = 60
    detector: flowers.DetectorParams = field(default_factory=flowers.DetectorParams)
    jobs: int = 1


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, type=Path, help="FCNW weight file")
    p.add_argument("--patch", type=int, default=1216, help="patch size in px (multiple of 16, >= 64)")
    p.add_argument("--margin", type=int, default=60, help="discarded border per patch side in px")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")


def _add_detector_args(p: argparse.ArgumentParser) -> None:
    d = flowers.DetectorParams()
    p.add_argument("--rmin", type=int, default=d.r_min)
    p.add_argument("--rmax", type=int, default=d.r_max)
    p.add_argument("--gamma", type=float, default=d.gamma, help="voting arc half-angle in radians")
    p.add_argument("--threshold", type=float, default=d.vote_threshold, help="normalized vote threshold")
    p.add_argument("--occupancy-factor", type=float, default=d.occupancy_factor)
    p.add_argument("--canny-low", type=float, default=d.canny_low)
    p.add_argument("--canny-high", type=float, default=d.canny_high)
    p.add_argument("--canny-sigma", type=float, default=d.canny_sigma)
    p.add_argument("--lcn-window", type=int, default=d.lcn_window)


def _detector(args) -> flowers.DetectorParams:
    try:
        return flowers.DetectorParams(
            r_min=args.rmin, r_max=args.rmax, gamma=args.gamma, vote_threshold=args.threshold,
            occupancy_factor=args.occupancy_factor, canny_low=args.canny_low, canny_high=args.canny_high,
            lcn_window=args.lcn_window, canny_sigma=args.canny_sigma,
        )
    except ValueError as exc:
        raise CliError(f"invalid detector parameters: {exc}") from exc


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        model_path=getattr(args, "model", None),
        patch_size=getattr(args, "patch", 1216),
        margin=getattr(args, "margin", 60),
        detector=_detector(args) if hasattr(args, "rmin") else flowers.DetectorParams(),
        jobs=max(1, getattr(args, "jobs", 1)),
    )


def load_network(path: Path, patch_size: int):
    if not Path(path).is_file():
        raise CliError(f"model file not found: {path}")
    try:
        store = read_weights(path)
        spec = fcn_spec(patch_size, widths=widths_from_weights(store))
        return build_network(spec, store)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_image(path: Path) -> np.ndarray:
    try:
        return raster.load_image(path)
    except OSError as exc:
        raise CliError(f"cannot read image {path}: {exc}") from exc
    except raster.ImageFormatError as exc:
        raise CliError(str(exc)) from exc


def _load_mask(path: Path) -> np.ndarray:
    try:
        return raster.load_mask(path)
    except (OSError, raster.ImageFormatError) as exc:
        raise CliError(f"cannot read mask {path}: {exc}") from exc


def run_segment(net, img: np.ndarray, cfg: PipelineConfig, name: str = "image"):
    h, w = img.shape[:2]
    try:
        plan = plan_tiles(w, h, cfg.patch_size, cfg.margin)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    t0 = time.perf_counter()
    try:
        result = segment_full_image(net, img, plan, jobs=cfg.jobs)
    except ValueError as exc:
        raise CliError(f"{name}: segmentation failed: {exc}") from exc
    elapsed = time.perf_counter() - t0
    log.info("%s: segmented %dx%d in %d tiles, %.2f s", name, w, h, len(plan), elapsed)
    return plan, result, elapsed


def run_detect(img: np.ndarray, mask: np.ndarray, params: flowers.DetectorParams, name: str = "image"):
    if img.shape[:2] != mask.shape:
        raise CliError(f"{name}: image is {img.shape[1]}x{img.shape[0]} but mask is {mask.shape[1]}x{mask.shape[0]}")
    t0 = time.perf_counter()
    circles = flowers.detect_flowers(raster.to_gray(img), mask, params)
    elapsed = time.perf_counter() - t0
    log.info("%s: %d flowers in %.2f s", name, len(circles), elapsed)
    return circles, elapsed


# -- commands --------------------------------------------------------------------

def cmd_segment(args) -> int:
    cfg = _config(args)
    net = load_network(cfg.model_path, cfg.patch_size)
    img = _load_image(args.image)
    plan, result, elapsed = run_segment(net, img, cfg, str(args.image))
    raster.save_mask(args.mask, result.class_mask)
    if args.heatmap:
        raster.save_image(args.heatmap, render_heatmap(result))
    if args.print_plan:
        print(plan)
    print(f"tiles: {len(plan)}  wall time: {elapsed:.2f} s")
    return 0


def cmd_detect(args) -> int:
    params = _detector(args)
    img = _load_image(args.image)
    mask = _load_mask(args.mask)
    circles, elapsed = run_detect(img, mask, params, str(args.image))
    flowers.write_circles(args.out, circles)
    if args.overlay:
        raster.save_image(args.overlay, flowers.draw_circles(img, circles))
    print(f"circles: {len(circles)}  wall time: {elapsed:.2f} s")
    return 0


def _read_counts(path: Path) -> list[tuple[str, float, float]]:
    """Rows ``(image, annotated, estimated)`` from a CSV with those column names."""
    rows = []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "annotated" not in cols or "estimated" not in cols:
            raise CliError(f"{path}:1: header must contain 'annotated' and 'estimated' columns, got {cols}")
        for lineno, rec in enumerate(reader, 2):
            try:
                a, e = float(rec["annotated"]), float(rec["estimated"])
                if not (math.isfinite(a) and math.isfinite(e)):
                    raise ValueError("non-finite count")
            except (TypeError, ValueError) as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from exc
            rows.append((rec.get("image") or f"row{lineno - 1}", a, e))
    return rows


def cmd_evaluate(args) -> int:
    preds = args.pred or []
    truths = args.truth or []
    if len(preds) != len(truths):
        raise CliError("--pred and --truth must be given the same number of times")
    if not preds and not args.counts and not args.pred_mask:
        raise CliError("nothing to evaluate: give --pred/--truth pairs, --counts or --pred-mask")

    out_lines = []
    rows = []
    for pred_path, truth_path in zip(preds, truths):
        try:
            circles = flowers.read_circles(pred_path)
        except OSError as exc:
            raise CliError(f"cannot read {pred_path}: {exc}") from exc
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        try:
            points = raster.read_points(truth_path)
        except OSError as exc:
            raise CliError(f"cannot read {truth_path}: {exc}") from exc
        except raster.AnnotationError as exc:
            raise CliError(str(exc)) from exc
        m = metrics.match_flowers(circles, points)
        rows.append(metrics.ImageRow(Path(pred_path).stem, m.tp, m.fp, m.fn_))

    report = None
    if rows:
        report = metrics.build_report(rows)
        out_lines.append(report.to_text())

    if args.counts:
        counts = _read_counts(args.counts)
        try:
            mean_e, sigma_e = metrics.eoa_stats((e, a) for _, a, e in counts)
        except metrics.DegenerateInputError as exc:
            raise CliError(f"{args.counts}: {exc}") from exc
        out_lines.append(f"{'image':<24}{'Annotated':>10}{'Estimated':>10}{'EOA':>9}")
        for name, a, e in counts:
            out_lines.append(f"{name:<24}{a:>10g}{e:>10g}{metrics.eoa(e, a):>9.1%}")
        out_lines.append(f"mean EOA = {mean_e:.2%}  sigma(EOA) = {sigma_e:.2%}\n")

    if args.pred_mask:
        pred_mask = _load_mask(args.pred_mask)
        if args.truth_mask:
            truth_mask = _load_mask(args.truth_mask)
        elif args.truth_polygons:
            try:
                polys = raster.read_polygons(args.truth_polygons)
            except OSError as exc:
                raise CliError(f"cannot read {args.truth_polygons}: {exc}") from exc
            except raster.AnnotationError as exc:
                raise CliError(str(exc)) from exc
            truth_mask = raster.rasterize_polygons(polys, pred_mask.shape[1], pred_mask.shape[0])
        else:
            raise CliError("--pred-mask needs --truth-mask or --truth-polygons")
        if truth_mask.shape != pred_mask.shape:
            raise CliError(f"mask sizes differ: {pred_mask.shape} vs {truth_mask.shape}")
        pos = metrics.iou(pred_mask, truth_mask, True)
        neg = metrics.iou(pred_mask, truth_mask, False)
        out_lines.append(f"IOU inflorescence = {pos:.2%}  IOU non-inflorescence = {neg:.2%}  mean IOU = {(pos + neg) / 2:.2%}\n")

    text = "\n".join(out_lines)
    sys.stdout.write(text)
    if args.report and report is not None:
        Path(args.report).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_fit(args) -> int:
    counts = _read_counts(args.pairs)
    try:
        fit = metrics.fit_linear((a, e) for _, a, e in counts)
    except metrics.DegenerateInputError as exc:
        raise CliError(f"{args.pairs}: {exc}") from exc
    print(f"slope = {fit.slope:.6f}  intercept = {fit.intercept:.4f}  R^2 = {fit.r_squared:.4f}")
    if args.out:
        Path(args.out).write_text(fit.to_text(), encoding="utf-8")
    return 0


def _read_fit(path: Path) -> metrics.LinearFit:
    try:
        return metrics.LinearFit.from_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read fit file {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    fit = _read_fit(args.fit) if args.fit else None
    net = load_network(cfg.model_path, cfg.patch_size)
    src = Path(args.input)
    if src.is_dir():
        images = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    elif src.is_file():
        images = [src]
    else:
        raise CliError(f"input not found: {src}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # tiles run single-threaded when images already run in parallel
    tile_cfg = PipelineConfig(cfg.model_path, cfg.patch_size, cfg.margin, cfg.detector, jobs=1)

    def process(path: Path):
        try:
            img = _load_image(path)
            _, result, _ = run_segment(net, img, tile_cfg, path.name)
            raster.save_mask(out_dir / f"{path.stem}_mask.png", result.class_mask)
            if args.heatmap:
                raster.save_image(out_dir / f"{path.stem}_heatmap.png", render_heatmap(result))
            # reload the written mask so this path matches segment-then-detect exactly
            mask = raster.load_mask(out_dir / f"{path.stem}_mask.png")
            circles, _ = run_detect(img, mask, cfg.detector, path.name)
            flowers.write_circles(out_dir / f"{path.stem}_circles.csv", circles)
            if args.overlay:
                raster.save_image(out_dir / f"{path.stem}_overlay.png", flowers.draw_circles(img, circles))
            return path, len(circles), None
        except CliError as exc:
            return path, None, str(exc)

    if cfg.jobs > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(process, images))
    else:
        results = [process(p) for p in images]

    failed = 0
    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "count"] + (["corrected"] if fit else []))
        for path, count, err in sorted(results, key=lambda r: r[0].name):
            if err is not None:
                failed += 1
                print(f"error: {err}", file=sys.stderr)
                continue
            row = [path.name, count]
            if fit:
                row.append(f"{metrics.correct_count(fit, count):.2f}")
            w.writerow(row)
            print(f"{path.name}: {count} flowers")
    if failed:
        print(f"{failed} of {len(images)} images failed", file=sys.stderr)
        return 1
    return 0


def cmd_init_weights(args) -> int:
    spec = fcn_spec(width_scale=args.width_scale)
    write_weights(args.out, random_weights(spec, seed=args.seed))
    print(f"wrote seeded random weights to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vineseg", description="Grapevine inflorescence segmentation and flower counting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-stage timings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment an image into inflorescence / background")
    _add_model_args(p)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--mask", required=True, type=Path, help="output mask PNG")
    p.add_argument("--heatmap", type=Path, help="optional probability heat map PNG")
    p.add_argument("--print-plan", action="store_true", help="print the tile table")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("detect", help="extract flowers inside a mask")
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--mask", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output circles CSV")
    p.add_argument("--overlay", type=Path, help="optional overlay PNG")
    _add_detector_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against annotations")
    p.add_argument("--pred", action="append", type=Path, help="circles CSV (repeatable, paired with --truth)")
    p.add_argument("--truth", action="append", type=Path, help="point annotation CSV")
    p.add_argument("--counts", type=Path, help="CSV with image,annotated,estimated columns")
    p.add_argument("--pred-mask", type=Path)
    p.add_argument("--truth-mask", type=Path)
    p.add_argument("--truth-polygons", type=Path)
    p.add_argument("--report", type=Path, help="write the report as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit", help="fit estimated vs annotated counts")
    p.add_argument("pairs", type=Path, help="CSV with annotated,estimated columns")
    p.add_argument("--out", type=Path, help="write the fit as text")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pipeline", help="segment + detect one image or a directory")
    _add_model_args(p)
    _add_detector_args(p)
    p.add_argument("--input", required=True, type=Path, help="image file or directory")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--heatmap", action="store_true", help="also write heat maps")
    p.add_argument("--overlay", action="store_true", help="also write circle overlays")
    p.add_argument("--fit", type=Path, help="fit file used to correct counts")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("init-weights", help="write seeded random weights (for testing the pipeline)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
