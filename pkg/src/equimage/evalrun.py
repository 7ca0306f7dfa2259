"""Evaluation over the test split (per-tile metrics CSV + reconstruction
PNGs) and cross-run report aggregation."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import images, metrics
from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .dataset import (
    DatasetManifest,
    load_manifest,
    load_tile_measurement,
    load_tile_reference,
)
from .models import ReconNet

METRIC_COLUMNS = ("psnr", "ssim", "ergas", "qnr", "d_lambda", "d_s")


def _fmt(value) -> str:
    if value is None:
        return ""
    if np.isposinf(value):
        return "inf"
    return f"{value:.8f}"


def _mean_or_none(values: list) -> float | None:
    usable = [v for v in values if v is not None]
    return float(np.mean(usable)) if usable else None


def load_model(cfg: ExperimentConfig, checkpoint_path) -> ReconNet:
    params = load_checkpoint(checkpoint_path)
    model_cfg = cfg.model_config()
    probe = ReconNet.create(model_cfg, np.random.default_rng(0))
    expected = {name: arr.shape for name, arr in probe.params.items()}
    got = {name: arr.shape for name, arr in params.items()}
    if expected != got:
        raise ValueError(
            f"checkpoint {checkpoint_path} does not match the configured model: "
            f"expected {expected}, got {got}"
        )
    return ReconNet(model_cfg, params)


def _tile_metrics(cfg: ExperimentConfig, model: ReconNet, manifest, tile, op):
    report = metrics.MetricReport()
    reference = load_tile_reference(manifest, tile)
    wanted = cfg.eval_metrics

    if cfg.task == "inpainting":
        y, tile_op = load_tile_measurement(manifest, tile, cfg.task)
        x_hat = model.predict(y)
        if reference is not None:
            if "psnr" in wanted:
                report.psnr = metrics.psnr(x_hat, reference)
            if "ssim" in wanted:
                report.ssim = float(np.mean(
                    [metrics.ssim(x_hat[c], reference[c]) for c in range(x_hat.shape[0])]
                ))
        return x_hat, report

    y_ms, y_pan = load_tile_measurement(manifest, tile, cfg.task)
    x_hat = model.predict(y_ms, y_pan)
    if "qnr" in wanted:
        q, d_lambda, d_s = metrics.qnr(x_hat, y_ms, y_pan, op)
        report.qnr, report.d_lambda, report.d_s = q, d_lambda, d_s
    if reference is not None:
        if "psnr" in wanted:
            report.psnr = metrics.psnr(x_hat, reference)
        if "ssim" in wanted:
            report.ssim = float(np.mean(
                [metrics.ssim(x_hat[c], reference[c]) for c in range(x_hat.shape[0])]
            ))
        if "ergas" in wanted:
            report.ergas = metrics.ergas(x_hat, reference, cfg.operator.factor)
    return x_hat, report


def evaluate(cfg: ExperimentConfig, checkpoint_path,
             manifest: DatasetManifest | None = None) -> Path:
    """Reconstruct every test tile, write PNG previews and the metrics CSV
    (one row per tile plus a mean row). Returns the CSV path."""
    out_dir = Path(cfg.output_dir)
    if manifest is None:
        manifest = load_manifest(out_dir / "data" / "manifest.json")
    test_tiles = manifest.split("test")
    if not test_tiles:
        raise ValueError("manifest has no test tiles")

    model = load_model(cfg, checkpoint_path)
    op = cfg.pansharpen_operator() if cfg.task == "pansharpening" else None

    recon_dir = out_dir / "reconstructions"
    recon_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for tile in test_tiles:
        x_hat, report = _tile_metrics(cfg, model, manifest, tile, op)
        images.save_png8(recon_dir / f"{tile.tile_id}.png", x_hat)
        rows.append((tile.tile_id, report))

    csv_path = out_dir / "metrics.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("tile_id",) + METRIC_COLUMNS)
        for tile_id, report in rows:
            writer.writerow([tile_id] + [_fmt(getattr(report, col)) for col in METRIC_COLUMNS])
        means = [
            _mean_or_none([getattr(report, col) for _, report in rows])
            for col in METRIC_COLUMNS
        ]
        writer.writerow(["mean"] + [_fmt(v) for v in means])
    return csv_path


def read_mean_row(csv_path) -> dict[str, str]:
    with Path(csv_path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if row["tile_id"] == "mean":
                return row
    raise ValueError(f"{csv_path} has no mean row")


def report(run_dirs, out_path) -> Path:
    """Aggregate mean metrics of several runs into one CSV + markdown table,
    sorted by QNR (descending) when available, else by PSNR."""
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        csv_path = run_dir / "metrics.csv"
        if not csv_path.is_file():
            raise FileNotFoundError(f"{csv_path} is missing; evaluate the run first")
        mean_row = read_mean_row(csv_path)
        missing = [c for c in METRIC_COLUMNS if c not in mean_row]
        if missing:
            raise ValueError(f"{csv_path} is missing column(s) {missing}")
        rows.append((run_dir.name, mean_row))

    def sort_key(item):
        _, row = item
        qnr = row.get("qnr", "")
        psnr = row.get("psnr", "")
        primary = -float(qnr) if qnr else np.inf
        secondary = -float(psnr) if psnr else np.inf
        return (primary, secondary)

    rows.sort(key=sort_key)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run",) + METRIC_COLUMNS)
        for name, row in rows:
            writer.writerow([name] + [row.get(col, "") for col in METRIC_COLUMNS])

    md_path = out_path.with_suffix(".md")
    header = "| run | " + " | ".join(METRIC_COLUMNS) + " |"
    sep = "|" + "---|" * (len(METRIC_COLUMNS) + 1)
    lines = [header, sep]
    for name, row in rows:
        cells = [row.get(col, "") or "" for col in METRIC_COLUMNS]
        lines.append("| " + " | ".join([name] + cells) + " |")
    md_path.write_text("\n".join(lines) + "\n")
    return out_path
