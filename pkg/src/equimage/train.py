"""Training loop: batch-size-1 Adam over the configured loss terms, with
per-term CSV logging, final/best checkpoints and strict NaN diagnostics.

Single-threaded by design; all randomness flows from (config, seed) through
named SeedSequence streams, so identical runs produce identical parameter
trajectories bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import OptimizerState, Tape, adam_step
from .checkpoint import save_checkpoint
from .config import LOSS_PRESETS, ExperimentConfig
from .dataset import (
    DatasetManifest,
    load_manifest,
    load_tile_measurement,
    load_tile_reference,
)
from .groups import sample_transform
from .models import ReconNet
from .physics import PanPair


class NumericError(RuntimeError):
    """A loss term became non-finite (CLI exit code 3)."""


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    epochs_run: int


def _model_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x11]))


def _train_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x22]))


def init_model(cfg: ExperimentConfig) -> ReconNet:
    return ReconNet.create(cfg.model_config(), _model_rng(cfg.seed))


def _step_loss(cfg: ExperimentConfig, model: ReconNet, tile_payload, loss_cfg,
               rng: np.random.Generator) -> tuple[Tape, ad.DTensor, dict[str, float],
                                                  dict[str, ad.DTensor]]:
    tape = Tape()
    leaves = model.param_leaves(tape)
    terms = loss_cfg.terms

    if cfg.task == "inpainting":
        y, op, reference = tile_payload
        parts: dict[str, float] = {}
        pieces = []
        if "supervised" in terms:
            term = L.supervised_loss(tape, model, y, reference, leaves)
            pieces.append(term)
            parts["supervised"] = float(term.values)
        elif "sure" in terms:
            if loss_cfg.noise.kind == "poisson":
                term = L.sure_poisson(tape, model, y, op, loss_cfg.noise.gain, rng,
                                      loss_cfg.sure_probes, leaves=leaves)
            else:
                term = L.sure_gaussian(tape, model, y, op, loss_cfg.noise.sigma, rng,
                                       loss_cfg.sure_probes, leaves=leaves)
            pieces.append(ad.scale(term, loss_cfg.weight("mc")))
            parts["sure"] = float(term.values)
        else:
            term = L.mc_loss(tape, model, y, op, leaves)
            pieces.append(ad.scale(term, loss_cfg.weight("mc")))
            parts["mc"] = float(term.values)
        if "ei" in terms:
            transform = sample_transform(loss_cfg.group, rng)
            term = L.ei_loss(tape, model, y, op, transform, leaves)
            pieces.append(ad.scale(term, loss_cfg.weight("ei")))
            parts["ei"] = float(term.values)
        total = pieces[0]
        for piece in pieces[1:]:
            total = ad.add(total, piece)
        parts["total"] = float(total.values)
        return tape, total, parts, leaves

    # pansharpening
    y_ms, y_pan, op, reference = tile_payload
    y = PanPair(ms=y_ms, pan=y_pan)
    if "supervised" in terms:
        total = L.supervised_loss(tape, model, y, reference, leaves)
        parts = {"supervised": float(total.values), "total": float(total.values)}
    elif "wald" in terms:
        (ms_lr, pan_lr), target = L.wald_pair(y_ms, y_pan, op)
        x_hat = model.forward_pansharpen(tape, tape.leaf(ms_lr), tape.leaf(pan_lr), leaves)
        total = ad.mean(ad.square(ad.sub(x_hat, tape.leaf(target))))
        parts = {"wald": float(total.values), "total": float(total.values)}
    else:
        total, parts = L.pansharpen_unsup_loss(tape, model, y, op, None, loss_cfg,
                                               rng, leaves)
    return tape, total, parts, leaves


def _check_finite(parts: dict[str, float], epoch: int, step: int) -> None:
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericError(
                f"loss term {name!r} became non-finite ({value}) at epoch {epoch}, "
                f"step {step}; aborting"
            )


def train(cfg: ExperimentConfig, manifest: DatasetManifest | None = None) -> TrainResult:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        manifest = load_manifest(out_dir / "data" / "manifest.json")

    train_tiles = manifest.split("train")
    if not train_tiles:
        raise ValueError("manifest has no training tiles")

    # load the whole (desk-scale) training split up front; train in float32
    payloads = []
    shared_op = cfg.pansharpen_operator() if cfg.task == "pansharpening" else None
    for tile in train_tiles:
        reference = load_tile_reference(manifest, tile)
        if reference is not None:
            reference = reference.astype(np.float32)
        if cfg.task == "inpainting":
            y, op = load_tile_measurement(manifest, tile, cfg.task)
            payloads.append((y.astype(np.float32), op, reference))
        else:
            y_ms, y_pan = load_tile_measurement(manifest, tile, cfg.task)
            payloads.append((y_ms.astype(np.float32), y_pan.astype(np.float32),
                             shared_op, reference))

    terms = LOSS_PRESETS[cfg.loss.preset]
    if "supervised" in terms and any(p[-1] is None for p in payloads):
        raise ValueError("supervised training needs reference tiles "
                         "(set dataset.keep_reference)")

    loss_cfg = cfg.loss_config(cfg.dataset.tile_size, cfg.dataset.tile_size)
    model = init_model(cfg)
    state = OptimizerState(lr=cfg.optimizer.lr, decay=cfg.optimizer.decay,
                           weight_decay=cfg.optimizer.weight_decay)
    rng = _train_rng(cfg.seed)

    log_path = out_dir / "train_log.csv"
    final_path = out_dir / "final.ckpt"
    best_path = out_dir / "best.ckpt"

    term_names = sorted({"total"} | set(_term_names(cfg.task, terms)))
    best_loss = np.inf
    save_checkpoint(best_path, model.params)

    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr"] + term_names)
        for epoch in range(cfg.optimizer.epochs):
            state.start_epoch(epoch)
            order = rng.permutation(len(payloads))
            sums = {name: 0.0 for name in term_names}
            for step, index in enumerate(order):
                tape, total, parts, leaves = _step_loss(
                    cfg, model, payloads[index], loss_cfg, rng
                )
                _check_finite(parts, epoch, step)
                grads_by_node = tape.backward(total)
                grads = {
                    name: grads_by_node.get(leaf.node_id, np.zeros_like(model.params[name]))
                    for name, leaf in leaves.items()
                }
                adam_step(state, model.params, grads)
                for name, value in parts.items():
                    sums[name] = sums.get(name, 0.0) + value
            means = {name: sums.get(name, 0.0) / len(payloads) for name in term_names}
            writer.writerow([epoch, f"{state.current_lr:.10g}"]
                            + [f"{means[name]:.10g}" for name in term_names])
            if means["total"] < best_loss:
                best_loss = means["total"]
                save_checkpoint(best_path, model.params)

    save_checkpoint(final_path, model.params)
    return TrainResult(final_checkpoint=final_path, best_checkpoint=best_path,
                       log_path=log_path, epochs_run=cfg.optimizer.epochs)


def _term_names(task: str, terms: tuple[str, ...]) -> list[str]:
    if "supervised" in terms:
        return ["supervised"]
    if "wald" in terms:
        return ["wald"]
    names = []
    if "sure" in terms:
        names.append("sure")
    if "mc" in terms and "sure" not in terms:
        names.append("mc")
    if "tv" in terms and task == "pansharpening" and "sure" not in terms:
        names.append("tv")
    if "ei" in terms:
        names.append("ei")
    return names
