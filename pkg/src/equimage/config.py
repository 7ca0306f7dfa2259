"""Experiment configuration: a documented YAML schema with strict validation.

Top-level keys::

    task: inpainting | pansharpening
    seed: int
    output_dir: path
    dataset:
      source_dir: path          # directory of PNG / multi-frame TIFF images
      tile_size: int            # square tile edge, centre-cropped
      channels: int             # channels kept from each source image
      tile_count: int | null    # how many source images to use (null = all)
      train_fraction: float     # (0, 1), seeded disjoint split
      keep_reference: bool      # keep clean tiles for sense-check metrics
    operator:
      mask_fraction: float      # inpainting: masked pixel fraction p
      factor: int               # pansharpening: downsampling j
      mtf_sigma: float | null   # blur std, default = factor
      kernel_size: int | null   # odd; default smallest odd >= 8 sigma + 1
      srf: "flat" | [floats]    # pan spectral response weights
      noise: {kind: none|gaussian|poisson, sigma: float, gain: float}
    model:
      hidden_channels, blocks, kernel_size, highpass_size: ints
      padding: reflect | zero
    loss:
      preset: mc | mc+tv | mc+ei | mc+tv+ei | sure+ei | supervised | wald
      weights: {mc, tv, ei: floats}
      structural: tv | mse | none
      tv_isotropic: bool
      sure_probes: int
      group: {kind, alpha, pan_tilt_deg, rotation_deg}   # degrees in config
    optimizer:
      lr, decay, epochs, batch_size, weight_decay
    eval:
      metrics: subset of [psnr, ssim, ergas, qnr]

Angles are degrees in the file and radians in code. Unknown keys are
rejected so silent typos cannot change an experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .groups import GROUP_KINDS, GroupSpec
from .losses import LossConfig
from .models import ReconNetConfig
from .physics import NoiseModel, PansharpeningOperator, SrfOperator, flat_srf

LOSS_PRESETS = {
    "mc": ("mc",),
    "mc+tv": ("mc", "tv"),
    "mc+ei": ("mc", "ei"),
    "mc+tv+ei": ("mc", "tv", "ei"),
    "sure+ei": ("sure", "ei"),
    "sure": ("sure",),
    "supervised": ("supervised",),
    "wald": ("wald",),
}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


def _require(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _get(mapping: dict, key: str, default, where: str, kind=None):
    value = mapping.get(key, default)
    if value is None:
        return None
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{key} must be {kind.__name__}, got {value!r}")
    return value


@dataclass(frozen=True)
class DatasetSection:
    source_dir: str
    tile_size: int = 128
    channels: int = 3
    tile_count: int | None = None
    train_fraction: float = 0.8
    keep_reference: bool = True


@dataclass(frozen=True)
class OperatorSection:
    mask_fraction: float = 0.7
    factor: int = 4
    mtf_sigma: float | None = None
    kernel_size: int | None = None
    srf: object = "flat"
    noise_kind: str = "none"
    noise_sigma: float = 0.0
    noise_gain: float = 0.0


@dataclass(frozen=True)
class ModelSection:
    hidden_channels: int = 16
    blocks: int = 4
    kernel_size: int = 3
    highpass_size: int = 11
    padding: str = "reflect"


@dataclass(frozen=True)
class LossSection:
    preset: str = "mc"
    weights: dict = field(default_factory=dict)
    structural: str = "tv"
    tv_isotropic: bool = False
    sure_probes: int = 1
    group_kind: str = "pan_tilt"
    group_alpha: float = 0.1
    pan_tilt_deg: float = 9.0
    rotation_deg: float = 180.0


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-3
    decay: float = 0.9
    epochs: int = 200
    batch_size: int = 1
    weight_decay: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int
    output_dir: str
    dataset: DatasetSection
    operator: OperatorSection
    model: ModelSection
    loss: LossSection
    optimizer: OptimizerSection
    eval_metrics: tuple[str, ...]

    def noise_model(self) -> NoiseModel:
        op = self.operator
        return NoiseModel(kind=op.noise_kind, sigma=op.noise_sigma, gain=op.noise_gain)

    def srf_operator(self) -> SrfOperator:
        if self.operator.srf == "flat":
            return flat_srf(self.dataset.channels)
        return SrfOperator(weights=list(self.operator.srf))

    def pansharpen_operator(self) -> PansharpeningOperator:
        op = PansharpeningOperator.create(
            channels=self.dataset.channels,
            factor=self.operator.factor,
            mtf_sigma=self.operator.mtf_sigma,
            kernel_size=self.operator.kernel_size,
        )
        if self.operator.srf != "flat":
            op = PansharpeningOperator(blur=op.blur, srf=self.srf_operator())
        return op

    def group_spec(self, height: int | None = None, width: int | None = None) -> GroupSpec:
        size = self.dataset.tile_size
        return GroupSpec(
            kind=self.loss.group_kind,
            height=height if height is not None else size,
            width=width if width is not None else size,
            range_fraction=self.loss.group_alpha,
            pan_tilt_max=math.radians(self.loss.pan_tilt_deg),
            rotation_max=math.radians(self.loss.rotation_deg),
        )

    def model_config(self) -> ReconNetConfig:
        return ReconNetConfig(
            task=self.task,
            channels=self.dataset.channels,
            hidden_channels=self.model.hidden_channels,
            blocks=self.model.blocks,
            kernel_size=self.model.kernel_size,
            highpass_size=self.model.highpass_size,
            factor=self.operator.factor,
            padding=self.model.padding,
        )

    def loss_config(self, height: int | None = None, width: int | None = None) -> LossConfig:
        terms = LOSS_PRESETS[self.loss.preset]
        group = self.group_spec(height, width) if "ei" in terms else None
        return LossConfig(
            terms=terms,
            weights=dict(self.loss.weights),
            group=group,
            noise=self.noise_model(),
            structural=self.loss.structural,
            tv_isotropic=self.loss.tv_isotropic,
            sure_probes=self.loss.sure_probes,
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    _require(raw, {"task", "seed", "output_dir", "dataset", "operator", "model",
                   "loss", "optimizer", "eval"}, "config")

    task = raw.get("task")
    if task not in ("inpainting", "pansharpening"):
        raise ConfigError(f"task must be 'inpainting' or 'pansharpening', got {task!r}")
    seed = _get(raw, "seed", 0, "config", int)
    output_dir = raw.get("output_dir")
    if not output_dir:
        raise ConfigError("output_dir is required")

    ds_raw = raw.get("dataset") or {}
    _require(ds_raw, {"source_dir", "tile_size", "channels", "tile_count",
                      "train_fraction", "keep_reference"}, "dataset")
    if "source_dir" not in ds_raw:
        raise ConfigError("dataset.source_dir is required")
    dataset = DatasetSection(
        source_dir=str(ds_raw["source_dir"]),
        tile_size=_get(ds_raw, "tile_size", 128, "dataset", int),
        channels=_get(ds_raw, "channels", 3 if task == "inpainting" else 4, "dataset", int),
        tile_count=_get(ds_raw, "tile_count", None, "dataset", int),
        train_fraction=_get(ds_raw, "train_fraction", 0.8, "dataset", float),
        keep_reference=bool(ds_raw.get("keep_reference", True)),
    )
    if dataset.tile_size < 8:
        raise ConfigError("dataset.tile_size must be at least 8")
    if dataset.channels < 1:
        raise ConfigError("dataset.channels must be >= 1")
    if not (0.0 < dataset.train_fraction < 1.0):
        raise ConfigError("dataset.train_fraction must be in (0, 1)")

    op_raw = raw.get("operator") or {}
    _require(op_raw, {"mask_fraction", "factor", "mtf_sigma", "kernel_size", "srf",
                      "noise"}, "operator")
    noise_raw = op_raw.get("noise") or {}
    _require(noise_raw, {"kind", "sigma", "gain"}, "operator.noise")
    operator = OperatorSection(
        mask_fraction=_get(op_raw, "mask_fraction", 0.7, "operator", float),
        factor=_get(op_raw, "factor", 4, "operator", int),
        mtf_sigma=_get(op_raw, "mtf_sigma", None, "operator", float),
        kernel_size=_get(op_raw, "kernel_size", None, "operator", int),
        srf=op_raw.get("srf", "flat"),
        noise_kind=str(noise_raw.get("kind", "none")),
        noise_sigma=_get(noise_raw, "sigma", 0.0, "operator.noise", float),
        noise_gain=_get(noise_raw, "gain", 0.0, "operator.noise", float),
    )
    if task == "inpainting" and not (0.0 <= operator.mask_fraction < 1.0):
        raise ConfigError("operator.mask_fraction must be in [0, 1)")
    if task == "pansharpening":
        if operator.factor < 1:
            raise ConfigError("operator.factor must be >= 1")
        if dataset.tile_size % operator.factor:
            raise ConfigError(
                f"operator.factor {operator.factor} must divide tile_size {dataset.tile_size}"
            )
    if operator.noise_kind not in ("none", "gaussian", "poisson"):
        raise ConfigError(f"unknown noise kind {operator.noise_kind!r}")
    if operator.srf != "flat":
        if not isinstance(operator.srf, (list, tuple)) or len(operator.srf) != dataset.channels:
            raise ConfigError("operator.srf must be 'flat' or a list with one weight per channel")

    model_raw = raw.get("model") or {}
    _require(model_raw, {"hidden_channels", "blocks", "kernel_size", "highpass_size",
                         "padding"}, "model")
    model = ModelSection(
        hidden_channels=_get(model_raw, "hidden_channels", 16, "model", int),
        blocks=_get(model_raw, "blocks", 4, "model", int),
        kernel_size=_get(model_raw, "kernel_size", 3, "model", int),
        highpass_size=_get(model_raw, "highpass_size", 11, "model", int),
        padding=str(model_raw.get("padding", "reflect")),
    )
    if model.padding not in ("reflect", "zero"):
        raise ConfigError("model.padding must be 'reflect' or 'zero'")

    loss_raw = raw.get("loss") or {}
    _require(loss_raw, {"preset", "weights", "structural", "tv_isotropic", "sure_probes",
                        "group"}, "loss")
    group_raw = loss_raw.get("group") or {}
    _require(group_raw, {"kind", "alpha", "pan_tilt_deg", "rotation_deg"}, "loss.group")
    loss = LossSection(
        preset=str(loss_raw.get("preset", "mc")),
        weights=dict(loss_raw.get("weights") or {}),
        structural=str(loss_raw.get("structural", "tv")),
        tv_isotropic=bool(loss_raw.get("tv_isotropic", False)),
        sure_probes=_get(loss_raw, "sure_probes", 1, "loss", int),
        group_kind=str(group_raw.get("kind", "pan_tilt")),
        group_alpha=_get(group_raw, "alpha", 0.1, "loss.group", float),
        pan_tilt_deg=_get(group_raw, "pan_tilt_deg", 9.0, "loss.group", float),
        rotation_deg=_get(group_raw, "rotation_deg", 180.0, "loss.group", float),
    )
    if loss.preset not in LOSS_PRESETS:
        raise ConfigError(
            f"loss.preset must be one of {sorted(LOSS_PRESETS)}, got {loss.preset!r}"
        )
    if task == "inpainting" and "tv" in LOSS_PRESETS[loss.preset]:
        raise ConfigError("the structural TV term applies to pansharpening only")
    if task == "inpainting" and loss.preset == "wald":
        raise ConfigError("reduced-resolution self-supervision applies to pansharpening only")
    if loss.group_kind not in GROUP_KINDS:
        raise ConfigError(f"loss.group.kind must be one of {GROUP_KINDS}")
    if not (0.0 < loss.group_alpha <= 1.0):
        raise ConfigError("loss.group.alpha must be in (0, 1]")
    if loss.preset == "sure+ei" or loss.preset == "sure":
        if operator.noise_kind == "none":
            raise ConfigError("unbiased-risk training needs a gaussian or poisson noise model")
    unknown_weights = set(loss.weights) - {"mc", "tv", "ei"}
    if unknown_weights:
        raise ConfigError(f"unknown loss weight key(s) {sorted(unknown_weights)}")

    opt_raw = raw.get("optimizer") or {}
    _require(opt_raw, {"lr", "decay", "epochs", "batch_size", "weight_decay"}, "optimizer")
    optimizer = OptimizerSection(
        lr=_get(opt_raw, "lr", 1e-3, "optimizer", float),
        decay=_get(opt_raw, "decay", 0.9, "optimizer", float),
        epochs=_get(opt_raw, "epochs", 200, "optimizer", int),
        batch_size=_get(opt_raw, "batch_size", 1, "optimizer", int),
        weight_decay=_get(opt_raw, "weight_decay", 1e-8, "optimizer", float),
    )
    if optimizer.lr <= 0 or not (0.0 < optimizer.decay <= 1.0):
        raise ConfigError("optimizer.lr must be > 0 and decay in (0, 1]")
    if optimizer.epochs < 0:
        raise ConfigError("optimizer.epochs must be >= 0")
    if optimizer.batch_size != 1:
        raise ConfigError("only batch_size 1 is supported")

    eval_raw = raw.get("eval") or {}
    _require(eval_raw, {"metrics"}, "eval")
    default_metrics = ("psnr", "ssim") if task == "inpainting" else ("psnr", "ssim", "ergas", "qnr")
    metrics = tuple(eval_raw.get("metrics") or default_metrics)
    for m in metrics:
        if m not in ("psnr", "ssim", "ergas", "qnr"):
            raise ConfigError(f"unknown eval metric {m!r}")
    if task == "inpainting" and ("qnr" in metrics or "ergas" in metrics):
        raise ConfigError("qnr/ergas apply to pansharpening only")

    return ExperimentConfig(
        task=task,
        seed=seed,
        output_dir=str(output_dir),
        dataset=dataset,
        operator=operator,
        model=model,
        loss=loss,
        optimizer=optimizer,
        eval_metrics=metrics,
    )
