"""Small configurable reconstruction networks for both measurement setups.

Both tasks share the same residual CNN trunk; with all learned weights at
zero the networks reduce exactly to their linear baselines (the masked input
for inpainting, the bilinearly upsampled multispectral image for
pansharpening). Forward passes are pure functions of the parameter dict and
inputs; training mutates a single-owner copy of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DTensor, Tape
from .physics import BlurDownsample, box_kernel

TASKS = ("inpainting", "pansharpening")


@dataclass(frozen=True)
class ReconNetConfig:
    """Architecture knobs for the reconstruction network."""

    task: str
    channels: int                 # image channels C
    hidden_channels: int = 16
    blocks: int = 4
    kernel_size: int = 3
    highpass_size: int = 11       # pansharpening only
    factor: int = 4               # pansharpening upsampling factor j
    padding: str = "reflect"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.channels < 1 or self.hidden_channels < 1 or self.blocks < 1:
            raise ValueError("channels and blocks must be >= 1")
        if self.kernel_size % 2 == 0 or self.highpass_size % 2 == 0:
            raise ValueError("kernel sizes must be odd")

    @property
    def in_channels(self) -> int:
        # pansharpening stacks the upsampled MS bands with a high-passed pan
        return self.channels if self.task == "inpainting" else self.channels + 1


class ReconNet:
    """Residual CNN: linear baseline + learned correction."""

    def __init__(self, config: ReconNetConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        if config.task == "pansharpening":
            self._highpass_blur = BlurDownsample(
                kernel=box_kernel(config.highpass_size), factor=1
            )

    @classmethod
    def create(cls, config: ReconNetConfig, rng: np.random.Generator,
               dtype=np.float32) -> "ReconNet":
        """Initialize with fan-in-scaled uniform conv weights, zero biases."""
        k = config.kernel_size
        params: dict[str, np.ndarray] = {}

        def conv_init(name, cin, cout):
            bound = 1.0 / np.sqrt(cin * k * k)
            params[f"{name}.w"] = rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype)
            params[f"{name}.b"] = np.zeros(cout, dtype=dtype)

        conv_init("conv_in", config.in_channels, config.hidden_channels)
        for i in range(config.blocks):
            conv_init(f"block{i}", config.hidden_channels, config.hidden_channels)
        conv_init("conv_out", config.hidden_channels, config.channels)
        return cls(config, params)

    def param_leaves(self, tape: Tape) -> dict[str, DTensor]:
        return {name: tape.leaf(arr, requires_grad=True) for name, arr in self.params.items()}

    def _trunk(self, tape: Tape, x: DTensor, leaves: dict[str, DTensor]) -> DTensor:
        cfg = self.config
        h = ad.relu(ad.conv2d(x, leaves["conv_in.w"], leaves["conv_in.b"], cfg.padding))
        for i in range(cfg.blocks):
            update = ad.relu(
                ad.conv2d(h, leaves[f"block{i}.w"], leaves[f"block{i}.b"], cfg.padding)
            )
            h = ad.add(h, update)
        return ad.conv2d(h, leaves["conv_out.w"], leaves["conv_out.b"], cfg.padding)

    def forward_inpaint(self, tape: Tape, y: DTensor,
                        leaves: dict[str, DTensor] | None = None) -> DTensor:
        """x_hat = y + CNN(y); zero weights give back the masked input."""
        if self.config.task != "inpainting":
            raise ValueError("model configured for pansharpening")
        if y.values.shape[0] != self.config.channels:
            raise ValueError(
                f"expected {self.config.channels} channels, got {y.values.shape[0]}"
            )
        leaves = leaves if leaves is not None else self.param_leaves(tape)
        return ad.add(y, self._trunk(tape, y, leaves))

    def forward_pansharpen(self, tape: Tape, y_ms: DTensor, y_pan: DTensor,
                           leaves: dict[str, DTensor] | None = None) -> DTensor:
        """x_hat = up(y_ms) + CNN(concat(up(y_ms), highpass(y_pan)))."""
        cfg = self.config
        if cfg.task != "pansharpening":
            raise ValueError("model configured for inpainting")
        if y_ms.values.shape[0] != cfg.channels or y_pan.values.shape[0] != 1:
            raise ValueError(
                f"expected ({cfg.channels}, h, w) MS and (1, H, W) pan, got "
                f"{y_ms.values.shape} and {y_pan.values.shape}"
            )
        if (y_ms.values.shape[1] * cfg.factor != y_pan.values.shape[1]
                or y_ms.values.shape[2] * cfg.factor != y_pan.values.shape[2]):
            raise ValueError(
                f"pan size {y_pan.values.shape[1:]} is not {cfg.factor}x "
                f"the MS size {y_ms.values.shape[1:]}"
            )
        leaves = leaves if leaves is not None else self.param_leaves(tape)
        up = ad.upsample_bilinear(y_ms, cfg.factor)
        highpass = ad.sub(y_pan, ad.linear_op(self._highpass_blur, y_pan))
        features = ad.concat_channels(up, highpass)
        return ad.add(up, self._trunk(tape, features, leaves))

    def forward(self, tape: Tape, *measurements: DTensor,
                leaves: dict[str, DTensor] | None = None) -> DTensor:
        if self.config.task == "inpainting":
            (y,) = measurements
            return self.forward_inpaint(tape, y, leaves)
        y_ms, y_pan = measurements
        return self.forward_pansharpen(tape, y_ms, y_pan, leaves)

    def predict(self, *measurements: np.ndarray) -> np.ndarray:
        """Plain-array reconstruction on a throwaway tape."""
        tape = Tape()
        inputs = tuple(tape.leaf(m) for m in measurements)
        return self.forward(tape, *inputs).values

    def zeroed(self) -> "ReconNet":
        """Copy with all learned weights zero (the linear baseline)."""
        zeros = {name: np.zeros_like(arr) for name, arr in self.params.items()}
        return ReconNet(self.config, zeros)
