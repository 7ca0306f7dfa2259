"""equimage: unsupervised image reconstruction with camera-geometry
equivariance — projective transform groups, differentiable measurement
physics, training losses and pansharpening quality metrics."""

from .groups import (
    AT_INFINITY,
    CameraIntrinsics,
    DegenerateTransformError,
    EulerAngles,
    GroupSpec,
    Homography,
    apply_point,
    camera_rotation_homography,
    compose,
    homography_from_cameras,
    intrinsics_matrix,
    inverse,
    is_perspective,
    max_pan_tilt,
    rotation_matrix,
    sample_transform,
)
from .physics import (
    BlurDownsample,
    InpaintingOperator,
    NoiseModel,
    PanPair,
    PansharpeningOperator,
    SrfOperator,
    apply_noise,
    blur_downsample,
    blur_downsample_adjoint,
    flat_srf,
    gaussian_mtf_kernel,
    inpaint_apply,
    pansharpen_apply,
    random_mask,
    srf_adjoint,
    srf_apply,
)
from .warp import WarpTable, build_warp, warp_adjoint, warp_apply

__version__ = "0.1.0"

__all__ = [
    "AT_INFINITY",
    "BlurDownsample",
    "CameraIntrinsics",
    "DegenerateTransformError",
    "EulerAngles",
    "GroupSpec",
    "Homography",
    "InpaintingOperator",
    "NoiseModel",
    "PanPair",
    "PansharpeningOperator",
    "SrfOperator",
    "WarpTable",
    "apply_noise",
    "apply_point",
    "blur_downsample",
    "blur_downsample_adjoint",
    "build_warp",
    "camera_rotation_homography",
    "compose",
    "flat_srf",
    "gaussian_mtf_kernel",
    "homography_from_cameras",
    "inpaint_apply",
    "intrinsics_matrix",
    "inverse",
    "is_perspective",
    "max_pan_tilt",
    "pansharpen_apply",
    "random_mask",
    "rotation_matrix",
    "sample_transform",
    "srf_adjoint",
    "srf_apply",
    "warp_adjoint",
    "warp_apply",
]
