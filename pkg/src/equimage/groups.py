"""Pinhole-camera homographies and the subgroups used for equivariant training.

A homography is a 3x3 invertible matrix acting on homogeneous image
coordinates (u, v, 1). All transforms here are built from camera intrinsics
and a relative 3D rotation of the image plane, T = K' R K^-1, which covers
shifts, in-plane rotation, zoom, similarity, affine and the genuinely
perspective pan/tilt motions. Values are immutable after construction and
safe to share across threads; sampling takes a caller-owned RNG stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Homogeneous third coordinates below this magnitude count as "at infinity"
# (well below interpolation precision in normalized image coordinates).
EPS_W = 1e-9

# Condition number above which a transform is rejected as degenerate; keeps
# sampled warps away from singularities and interpolation blow-up.
CONDITION_LIMIT = 1e12

_NORMALIZE_EPS = 1e-12

GROUP_KINDS = (
    "shift",
    "rotation",
    "scale",
    "similarity",
    "affine",
    "pan_tilt",
    "perspective",
)

# Full-range parameter bounds, scaled linearly by GroupSpec.range_fraction.
MAX_PAN_TILT_RAD = math.radians(9.0)
MAX_ROTATION_RAD = math.pi
MIN_FOCAL_RATIO = 0.5      # f / f' lower bound (zoom never shrinks content)
MIN_STRETCH_RATIO = 0.5    # m' / m lower bound per axis
MAX_SKEW_FRACTION = 0.5    # |s'| <= fraction * f
BASE_FOCAL = 100.0


class DegenerateTransformError(ValueError):
    """Raised when a homography is numerically singular."""


class _AtInfinity:
    """Marker for points mapped onto the line at infinity (w ~ 0).

    A value, not an error: perspective transforms legitimately send finite
    points there (the horizon / vanishing line).
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AtInfinity"


AT_INFINITY = _AtInfinity()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal length f (px), pixel scales m_x/m_y,
    skew s (px) and principal point (u0, v0) in pixels."""

    f: float
    m_x: float = 1.0
    m_y: float = 1.0
    s: float = 0.0
    u0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        if not (self.f > 0 and self.m_x > 0 and self.m_y > 0):
            raise ValueError(
                f"focal length and pixel scales must be positive, got "
                f"f={self.f}, m_x={self.m_x}, m_y={self.m_y}"
            )
        for name in ("f", "m_x", "m_y", "s", "u0", "v0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"intrinsics field {name} must be finite")


@dataclass(frozen=True)
class EulerAngles:
    """Rotation angles (radians) about the camera x, y, z axes, each in
    (-pi, pi]."""

    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0

    def __post_init__(self):
        for name in ("theta_x", "theta_y", "theta_z"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
            if not (-math.pi < val <= math.pi):
                raise ValueError(f"{name}={val} outside (-pi, pi]")


def intrinsics_matrix(k: CameraIntrinsics) -> np.ndarray:
    """Upper-triangular intrinsics matrix [[f*m_x, s, u0], [0, f*m_y, v0],
    [0, 0, 1]]."""
    return np.array(
        [
            [k.f * k.m_x, k.s, k.u0],
            [0.0, k.f * k.m_y, k.v0],
            [0.0, 0.0, 1.0],
        ]
    )


def intrinsics_inverse(k: CameraIntrinsics) -> np.ndarray:
    """Closed-form inverse of the intrinsics matrix.

    Keeps the bottom row exactly [0, 0, 1] so affine transforms test as
    affine with zero tolerance.
    """
    fx = k.f * k.m_x
    fy = k.f * k.m_y
    return np.array(
        [
            [1.0 / fx, -k.s / (fx * fy), (k.s * k.v0 - k.u0 * fy) / (fx * fy)],
            [0.0, 1.0 / fy, -k.v0 / fy],
            [0.0, 0.0, 1.0],
        ]
    )


def rotation_matrix(a: EulerAngles) -> np.ndarray:
    """3D rotation R_z(theta_z) @ R_y(theta_y) @ R_x(theta_x)."""
    cx, sx = math.cos(a.theta_x), math.sin(a.theta_x)
    cy, sy = math.cos(a.theta_y), math.sin(a.theta_y)
    cz, sz = math.cos(a.theta_z), math.sin(a.theta_z)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class Homography:
    """3x3 invertible transform of homogeneous image coordinates.

    Stored normalized to m[2][2] == 1 whenever that entry is nonzero;
    otherwise kept as-is with ``normalized=False``. The matrix is read-only.
    """

    m: np.ndarray
    normalized: bool = field(default=True)

    def __post_init__(self):
        mat = np.asarray(self.m, dtype=np.float64)
        if mat.shape != (3, 3):
            raise ValueError(f"homography matrix must be 3x3, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("homography matrix must be finite")
        det = np.linalg.det(mat)
        if det == 0.0 or not math.isfinite(det):
            raise DegenerateTransformError(f"homography is singular (det={det})")
        if abs(mat[2, 2]) > _NORMALIZE_EPS:
            mat = mat / mat[2, 2]
            object.__setattr__(self, "normalized", True)
        else:
            mat = mat.copy()
            object.__setattr__(self, "normalized", False)
        mat.setflags(write=False)
        object.__setattr__(self, "m", mat)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def homography_from_cameras(
    k: CameraIntrinsics, k2: CameraIntrinsics, a: EulerAngles
) -> Homography:
    """Transform between two views of the same camera centre: K' R' K^-1."""
    return Homography(intrinsics_matrix(k2) @ rotation_matrix(a) @ intrinsics_inverse(k))


def camera_rotation_homography(k: CameraIntrinsics, a: EulerAngles) -> Homography:
    """Pure 3D camera rotation conjugated by the intrinsics: K R K^-1.

    This conjugation is a group isomorphism onto SO(3); composing two such
    homographies equals the homography of the composed rotation.
    """
    return homography_from_cameras(k, k, a)


def compose(h1: Homography, h2: Homography) -> Homography:
    """Matrix product h1 @ h2: apply ``h2`` first, then ``h1``."""
    return Homography(h1.m @ h2.m)


def inverse(h: Homography) -> Homography:
    """Matrix inverse, renormalized. Rejects nearly singular transforms."""
    cond = np.linalg.cond(h.m)
    if not math.isfinite(cond) or cond > CONDITION_LIMIT:
        raise DegenerateTransformError(
            f"homography condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    return Homography(np.linalg.inv(h.m))


def apply_point(h: Homography, p):
    """Apply to a finite point (u, v); returns (u', v') or AT_INFINITY when
    the homogeneous third coordinate falls below EPS_W."""
    u, v = p
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError(f"point must be finite, got {p}")
    q = h.m @ np.array([u, v, 1.0])
    if abs(q[2]) < EPS_W:
        return AT_INFINITY
    return (q[0] / q[2], q[1] / q[2])


def is_perspective(h: Homography, eps: float = 1e-12) -> bool:
    """True iff the transform maps some points at infinity to finite points,
    i.e. the bottom row has a nonzero (u, v) part.

    For camera-rotation homographies this is exactly theta_x != 0 or
    theta_y != 0; purely affine transforms return False.
    """
    if not h.normalized:
        return True
    return abs(h.m[2, 0]) > eps or abs(h.m[2, 1]) > eps


def max_pan_tilt(f: float, v0: float) -> float:
    """Largest pan/tilt angle (radians) that keeps the horizon out of frame:
    arctan(f / v0).

    Monotone in f: an orthographic camera (f -> inf) never sees the horizon.
    """
    if not (f > 0 and v0 > 0):
        raise ValueError(f"need f > 0 and v0 > 0, got f={f}, v0={v0}")
    return math.atan2(f, v0)


@dataclass(frozen=True)
class GroupSpec:
    """Which subgroup to sample from and how far from the identity.

    ``range_fraction`` (alpha) scales every parameter interval linearly;
    shift bounds additionally scale with the image size. Angles are radians
    internally (the experiment config stores degrees).
    """

    kind: str
    height: int
    width: int
    range_fraction: float = 0.1
    pan_tilt_max: float = MAX_PAN_TILT_RAD
    rotation_max: float = MAX_ROTATION_RAD
    min_focal_ratio: float = MIN_FOCAL_RATIO
    min_stretch_ratio: float = MIN_STRETCH_RATIO
    skew_fraction: float = MAX_SKEW_FRACTION

    def __post_init__(self):
        if self.kind not in GROUP_KINDS:
            raise ValueError(f"unknown group kind {self.kind!r}; choose from {GROUP_KINDS}")
        if not (0.0 < self.range_fraction <= 1.0):
            raise ValueError(f"range_fraction must be in (0, 1], got {self.range_fraction}")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")

    def base_intrinsics(self) -> CameraIntrinsics:
        """Reference camera: f = 100 px, principal point at the image centre."""
        return CameraIntrinsics(f=BASE_FOCAL, u0=self.width / 2.0, v0=self.height / 2.0)


def _clip_angle(value: float) -> float:
    # keep uniform draws inside the open-left interval required by EulerAngles
    return float(np.clip(value, -math.pi + 1e-15, math.pi))


def sample_transform(spec: GroupSpec, rng: np.random.Generator) -> Homography:
    """Draw one group element uniformly from the alpha-scaled parameter box.

    Fixed parameters take their identity values. Draws whose matrices are
    numerically degenerate (condition number above CONDITION_LIMIT) are
    rejected and redrawn.
    """
    for _ in range(100):
        h = _sample_once(spec, rng)
        if np.linalg.cond(h.m) <= CONDITION_LIMIT:
            return h
    raise DegenerateTransformError(
        f"could not sample a well-conditioned {spec.kind} transform in 100 draws"
    )


def _sample_once(spec: GroupSpec, rng: np.random.Generator) -> Homography:
    alpha = spec.range_fraction
    k = spec.base_intrinsics()
    kind = spec.kind

    du = dv = 0.0
    if kind in ("shift", "similarity", "affine", "perspective"):
        du = rng.uniform(-alpha * spec.width / 2.0, alpha * spec.width / 2.0)
        dv = rng.uniform(-alpha * spec.height / 2.0, alpha * spec.height / 2.0)

    theta_z = 0.0
    if kind in ("rotation", "similarity", "affine", "perspective"):
        bound = alpha * spec.rotation_max
        theta_z = _clip_angle(rng.uniform(-bound, bound))

    f2 = k.f
    if kind in ("scale", "similarity", "affine", "perspective"):
        # focal ratio f / f' in [1 - alpha * (1 - min), 1]: zooms, never shrinks
        lo = 1.0 - alpha * (1.0 - spec.min_focal_ratio)
        f2 = k.f / rng.uniform(lo, 1.0)

    m_x2 = m_y2 = 1.0
    s2 = 0.0
    if kind == "affine":
        lo = 1.0 - alpha * (1.0 - spec.min_stretch_ratio)
        m_x2 = rng.uniform(lo, 1.0)
        m_y2 = rng.uniform(lo, 1.0)
        s2 = rng.uniform(-alpha * spec.skew_fraction * k.f, alpha * spec.skew_fraction * k.f)

    theta_x = theta_y = 0.0
    if kind in ("pan_tilt", "perspective"):
        bound = alpha * spec.pan_tilt_max
        theta_x = rng.uniform(-bound, bound)
        theta_y = rng.uniform(-bound, bound)

    k2 = CameraIntrinsics(f=f2, m_x=m_x2, m_y=m_y2, s=s2, u0=k.u0 + du, v0=k.v0 + dv)
    a = EulerAngles(theta_x=theta_x, theta_y=theta_y, theta_z=theta_z)
    return homography_from_cameras(k, k2, a)
