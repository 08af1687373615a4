"""Camera models and projective primitives.

Conventions
-----------
World frame: right-handed, z up, ground plane z = 0, units meters.
Camera frame: x right, y down, z forward (optical axis); a world point maps to
camera coordinates as ``X_cam = R @ X_world + t``, so ``t = -R @ C`` for camera
center ``C``. Pixels: u right, v down, origin at the top-left corner.

Bounding boxes are axis-aligned pixel rectangles ``(u_min, v_min, u_max,
v_max)``. Ellipsoids are axis-aligned in the world frame; orientation is not
modeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConic,
    DegenerateHomography,
    NonPositiveDepth,
    PointAtInfinity,
)

_ORTHO_TOL = 1e-9
_DEPTH_EPS = 1e-9
_HOMOG_EPS = 1e-12


def _as_matrix(value, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera.

    Parameters
    ----------
    intrinsics : (3, 3) array
        Upper-triangular calibration matrix with positive focal lengths and
        bottom row (0, 0, 1). Pixels are assumed rectified (no distortion).
    rotation : (3, 3) array
        World-to-camera rotation, orthonormal with determinant +1.
    translation : (3,) array
        World-to-camera translation (``X_cam = R @ X + t``).
    image_size : (width, height)
        Sensor extent in pixels.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        K = _as_matrix(self.intrinsics, (3, 3), "intrinsics")
        R = _as_matrix(self.rotation, (3, 3), "rotation")
        t = _as_matrix(self.translation, (3,), "translation")
        if max(abs(K[1, 0]), abs(K[2, 0]), abs(K[2, 1])) > 0:
            raise ValueError("intrinsics must be upper triangular")
        if abs(K[2, 2] - 1.0) > _ORTHO_TOL or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0:
            raise ValueError("intrinsics bottom row must be (0, 0, 1)")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        w, h = self.image_size
        if int(w) <= 0 or int(h) <= 0:
            raise ValueError("image_size must be positive")
        for name, arr in (("intrinsics", K), ("rotation", R), ("translation", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def camera_center(self) -> np.ndarray:
        """World-frame optical center ``C = -R^T t``."""
        return -self.rotation.T @ self.translation

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 projection ``P = K [R | t]`` (cached)."""
        P = self.__dict__.get("_P")
        if P is None:
            P = self.intrinsics @ np.hstack(
                [self.rotation, self.translation[:, None]]
            )
            P.setflags(write=False)
            self.__dict__["_P"] = P
        return P


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel rectangle with ``u_min <= u_max`` and
    ``v_min <= v_max``."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        vals = (self.u_min, self.v_min, self.u_max, self.v_max)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("bbox coordinates must be finite")
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError(
                f"bbox corners out of order: {vals}"
            )
        for name, v in zip(("u_min", "v_min", "u_max", "v_max"), vals):
            object.__setattr__(self, name, float(v))

    def as_array(self) -> np.ndarray:
        return np.array([self.u_min, self.v_min, self.u_max, self.v_max])

    @classmethod
    def from_array(cls, arr) -> "BBox":
        a = np.asarray(arr, dtype=np.float64).reshape(4)
        return cls(a[0], a[1], a[2], a[3])


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid given by center and positive half-axes."""

    center: np.ndarray
    half_axes: np.ndarray

    def __post_init__(self):
        c = _as_matrix(self.center, (3,), "center")
        h = _as_matrix(self.half_axes, (3,), "half_axes")
        if np.any(h <= 0):
            raise ValueError(f"half_axes must be positive, got {h}")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_axes", h)


def project_point(cam: CameraModel, point) -> np.ndarray:
    """Project a world point to pixel coordinates.

    Raises
    ------
    NonPositiveDepth
        If the point's camera-frame depth is <= 1e-9.
    """
    X = np.asarray(point, dtype=np.float64).reshape(3)
    Xc = cam.rotation @ X + cam.translation
    if Xc[2] <= _DEPTH_EPS:
        raise NonPositiveDepth(f"depth {Xc[2]:.3e} for point {X.tolist()}")
    uvw = cam.intrinsics @ Xc
    return uvw[:2] / uvw[2]


def ground_homography(cam: CameraModel) -> np.ndarray:
    """Homography mapping ground-plane points (X, Y, 1) to pixels.

    Columns are ``K [r1 r2 t]`` where r1, r2 are the first two columns of the
    rotation.

    Raises
    ------
    DegenerateHomography
        If the matrix is rank deficient (|det| < 1e-12), which happens when the
        camera center lies in the ground plane.
    """
    H = cam.intrinsics @ np.column_stack(
        [cam.rotation[:, 0], cam.rotation[:, 1], cam.translation]
    )
    if abs(np.linalg.det(H)) < _HOMOG_EPS:
        raise DegenerateHomography(
            "ground homography is singular (camera in ground plane?)"
        )
    return H


def backproject_ground(cam: CameraModel, pixel) -> np.ndarray:
    """Intersect the viewing ray of a pixel with the ground plane z = 0.

    Returns the world point ``(X, Y, 0)``.

    Raises
    ------
    DegenerateHomography
        Propagated from :func:`ground_homography`.
    PointAtInfinity
        If the ray is parallel to the ground plane (homogeneous scale < 1e-12).
    """
    uv = np.asarray(pixel, dtype=np.float64).reshape(2)
    H = ground_homography(cam)
    g = np.linalg.solve(H, np.array([uv[0], uv[1], 1.0]))
    if abs(g[2]) < _HOMOG_EPS:
        raise PointAtInfinity(f"pixel {uv.tolist()} maps to the horizon")
    return np.array([g[0] / g[2], g[1] / g[2], 0.0])


def project_ellipsoid_to_bbox(cam: CameraModel, ellipsoid: Ellipsoid) -> BBox:
    """Tight axis-aligned image box of an ellipsoid's outline.

    Uses the dual quadric: for ``Q* = T diag(a², b², c², -1) Tᵀ`` the outline
    conic is ``C* = P Q* Pᵀ``, and the extremal image lines tangent to the
    conic give the box edges in closed form.

    Raises
    ------
    NonPositiveDepth
        If the ellipsoid center is on or behind the principal plane.
    DegenerateConic
        If the outline is not a bounded ellipse (camera inside or tangent to
        the ellipsoid).
    """
    zc = (cam.rotation @ ellipsoid.center + cam.translation)[2]
    if zc <= _DEPTH_EPS:
        raise NonPositiveDepth(f"ellipsoid center depth {zc:.3e}")

    a, b, c = ellipsoid.half_axes
    Q = np.diag([a * a, b * b, c * c, -1.0])
    T = np.eye(4)
    T[:3, 3] = ellipsoid.center
    Qs = T @ Q @ T.T
    P = cam.projection_matrix
    C = P @ Qs @ P.T

    if abs(C[2, 2]) < _HOMOG_EPS * max(1.0, float(np.max(np.abs(C)))):
        raise DegenerateConic("outline conic degenerate (C22 ~ 0)")
    cu = C[0, 2] / C[2, 2]
    cv = C[1, 2] / C[2, 2]
    du = cu * cu - C[0, 0] / C[2, 2]
    dv = cv * cv - C[1, 1] / C[2, 2]
    if du <= 0 or dv <= 0:
        raise DegenerateConic(
            f"outline not a bounded ellipse (disc u={du:.3e}, v={dv:.3e})"
        )
    ru = np.sqrt(du)
    rv = np.sqrt(dv)
    return BBox(cu - ru, cv - rv, cu + ru, cv + rv)


def feet_point(bbox: BBox) -> np.ndarray:
    """Midpoint of the bottom edge — the image point assumed to touch the
    ground under the object."""
    return np.array([(bbox.u_min + bbox.u_max) / 2.0, bbox.v_max])
