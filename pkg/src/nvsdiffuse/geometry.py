"""Pinhole cameras, reprojection warps, point splatting and z-buffer visibility.

Conventions used throughout the package:

* world-to-camera: ``x_cam = R @ (X - C)``; a point is in front when ``x_cam[2] > 0``
* pixel ``(u, v)`` is continuous, ``u`` along columns and ``v`` along rows, with
  the origin at the centre of the top-left pixel
* grids are numpy arrays indexed ``[v, u]`` (``(H, W)`` or ``(H, W, 3)``)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import Behind

ORTHO_TOL = 1e-9
BORDER_TOL = 1e-6  # pixels


class Pixel(NamedTuple):
    u: float
    v: float


class DepthSample(NamedTuple):
    pixel: Pixel
    depth: float


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Intrinsics, world-to-camera rotation and camera centre.

    Args:
        K: 3x3 upper-triangular intrinsic matrix in pixels.
        R: 3x3 rotation taking world directions to camera directions.
        C: camera centre in world coordinates.
        time_index: frame index ``t`` the pose belongs to.
        view_index: input view index, or -1 for the virtual camera.
    """

    K: np.ndarray
    R: np.ndarray
    C: np.ndarray
    time_index: int = 0
    view_index: int = -1
    _K_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64).reshape(3, 3)
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        C = np.array(self.C, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(C))):
            raise ValueError("camera parameters must be finite")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or np.any(K[np.tril_indices(3, -1)] != 0):
            raise ValueError("intrinsics must be upper-triangular with positive focal lengths")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        for arr in (K, R, C):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "_K_inv", np.linalg.inv(K))

    @property
    def K_inv(self) -> np.ndarray:
        return self._K_inv

    @property
    def angle_axis(self) -> np.ndarray:
        return rotation_to_angle_axis(self.R)

    def world_to_camera(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.C) @ self.R.T

    def camera_to_world(self, Xc: np.ndarray) -> np.ndarray:
        return np.asarray(Xc, dtype=np.float64) @ self.R + self.C

    def replace(self, **changes) -> "CameraPose":
        kw = dict(K=self.K, R=self.R, C=self.C, time_index=self.time_index, view_index=self.view_index)
        kw.update(changes)
        return CameraPose(**kw)

    def scaled(self, level: int) -> "CameraPose":
        """Camera matching a grid downsampled ``level`` times by 2x2 boxes."""
        if level == 0:
            return self
        f = 0.5**level
        K = self.K.copy()
        K[0, 0] *= f
        K[0, 1] *= f
        K[1, 1] *= f
        # pixel centres: u' = (u + 0.5) * f - 0.5
        K[0, 2] = (K[0, 2] + 0.5) * f - 0.5
        K[1, 2] = (K[1, 2] + 0.5) * f - 0.5
        return self.replace(K=K)


def make_intrinsics(focal: float, cu: float, cv: float, focal_v: float | None = None) -> np.ndarray:
    return np.array([[focal, 0.0, cu], [0.0, focal if focal_v is None else focal_v, cv], [0.0, 0.0, 1.0]])


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` looking at ``target``.

    The camera y axis points down the image, so ``up`` is given in that sense
    (the default keeps world -y as image-up).
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def transform_pose(cam: CameraPose, Q: np.ndarray, t: np.ndarray, scale: float = 1.0) -> CameraPose:
    """Express ``cam`` in a world moved by ``X' = scale * Q @ X + t``."""
    Q = np.asarray(Q, dtype=np.float64)
    return cam.replace(R=cam.R @ Q.T, C=scale * (Q @ cam.C) + np.asarray(t, dtype=np.float64))


# ---------------------------------------------------------------------------
# projection


def project_points(cam: CameraPose, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points ``(N, 3)`` to pixels ``(N, 2)`` and camera depths ``(N,)``.

    Points with non-positive depth get NaN pixels; callers filter on ``depth > 0``.
    """
    Xc = cam.world_to_camera(np.reshape(X, (-1, 3)))
    z = Xc[:, 2]
    h = Xc @ cam.K.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = h[:, :2] / z[:, None]
    uv[z <= 0] = np.nan
    return uv, z


def project(cam: CameraPose, p) -> tuple[Pixel, float]:
    """Project a single world point; raises :class:`Behind` if depth <= 0."""
    uv, z = project_points(cam, np.asarray(p, dtype=np.float64)[None])
    if not z[0] > 0:
        raise Behind(f"point {tuple(np.ravel(p))} has depth {z[0]:.6g}")
    return Pixel(float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def unproject_points(cam: CameraPose, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    uv = np.reshape(uv, (-1, 2))
    depth = np.reshape(depth, (-1,))
    rays = np.column_stack([uv, np.ones(len(uv))]) @ cam.K_inv.T
    # K^-1 keeps the homogeneous coordinate at 1, so the ray's z equals the depth
    rays = rays / rays[:, 2:3]
    return cam.camera_to_world(rays * depth[:, None])


def unproject(cam: CameraPose, sample: DepthSample) -> np.ndarray:
    if not sample.depth > 0:
        raise ValueError("depth must be positive")
    (u, v), d = sample
    return unproject_points(cam, np.array([[u, v]]), np.array([d]))[0]


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Pixel-centre coordinates ``(H, W, 2)`` ordered ``(u, v)``."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([u, v], axis=-1)


def unproject_depth_map(cam: CameraPose, depth: np.ndarray) -> np.ndarray:
    """World positions ``(H, W, 3)`` of every pixel of a depth map."""
    h, w = depth.shape
    return unproject_points(cam, pixel_grid(w, h), depth).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# rotations


def _skew(a: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def angle_axis_to_rotation(a) -> np.ndarray:
    """Rodrigues' formula for a rotation vector whose norm is the angle in radians."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(a))
    S = _skew(a)
    if theta < 1e-8:
        return np.eye(3) + S + 0.5 * S @ S
    return np.eye(3) + (np.sin(theta) / theta) * S + ((1.0 - np.cos(theta)) / theta**2) * S @ S


def rotation_to_angle_axis(R) -> np.ndarray:
    """Inverse of :func:`angle_axis_to_rotation`, returning angles in ``[0, pi]``."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 keeps full precision near 0 and pi, where arccos loses sqrt(eps)
    theta = float(np.arctan2(0.5 * np.linalg.norm(vee), cos_t))
    if theta < 1e-6:
        return 0.5 * vee
    if theta < np.pi / 2:
        return theta / (2.0 * np.sin(theta)) * vee
    # near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part (1 - cos) a a^T + cos I, using its largest diagonal
    B = (0.5 * (R + R.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if axis @ vee < 0:
        axis = -axis
    return theta * axis


def rotation_angle(R) -> float:
    """Rotation angle of ``R`` in radians."""
    return float(np.linalg.norm(rotation_to_angle_axis(R)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (unit quaternion sampling)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# splatting, warping, visibility


def round_pixel(x: np.ndarray) -> np.ndarray:
    """Round-half-up to the nearest integer pixel index."""
    return np.floor(x + 0.5).astype(np.int64)


def splat_arrays(
    positions: np.ndarray,
    colors: np.ndarray | None,
    cam: CameraPose,
    size: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-buffered single-pixel splat of colored points.

    Returns ``(depth, color, occupancy)``; empty pixels hold depth 0 and color 0.
    On collisions the smallest depth wins, then the earliest point.
    """
    width, height = size
    depth = np.zeros((height, width))
    color = np.zeros((height, width, 3))
    occ = np.zeros((height, width), dtype=bool)
    positions = np.reshape(positions, (-1, 3))
    if len(positions) == 0:
        return depth, color, occ
    uv, z = project_points(cam, positions)
    front = z > 0
    iu = np.full(len(z), -1, dtype=np.int64)
    iv = np.full(len(z), -1, dtype=np.int64)
    iu[front] = round_pixel(uv[front, 0])
    iv[front] = round_pixel(uv[front, 1])
    keep = np.flatnonzero(front & (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height))
    if len(keep) == 0:
        return depth, color, occ
    flat = iv[keep] * width + iu[keep]
    order = np.lexsort((keep, z[keep], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = keep[order[first]]
    pix = flat_sorted[first]
    depth.ravel()[pix] = z[winners]
    occ.ravel()[pix] = True
    if colors is not None:
        color.reshape(-1, 3)[pix] = np.reshape(colors, (-1, 3))[winners]
    return depth, color, occ


def splat_points(cloud, cam: CameraPose, size: tuple[int, int]):
    """Project a point cloud (anything with ``positions`` and ``colors``) into ``cam``."""
    return splat_arrays(cloud.positions, cloud.colors, cam, size)


def bilinear_sample(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at continuous pixel positions.

    Positions outside ``[0, W-1] x [0, H-1]`` (or NaN) are masked out rather than
    clamped and return zeros. Positions within ``BORDER_TOL`` of the border count
    as inside, so round-off does not drop the outermost pixels.
    """
    h, w = img.shape[:2]
    tol = BORDER_TOL
    valid = np.isfinite(u) & np.isfinite(v) & (u >= -tol) & (u <= w - 1 + tol) & (v >= -tol) & (v <= h - 1 + tol)
    uu = np.clip(np.where(valid, u, 0.0), 0, w - 1)
    vv = np.clip(np.where(valid, v, 0.0), 0, h - 1)
    u0 = np.minimum(np.floor(uu).astype(np.int64), max(w - 2, 0))
    v0 = np.minimum(np.floor(vv).astype(np.int64), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uu - u0
    fv = vv - v0
    if img.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    out = (
        img[v0, u0] * (1 - fu) * (1 - fv)
        + img[v0, u1] * fu * (1 - fv)
        + img[v1, u0] * (1 - fu) * fv
        + img[v1, u1] * fu * fv
    )
    out = np.where(valid[..., None] if img.ndim == 3 else valid, out, 0.0)
    return out, valid


def _dst_to_src(dst_cam: CameraPose, dst_depth: np.ndarray, src_cam: CameraPose):
    h, w = dst_depth.shape
    ok = np.isfinite(dst_depth) & (dst_depth > 0)
    X = unproject_points(dst_cam, pixel_grid(w, h), np.where(ok, dst_depth, 1.0))
    uv, z = project_points(src_cam, X)
    ok &= (z > 0).reshape(h, w)
    return uv[:, 0].reshape(h, w), uv[:, 1].reshape(h, w), z.reshape(h, w), ok


def warp_frame(
    src_img: np.ndarray,
    src_cam: CameraPose,
    dst_cam: CameraPose,
    dst_depth: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``src_img`` into ``dst_cam`` through the destination depth map.

    Returns the warped image and a boolean validity mask. Pixels without valid
    depth, behind the source camera, or outside the source image are invalid.
    """
    u, v, _, ok = _dst_to_src(dst_cam, dst_depth, src_cam)
    u = np.where(ok, u, np.nan)
    out, valid = bilinear_sample(src_img, u, v)
    return out, valid & ok


def visibility_maps(
    dst_cam: CameraPose,
    dst_depth: np.ndarray,
    src_cam: CameraPose,
    size: tuple[int, int],
    z_tol: float | None = None,
) -> np.ndarray:
    """Binary map marking destination pixels that are front-most in the source view.

    Every destination pixel is sent to its nearest integer source pixel. A pixel is
    visible when its source-frame depth is within ``z_tol`` of the minimum over all
    destination pixels landing on the same source pixel. ``z_tol`` defaults to
    ``1e-4`` times the range of those source-frame depths.
    """
    width, height = size
    u, v, z, ok = _dst_to_src(dst_cam, dst_depth, src_cam)
    vis = np.zeros(dst_depth.shape, dtype=bool)
    iu = np.where(ok, np.floor(np.where(ok, u, 0) + 0.5), -1).astype(np.int64)
    iv = np.where(ok, np.floor(np.where(ok, v, 0) + 0.5), -1).astype(np.int64)
    inside = ok & (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height)
    if not inside.any():
        return vis
    zs = z[inside]
    if z_tol is None:
        z_tol = 1e-4 * float(zs.max() - zs.min())
    flat = iv[inside] * width + iu[inside]
    zbuf = np.full(width * height, np.inf)
    np.minimum.at(zbuf, flat, zs)
    vis[inside] = zs <= zbuf[flat] + z_tol
    return vis
