"""Automatic camera-to-gantry calibration.

The depth camera reports, per pixel, normalized image coordinates and a
depth along the optical axis.  For a rigidly mounted pinhole camera the
map from camera observations to gantry coordinates is exactly projective
in the lifted coordinates (x', y', 1/z', 1): writing the camera ray as
z'(x', y', 1) and the rigid pose as (R, t),

    [g; 1]  ~  M (x', y', 1/z', 1)^T,   M = [R[:,0] R[:,1] t R[:,2];
                                             0     0     1  0      ]

so a 4x4 homogeneous matrix fitted by direct linear transform recovers
the full camera pose and scale without knowing either in advance.  The
rig collects correspondences by parking the gripper at known gantry
positions and locating its tip in the depth image.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraPoint:
    """Normalized image coordinates (metric offsets at unit depth) plus
    depth along the optical axis, in meters."""
    xp: float
    yp: float
    zp: float

    def lift(self):
        return np.array([self.xp, self.yp, 1.0 / self.zp, 1.0])


@dataclass(frozen=True)
class GantryPoint:
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z])


@dataclass
class DepthImage:
    """Depth map with pinhole intrinsics.

    ``depth[i, j]`` is the distance along the optical axis for pixel row
    i, column j; NaN marks invalid pixels.  Normalized coordinates are
    x' = (j - cx) / fx, y' = (i - cy) / fy.
    """
    depth: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float

    def camera_point(self, i, j):
        return CameraPoint((j - self.cx) / self.fx,
                           (i - self.cy) / self.fy,
                           float(self.depth[i, j]))

    def camera_grids(self):
        """(XP, YP) normalized-coordinate grids matching ``depth``."""
        h, w = self.depth.shape
        xp = (np.arange(w) - self.cx) / self.fx
        yp = (np.arange(h) - self.cy) / self.fy
        return np.broadcast_to(xp, (h, w)), np.broadcast_to(yp[:, None],
                                                            (h, w))


@dataclass
class CalibModel:
    """Fitted 4x4 projective map from lifted camera coordinates to
    gantry coordinates, normalized so its largest-magnitude entry is +1."""
    matrix: np.ndarray
    residual_rmse: float = float("nan")

    def apply(self, point: CameraPoint) -> GantryPoint:
        v = self.matrix @ point.lift()
        return GantryPoint(v[0] / v[3], v[1] / v[3], v[2] / v[3])

    def apply_arrays(self, xp, yp, zp):
        """Vectorized apply; returns (x, y, z) arrays of the same shape."""
        lift = np.stack([xp, yp, 1.0 / zp, np.ones_like(xp)])
        v = np.einsum("rc,c...->r...", self.matrix, lift)
        return v[0] / v[3], v[1] / v[3], v[2] / v[3]


def _normalizer_3d(pts):
    """Affine matrix moving points to zero centroid, RMS radius sqrt(3)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(((pts - centroid) ** 2).sum(axis=1).mean())
    if rms < 1e-15:
        raise CalibrationError("correspondences are coincident")
    s = np.sqrt(3.0) / rms
    N = np.eye(4)
    N[:3, :3] *= s
    N[:3, 3] = -s * centroid
    return N


def fit_projective(camera_points, gantry_points) -> CalibModel:
    """Direct linear transform fit of the lifted projective map.

    Needs at least 6 correspondences in general position; raises
    CalibrationError when the system is rank deficient (e.g. all points
    at a single depth or on a line).
    """
    if len(camera_points) != len(gantry_points):
        raise CalibrationError("correspondence lists differ in length")
    n = len(camera_points)
    if n < 6:
        raise CalibrationError(f"need at least 6 correspondences, got {n}")

    U = np.stack([cp.lift() for cp in camera_points])
    G = np.stack([gp.as_array() for gp in gantry_points])

    # Hartley-style normalization of both sides conditions the DLT.
    Nin = _normalizer_3d(U[:, :3])
    Nout = _normalizer_3d(G)
    Un = (Nin @ U.T).T
    Gh = np.column_stack([G, np.ones(n)])
    Gn = (Nout @ Gh.T).T

    A = np.zeros((3 * n, 16))
    for i in range(n):
        u = Un[i]
        for k in range(3):
            A[3 * i + k, 4 * k:4 * k + 4] = u
            A[3 * i + k, 12:16] = -Gn[i, k] * u
    _, s, vt = np.linalg.svd(A)
    # Two vanishing singular values means a family of solutions.
    if s[-2] < 1e-9 * s[0]:
        raise CalibrationError("degenerate calibration geometry")
    Mp = vt[-1].reshape(4, 4)
    M = np.linalg.inv(Nout) @ Mp @ Nin

    peak = M.flat[np.argmax(np.abs(M))]
    M = M / peak

    model = CalibModel(matrix=M)
    err = np.array([
        np.linalg.norm(model.apply(cp).as_array() - g)
        for cp, g in zip(camera_points, G)
    ])
    model.residual_rmse = float(np.sqrt((err ** 2).mean()))
    return model


def detect_tip(image: DepthImage, band=0.010) -> CameraPoint:
    """Locate the gripper tip in a depth image of the parked gripper.

    The tip is the connected pixel region (4-neighbour) containing the
    minimum-depth pixel, restricted to depths within ``band`` meters of
    that minimum; its centroid is returned.  Calibration scenes render
    only the gripper, so everything valid belongs to it.
    """
    depth = image.depth
    valid = np.isfinite(depth)
    if not valid.any():
        raise CalibrationError("no valid depth samples in image")
    zmin = np.nanmin(depth)
    h, w = depth.shape
    i0, j0 = np.unravel_index(np.nanargmin(depth), depth.shape)
    inband = valid & (depth <= zmin + band)
    seen = np.zeros_like(inband)
    queue = deque([(int(i0), int(j0))])
    seen[i0, j0] = True
    members = []
    while queue:
        i, j = queue.popleft()
        members.append((i, j))
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < h and 0 <= b < w and inband[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue.append((a, b))

    ii = np.array([m[0] for m in members], dtype=float)
    jj = np.array([m[1] for m in members], dtype=float)
    zz = depth[seen]
    return CameraPoint(float(((jj - image.cx) / image.fx).mean()),
                       float(((ii - image.cy) / image.fy).mean()),
                       float(zz.mean()))


def calibration_grid(x_range, y_range, z_range, shape=(5, 4, 3),
                     margin=0.1):
    """Gantry poses for calibration: a regular grid inset by ``margin``
    (fraction of each span) covering the workspace at several heights.
    The default 5 x 4 x 3 grid gives 60 poses."""
    nx, ny, nz = shape

    def inset(lo, hi, n):
        pad = (hi - lo) * margin
        return np.linspace(lo + pad, hi - pad, n)

    xs = inset(*x_range, nx)
    ys = inset(*y_range, ny)
    zs = inset(*z_range, nz)
    return [GantryPoint(float(x), float(y), float(z))
            for z in zs for y in ys for x in xs]


def run_calibration(pose_to_depth, grid_points):
    """Collect tip observations at each grid pose and fit the map.

    ``pose_to_depth(GantryPoint) -> DepthImage`` is supplied by the rig
    (simulated or real).  Returns (CalibModel, correspondences) where
    correspondences is the list of (CameraPoint, GantryPoint) pairs.
    """
    pairs = []
    for gp in grid_points:
        tip = detect_tip(pose_to_depth(gp))
        pairs.append((tip, gp))
    model = fit_projective([c for c, _ in pairs], [g for _, g in pairs])
    return model, pairs
