"""Height map reconstruction above the belt plane.

Depth pixels are pushed through the calibration model into gantry
coordinates and splatted into a regular grid of height-above-belt
values, keeping the maximum per cell so thin structures survive.  Cells
the camera never observed are filled with an occlusion bound: the
highest surface that could hide behind what was seen along the ray back
to the camera.  Filled cells stay flagged unknown so downstream stages
can treat them cautiously.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .accel import HAS_NUMBA, njit
from .calib import CalibModel, DepthImage

ZRHM_MAGIC = b"ZRHM"


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the height grid: origin is the outer corner of cell
    (0, 0); heights index as [iy, ix]."""
    x0: float
    y0: float
    cell_size: float = 0.005
    nx: int = 240
    ny: int = 160
    z_max: float = 0.4

    def cell_center(self, ix, iy):
        return (self.x0 + (ix + 0.5) * self.cell_size,
                self.y0 + (iy + 0.5) * self.cell_size)

    @property
    def x_range(self):
        return self.x0, self.x0 + self.nx * self.cell_size

    @property
    def y_range(self):
        return self.y0, self.y0 + self.ny * self.cell_size


@dataclass
class Heightmap:
    grid: GridSpec
    heights: np.ndarray      # (ny, nx) float64, meters above belt
    unknown: np.ndarray      # (ny, nx) bool

    @classmethod
    def empty(cls, grid: GridSpec):
        return cls(grid,
                   np.zeros((grid.ny, grid.nx)),
                   np.ones((grid.ny, grid.nx), dtype=bool))


@dataclass
class LineProfile:
    """Heights resampled along a straight line: sample s sits at
    (x0, y0) + s * step * (dx, dy)."""
    heights: np.ndarray
    unknown: np.ndarray
    x0: float
    y0: float
    dx: float
    dy: float
    step: float

    def point(self, s):
        return self.x0 + s * self.step * self.dx, \
            self.y0 + s * self.step * self.dy


@njit(cache=True)
def _splat_nb(ix, iy, z, radius, heights, observed):
    ny, nx = heights.shape
    for k in range(ix.shape[0]):
        for a in range(-radius, radius + 1):
            for b in range(-radius, radius + 1):
                j = ix[k] + b
                i = iy[k] + a
                if 0 <= i < ny and 0 <= j < nx:
                    observed[i, j] = True
                    if z[k] > heights[i, j]:
                        heights[i, j] = z[k]


def _splat_np(ix, iy, z, radius, heights, observed):
    ny, nx = heights.shape
    for a in range(-radius, radius + 1):
        for b in range(-radius, radius + 1):
            i = iy + a
            j = ix + b
            ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
            np.maximum.at(heights, (i[ok], j[ok]), z[ok])
            observed[i[ok], j[ok]] = True


def project(image: DepthImage, calib: CalibModel, grid: GridSpec,
            splat_radius=1) -> Heightmap:
    """Project a depth image into a height map.

    Every valid pixel maps to gantry space; its height (gantry z,
    clamped to [0, z_max]) is max-splatted into the containing cell and
    its neighbours within ``splat_radius`` cells.  Unobserved cells get
    height 0 and unknown=True; run occlusion_fill to bound them.
    """
    valid = np.isfinite(image.depth)
    heights = np.zeros((grid.ny, grid.nx))
    observed = np.zeros((grid.ny, grid.nx), dtype=bool)
    if valid.any():
        xpg, ypg = image.camera_grids()
        x, y, z = calib.apply_arrays(xpg[valid], ypg[valid],
                                     image.depth[valid])
        z = np.clip(z, 0.0, grid.z_max)
        ix = np.floor((x - grid.x0) / grid.cell_size).astype(np.int64)
        iy = np.floor((y - grid.y0) / grid.cell_size).astype(np.int64)
        inside = (ix >= -splat_radius) & (ix < grid.nx + splat_radius) & \
                 (iy >= -splat_radius) & (iy < grid.ny + splat_radius)
        args = (ix[inside], iy[inside], z[inside], splat_radius,
                heights, observed)
        if HAS_NUMBA:
            _splat_nb(*args)
        else:
            _splat_np(*args)
    return Heightmap(grid, heights, ~observed)


@njit(cache=True)
def _occlusion_fill_nb(heights, unknown, x0, y0, cell, z_max,
                       cam_x, cam_y, cam_z, out):
    ny, nx = heights.shape
    for i in range(ny):
        for j in range(nx):
            if not unknown[i, j]:
                continue
            px = x0 + (j + 0.5) * cell
            py = y0 + (i + 0.5) * cell
            rx = cam_x - px
            ry = cam_y - py
            dist = np.sqrt(rx * rx + ry * ry)
            best = 0.0
            found = False
            if dist > 1e-9:
                ux = rx / dist
                uy = ry / dist
                steps = int(dist / cell)
                for s in range(1, steps + 1):
                    qx = px + ux * s * cell
                    qy = py + uy * s * cell
                    a = int((qy - y0) / cell)
                    b = int((qx - x0) / cell)
                    if a < 0 or a >= ny or b < 0 or b >= nx:
                        continue
                    if unknown[a, b]:
                        continue
                    dq = dist - s * cell
                    if dq <= 1e-9:
                        continue
                    # ray from the camera grazing the occluder top
                    h = cam_z + (heights[a, b] - cam_z) * dist / dq
                    if not found or h > best:
                        best = h
                        found = True
            if not found:
                # nothing observed toward the camera: worst case
                out[i, j] = z_max
            else:
                out[i, j] = min(max(best, 0.0), z_max)


def _occlusion_fill_np(heights, unknown, x0, y0, cell, z_max,
                       cam_x, cam_y, cam_z, out):
    ny, nx = heights.shape
    iy, ix = np.nonzero(unknown)
    for i, j in zip(iy, ix):
        px = x0 + (j + 0.5) * cell
        py = y0 + (i + 0.5) * cell
        rx, ry = cam_x - px, cam_y - py
        dist = float(np.hypot(rx, ry))
        if dist <= 1e-9:
            out[i, j] = z_max
            continue
        steps = int(dist / cell)
        if steps < 1:
            out[i, j] = z_max
            continue
        s = np.arange(1, steps + 1)
        qx = px + rx / dist * s * cell
        qy = py + ry / dist * s * cell
        a = ((qy - y0) / cell).astype(np.int64)
        b = ((qx - x0) / cell).astype(np.int64)
        ok = (a >= 0) & (a < ny) & (b >= 0) & (b < nx)
        a, b, s = a[ok], b[ok], s[ok]
        ok = ~unknown[a, b]
        a, b, s = a[ok], b[ok], s[ok]
        dq = dist - s * cell
        ok = dq > 1e-9
        a, b, dq = a[ok], b[ok], dq[ok]
        if len(a) == 0:
            out[i, j] = z_max
            continue
        h = cam_z + (heights[a, b] - cam_z) * dist / dq
        out[i, j] = min(max(0.0, float(h.max())), z_max)


def occlusion_fill(hm: Heightmap, camera_pos) -> Heightmap:
    """Replace unknown-cell heights with their occlusion bound.

    ``camera_pos`` is the camera centre in gantry coordinates.  For each
    unknown cell the fill value is the greatest height still hidden from
    the camera by some observed cell on the ray toward it, clamped to
    [0, z_max]; cells with no observed occluder get z_max.  The unknown
    flags are left set.
    """
    cam_x, cam_y, cam_z = (float(v) for v in camera_pos)
    out = hm.heights  # filled in place
    args = (hm.heights, hm.unknown, hm.grid.x0, hm.grid.y0,
            hm.grid.cell_size, hm.grid.z_max, cam_x, cam_y, cam_z, out)
    if HAS_NUMBA:
        _occlusion_fill_nb(*args)
    else:
        _occlusion_fill_np(*args)
    np.clip(out, 0.0, hm.grid.z_max, out=out)
    return hm


@njit(cache=True)
def _bilinear_nb(heights, unknown, x0, y0, cell, xs, ys, out_h, out_u):
    ny, nx = heights.shape
    for k in range(xs.shape[0]):
        # sample in cell-centre coordinates
        gx = (xs[k] - x0) / cell - 0.5
        gy = (ys[k] - y0) / cell - 0.5
        j0 = int(np.floor(gx))
        i0 = int(np.floor(gy))
        fx = gx - j0
        fy = gy - i0
        h = 0.0
        u = False
        for di in range(2):
            for dj in range(2):
                w = (fy if di else 1.0 - fy) * (fx if dj else 1.0 - fx)
                if w <= 0.0:
                    continue
                i = i0 + di
                j = j0 + dj
                if 0 <= i < ny and 0 <= j < nx:
                    h += w * heights[i, j]
                    if unknown[i, j]:
                        u = True
                # off-grid contributions read as belt level (0)
        out_h[k] = h
        out_u[k] = u


def _bilinear_np(heights, unknown, x0, y0, cell, xs, ys, out_h, out_u):
    ny, nx = heights.shape
    gx = (xs - x0) / cell - 0.5
    gy = (ys - y0) / cell - 0.5
    j0 = np.floor(gx).astype(np.int64)
    i0 = np.floor(gy).astype(np.int64)
    fx = gx - j0
    fy = gy - i0
    out_h[:] = 0.0
    out_u[:] = False
    for di in (0, 1):
        for dj in (0, 1):
            w = (fy if di else 1.0 - fy) * (fx if dj else 1.0 - fx)
            i = i0 + di
            j = j0 + dj
            ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx) & (w > 0)
            vals = np.zeros_like(out_h)
            vals[ok] = heights[i[ok], j[ok]]
            out_h += w * vals
            out_u[ok] |= unknown[i[ok], j[ok]]


def sample_bilinear(hm: Heightmap, xs, ys):
    """Bilinear height samples at world points; off-grid reads as belt
    level.  Returns (heights, unknown) where a sample is unknown if any
    contributing cell is."""
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    out_h = np.empty(xs.shape[0])
    out_u = np.zeros(xs.shape[0], dtype=np.bool_)
    args = (hm.heights, hm.unknown, hm.grid.x0, hm.grid.y0,
            hm.grid.cell_size, xs, ys, out_h, out_u)
    if HAS_NUMBA:
        _bilinear_nb(*args)
    else:
        _bilinear_np(*args)
    return out_h, out_u


def extract_line(hm: Heightmap, center, angle, length) -> LineProfile:
    """Resample heights along a line through ``center`` at ``angle``
    (radians, measured from +x), one sample per cell size, covering
    ``length`` meters centred on the point."""
    step = hm.grid.cell_size
    n = max(2, int(round(length / step)) + 1)
    dx, dy = np.cos(angle), np.sin(angle)
    s = np.arange(n) - (n - 1) / 2.0
    xs = center[0] + s * step * dx
    ys = center[1] + s * step * dy
    h, u = sample_bilinear(hm, xs, ys)
    return LineProfile(h, u, float(xs[0]), float(ys[0]),
                       float(dx), float(dy), step)


def save_heightmap(path, hm: Heightmap):
    """Write the ZRHM binary format: magic, u32 width/height, f32 cell
    size, f64 origin x/y, row-major f32 heights, u8 unknown flags."""
    g = hm.grid
    with open(path, "wb") as f:
        f.write(ZRHM_MAGIC)
        f.write(struct.pack("<IIfdd", g.nx, g.ny, g.cell_size, g.x0, g.y0))
        f.write(hm.heights.astype("<f4").tobytes())
        f.write(hm.unknown.astype(np.uint8).tobytes())


def load_heightmap(path) -> Heightmap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ZRHM_MAGIC:
            raise ValueError(f"bad heightmap magic {magic!r}")
        nx, ny, cell, x0, y0 = struct.unpack("<IIfdd", f.read(28))
        n = nx * ny
        heights = np.frombuffer(f.read(4 * n), dtype="<f4").astype(
            np.float64).reshape(ny, nx)
        unknown = np.frombuffer(f.read(n), dtype=np.uint8).astype(
            bool).reshape(ny, nx)
    grid = GridSpec(x0=x0, y0=y0, cell_size=float(cell), nx=nx, ny=ny)
    return Heightmap(grid, heights, unknown)
