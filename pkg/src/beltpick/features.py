"""Per-candidate feature extraction.

Three height slices are cut around each handle, aligned with the grasp
axis: one under each fingertip and one at the centre.  Slices are 80
samples along the axis by 39 across at 5 mm spacing (40 x 19.5 cm,
enough to cover the widest grip plus a 4 cm margin), with heights taken
relative to the handle's descend depth.  Each slice is zero padded to
80 x 40, mean pooled 2x2 down to 40 x 20 and pushed through a 2-level
DTCWT; the subband magnitudes, the lowpass image and the two opening
scalars concatenate into one fixed-length vector.
"""

from dataclasses import dataclass

import numpy as np

from .accel import HAS_NUMBA, njit
from .handles import GripperModel, Handle
from .heightmap import Heightmap, sample_bilinear
from .wavelets import transform2_magnitudes


@dataclass(frozen=True)
class FeatureConfig:
    slice_len: int = 80          # samples along the grasp axis
    slice_wid: int = 39          # samples across
    sample_step: float = 0.005   # meters between samples
    levels: int = 2

    @property
    def pooled_shape(self):
        wid = self.slice_wid + self.slice_wid % 2  # zero pad to even
        return self.slice_len // 2, wid // 2

    @property
    def feature_length(self):
        pr, pc = self.pooled_shape
        l1 = 6 * (pr // 2) * (pc // 2)
        l2 = 6 * (pr // 4) * (pc // 4)
        lp = (pr // 2) * (pc // 2)
        return 3 * (l1 + l2 + lp) + 2


DEFAULT_CONFIG = FeatureConfig()


def extract_slices(hm: Heightmap, handle: Handle, config=DEFAULT_CONFIG):
    """The three height slices for one handle, shape (3, len, wid),
    ordered (left finger, centre, right finger)."""
    return _slice_stack(hm, [handle], config).reshape(
        3, config.slice_len, config.slice_wid)


@njit(cache=True)
def _sample_slices_nb(heights, x0, y0, cell, ax, ay, az, adx, ady,
                      along, across, out):
    """Bilinear-sample rotated slice lattices directly off the height
    grid; slice s is anchored at (ax, ay) with axis direction (adx, ady)
    and heights taken relative to az.  Off-grid reads as belt level."""
    ny, nx = heights.shape
    L = along.shape[0]
    W = across.shape[0]
    for s in range(ax.shape[0]):
        d0 = adx[s]
        d1 = ady[s]
        n0 = -d1
        n1 = d0
        z = az[s]
        for i in range(L):
            bx = ax[s] + along[i] * d0
            by = ay[s] + along[i] * d1
            for j in range(W):
                gx = (bx + across[j] * n0 - x0) / cell - 0.5
                gy = (by + across[j] * n1 - y0) / cell - 0.5
                j0 = int(np.floor(gx))
                i0 = int(np.floor(gy))
                fx = gx - j0
                fy = gy - i0
                acc = 0.0
                for di in range(2):
                    wy = fy if di else 1.0 - fy
                    ii = i0 + di
                    if ii < 0 or ii >= ny:
                        continue
                    for dj in range(2):
                        w = wy * (fx if dj else 1.0 - fx)
                        jj = j0 + dj
                        if w <= 0.0 or jj < 0 or jj >= nx:
                            continue
                        acc += w * heights[ii, jj]
                out[s, i, j] = acc - z


def _anchor_arrays(handles):
    n = len(handles)
    ax = np.empty(3 * n)
    ay = np.empty(3 * n)
    az = np.empty(3 * n)
    adx = np.empty(3 * n)
    ady = np.empty(3 * n)
    for i, h in enumerate(handles):
        d0, d1 = np.cos(h.angle), np.sin(h.angle)
        half = h.opening / 2.0
        for k, off in enumerate((-half, 0.0, half)):
            s = 3 * i + k
            ax[s] = h.x + off * d0
            ay[s] = h.y + off * d1
            az[s] = h.z
            adx[s] = d0
            ady[s] = d1
    return ax, ay, az, adx, ady


def _slice_stack(hm: Heightmap, handles, config):
    """Slices for many handles in one bilinear pass: (3n, len, wid)."""
    n = len(handles)
    L, W = config.slice_len, config.slice_wid
    along = (np.arange(L) - (L - 1) / 2.0) * config.sample_step
    across = (np.arange(W) - (W - 1) / 2.0) * config.sample_step
    ax, ay, az, adx, ady = _anchor_arrays(handles)

    if HAS_NUMBA:
        out = np.empty((3 * n, L, W))
        _sample_slices_nb(hm.heights, hm.grid.x0, hm.grid.y0,
                          hm.grid.cell_size, ax, ay, az, adx, ady,
                          along, across, out)
        return out

    nvx, nvy = -ady, adx
    xs = (ax[:, None, None] + along[None, :, None] * adx[:, None, None]
          + across[None, None, :] * nvx[:, None, None])
    ys = (ay[:, None, None] + along[None, :, None] * ady[:, None, None]
          + across[None, None, :] * nvy[:, None, None])
    hvals, _ = sample_bilinear(hm, xs.ravel(), ys.ravel())
    stack = hvals.reshape(3 * n, L, W)
    stack -= az[:, None, None]
    return stack


def downsample_slice(slc, config=DEFAULT_CONFIG):
    """Zero pad the across dimension to even and mean pool 2x2."""
    arr = np.asarray(slc, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    k, L, W = arr.shape
    if W % 2:
        arr = np.concatenate([arr, np.zeros((k, L, 1))], axis=2)
        W += 1
    pooled = arr.reshape(k, L // 2, 2, W // 2, 2).mean(axis=(2, 4))
    return pooled[0] if single else pooled


def featurize_batch(hm: Heightmap, handles, config=DEFAULT_CONFIG):
    """Feature matrix (n, feature_length) for a list of handles.

    Slices depend on the handle pose and contact opening but not on the
    extra opening, so the extra-opening variants a proposal expands into
    share their whole wavelet block; it is computed once per distinct
    (x, y, angle, opening, z) and broadcast.
    """
    n = len(handles)
    if n == 0:
        return np.empty((0, config.feature_length))
    keys = np.array([(h.x, h.y, h.angle, h.opening, h.z)
                     for h in handles])
    _, uniq_idx, inverse = np.unique(keys, axis=0, return_index=True,
                                     return_inverse=True)
    bases = [handles[i] for i in uniq_idx]
    m = len(bases)
    stack = downsample_slice(_slice_stack(hm, bases, config), config)
    l1, l2, lp = transform2_magnitudes(stack)
    n1 = l1[0].size
    n2 = l2[0].size
    nl = lp[0].size
    per = n1 + n2 + nl
    B = np.empty((m, config.feature_length - 2))
    l1 = l1.reshape(m, 3, n1)
    l2 = l2.reshape(m, 3, n2)
    lp = lp.reshape(m, 3, nl)
    for k in range(3):
        base = k * per
        B[:, base:base + n1] = l1[:, k]
        B[:, base + n1:base + n1 + n2] = l2[:, k]
        B[:, base + n1 + n2:base + per] = lp[:, k]
    F = np.empty((n, config.feature_length))
    F[:, :-2] = B[inverse]
    F[:, -2] = [h.opening for h in handles]
    F[:, -1] = [h.extra for h in handles]
    return F


def featurize(hm: Heightmap, handle: Handle, config=DEFAULT_CONFIG):
    """Feature vector for a single handle."""
    return featurize_batch(hm, [handle], config)[0]
