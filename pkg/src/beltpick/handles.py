"""Grasp handle generation on height maps.

A handle is a pair of finger positions on a line across the belt such
that both fingers can descend to the endpoint heights while the surface
between them sticks up strictly higher: closing the gripper then meets
the object.  The search runs in two stages per grasp direction: first
the height image, resampled onto a grid of parallel lines, is max
filtered with the finger footprint so each sample already accounts for
the whole finger; then each line is scanned with a monotonic stack that
enumerates every closed handle in O(n).

Enumerated handles are weighted by how sharply the surface rises inside
both fingers, ``w = [h(s0+1)-h(s0)] + [h(s1-1)-h(s1)]``, and a fixed
number of candidates is drawn with replacement proportionally to the
weights.  Each drawn handle is finally widened in fixed steps for as
long as the extra opening stays feasible, since approaching wider and
closing onto the object tolerates pose error better than a tight fit.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accel import HAS_NUMBA, njit
from .heightmap import Heightmap, sample_bilinear


@dataclass(frozen=True)
class GripperModel:
    """Two-finger parallel gripper.  ``finger_length`` is the footprint
    dimension along the grasp axis, ``finger_width`` across it.  The
    fingertips travel on a circular arc of ``arc_radius``: at opening o
    the tips sit ``lift(o)`` above their closed height."""
    finger_length: float = 0.02
    finger_width: float = 0.04
    max_opening: float = 0.20
    min_opening: float = 0.01
    arc_radius: float = 0.10
    extra_step: float = 0.01

    def lift(self, opening):
        r = self.arc_radius
        half = min(float(opening) / 2.0, r)
        return r - np.sqrt(r * r - half * half)

    @property
    def opening_cap(self):
        return min(self.max_opening, 2.0 * self.arc_radius)


@dataclass
class Handle:
    """One grasp candidate: gripper centre (x, y), grasp axis angle,
    contact opening, extra approach opening, descend height z."""
    x: float
    y: float
    angle: float
    opening: float
    extra: float
    z: float
    weight: float
    score: Optional[float] = None


def enumerate_closed_handles(heights):
    """All closed handles on one height line.

    Returns ``(pairs, weights, ops)``: pairs is an (N, 2) int array of
    sample indices (s0, s1) with s1 >= s0 + 2 and every interior sample
    strictly higher than both endpoints; weights are the rise sums
    (always positive); ops counts stack pushes plus pops, bounded by 2n.
    """
    h = np.asarray(heights, dtype=np.float64)
    n = len(h)
    stack = []
    pairs = []
    weights = []
    ops = 0
    for j in range(n):
        while stack and h[stack[-1]] > h[j]:
            t = stack.pop()
            ops += 1
            if j - t >= 2:
                pairs.append((t, j))
                weights.append(h[t + 1] - h[t] + h[j - 1] - h[j])
        if stack:
            u = stack[-1]
            if j - u >= 2:
                pairs.append((u, j))
                weights.append(h[u + 1] - h[u] + h[j - 1] - h[j])
            if h[u] == h[j]:
                stack.pop()
                ops += 1
        stack.append(j)
        ops += 1
    pairs_arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return pairs_arr, np.array(weights, dtype=np.float64), ops


@njit(cache=True)
def _enumerate_rows_nb(img, min_sep, max_sep, stack, row_out, s0_out,
                       s1_out, w_out, z_out):
    """Stack enumeration over every row of a line grid; same pair
    semantics as enumerate_closed_handles plus separation limits."""
    nrows, n = img.shape
    count = 0
    for r in range(nrows):
        h = img[r]
        sp = 0
        for j in range(n):
            while sp > 0 and h[stack[sp - 1]] > h[j]:
                t = stack[sp - 1]
                sp -= 1
                if min_sep <= j - t <= max_sep:
                    row_out[count] = r
                    s0_out[count] = t
                    s1_out[count] = j
                    w_out[count] = h[t + 1] - h[t] + h[j - 1] - h[j]
                    z_out[count] = max(h[t], h[j])
                    count += 1
            if sp > 0:
                u = stack[sp - 1]
                if min_sep <= j - u <= max_sep:
                    row_out[count] = r
                    s0_out[count] = u
                    s1_out[count] = j
                    w_out[count] = h[u + 1] - h[u] + h[j - 1] - h[j]
                    z_out[count] = max(h[u], h[j])
                    count += 1
                if h[u] == h[j]:
                    sp -= 1
            stack[sp] = j
            sp += 1
    return count


def _enumerate_rows_np(img, min_sep, max_sep):
    rows, s0s, s1s, ws, zs = [], [], [], [], []
    for r in range(img.shape[0]):
        pairs, w, _ = enumerate_closed_handles(img[r])
        for (a, b), wt in zip(pairs, w):
            if min_sep <= b - a <= max_sep:
                rows.append(r)
                s0s.append(a)
                s1s.append(b)
                ws.append(wt)
                zs.append(max(img[r, a], img[r, b]))
    return (np.array(rows, dtype=np.int64), np.array(s0s, dtype=np.int64),
            np.array(s1s, dtype=np.int64), np.array(ws),
            np.array(zs))


@njit(cache=True)
def _maxfilt_axis1_nb(img, win, out):
    half = win // 2
    nr, nc = img.shape
    for i in range(nr):
        for j in range(nc):
            lo = j - half
            hi = j + half
            clipped = lo < 0 or hi >= nc
            if lo < 0:
                lo = 0
            if hi >= nc:
                hi = nc - 1
            m = img[i, lo]
            for k in range(lo + 1, hi + 1):
                if img[i, k] > m:
                    m = img[i, k]
            # windows hanging over the edge see zero padding
            if clipped and m < 0.0:
                m = 0.0
            out[i, j] = m


def _maxfilt_axis1_np(img, win):
    half = win // 2
    nr, nc = img.shape
    padded = np.zeros((nr, nc + 2 * half))
    padded[:, half:half + nc] = img
    out = padded[:, 0:nc].copy()
    for k in range(1, win):
        np.maximum(out, padded[:, k:k + nc], out=out)
    return out


def finger_max_filter(img, along_window, across_window):
    """Separable 2-D maximum filter over a line grid: ``along_window``
    samples along each row (grasp axis), ``across_window`` across rows.
    Windows are odd; outside the grid counts as belt level (height 0),
    matching the zero padding of the resampled line grid."""
    if along_window % 2 == 0 or across_window % 2 == 0:
        raise ValueError("filter windows must be odd")
    img = np.ascontiguousarray(img, dtype=np.float64)
    if HAS_NUMBA:
        out = np.empty_like(img)
        _maxfilt_axis1_nb(img, along_window, out)
        out2 = np.empty_like(img.T)
        _maxfilt_axis1_nb(np.ascontiguousarray(out.T), across_window, out2)
        return np.ascontiguousarray(out2.T)
    out = _maxfilt_axis1_np(img, along_window)
    return _maxfilt_axis1_np(out.T, across_window).T


def _odd_cells(length, cell):
    n = max(1, int(round(length / cell)))
    return n + 1 if n % 2 == 0 else n


@dataclass
class LineGrid:
    """Height image resampled on lines parallel to a grasp direction.
    Row r, sample s sits at origin + r*cell*normal + s*cell*direction."""
    angle: float
    heights: np.ndarray
    unknown: np.ndarray
    ox: float
    oy: float
    cell: float

    def point(self, row, s):
        c, sn = np.cos(self.angle), np.sin(self.angle)
        return (self.ox + row * self.cell * -sn + s * self.cell * c,
                self.oy + row * self.cell * c + s * self.cell * sn)


def resample_line_grid(hm: Heightmap, angle) -> LineGrid:
    """Bilinear resample of the height map onto a rotated grid whose
    rows run along ``angle``, spaced one cell apart; sized to cover the
    whole map (off-grid samples read as belt)."""
    g = hm.grid
    cell = g.cell_size
    W = g.nx * cell
    H = g.ny * cell
    c, sn = np.cos(angle), np.sin(angle)
    ext_s = abs(W * c) + abs(H * sn)
    ext_r = abs(W * sn) + abs(H * c)
    S = int(np.ceil(ext_s / cell)) + 1
    R = int(np.ceil(ext_r / cell)) + 1
    cx = g.x0 + W / 2.0
    cy = g.y0 + H / 2.0
    s_off = (np.arange(S) - (S - 1) / 2.0) * cell
    r_off = (np.arange(R) - (R - 1) / 2.0) * cell
    X = cx + r_off[:, None] * -sn + s_off[None, :] * c
    Y = cy + r_off[:, None] * c + s_off[None, :] * sn
    h, u = sample_bilinear(hm, X.ravel(), Y.ravel())
    return LineGrid(angle, h.reshape(R, S), u.reshape(R, S),
                    float(X[0, 0]), float(Y[0, 0]), cell)


def sample_handles(weights, count, rng):
    """Draw ``count`` handle indices with replacement, probability
    proportional to weight."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) == 0 or weights.sum() <= 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(len(weights), size=count, replace=True,
                      p=weights / weights.sum())


def _footprint_points(gripper: GripperModel, cell):
    """Local sample offsets covering one finger footprint."""
    na = max(2, int(round(gripper.finger_length / cell)) + 1)
    nc = max(2, int(round(gripper.finger_width / cell)) + 1)
    a = np.linspace(-gripper.finger_length / 2, gripper.finger_length / 2, na)
    c = np.linspace(-gripper.finger_width / 2, gripper.finger_width / 2, nc)
    A, C = np.meshgrid(a, c, indexing="ij")
    return A.ravel(), C.ravel()


def expand_extra_openings(handle: Handle, hm: Heightmap,
                          gripper: GripperModel):
    """The handle plus every feasible fixed-step extra opening.

    For extra e the fingers approach at ``opening + e`` and close to the
    contact opening; the arc lifts the descending tips by
    ``lift(opening+e) - lift(opening)``, so the widened footprints may
    pass over anything lower than ``z + lift(opening+e) - lift(opening)``.
    Expansion stops at the first infeasible step.
    """
    out = [handle]
    dvec = np.array([np.cos(handle.angle), np.sin(handle.angle)])
    nvec = np.array([-dvec[1], dvec[0]])
    fa, fc = _footprint_points(gripper, hm.grid.cell_size)
    base_lift = gripper.lift(handle.opening)
    k = 1
    while True:
        e = k * gripper.extra_step
        if handle.opening + e > gripper.opening_cap:
            break
        clearance = handle.z + gripper.lift(handle.opening + e) - base_lift
        xr = hm.grid.x_range
        yr = hm.grid.y_range
        ok = True
        for side in (-1.0, 1.0):
            fx = handle.x + side * (handle.opening + e) / 2.0 * dvec[0]
            fy = handle.y + side * (handle.opening + e) / 2.0 * dvec[1]
            # never open out into unobserved ground
            if not (xr[0] <= fx <= xr[1] and yr[0] <= fy <= yr[1]):
                ok = False
                break
            xs = fx + fa * dvec[0] + fc * nvec[0]
            ys = fy + fa * dvec[1] + fc * nvec[1]
            h, _ = sample_bilinear(hm, xs, ys)
            if h.max() >= clearance:
                ok = False
                break
        if not ok:
            break
        out.append(Handle(handle.x, handle.y, handle.angle, handle.opening,
                          e, handle.z, handle.weight))
        k += 1
    return out


def generate_candidates(hm: Heightmap, gripper: GripperModel, rng,
                        angle_count=8, sample_count=200):
    """Full candidate generation over the height map.

    Runs the two-stage line search for ``angle_count`` grasp directions
    spread over half a turn, draws ``sample_count`` handles by weight and
    expands each distinct one with extra openings.  Flat or empty maps
    yield an empty list.
    """
    cell = hm.grid.cell_size
    along_win = _odd_cells(gripper.finger_length, cell)
    across_win = _odd_cells(gripper.finger_width, cell)
    min_sep = max(2, int(np.ceil(gripper.min_opening / cell)))
    max_sep = int(np.floor(gripper.max_opening / cell))

    grids = []
    rec_angle, rec_row, rec_s0, rec_s1, rec_w, rec_z = [], [], [], [], [], []
    for ai in range(angle_count):
        angle = np.pi * ai / angle_count
        lg = resample_line_grid(hm, angle)
        filt = finger_max_filter(lg.heights, along_win, across_win)
        if HAS_NUMBA:
            cap = 2 * filt.size
            stack = np.empty(filt.shape[1], dtype=np.int64)
            row = np.empty(cap, dtype=np.int64)
            s0 = np.empty(cap, dtype=np.int64)
            s1 = np.empty(cap, dtype=np.int64)
            w = np.empty(cap)
            z = np.empty(cap)
            cnt = _enumerate_rows_nb(filt, min_sep, max_sep, stack,
                                     row, s0, s1, w, z)
            row, s0, s1, w, z = (row[:cnt].copy(), s0[:cnt].copy(),
                                 s1[:cnt].copy(), w[:cnt].copy(),
                                 z[:cnt].copy())
        else:
            row, s0, s1, w, z = _enumerate_rows_np(filt, min_sep, max_sep)
        grids.append(lg)
        rec_angle.append(np.full(len(row), ai, dtype=np.int64))
        rec_row.append(row)
        rec_s0.append(s0)
        rec_s1.append(s1)
        rec_w.append(w)
        rec_z.append(z)

    angle_idx = np.concatenate(rec_angle)
    row = np.concatenate(rec_row)
    s0 = np.concatenate(rec_s0)
    s1 = np.concatenate(rec_s1)
    w = np.concatenate(rec_w)
    z = np.concatenate(rec_z)
    if len(w) == 0:
        return []

    # world centre of each record; drop handles outside the map
    smid = (s0 + s1) / 2.0
    cx = np.empty(len(w))
    cy = np.empty(len(w))
    for ai, lg in enumerate(grids):
        m = angle_idx == ai
        c, sn = np.cos(lg.angle), np.sin(lg.angle)
        cx[m] = lg.ox + row[m] * cell * -sn + smid[m] * cell * c
        cy[m] = lg.oy + row[m] * cell * c + smid[m] * cell * sn
    xr = hm.grid.x_range
    yr = hm.grid.y_range
    inside = (cx >= xr[0]) & (cx <= xr[1]) & (cy >= yr[0]) & (cy <= yr[1])
    if not inside.any():
        return []
    keep = np.nonzero(inside)[0]

    drawn = sample_handles(w[keep], sample_count, rng)
    if len(drawn) == 0:
        return []
    # expansion is deterministic per record, so duplicates drawn by the
    # weighted sampling would only repeat identical handles; expand each
    # distinct record once
    out = []
    for ridx in keep[np.unique(drawn)]:
        ai = angle_idx[ridx]
        h = Handle(float(cx[ridx]), float(cy[ridx]), grids[ai].angle,
                   float((s1[ridx] - s0[ridx]) * cell), 0.0,
                   float(z[ridx]), float(w[ridx]))
        out.extend(expand_extra_openings(h, hm, gripper))
    return out


def dump_candidates_csv(path, handles):
    """Debug dump of a candidate list."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["x", "y", "angle_rad", "opening_m", "extra_m",
                     "z_m", "weight", "score"])
        for h in handles:
            wr.writerow([h.x, h.y, h.angle, h.opening, h.extra, h.z,
                         h.weight, "" if h.score is None else h.score])
