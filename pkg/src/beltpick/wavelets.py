"""Dual-tree complex wavelet transform, 2-D forward only.

The transform follows the classic two-stage construction: level 1 uses an
odd-length near-symmetric biorthogonal pair (13-tap lowpass, 19-tap
highpass) at full rate, levels 2+ use a quarter-sample-shift orthogonal
14-tap pair with decimation.  Four phase-shifted real trees are combined
into six complex subbands per level via the usual quad-to-complex
repacking, giving approximate shift invariance that a plain decimated DWT
does not have.

Filter provenance:

* ``H0O_13`` / ``G0O_19`` are generated exactly from the polynomial
  construction: base pair A(c) = 7/10 + c/2 - c^2/5 with its halfband
  dual B(c) = 5/7 + (41/70)c - (3/14)c^2 - (3/35)c^3 (c = cos w),
  composed with the substitution t(c) = (7/4)c - (3/4)c^3.  The taps are
  exact rationals (e.g. the 13-tap centre is 711/1280); the literals below
  are their correctly rounded doubles.  ``tests/test_wavelets.py`` re-runs
  the derivation in exact arithmetic and checks the halfband identity.
* ``QSHIFT_HL_14`` is the published length-14 quarter-shift lowpass; the
  four tree filters are its standard reversals/modulations.

Array convention: images are (rows, cols) float64.  "col" filters run
down axis 0, "row" filters along axis 1.  Boundary handling is symmetric
extension with repeated edge samples (reflection about -0.5 and n-0.5).
"""

import numpy as np

from .accel import HAS_NUMBA, njit

# 13-tap analysis lowpass, DC gain 1.  Exact values:
# [-9/5120, 0, 57/2560, -3/64, -247/5120, 19/64, 711/1280, ...mirror].
H0O_13 = np.array([
    -0.0017578125, 0.0, 0.022265625, -0.046875, -0.0482421875,
    0.296875, 0.55546875, 0.296875, -0.0482421875, -0.046875,
    0.022265625, 0.0, -0.0017578125,
])

# 19-tap synthesis lowpass (halfband dual of H0O_13), DC gain 1.
G0O_19 = np.array([
    7.0626395089285721e-05, 0.0, -1.3419015066964285e-03,
    -1.8833705357142857e-03, 7.1568080357142854e-03,
    2.3856026785714284e-02, -5.5643136160714285e-02,
    -5.1688058035714288e-02, 2.9975760323660716e-01,
    5.5943080357142860e-01, 2.9975760323660716e-01,
    -5.1688058035714288e-02, -5.5643136160714285e-02,
    2.3856026785714284e-02, 7.1568080357142854e-03,
    -1.8833705357142857e-03, -1.3419015066964285e-03, 0.0,
    7.0626395089285721e-05,
])

# 19-tap analysis highpass: G0O_19 modulated by (-1)^n about its centre.
_n19 = np.arange(19) - 9
H1O_19 = G0O_19 * ((-1.0) ** _n19)

# Published quarter-shift 14-tap lowpass prototype (sums to sqrt(2)).
QSHIFT_HL_14 = np.array([
    0.0032531427636532, -0.0038832119991585, 0.0346603468448535,
    -0.0388728012688278, -0.1172038876991153, 0.2752953846688820,
    0.7561456438925225, 0.5688104207121227, 0.0118660920337970,
    -0.1067118046866654, 0.0238253847949203, 0.0170252238815540,
    -0.0054394759372741, -0.0045568956284755,
])

# Tree filters for the decimated levels.  In coldfilt(X, f_even, f_odd)
# f_even consumes the even-indexed original samples, f_odd the odd ones.
# The even-phase tree takes the time-reversed prototype (+1/4 sample
# delay) so the two trees sit a half sample apart; swapping the pair
# destroys the analytic combination and roughly doubles the subband
# magnitude change under single-pixel shifts.
QS_LO_EVEN = QSHIFT_HL_14[::-1].copy()
QS_LO_ODD = QSHIFT_HL_14.copy()
_hi_a = QSHIFT_HL_14.copy()
_hi_a[0::2] = -_hi_a[0::2]  # HL(-z)
QS_HI_EVEN = _hi_a
QS_HI_ODD = _hi_a[::-1].copy()

_SQRT_HALF = np.sqrt(0.5)


def reflect_index(i, n):
    """Map arbitrary integer indices onto [0, n) by symmetric extension
    with repeated edge samples (period 2n)."""
    i = np.asarray(i) % (2 * n)
    return np.where(i >= n, 2 * n - 1 - i, i)


# ---------------------------------------------------------------------------
# numpy reference/fallback primitives (vectorised, batch-friendly: they
# accept (..., rows, cols) and filter the second-to-last axis)


def colfilter(X, h):
    """Filter axis -2 of X with the odd-length filter h (convolution,
    symmetric extension); output has the same shape as X."""
    X = np.asarray(X, dtype=np.float64)
    r = X.shape[-2]
    m = len(h)
    m2 = m // 2
    ext = reflect_index(np.arange(-m2, r + m2), r)
    Xe = X[..., ext, :]
    out = np.zeros_like(X)
    for k in range(m):
        out += h[k] * Xe[..., 2 * m2 - k:2 * m2 - k + r, :]
    return out


def rowfilter(X, h):
    return np.swapaxes(colfilter(np.swapaxes(X, -1, -2), h), -1, -2)


def coldfilt(X, f_even, f_odd):
    """Dual-tree decimating column filter.

    Rows of X (axis -2, length divisible by 4) are split into even/odd
    phases; f_even filters the even phase, f_odd the odd phase, each
    decimating by 4, and the two quarter-rate branch outputs are
    re-interleaved into a half-rate result.  Branch order follows the
    sign of sum(f_even * f_odd) so the interleave stays time-ordered.
    """
    X = np.asarray(X, dtype=np.float64)
    r = X.shape[-2]
    if r % 4 != 0:
        raise ValueError(f"row count {r} not divisible by 4")
    m = len(f_even)
    r4 = r // 4
    ext = reflect_index(np.arange(-m, r + m), r)
    E = X[..., ext, :]
    D = E[..., 0::2, :]
    O = E[..., 1::2, :]
    a = np.zeros(X.shape[:-2] + (r4, X.shape[-1]))
    b = np.zeros_like(a)
    for u in range(m):
        a += f_even[u] * D[..., m - u:m - u + 2 * r4:2, :]
        b += f_odd[u] * O[..., m - u:m - u + 2 * r4:2, :]
    out = np.empty(X.shape[:-2] + (r // 2, X.shape[-1]))
    if float(np.sum(f_even * f_odd)) > 0:
        out[..., 0::2, :] = a
        out[..., 1::2, :] = b
    else:
        out[..., 0::2, :] = b
        out[..., 1::2, :] = a
    return out


def rowdfilt(X, f_even, f_odd):
    return np.swapaxes(coldfilt(np.swapaxes(X, -1, -2), f_even, f_odd),
                       -1, -2)


def q2c(y):
    """Repack a real subband image of 2x2 phase quads into the two
    conjugate complex subbands (p - q, p + q)."""
    a = y[..., 0::2, 0::2]
    b = y[..., 0::2, 1::2]
    c = y[..., 1::2, 0::2]
    d = y[..., 1::2, 1::2]
    p = (a + 1j * b) * _SQRT_HALF
    q = (d - 1j * c) * _SQRT_HALF
    return p - q, p + q


def dtcwt2(image, levels=2):
    """Forward 2-D DTCWT.

    Returns ``(lowpass, bands)`` where ``bands[l]`` is a complex array of
    shape (6, r_l, c_l) holding the six directional subbands of level
    l+1.  Level 1 subbands are half the input size (quad repacking, no
    decimation); each further level halves again.

    The input must be 2-D with both dimensions divisible by 2**levels,
    and divisible by 4 at every decimated stage.
    """
    X = np.asarray(image, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D image")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    r, c = X.shape
    if r % (2 ** levels) or c % (2 ** levels):
        raise ValueError(
            f"image shape {X.shape} not divisible by 2**levels = {2 ** levels}")

    bands = []

    lo = colfilter(X, H0O_13)
    hi = colfilter(X, H1O_19)
    lolo = rowfilter(lo, H0O_13)
    level = np.empty((6,) + (r // 2, c // 2), dtype=np.complex128)
    level[0], level[5] = q2c(rowfilter(hi, H0O_13))
    level[2], level[3] = q2c(rowfilter(lo, H1O_19))
    level[1], level[4] = q2c(rowfilter(hi, H1O_19))
    bands.append(level)

    for _ in range(1, levels):
        rr, cc = lolo.shape
        if rr % 4 or cc % 4:
            raise ValueError(
                f"indivisible dimensions {lolo.shape} at decimated stage "
                "(need multiples of 4)")
        lo = coldfilt(lolo, QS_LO_EVEN, QS_LO_ODD)
        hi = coldfilt(lolo, QS_HI_EVEN, QS_HI_ODD)
        lolo = rowdfilt(lo, QS_LO_EVEN, QS_LO_ODD)
        level = np.empty((6, rr // 4, cc // 4), dtype=np.complex128)
        level[0], level[5] = q2c(rowdfilt(hi, QS_LO_EVEN, QS_LO_ODD))
        level[2], level[3] = q2c(rowdfilt(lo, QS_HI_EVEN, QS_HI_ODD))
        level[1], level[4] = q2c(rowdfilt(hi, QS_HI_EVEN, QS_HI_ODD))
        bands.append(level)

    return lolo, bands


# ---------------------------------------------------------------------------
# fused 2-level magnitude kernel for the feature pipeline (hot path)


@njit(cache=True)
def _reflect1(i, n):
    i = i % (2 * n)
    if i < 0:
        i += 2 * n
    if i >= n:
        i = 2 * n - 1 - i
    return i


@njit(cache=True)
def _colfilter_nb(X, h, out):
    r, c = X.shape
    m = h.shape[0]
    m2 = m // 2
    for n in range(r):
        for j in range(c):
            out[n, j] = 0.0
        for k in range(m):
            src = _reflect1(n + m2 - k, r)
            hk = h[k]
            for j in range(c):
                out[n, j] += hk * X[src, j]


@njit(cache=True)
def _rowfilter_nb(X, h, out):
    r, c = X.shape
    m = h.shape[0]
    m2 = m // 2
    for n in range(c):
        for i in range(r):
            out[i, n] = 0.0
        for k in range(m):
            src = _reflect1(n + m2 - k, c)
            hk = h[k]
            for i in range(r):
                out[i, n] += hk * X[i, src]


@njit(cache=True)
def _coldfilt_nb(X, fe, fo, swap, out):
    r, c = X.shape
    m = fe.shape[0]
    r4 = r // 4
    for j in range(r4):
        ei = 2 * j + 1 if swap else 2 * j
        oi = 2 * j if swap else 2 * j + 1
        for col in range(c):
            out[ei, col] = 0.0
            out[oi, col] = 0.0
        for u in range(m):
            se = _reflect1(4 * j + m - 2 * u, r)
            so = _reflect1(4 * j + m - 2 * u + 1, r)
            feu = fe[u]
            fou = fo[u]
            for col in range(c):
                out[ei, col] += feu * X[se, col]
                out[oi, col] += fou * X[so, col]


@njit(cache=True)
def _rowdfilt_nb(X, fe, fo, swap, out):
    r, c = X.shape
    m = fe.shape[0]
    c4 = c // 4
    for j in range(c4):
        ei = 2 * j + 1 if swap else 2 * j
        oi = 2 * j if swap else 2 * j + 1
        for row in range(r):
            out[row, ei] = 0.0
            out[row, oi] = 0.0
        for u in range(m):
            se = _reflect1(4 * j + m - 2 * u, c)
            so = _reflect1(4 * j + m - 2 * u + 1, c)
            feu = fe[u]
            fou = fo[u]
            for row in range(r):
                out[row, ei] += feu * X[row, se]
                out[row, oi] += fou * X[row, so]


@njit(cache=True)
def _q2c_mags_nb(y, out1, out2):
    r2 = y.shape[0] // 2
    c2 = y.shape[1] // 2
    for i in range(r2):
        for j in range(c2):
            a = y[2 * i, 2 * j]
            b = y[2 * i, 2 * j + 1]
            cc = y[2 * i + 1, 2 * j]
            d = y[2 * i + 1, 2 * j + 1]
            out1[i, j] = np.sqrt((a - d) ** 2 + (b + cc) ** 2) * _SQRT_HALF
            out2[i, j] = np.sqrt((a + d) ** 2 + (b - cc) ** 2) * _SQRT_HALF


@njit(cache=True)
def _transform2_mags_nb(stack, qlo_e, qlo_o, qn_lo, qhi_e, qhi_o, qn_hi,
                        h0, h1, l1, l2, lp):
    K, r, c = stack.shape
    A = np.empty((r, c))
    B = np.empty((r, c))
    C = np.empty((r, c))
    D = np.empty((r, c))
    E = np.empty((r // 2, c))
    F = np.empty((r // 2, c))
    G = np.empty((r // 2, c // 2))
    for k in range(K):
        X = stack[k]
        _colfilter_nb(X, h0, A)
        _colfilter_nb(X, h1, B)
        _rowfilter_nb(A, h0, C)
        _rowfilter_nb(B, h0, D)
        _q2c_mags_nb(D, l1[k, 0], l1[k, 5])
        _rowfilter_nb(A, h1, D)
        _q2c_mags_nb(D, l1[k, 2], l1[k, 3])
        _rowfilter_nb(B, h1, D)
        _q2c_mags_nb(D, l1[k, 1], l1[k, 4])
        _coldfilt_nb(C, qlo_e, qlo_o, qn_lo, E)
        _coldfilt_nb(C, qhi_e, qhi_o, qn_hi, F)
        _rowdfilt_nb(E, qlo_e, qlo_o, qn_lo, lp[k])
        _rowdfilt_nb(F, qlo_e, qlo_o, qn_lo, G)
        _q2c_mags_nb(G, l2[k, 0], l2[k, 5])
        _rowdfilt_nb(E, qhi_e, qhi_o, qn_hi, G)
        _q2c_mags_nb(G, l2[k, 2], l2[k, 3])
        _rowdfilt_nb(F, qhi_e, qhi_o, qn_hi, G)
        _q2c_mags_nb(G, l2[k, 1], l2[k, 4])


def _transform2_mags_np(stack, l1, l2, lp):
    A = colfilter(stack, H0O_13)
    B = colfilter(stack, H1O_19)
    C = rowfilter(A, H0O_13)
    z1, z2 = q2c(rowfilter(B, H0O_13))
    l1[:, 0], l1[:, 5] = np.abs(z1), np.abs(z2)
    z1, z2 = q2c(rowfilter(A, H1O_19))
    l1[:, 2], l1[:, 3] = np.abs(z1), np.abs(z2)
    z1, z2 = q2c(rowfilter(B, H1O_19))
    l1[:, 1], l1[:, 4] = np.abs(z1), np.abs(z2)
    E = coldfilt(C, QS_LO_EVEN, QS_LO_ODD)
    F = coldfilt(C, QS_HI_EVEN, QS_HI_ODD)
    lp[:] = rowdfilt(E, QS_LO_EVEN, QS_LO_ODD)
    z1, z2 = q2c(rowdfilt(F, QS_LO_EVEN, QS_LO_ODD))
    l2[:, 0], l2[:, 5] = np.abs(z1), np.abs(z2)
    z1, z2 = q2c(rowdfilt(E, QS_HI_EVEN, QS_HI_ODD))
    l2[:, 2], l2[:, 3] = np.abs(z1), np.abs(z2)
    z1, z2 = q2c(rowdfilt(F, QS_HI_EVEN, QS_HI_ODD))
    l2[:, 1], l2[:, 4] = np.abs(z1), np.abs(z2)


_QN_LO = bool(np.sum(QS_LO_EVEN * QS_LO_ODD) <= 0)
_QN_HI = bool(np.sum(QS_HI_EVEN * QS_HI_ODD) <= 0)


def transform2_magnitudes(stack):
    """Two-level DTCWT subband magnitudes for a stack of images.

    Parameters: stack (K, r, c), r and c divisible by 4.  Returns
    ``(l1, l2, lowpass)`` with shapes (K, 6, r/2, c/2), (K, 6, r/4, c/4)
    and (K, r/2, c/2).  This is the feature-extraction hot path; the
    numba and numpy implementations agree to float tolerance.
    """
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError("expected a (K, rows, cols) stack")
    K, r, c = stack.shape
    if r % 4 or c % 4:
        raise ValueError(f"stack image shape ({r}, {c}) not divisible by 4")
    l1 = np.empty((K, 6, r // 2, c // 2))
    l2 = np.empty((K, 6, r // 4, c // 4))
    lp = np.empty((K, r // 2, c // 2))
    if HAS_NUMBA:
        _transform2_mags_nb(stack, QS_LO_EVEN, QS_LO_ODD, _QN_LO,
                            QS_HI_EVEN, QS_HI_ODD, _QN_HI,
                            H0O_13, H1O_19, l1, l2, lp)
    else:
        _transform2_mags_np(stack, l1, l2, lp)
    return l1, l2, lp
