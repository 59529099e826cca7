"""Pure-numpy fallback implementations of the hot kernels.

Kept bit-compatible with the jit backend: every kernel here produces exactly
the same bytes as its numba twin for the same arguments, except the neural
layers (conv/pool), whose float reductions legitimately differ in summation
order (they agree to ~1e-12 relative).

Two rules make the bit-compatibility work:

* randomness is counter-based splitmix64 (integer ops only, see aqpcal.rng),
  so vectorized and scalar evaluation agree exactly;
* the one transcendental in the generators (the log inside the polar normal
  transform) goes through math.log.  numpy's SIMD np.log differs from libm
  in the last ulp on this platform, while the jit backend compiles to libm.

Inherently sequential generators (chaos game, parcel splitting) run as plain
Python loops here; they are the price of the no-jit path and the benchmark
makes the gap visible.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

BACKEND = "numpy"

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_S30 = _U64(30)
_S27 = _U64(27)
_S31 = _U64(31)
_S11 = _U64(11)
_U1 = _U64(1)
_TO_UNIT = 2.0 ** -53


def _mix(z):
    # uint64 wraparound is the point here; numpy warns on scalar overflow
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def _keys(seed, start, count):
    ks = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_U64(seed) + ks * _GAMMA)


def _tof(keys):
    return (keys >> _S11).astype(np.float64) * _TO_UNIT


def _sub_seeds(seed, n):
    # per-point child streams: derive(seed, i) for i in 0..n-1
    tags = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_U64(seed) ^ _mix(tags * _GAMMA))


def _at(sub, pos):
    # value ``pos`` of each per-point stream
    with np.errstate(over="ignore"):
        return _mix(sub + (pos + _U1) * _GAMMA)


def _log_libm(a):
    # keep the log on the libm path; np.log's SIMD loop differs in the last ulp
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        out[i] = math.log(a[i])
    return out


def random_keys(seed, n):
    """Raw 64-bit stream values 0..n-1 for ``seed``."""
    return _keys(seed, 0, n)


# ---------------------------------------------------------------------------
# point generators (all emit into the unit square)
# ---------------------------------------------------------------------------


def gen_uniform(seed, n):
    u = _tof(_keys(seed, 0, 2 * n))
    return np.ascontiguousarray(u[0::2]), np.ascontiguousarray(u[1::2])


def gen_gaussian(seed, n, cx, cy, sigma):
    """Isotropic normal blob, redrawn until inside the unit square.

    Each point owns a derived substream; one attempt costs two uniforms
    (polar method), and both polar and out-of-square rejections restart the
    attempt on the same substream.
    """
    sub = _sub_seeds(seed, n)
    xs = np.empty(n)
    ys = np.empty(n)
    pend = np.arange(n)
    pos = np.zeros(n, dtype=np.uint64)
    while pend.size:
        sp = sub[pend]
        pp = pos[pend]
        u = 2.0 * _tof(_at(sp, pp)) - 1.0
        v = 2.0 * _tof(_at(sp, pp + _U1)) - 1.0
        pos[pend] = pp + _U64(2)
        s = u * u + v * v
        ok = (s > 0.0) & (s < 1.0)
        hit = np.flatnonzero(ok)
        if hit.size:
            sv = s[hit]
            m = np.sqrt((-2.0 * _log_libm(sv)) / sv)
            px = cx + sigma * (u[hit] * m)
            py = cy + sigma * (v[hit] * m)
            inside = (px >= 0.0) & (px <= 1.0) & (py >= 0.0) & (py <= 1.0)
            done = hit[inside]
            tgt = pend[done]
            xs[tgt] = px[inside]
            ys[tgt] = py[inside]
            keep = np.ones(pend.size, dtype=bool)
            keep[done] = False
            pend = pend[keep]
    return xs, ys


def gen_diagonal(seed, n, p_diag, buf, cos_t, sin_t):
    """Points on/about the main diagonal, optionally rotated about (0.5, 0.5)."""
    sq05 = math.sqrt(0.5)
    sub = _sub_seeds(seed, n)
    t = _tof(_at(sub, np.uint64(0)))
    c = _tof(_at(sub, _U1))
    off = np.zeros(n)
    pend = np.flatnonzero(c >= p_diag)
    pos = np.full(n, 2, dtype=np.uint64)
    while pend.size:
        sp = sub[pend]
        pp = pos[pend]
        u = 2.0 * _tof(_at(sp, pp)) - 1.0
        v = 2.0 * _tof(_at(sp, pp + _U1)) - 1.0
        pos[pend] = pp + _U64(2)
        s = u * u + v * v
        ok = (s > 0.0) & (s < 1.0)
        hit = np.flatnonzero(ok)
        if hit.size:
            sv = s[hit]
            m = np.sqrt((-2.0 * _log_libm(sv)) / sv)
            off[pend[hit]] = u[hit] * m
            keep = np.ones(pend.size, dtype=bool)
            keep[hit] = False
            pend = pend[keep]
    e = (buf * off) * sq05
    px = t - e
    py = t + e
    dx = px - 0.5
    dy = py - 0.5
    rx = 0.5 + (cos_t * dx - sin_t * dy)
    ry = 0.5 + (sin_t * dx + cos_t * dy)
    return np.clip(rx, 0.0, 1.0), np.clip(ry, 0.0, 1.0)


def gen_sierpinski(seed, n):
    """Chaos game on the triangle (0.5,0), (0,1), (1,1), 20 burn-in steps."""
    u = _tof(_keys(seed, 0, n + 20))
    vidx = (u * 3.0).astype(np.int64)
    vx = (0.5, 0.0, 1.0)
    vy = (0.0, 1.0, 1.0)
    xs = np.empty(n)
    ys = np.empty(n)
    x = 0.5
    y = 0.0
    for k in range(n + 20):  # the iteration is a recurrence; no way around the loop
        j = vidx[k]
        x = (x + vx[j]) * 0.5
        y = (y + vy[j]) * 0.5
        if k >= 20:
            xs[k - 20] = x
            ys[k - 20] = y
    return xs, ys


def gen_bit(seed, n, p_bit, digits):
    """Coordinates assembled from ``digits`` random binary digits each."""
    d = int(digits)
    u = _tof(_keys(seed, 0, n * 2 * d)).reshape(n, 2 * d)
    bits = (u < p_bit).astype(np.int64)
    w = (1 << np.arange(d - 1, -1, -1, dtype=np.int64))
    mx = bits[:, :d] @ w
    my = bits[:, d:] @ w
    scale = 2.0 ** -d
    return mx.astype(np.float64) * scale, my.astype(np.float64) * scale


def gen_parcel(seed, n, dither):
    """Centers of a recursive largest-box-first subdivision of the unit square."""
    total = 2 * n - 1
    boxes = np.empty((total, 4))
    boxes[0] = (0.0, 0.0, 1.0, 1.0)
    split = np.zeros(total, dtype=bool)
    us = _tof(_keys(seed, 0, max(n - 1, 1)))
    lo = 0.5 - dither
    sc = 2.0 * dither
    heap = [(-1.0, 0)]
    next_id = 1
    for k in range(n - 1):
        neg_area, bid = heapq.heappop(heap)
        x0, y0, x1, y1 = boxes[bid]
        w = x1 - x0
        h = y1 - y0
        frac = lo + us[k] * sc
        if w >= h:
            xs = x0 + frac * w
            a = (x0, y0, xs, y1)
            b = (xs, y0, x1, y1)
        else:
            ys = y0 + frac * h
            a = (x0, y0, x1, ys)
            b = (x0, ys, x1, y1)
        split[bid] = True
        for child in (a, b):
            boxes[next_id] = child
            area = (child[2] - child[0]) * (child[3] - child[1])
            heapq.heappush(heap, (-area, next_id))
            next_id += 1
    leaves = boxes[np.flatnonzero(~split[:next_id])]
    cx = (leaves[:, 0] + leaves[:, 2]) * 0.5
    cy = (leaves[:, 1] + leaves[:, 3]) * 0.5
    return np.ascontiguousarray(cx), np.ascontiguousarray(cy)


# ---------------------------------------------------------------------------
# counting, binning, sampling
# ---------------------------------------------------------------------------


def count_in_box(xs, ys, x0, y0, x1, y1):
    m = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    return int(np.count_nonzero(m))


def _bin_array(vs, lo, span, m):
    if span > 0.0:
        u = (vs - lo) / span
    else:
        u = np.zeros_like(vs)
    idx = (u * m).astype(np.int64)
    np.clip(idx, 0, m - 1, out=idx)
    return idx


def _edge_bin(v, lo, span, m):
    u = (v - lo) / span if span > 0.0 else 0.0
    return int(math.floor(u * m))


def histogram_counts(xs, ys, x0, y0, x1, y1, h):
    ix = _bin_array(xs, x0, x1 - x0, h)
    iy = _bin_array(ys, y0, y1 - y0, h)
    flat = iy * h + ix
    return np.bincount(flat, minlength=h * h).reshape(h, h).astype(np.int64)


def sort_by_cell(xs, ys, x0, y0, x1, y1, res):
    """Group points by grid cell: stable order array + CSR cell starts."""
    ix = _bin_array(xs, x0, x1 - x0, res)
    iy = _bin_array(ys, y0, y1 - y0, res)
    cells = iy * res + ix
    order = np.argsort(cells, kind="stable").astype(np.int64)
    counts = np.bincount(cells, minlength=res * res)
    starts = np.zeros(res * res + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return order, starts


def grid_count(sx, sy, starts, x0, y0, x1, y1, res, qx0, qy0, qx1, qy1):
    """Count points in a closed query box using the cell-grouped layout.

    Cells strictly between the cells holding the query edges are counted
    wholesale (bin monotonicity makes that exact); the edge ring is scanned
    point by point.
    """
    spanx = x1 - x0
    spany = y1 - y0
    jx_lo = _edge_bin(qx0, x0, spanx, res)
    jx_hi = _edge_bin(qx1, x0, spanx, res)
    jy_lo = _edge_bin(qy0, y0, spany, res)
    jy_hi = _edge_bin(qy1, y0, spany, res)

    total = 0
    iy0 = max(jy_lo + 1, 0)
    iy1 = min(jy_hi - 1, res - 1)
    ix0 = max(jx_lo + 1, 0)
    ix1 = min(jx_hi - 1, res - 1)
    for jy in range(iy0, iy1 + 1):
        if ix1 >= ix0:
            total += int(starts[jy * res + ix1 + 1] - starts[jy * res + ix0])

    by0 = max(jy_lo, 0)
    by1 = min(jy_hi, res - 1)
    bx0 = max(jx_lo, 0)
    bx1 = min(jx_hi, res - 1)
    for jy in range(by0, by1 + 1):
        edge_row = jy == jy_lo or jy == jy_hi
        if edge_row:
            cols = range(bx0, bx1 + 1)
        else:
            cols = [c for c in (jx_lo, jx_hi) if bx0 <= c <= bx1]
            if len(cols) == 2 and cols[0] == cols[1]:
                cols = cols[:1]
        for jx in cols:
            a = starts[jy * res + jx]
            b = starts[jy * res + jx + 1]
            if b > a:
                px = sx[a:b]
                py = sy[a:b]
                total += int(
                    np.count_nonzero(
                        (px >= qx0) & (px <= qx1) & (py >= qy0) & (py <= qy1)
                    )
                )
    return total


def sample_counts(xs, ys, seeds, s, boxes):
    """For each (seed, box) pair: points of the bottom-s-keys sample in the box.

    The sample behind ``seed`` is the s indices whose stream key is smallest,
    ties broken by index, which is a uniform without-replacement draw and is
    identical across backends.
    """
    n = xs.shape[0]
    out = np.empty(seeds.shape[0], dtype=np.int64)
    for p in range(seeds.shape[0]):
        qx0, qy0, qx1, qy1 = boxes[p]
        if s >= n:
            out[p] = count_in_box(xs, ys, qx0, qy0, qx1, qy1)
            continue
        keys = _keys(int(seeds[p]), 0, n)
        kth = np.partition(keys, s - 1)[s - 1]
        less = keys < kth
        inbox = (xs >= qx0) & (xs <= qx1) & (ys >= qy0) & (ys <= qy1)
        cnt = int(np.count_nonzero(less & inbox))
        t = s - int(np.count_nonzero(less))
        if t > 0:
            eq_idx = np.flatnonzero(keys == kth)[:t]
            cnt += int(np.count_nonzero(inbox[eq_idx]))
        out[p] = cnt
    return out


# ---------------------------------------------------------------------------
# neural-network layers (batch, NCHW, valid 3x3 conv, 2x2 max pool)
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b):
    bs, c, h_in, w_in = x.shape
    f = w.shape[0]
    oh, ow = h_in - 2, w_in - 2
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    xm = win.transpose(0, 2, 3, 1, 4, 5).reshape(bs * oh * ow, c * 9)
    y = xm @ w.reshape(f, c * 9).T
    y = y.reshape(bs, oh, ow, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y + b[None, :, None, None])


def conv2d_backward(x, w, gy):
    bs, c, h_in, w_in = x.shape
    f = w.shape[0]
    oh, ow = h_in - 2, w_in - 2
    gb = gy.sum(axis=(0, 2, 3))

    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    xm = win.transpose(0, 2, 3, 1, 4, 5).reshape(bs * oh * ow, c * 9)
    gym = gy.transpose(0, 2, 3, 1).reshape(bs * oh * ow, f)
    gw = (gym.T @ xm).reshape(f, c, 3, 3)

    gyp = np.zeros((bs, f, oh + 4, ow + 4))
    gyp[:, :, 2 : 2 + oh, 2 : 2 + ow] = gy
    gwin = np.lib.stride_tricks.sliding_window_view(gyp, (3, 3), axis=(2, 3))
    gm = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(bs * h_in * w_in, f * 9)
    wr = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, f * 9)
    gx = (gm @ wr.T).reshape(bs, h_in, w_in, c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx), gw, gb


def maxpool2_forward(x):
    bs, c, h_in, w_in = x.shape
    oh, ow = h_in // 2, w_in // 2
    v00 = x[:, :, 0 : 2 * oh : 2, 0 : 2 * ow : 2]
    v01 = x[:, :, 0 : 2 * oh : 2, 1 : 2 * ow : 2]
    v10 = x[:, :, 1 : 2 * oh : 2, 0 : 2 * ow : 2]
    v11 = x[:, :, 1 : 2 * oh : 2, 1 : 2 * ow : 2]
    stk = np.stack((v00, v01, v10, v11))
    arg = stk.argmax(axis=0).astype(np.int8)  # first max wins, same as the jit scan
    return stk.max(axis=0), arg


def maxpool2_backward(arg, gy, h_in, w_in):
    bs, c, oh, ow = gy.shape
    gx = np.zeros((bs, c, h_in, w_in))
    if oh == 0 or ow == 0:
        return gx
    dy = (arg >> 1).astype(np.int64)
    dx = (arg & 1).astype(np.int64)
    bi, ci, oyi, oxi = np.ogrid[:bs, :c, :oh, :ow]
    gx[bi, ci, 2 * oyi + dy, 2 * oxi + dx] = gy
    return gx
