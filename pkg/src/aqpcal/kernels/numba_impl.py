"""numba @njit implementations of the hot kernels.

Same function surface and same results as numpy_impl: the random streams are
splitmix64 counters (integer ops, bit-identical), the transcendentals compile
to libm, and every float expression is parenthesized the same way as in the
numpy code.  Only conv/pool differ in float summation order (loop
accumulation here vs BLAS there); those agree to ~1e-12 relative.

prange is used only where iterations write disjoint outputs, so results do
not depend on scheduling or thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

BACKEND = "numba"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_U1 = np.uint64(1)
_U2 = np.uint64(2)
_TO_UNIT = 2.0 ** -53

_JIT = dict(cache=True, nogil=True)


@njit(inline="always", **_JIT)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", **_JIT)
def _key(seed, k):
    return _mix(seed + (k + _U1) * _GAMMA)


@njit(inline="always", **_JIT)
def _u01(seed, k):
    return (_key(seed, k) >> _S11) * _TO_UNIT


@njit(inline="always", **_JIT)
def _sub_seed(seed, i):
    # derive(seed, i): independent per-point stream
    return _mix(seed ^ _mix((np.uint64(i) + _U1) * _GAMMA))


@njit(**_JIT)
def _random_keys(seed, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _key(seed, np.uint64(i))
    return out


def random_keys(seed, n):
    return _random_keys(np.uint64(seed), n)


# ---------------------------------------------------------------------------
# point generators
# ---------------------------------------------------------------------------


@njit(parallel=True, **_JIT)
def _gen_uniform(seed, n):
    xs = np.empty(n)
    ys = np.empty(n)
    for i in prange(n):
        xs[i] = _u01(seed, np.uint64(2 * i))
        ys[i] = _u01(seed, np.uint64(2 * i + 1))
    return xs, ys


def gen_uniform(seed, n):
    return _gen_uniform(np.uint64(seed), n)


@njit(parallel=True, **_JIT)
def _gen_gaussian(seed, n, cx, cy, sigma):
    xs = np.empty(n)
    ys = np.empty(n)
    for i in prange(n):
        sp = _sub_seed(seed, i)
        pos = np.uint64(0)
        while True:
            u = 2.0 * _u01(sp, pos) - 1.0
            v = 2.0 * _u01(sp, pos + _U1) - 1.0
            pos = pos + _U2
            s = u * u + v * v
            if s <= 0.0 or s >= 1.0:
                continue
            m = math.sqrt((-2.0 * math.log(s)) / s)
            px = cx + sigma * (u * m)
            py = cy + sigma * (v * m)
            if 0.0 <= px <= 1.0 and 0.0 <= py <= 1.0:
                xs[i] = px
                ys[i] = py
                break
    return xs, ys


def gen_gaussian(seed, n, cx, cy, sigma):
    return _gen_gaussian(np.uint64(seed), n, cx, cy, sigma)


@njit(parallel=True, **_JIT)
def _gen_diagonal(seed, n, p_diag, buf, cos_t, sin_t):
    sq05 = math.sqrt(0.5)
    xs = np.empty(n)
    ys = np.empty(n)
    for i in prange(n):
        sp = _sub_seed(seed, i)
        t = _u01(sp, np.uint64(0))
        c = _u01(sp, _U1)
        off = 0.0
        if c >= p_diag:
            pos = np.uint64(2)
            while True:
                u = 2.0 * _u01(sp, pos) - 1.0
                v = 2.0 * _u01(sp, pos + _U1) - 1.0
                pos = pos + _U2
                s = u * u + v * v
                if s <= 0.0 or s >= 1.0:
                    continue
                m = math.sqrt((-2.0 * math.log(s)) / s)
                off = u * m
                break
        e = (buf * off) * sq05
        px = t - e
        py = t + e
        dx = px - 0.5
        dy = py - 0.5
        rx = 0.5 + (cos_t * dx - sin_t * dy)
        ry = 0.5 + (sin_t * dx + cos_t * dy)
        xs[i] = min(1.0, max(0.0, rx))
        ys[i] = min(1.0, max(0.0, ry))
    return xs, ys


def gen_diagonal(seed, n, p_diag, buf, cos_t, sin_t):
    return _gen_diagonal(np.uint64(seed), n, p_diag, buf, cos_t, sin_t)


@njit(**_JIT)
def _gen_sierpinski(seed, n):
    xs = np.empty(n)
    ys = np.empty(n)
    vx = (0.5, 0.0, 1.0)
    vy = (0.0, 1.0, 1.0)
    x = 0.5
    y = 0.0
    for k in range(n + 20):
        j = np.int64(_u01(seed, np.uint64(k)) * 3.0)
        x = (x + vx[j]) * 0.5
        y = (y + vy[j]) * 0.5
        if k >= 20:
            xs[k - 20] = x
            ys[k - 20] = y
    return xs, ys


def gen_sierpinski(seed, n):
    return _gen_sierpinski(np.uint64(seed), n)


@njit(parallel=True, **_JIT)
def _gen_bit(seed, n, p_bit, digits):
    xs = np.empty(n)
    ys = np.empty(n)
    scale = 2.0 ** -digits
    for i in prange(n):
        base = np.uint64(i * 2 * digits)
        mx = np.int64(0)
        my = np.int64(0)
        for j in range(digits):
            bx = 1 if _u01(seed, base + np.uint64(j)) < p_bit else 0
            by = 1 if _u01(seed, base + np.uint64(digits + j)) < p_bit else 0
            mx = mx * 2 + bx
            my = my * 2 + by
        xs[i] = mx * scale
        ys[i] = my * scale
    return xs, ys


def gen_bit(seed, n, p_bit, digits):
    return _gen_bit(np.uint64(seed), n, p_bit, digits)


@njit(**_JIT)
def _gen_parcel(seed, n, dither):
    total = 2 * n - 1
    boxes = np.empty((total, 4))
    boxes[0, 0] = 0.0
    boxes[0, 1] = 0.0
    boxes[0, 2] = 1.0
    boxes[0, 3] = 1.0
    split = np.zeros(total, dtype=np.bool_)
    lo = 0.5 - dither
    sc = 2.0 * dither
    # binary max-heap ordered by (area desc, id asc); matches heapq on (-area, id)
    heap_area = np.empty(total)
    heap_id = np.empty(total, dtype=np.int64)
    heap_area[0] = 1.0
    heap_id[0] = 0
    size = 1
    next_id = 1
    for k in range(n - 1):
        top_area = heap_area[0]
        bid = heap_id[0]
        size -= 1
        ta = heap_area[size]
        ti = heap_id[size]
        pos = 0
        while True:
            l = 2 * pos + 1
            r = l + 1
            best = pos
            ba = ta
            bi = ti
            if l < size and (heap_area[l] > ba or (heap_area[l] == ba and heap_id[l] < bi)):
                best = l
                ba = heap_area[l]
                bi = heap_id[l]
            if r < size and (heap_area[r] > ba or (heap_area[r] == ba and heap_id[r] < bi)):
                best = r
                ba = heap_area[r]
                bi = heap_id[r]
            if best == pos:
                break
            heap_area[pos] = heap_area[best]
            heap_id[pos] = heap_id[best]
            pos = best
        heap_area[pos] = ta
        heap_id[pos] = ti

        x0 = boxes[bid, 0]
        y0 = boxes[bid, 1]
        x1 = boxes[bid, 2]
        y1 = boxes[bid, 3]
        w = x1 - x0
        h = y1 - y0
        frac = lo + _u01(seed, np.uint64(k)) * sc
        if w >= h:
            xs = x0 + frac * w
            boxes[next_id, 0] = x0
            boxes[next_id, 1] = y0
            boxes[next_id, 2] = xs
            boxes[next_id, 3] = y1
            boxes[next_id + 1, 0] = xs
            boxes[next_id + 1, 1] = y0
            boxes[next_id + 1, 2] = x1
            boxes[next_id + 1, 3] = y1
        else:
            ys = y0 + frac * h
            boxes[next_id, 0] = x0
            boxes[next_id, 1] = y0
            boxes[next_id, 2] = x1
            boxes[next_id, 3] = ys
            boxes[next_id + 1, 0] = x0
            boxes[next_id + 1, 1] = ys
            boxes[next_id + 1, 2] = x1
            boxes[next_id + 1, 3] = y1
        split[bid] = True
        for cid in range(next_id, next_id + 2):
            area = (boxes[cid, 2] - boxes[cid, 0]) * (boxes[cid, 3] - boxes[cid, 1])
            pos = size
            size += 1
            while pos > 0:
                parent = (pos - 1) // 2
                pa = heap_area[parent]
                pi = heap_id[parent]
                if area > pa or (area == pa and cid < pi):
                    heap_area[pos] = pa
                    heap_id[pos] = pi
                    pos = parent
                else:
                    break
            heap_area[pos] = area
            heap_id[pos] = cid
        next_id += 2

    cx = np.empty(n)
    cy = np.empty(n)
    m = 0
    for i in range(next_id):
        if not split[i]:
            cx[m] = (boxes[i, 0] + boxes[i, 2]) * 0.5
            cy[m] = (boxes[i, 1] + boxes[i, 3]) * 0.5
            m += 1
    return cx, cy


def gen_parcel(seed, n, dither):
    return _gen_parcel(np.uint64(seed), n, dither)


# ---------------------------------------------------------------------------
# counting, binning, sampling
# ---------------------------------------------------------------------------


@njit(**_JIT)
def _count_in_box(xs, ys, x0, y0, x1, y1):
    c = 0
    for i in range(xs.shape[0]):
        if x0 <= xs[i] <= x1 and y0 <= ys[i] <= y1:
            c += 1
    return c


def count_in_box(xs, ys, x0, y0, x1, y1):
    return int(_count_in_box(xs, ys, x0, y0, x1, y1))


@njit(inline="always", **_JIT)
def _bin_scalar(v, lo, span, m):
    if span > 0.0:
        u = (v - lo) / span
    else:
        u = 0.0
    idx = np.int64(u * m)
    if idx < 0:
        idx = 0
    elif idx > m - 1:
        idx = m - 1
    return idx


@njit(inline="always", **_JIT)
def _edge_bin(v, lo, span, m):
    if span > 0.0:
        u = (v - lo) / span
    else:
        u = 0.0
    return np.int64(math.floor(u * m))


@njit(**_JIT)
def _histogram_counts(xs, ys, x0, y0, x1, y1, h):
    counts = np.zeros((h, h), dtype=np.int64)
    spanx = x1 - x0
    spany = y1 - y0
    for i in range(xs.shape[0]):
        ix = _bin_scalar(xs[i], x0, spanx, h)
        iy = _bin_scalar(ys[i], y0, spany, h)
        counts[iy, ix] += 1
    return counts


def histogram_counts(xs, ys, x0, y0, x1, y1, h):
    return _histogram_counts(xs, ys, x0, y0, x1, y1, h)


@njit(**_JIT)
def _sort_by_cell(xs, ys, x0, y0, x1, y1, res):
    n = xs.shape[0]
    spanx = x1 - x0
    spany = y1 - y0
    cells = np.empty(n, dtype=np.int64)
    counts = np.zeros(res * res, dtype=np.int64)
    for i in range(n):
        c = _bin_scalar(ys[i], y0, spany, res) * res + _bin_scalar(xs[i], x0, spanx, res)
        cells[i] = c
        counts[c] += 1
    starts = np.zeros(res * res + 1, dtype=np.int64)
    for c in range(res * res):
        starts[c + 1] = starts[c] + counts[c]
    fill = starts[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = cells[i]
        order[fill[c]] = i
        fill[c] += 1
    return order, starts


def sort_by_cell(xs, ys, x0, y0, x1, y1, res):
    return _sort_by_cell(xs, ys, x0, y0, x1, y1, res)


@njit(**_JIT)
def _grid_count(sx, sy, starts, x0, y0, x1, y1, res, qx0, qy0, qx1, qy1):
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
    if ix1 >= ix0:
        for jy in range(iy0, iy1 + 1):
            total += starts[jy * res + ix1 + 1] - starts[jy * res + ix0]

    by0 = max(jy_lo, 0)
    by1 = min(jy_hi, res - 1)
    bx0 = max(jx_lo, 0)
    bx1 = min(jx_hi, res - 1)
    for jy in range(by0, by1 + 1):
        edge_row = jy == jy_lo or jy == jy_hi
        for jx in range(bx0, bx1 + 1):
            if not edge_row and jx != jx_lo and jx != jx_hi:
                continue
            a = starts[jy * res + jx]
            b = starts[jy * res + jx + 1]
            for t in range(a, b):
                if qx0 <= sx[t] <= qx1 and qy0 <= sy[t] <= qy1:
                    total += 1
    return total


def grid_count(sx, sy, starts, x0, y0, x1, y1, res, qx0, qy0, qx1, qy1):
    return int(_grid_count(sx, sy, starts, x0, y0, x1, y1, res, qx0, qy0, qx1, qy1))


@njit(parallel=True, **_JIT)
def _sample_counts(xs, ys, seeds, s, boxes):
    n = xs.shape[0]
    np_pairs = seeds.shape[0]
    out = np.empty(np_pairs, dtype=np.int64)
    for p in prange(np_pairs):
        qx0 = boxes[p, 0]
        qy0 = boxes[p, 1]
        qx1 = boxes[p, 2]
        qy1 = boxes[p, 3]
        if s >= n:
            out[p] = _count_in_box(xs, ys, qx0, qy0, qx1, qy1)
            continue
        base = seeds[p]
        keys = np.empty(n, dtype=np.uint64)
        for i in range(n):
            keys[i] = _key(base, np.uint64(i))
        kth = np.partition(keys, s - 1)[s - 1]
        c_less = 0
        for i in range(n):
            if keys[i] < kth:
                c_less += 1
        t = s - c_less
        cnt = 0
        for i in range(n):
            k = keys[i]
            if k < kth:
                if qx0 <= xs[i] <= qx1 and qy0 <= ys[i] <= qy1:
                    cnt += 1
            elif k == kth and t > 0:
                t -= 1
                if qx0 <= xs[i] <= qx1 and qy0 <= ys[i] <= qy1:
                    cnt += 1
        out[p] = cnt
    return out


def sample_counts(xs, ys, seeds, s, boxes):
    return _sample_counts(xs, ys, seeds, s, boxes)


# ---------------------------------------------------------------------------
# neural-network layers
# ---------------------------------------------------------------------------


@njit(parallel=True, **_JIT)
def _conv2d_forward(x, w, b):
    bs, c, h_in, w_in = x.shape
    f = w.shape[0]
    oh = h_in - 2
    ow = w_in - 2
    y = np.empty((bs, f, oh, ow))
    for bb in prange(bs):
        for ff in range(f):
            for oy in range(oh):
                for ox in range(ow):
                    acc = b[ff]
                    for cc in range(c):
                        acc += (
                            x[bb, cc, oy, ox] * w[ff, cc, 0, 0]
                            + x[bb, cc, oy, ox + 1] * w[ff, cc, 0, 1]
                            + x[bb, cc, oy, ox + 2] * w[ff, cc, 0, 2]
                            + x[bb, cc, oy + 1, ox] * w[ff, cc, 1, 0]
                            + x[bb, cc, oy + 1, ox + 1] * w[ff, cc, 1, 1]
                            + x[bb, cc, oy + 1, ox + 2] * w[ff, cc, 1, 2]
                            + x[bb, cc, oy + 2, ox] * w[ff, cc, 2, 0]
                            + x[bb, cc, oy + 2, ox + 1] * w[ff, cc, 2, 1]
                            + x[bb, cc, oy + 2, ox + 2] * w[ff, cc, 2, 2]
                        )
                    y[bb, ff, oy, ox] = acc
    return y


def conv2d_forward(x, w, b):
    return _conv2d_forward(x, w, b)


@njit(parallel=True, **_JIT)
def _conv2d_backward(x, w, gy):
    bs, c, h_in, w_in = x.shape
    f = w.shape[0]
    oh = h_in - 2
    ow = w_in - 2
    gx = np.zeros((bs, c, h_in, w_in))
    for bb in prange(bs):
        for ff in range(f):
            for oy in range(oh):
                for ox in range(ow):
                    g = gy[bb, ff, oy, ox]
                    for cc in range(c):
                        for ki in range(3):
                            gx[bb, cc, oy + ki, ox] += g * w[ff, cc, ki, 0]
                            gx[bb, cc, oy + ki, ox + 1] += g * w[ff, cc, ki, 1]
                            gx[bb, cc, oy + ki, ox + 2] += g * w[ff, cc, ki, 2]
    gw = np.zeros((f, c, 3, 3))
    for ff in prange(f):
        for bb in range(bs):
            for oy in range(oh):
                for ox in range(ow):
                    g = gy[bb, ff, oy, ox]
                    for cc in range(c):
                        for ki in range(3):
                            gw[ff, cc, ki, 0] += x[bb, cc, oy + ki, ox] * g
                            gw[ff, cc, ki, 1] += x[bb, cc, oy + ki, ox + 1] * g
                            gw[ff, cc, ki, 2] += x[bb, cc, oy + ki, ox + 2] * g
    return gx, gw


def conv2d_backward(x, w, gy):
    gx, gw = _conv2d_backward(x, w, gy)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


@njit(parallel=True, **_JIT)
def _maxpool2_forward(x):
    bs, c, h_in, w_in = x.shape
    oh = h_in // 2
    ow = w_in // 2
    y = np.empty((bs, c, oh, ow))
    arg = np.empty((bs, c, oh, ow), dtype=np.int8)
    for bb in prange(bs):
        for cc in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    iy = 2 * oy
                    ix = 2 * ox
                    best = x[bb, cc, iy, ix]
                    a = 0
                    v = x[bb, cc, iy, ix + 1]
                    if v > best:
                        best = v
                        a = 1
                    v = x[bb, cc, iy + 1, ix]
                    if v > best:
                        best = v
                        a = 2
                    v = x[bb, cc, iy + 1, ix + 1]
                    if v > best:
                        best = v
                        a = 3
                    y[bb, cc, oy, ox] = best
                    arg[bb, cc, oy, ox] = a
    return y, arg


def maxpool2_forward(x):
    return _maxpool2_forward(x)


@njit(parallel=True, **_JIT)
def _maxpool2_backward(arg, gy, h_in, w_in):
    bs, c, oh, ow = gy.shape
    gx = np.zeros((bs, c, h_in, w_in))
    for bb in prange(bs):
        for cc in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    a = arg[bb, cc, oy, ox]
                    gx[bb, cc, 2 * oy + (a >> 1), 2 * ox + (a & 1)] = gy[bb, cc, oy, ox]
    return gx


def maxpool2_backward(arg, gy, h_in, w_in):
    return _maxpool2_backward(arg, gy, h_in, w_in)
