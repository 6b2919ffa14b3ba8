"""Numba kernels over the block pool.

Block cells for all four scales live in one row of 585 entries: 512 cells of
scale 0, then 64, 8 and 1. Within a scale cells are ordered x-fastest.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OFFSETS = np.array([0, 512, 576, 584], dtype=np.int64)
CELLS_PER_BLOCK = 585

MODE_TSDF = 0
MODE_OCC = 1

SKIP = 0
FREE = 1
MIXED = 2


@njit(cache=True, inline="always")
def _off(s):
    if s == 0:
        return 0
    if s == 1:
        return 512
    if s == 2:
        return 576
    return 584


@njit(cache=True)
def propagate_block(value, weight, obs_any, obs_all, slot, s0, mode):
    """Recompute scales ``s0 + 1 .. 3`` of one block from scale ``s0``."""
    for s in range(s0, 3):
        n = 8 >> s
        m = n >> 1
        fo = _off(s)
        co = _off(s + 1)
        for Z in range(m):
            for Y in range(m):
                for X in range(m):
                    sv = 0.0
                    sw = 0.0
                    mx = -np.inf
                    wmax = 0.0
                    anyo = False
                    allo = True
                    for dz in range(2):
                        for dy in range(2):
                            for dx in range(2):
                                i = fo + (2 * X + dx) + n * ((2 * Y + dy) + n * (2 * Z + dz))
                                w = weight[slot, i]
                                if w > wmax:
                                    wmax = w
                                if obs_any[slot, i]:
                                    anyo = True
                                    if mode == MODE_TSDF:
                                        sv += value[slot, i] * w
                                        sw += w
                                    elif value[slot, i] > mx:
                                        mx = value[slot, i]
                                if not obs_all[slot, i]:
                                    allo = False
                    j = co + X + m * (Y + m * Z)
                    if mode == MODE_TSDF:
                        value[slot, j] = sv / sw if sw > 0 else 0.0
                    else:
                        value[slot, j] = mx if anyo else 0.0
                    weight[slot, j] = wmax
                    obs_any[slot, j] = anyo
                    obs_all[slot, j] = allo


@njit(cache=True)
def set_block_scale(value, weight, obs_any, obs_all, scale, slot, new_s, mode):
    """Switch a block's integration scale.

    Refining copies each coarse cell into its children; coarsening promotes the
    already propagated coarse cells to atomic cells.
    """
    cur = scale[slot]
    if new_s == cur:
        return
    if new_s < cur:
        for s in range(cur - 1, new_s - 1, -1):
            n = 8 >> s
            m = n >> 1
            fo = _off(s)
            co = _off(s + 1)
            for z in range(n):
                for y in range(n):
                    for x in range(n):
                        i = fo + x + n * (y + n * z)
                        j = co + (x >> 1) + m * ((y >> 1) + m * (z >> 1))
                        value[slot, i] = value[slot, j]
                        weight[slot, i] = weight[slot, j]
                        obs_any[slot, i] = obs_any[slot, j]
                        obs_all[slot, i] = obs_any[slot, j]
    else:
        n = 8 >> new_s
        fo = _off(new_s)
        for i in range(fo, fo + n * n * n):
            obs_all[slot, i] = obs_any[slot, i]
        propagate_block(value, weight, obs_any, obs_all, slot, new_s, mode)
    scale[slot] = new_s


@njit(cache=True, inline="always")
def _bsearch_right(bounds, x):
    # index of last bound <= x, -1 if none
    lo = 0
    hi = bounds.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if bounds[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


@njit(cache=True, inline="always")
def project_sorted(x, y, z, el_bounds, az_bounds):
    """Sorted-layout (row, col) of a sensor-frame point; row -1 outside the FoV."""
    H = el_bounds.shape[0] - 1
    W = az_bounds.shape[0]
    elev = math.atan2(z, math.hypot(x, y))
    r = _bsearch_right(el_bounds, elev)
    if r < 0 or r >= H:
        return -1, -1
    a = math.atan2(y, x)
    two_pi = 2.0 * math.pi
    if a < 0.0:
        a += two_pi
    b0 = az_bounds[0]
    if a < b0:
        a += two_pi
    elif a >= b0 + two_pi:
        a -= two_pi
    c = _bsearch_right(az_bounds, a)
    if c < 0:
        c = 0
    elif c >= W:
        c = W - 1
    return r, c


@njit(cache=True)
def integrate_occupancy_blocks(value, weight, obs_any, obs_all, scale, coord, frame,
                               slots, new_scales, rot, trans, origin, voxel_dim,
                               ranges, valid, clipped, el_bounds, az_bounds,
                               l_min, l_max, clamp_lo, clamp_hi, k_sigma, frame_id,
                               cells_per_scale):
    """Projective log-odds update of every cell of the given blocks.

    ``rot``/``trans`` map tree coordinates to the sensor frame. Returns the
    number of updated cells per block.
    """
    nb = slots.shape[0]
    counts = np.zeros(nb, dtype=np.int64)
    for b in range(nb):
        slot = slots[b]
        s = new_scales[b]
        set_block_scale(value, weight, obs_any, obs_all, scale, slot, s, MODE_OCC)
        n = 8 >> s
        cs = 1 << s
        fo = _off(s)
        sigma = k_sigma * voxel_dim * cs
        cnt = 0
        for z in range(n):
            pz = origin[2] + (coord[slot, 2] + (z + 0.5) * cs) * voxel_dim
            for y in range(n):
                py = origin[1] + (coord[slot, 1] + (y + 0.5) * cs) * voxel_dim
                for x in range(n):
                    px = origin[0] + (coord[slot, 0] + (x + 0.5) * cs) * voxel_dim
                    lx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
                    ly = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
                    lz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
                    r, c = project_sorted(lx, ly, lz, el_bounds, az_bounds)
                    if r < 0 or not valid[r, c]:
                        continue
                    d_v = math.sqrt(lx * lx + ly * ly + lz * lz)
                    d_r = ranges[r, c]
                    if clipped[r, c]:
                        if d_v > d_r:
                            continue
                        delta = l_min
                    else:
                        if d_v > d_r + 3.0 * sigma:
                            continue
                        delta = l_max * (d_v - d_r) / sigma
                        if delta < l_min:
                            delta = l_min
                        elif delta > l_max:
                            delta = l_max
                    i = fo + x + n * (y + n * z)
                    v = value[slot, i] + delta
                    if v < clamp_lo:
                        v = clamp_lo
                    elif v > clamp_hi:
                        v = clamp_hi
                    value[slot, i] = v
                    weight[slot, i] += 1.0
                    obs_any[slot, i] = True
                    obs_all[slot, i] = True
                    cnt += 1
        if cnt > 0:
            propagate_block(value, weight, obs_any, obs_all, slot, s, MODE_OCC)
            frame[slot] = frame_id
            cells_per_scale[s] += cnt
        counts[b] = cnt
    return counts


@njit(cache=True)
def integrate_tsdf_blocks(value, weight, obs_any, obs_all, scale, coord, frame,
                          slots, new_scales, rot, trans, origin, voxel_dim,
                          ranges, usable, el_bounds, az_bounds,
                          k_tau, w_max, frame_id, cells_per_scale):
    """Projective TSDF update with truncation ``k_tau * voxel_dim * 2**s``."""
    nb = slots.shape[0]
    counts = np.zeros(nb, dtype=np.int64)
    for b in range(nb):
        slot = slots[b]
        s = new_scales[b]
        set_block_scale(value, weight, obs_any, obs_all, scale, slot, s, MODE_TSDF)
        n = 8 >> s
        cs = 1 << s
        fo = _off(s)
        tau = k_tau * voxel_dim * cs
        cnt = 0
        for z in range(n):
            pz = origin[2] + (coord[slot, 2] + (z + 0.5) * cs) * voxel_dim
            for y in range(n):
                py = origin[1] + (coord[slot, 1] + (y + 0.5) * cs) * voxel_dim
                for x in range(n):
                    px = origin[0] + (coord[slot, 0] + (x + 0.5) * cs) * voxel_dim
                    lx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
                    ly = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
                    lz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
                    r, c = project_sorted(lx, ly, lz, el_bounds, az_bounds)
                    if r < 0 or not usable[r, c]:
                        continue
                    d_v = math.sqrt(lx * lx + ly * ly + lz * lz)
                    sdf = ranges[r, c] - d_v
                    if sdf > tau or sdf < -tau:
                        continue
                    f = sdf / tau
                    if f > 1.0:
                        f = 1.0
                    elif f < -1.0:
                        f = -1.0
                    i = fo + x + n * (y + n * z)
                    w = weight[slot, i]
                    value[slot, i] = (value[slot, i] * w + f) / (w + 1.0)
                    weight[slot, i] = min(w + 1.0, w_max)
                    obs_any[slot, i] = True
                    obs_all[slot, i] = True
                    cnt += 1
        if cnt > 0:
            propagate_block(value, weight, obs_any, obs_all, slot, s, MODE_TSDF)
            frame[slot] = frame_id
            cells_per_scale[s] += cnt
        counts[b] = cnt
    return counts


@njit(cache=True)
def free_update_blocks(value, weight, obs_any, obs_all, scale, frame, slots,
                       deltas, clamp_lo, clamp_hi, frame_id, cells_per_scale):
    """Add ``deltas[b]`` to every current-scale cell of block ``slots[b]``."""
    for b in range(slots.shape[0]):
        slot = slots[b]
        s = scale[slot]
        n = 8 >> s
        fo = _off(s)
        for i in range(fo, fo + n * n * n):
            v = value[slot, i] + deltas[b]
            if v < clamp_lo:
                v = clamp_lo
            elif v > clamp_hi:
                v = clamp_hi
            value[slot, i] = v
            weight[slot, i] += 1.0
            obs_any[slot, i] = True
            obs_all[slot, i] = True
        cells_per_scale[s] += n * n * n
        propagate_block(value, weight, obs_any, obs_all, slot, s, MODE_OCC)
        frame[slot] = frame_id


@njit(cache=True)
def propagate_blocks(value, weight, obs_any, obs_all, scale, slots, mode):
    for b in range(slots.shape[0]):
        propagate_block(value, weight, obs_any, obs_all, slots[b], scale[slots[b]], mode)


@njit(cache=True)
def fill_block(value, weight, obs_any, obs_all, scale, slot, v, w, observed):
    for i in range(CELLS_PER_BLOCK):
        value[slot, i] = v
        weight[slot, i] = w
        obs_any[slot, i] = observed
        obs_all[slot, i] = observed
    scale[slot] = 3


@njit(cache=True)
def fuse_cells(value, weight, obs_any, obs_all, scale, slots, cells, src_scale,
               src_value, src_weight, mode, w_max, clamp_lo, clamp_hi):
    """Fuse source cells of one scale into target blocks, in input order.

    ``cells[k]`` is the (x, y, z) index of the source cell at ``src_scale``
    inside block ``slots[k]``. Coarser targets are refined first; finer targets
    receive the source value in every covered cell.
    """
    touched = np.zeros(slots.shape[0], dtype=np.bool_)
    for k in range(slots.shape[0]):
        slot = slots[k]
        if scale[slot] > src_scale:
            set_block_scale(value, weight, obs_any, obs_all, scale, slot, src_scale, mode)
        t = scale[slot]
        n = 8 >> t
        fo = _off(t)
        span = 1 << (src_scale - t)
        x0 = cells[k, 0] * span
        y0 = cells[k, 1] * span
        z0 = cells[k, 2] * span
        vs = src_value[k]
        ws = src_weight[k]
        for z in range(z0, z0 + span):
            for y in range(y0, y0 + span):
                for x in range(x0, x0 + span):
                    i = fo + x + n * (y + n * z)
                    if mode == MODE_TSDF:
                        wt = weight[slot, i]
                        if wt <= 0.0:
                            value[slot, i] = vs
                            weight[slot, i] = ws
                        else:
                            value[slot, i] = (value[slot, i] * wt + vs * ws) / (wt + ws)
                            weight[slot, i] = min(wt + ws, w_max)
                    else:
                        v = value[slot, i] + vs if obs_any[slot, i] else vs
                        if v < clamp_lo:
                            v = clamp_lo
                        elif v > clamp_hi:
                            v = clamp_hi
                        value[slot, i] = v
                        weight[slot, i] += ws
                    obs_any[slot, i] = True
                    obs_all[slot, i] = True
        touched[k] = True
    return touched


@njit(cache=True)
def build_sparse_table(a, is_min):
    """Per-row sparse table over columns of a column-doubled image."""
    H, W2 = a.shape
    K = 1
    while (1 << K) <= W2:
        K += 1
    fill = np.inf if is_min else -np.inf
    t = np.full((H, K, W2), fill)
    t[:, 0, :] = a
    for k in range(1, K):
        h = 1 << (k - 1)
        for r in range(H):
            for j in range(W2 - (1 << k) + 1):
                x0 = t[r, k - 1, j]
                x1 = t[r, k - 1, j + h]
                if is_min:
                    t[r, k, j] = x0 if x0 < x1 else x1
                else:
                    t[r, k, j] = x0 if x0 > x1 else x1
    return t


@njit(cache=True, inline="always")
def _log2_floor(n):
    k = 0
    while (2 << k) <= n:
        k += 1
    return k


@njit(cache=True)
def classify_nodes(centers, radius, min_table, max_table, el_bounds, az_bounds,
                   mode, front_skip):
    """Conservative frustum test of node bounding spheres (sensor frame).

    Returns SKIP when no cell inside can be updated, FREE when every cell lies
    strictly below the per-pixel ``min_table`` bound (occupancy only) and MIXED
    otherwise. With ``front_skip`` a node lying entirely before every pixel's
    lower bound is skipped as well (TSDF).
    """
    N = centers.shape[0]
    H = el_bounds.shape[0] - 1
    W = az_bounds.shape[0]
    out = np.empty(N, dtype=np.int8)
    two_pi = 2.0 * math.pi
    for i in range(N):
        cx = centers[i, 0]
        cy = centers[i, 1]
        cz = centers[i, 2]
        rho = radius[i]
        dist = math.sqrt(cx * cx + cy * cy + cz * cz)
        if dist <= rho * 1.0001 + 1e-9:
            out[i] = MIXED
            continue
        alpha = math.asin(min(1.0, rho / dist)) * 1.0001 + 1e-9
        ec = math.atan2(cz, math.hypot(cx, cy))
        e_lo = ec - alpha
        e_hi = ec + alpha
        if e_hi < el_bounds[0] or e_lo >= el_bounds[H]:
            out[i] = SKIP
            continue
        full_rows = e_lo >= el_bounds[0] and e_hi < el_bounds[H]
        r0 = _bsearch_right(el_bounds, e_lo) - 1
        r1 = _bsearch_right(el_bounds, e_hi) + 1
        if r0 < 0:
            r0 = 0
        if r1 > H - 1:
            r1 = H - 1
        full_cols = abs(ec) + alpha >= 0.5 * math.pi - 1e-6
        c0 = 0
        length = W
        if not full_cols:
            sb = math.sin(alpha) / math.cos(abs(ec))
            if sb >= 1.0:
                full_cols = True
            else:
                beta = math.asin(sb) * 1.0001 + 1e-9
                ac = math.atan2(cy, cx)
                b0 = az_bounds[0]
                lo_a = ac - beta
                hi_a = ac + beta
                wl = math.floor((lo_a - b0) / two_pi)
                wh = math.floor((hi_a - b0) / two_pi)
                u0 = wl * W + _bsearch_right(az_bounds, lo_a - wl * two_pi) - 1
                u1 = wh * W + _bsearch_right(az_bounds, hi_a - wh * two_pi) + 1
                length = u1 - u0 + 1
                if length >= W:
                    full_cols = True
                else:
                    c0 = u0 % W
        if full_cols:
            c0 = 0
            length = W
        k = _log2_floor(length)
        c1 = c0 + length - (1 << k)
        mn = np.inf
        mx = -np.inf
        for r in range(r0, r1 + 1):
            a = min_table[r, k, c0]
            b = min_table[r, k, c1]
            if a < mn:
                mn = a
            if b < mn:
                mn = b
            a = max_table[r, k, c0]
            b = max_table[r, k, c1]
            if a > mx:
                mx = a
            if b > mx:
                mx = b
        if dist - rho > mx:
            out[i] = SKIP
        elif front_skip and dist + rho < mn:
            out[i] = SKIP
        elif mode == MODE_OCC and full_rows and dist + rho < mn:
            out[i] = FREE
        else:
            out[i] = MIXED
    return out
