"""RRT* path planning over a set of occupancy submaps."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .occupancy import classify_voxels
from .octree import _kernels as K
from .octree.morton import decode_array
from .octree.tree import BLOCK_SIDE, OCCUPANCY, Octree


class Space(enum.IntEnum):
    FREE = 0
    UNKNOWN = 1
    OCCUPIED = 2


@dataclass
class PlannerConfig:
    robot_radius: float = 0.3
    step: float = 1.0
    goal_tolerance: float = 0.3
    max_iterations: int = 5000
    gamma: float = 6.0
    allow_unknown: bool = False
    goal_bias: float = 0.05
    margin: float = 3.0
    bounds: tuple | None = None
    z_band: tuple | None = None

    def __post_init__(self):
        if self.robot_radius <= 0 or self.step <= 0:
            raise ValueError("robot radius and step must be positive")
        if self.goal_tolerance < 0 or self.max_iterations < 1:
            raise ValueError("invalid goal tolerance or iteration budget")


@dataclass
class Path:
    waypoints: np.ndarray
    length: float
    iterations: int = 0
    cost_history: list = field(default_factory=list)


class PlanningError(RuntimeError):
    pass


def _voxel_box(tree: Octree, centre: np.ndarray, radius: float):
    lo = np.floor(tree.to_voxel(centre - radius)).astype(np.int64)
    hi = np.floor(tree.to_voxel(centre + radius)).astype(np.int64)
    return lo, hi


def box_state(tree: Octree, centre: np.ndarray, radius: float) -> Space:
    """Worst state of the voxels overlapping the axis-aligned cube around ``centre``.

    Descends coarse-to-fine: a node whose subtree is entirely free (max
    log-odds below zero, fully observed) answers without visiting children.
    """
    lo, hi = _voxel_box(tree, np.asarray(centre, dtype=np.float64), radius)
    size = tree.size_voxels
    unknown = bool(np.any(lo < 0) or np.any(hi >= size))
    lo = np.clip(lo, 0, size - 1)
    hi = np.clip(hi, 0, size - 1)
    codes = np.zeros(1, dtype=np.int64)
    for level in range(tree.block_depth + 1):
        if codes.size == 0:
            break
        side = tree.node_side(level)
        base = decode_array(codes)
        overlap = np.all((base <= hi) & (base + side > lo), axis=1)
        codes, base = codes[overlap], base[overlap]
        inside = np.all((base >= lo) & (base + side - 1 <= hi), axis=1)
        lv = tree.levels[level]
        idx = lv.find(codes)
        if np.any(idx < 0):
            unknown = True
        ok = idx >= 0
        codes, base, inside, idx = codes[ok], base[ok], inside[ok], idx[ok]
        val = lv.value[idx]
        leaf = lv.leaf[idx]
        anyo = lv.any_obs[idx]
        allo = lv.all_obs[idx]
        if np.any(leaf & (val > 0)):
            return Space.OCCUPIED
        if np.any(leaf & ~(val < 0)):
            unknown = True
        free = ~leaf & allo & (val < 0)
        if np.any(~leaf & inside & anyo & (val > 0)):
            return Space.OCCUPIED
        if np.any(~leaf & ~anyo):
            unknown = True
        descend = ~leaf & ~free & anyo
        if level == tree.block_depth:
            for i in np.nonzero(descend)[0]:
                st = _block_box_state(tree, int(lv.slot[idx[i]]), base[i], lo, hi)
                if st == Space.OCCUPIED:
                    return st
                unknown |= st == Space.UNKNOWN
            break
        codes = (codes[descend][:, None] + tree.child_offsets(level)[None, :]).ravel()
    return Space.UNKNOWN if unknown else Space.FREE


def _block_box_state(tree: Octree, slot: int, base: np.ndarray, lo, hi) -> Space:
    s = int(tree.pool.scale[slot])
    n = BLOCK_SIDE >> s
    o = int(K.OFFSETS[s])
    a = np.maximum(lo - base, 0) >> s
    b = np.minimum(hi - base, BLOCK_SIDE - 1) >> s
    val = tree.pool.value[slot, o:o + n ** 3].reshape(n, n, n)[a[2]:b[2] + 1, a[1]:b[1] + 1, a[0]:b[0] + 1]
    obs = tree.pool.obs_any[slot, o:o + n ** 3].reshape(n, n, n)[a[2]:b[2] + 1, a[1]:b[1] + 1, a[0]:b[0] + 1]
    if np.any(obs & (val > 0)):
        return Space.OCCUPIED
    if not np.all(obs & (val < 0)):
        return Space.UNKNOWN
    return Space.FREE


def _combine(states, allow_unknown: bool) -> bool:
    if any(s == Space.OCCUPIED for s in states):
        return False
    if any(s == Space.FREE for s in states):
        return True
    return allow_unknown


def is_free(point, radius: float, submaps, allow_unknown: bool = False) -> bool:
    """Collision test of a ball against every submap.

    The ball is blocked if any submap sees an occupied voxel in its bounding
    cube, and free if some submap sees the whole cube as free. Otherwise it
    lies (partly) in unknown space and ``allow_unknown`` decides.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    states = []
    for sm in submaps:
        local = geometry.transform_points(geometry.invert(sm.root_pose), p[None])[0]
        states.append(box_state(sm.tree, local, radius))
    return _combine(states, allow_unknown)


MAX_DENSE_VOXELS = 3e7


class _DenseView:
    """Per-voxel state of one submap over a region, with 3-D prefix sums."""

    def __init__(self, submap, lo_map: np.ndarray, hi_map: np.ndarray, radius: float):
        tree = submap.tree
        self.tree = tree
        self.inv = geometry.invert(submap.root_pose)
        corners = np.array([[lo_map[i] if b == 0 else hi_map[i] for i, b in enumerate(c)]
                            for c in np.ndindex(2, 2, 2)])
        local = geometry.transform_points(self.inv, corners)
        self.req_lo = np.floor(tree.to_voxel(local.min(axis=0) - radius)).astype(np.int64) - 1
        self.req_hi = np.floor(tree.to_voxel(local.max(axis=0) + radius)).astype(np.int64) + 1
        # everything outside the stored content is unknown, so only that part is densified
        c_lo, c_hi = _content_box(tree)
        self.lo = np.maximum(self.req_lo, c_lo)
        hi = np.maximum(np.minimum(self.req_hi, c_hi), self.lo - 1)
        if np.prod((hi - self.lo + 1).astype(np.float64)) > MAX_DENSE_VOXELS:
            # too large to densify: every query goes to the tree
            self.req_hi = self.req_lo - 1
            hi = self.lo - 1
        self.shape = tuple(int(v) for v in hi - self.lo + 1)
        g = np.stack(np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij"), axis=-1)
        vi = g.reshape(-1, 3) + self.lo
        state = classify_voxels(tree, vi).reshape(self.shape)
        self.occ = self._prefix(state > 0)
        self.free = self._prefix(state < 0)

    @staticmethod
    def _prefix(mask):
        p = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
        p[1:, 1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
        return p

    @staticmethod
    def _box_sum(p, a, b):
        x0, y0, z0 = a.T
        x1, y1, z1 = (b + 1).T
        return (p[x1, y1, z1] - p[x0, y1, z1] - p[x1, y0, z1] - p[x1, y1, z0]
                + p[x0, y0, z1] + p[x0, y1, z0] + p[x1, y0, z0] - p[x0, y0, z0])

    def states(self, points: np.ndarray, radius: float) -> np.ndarray:
        local = geometry.transform_points(self.inv, points)
        va = np.floor(self.tree.to_voxel(local - radius)).astype(np.int64)
        vb = np.floor(self.tree.to_voxel(local + radius)).astype(np.int64)
        out = np.full(len(points), Space.UNKNOWN, dtype=np.int64)
        shape = np.array(self.shape)
        a, b = va - self.lo, vb - self.lo
        inside = np.all((a >= 0) & (b < shape), axis=1)
        overlap = np.all((b >= 0) & (a < shape), axis=1) & np.all(shape > 0)
        if overlap.any():
            a = np.clip(a[overlap], 0, shape - 1)
            b = np.clip(b[overlap], 0, shape - 1)
            vol = np.prod(b - a + 1, axis=1)
            occ = self._box_sum(self.occ, a, b) > 0
            free = inside[overlap] & (self._box_sum(self.free, a, b) == vol)
            out[overlap] = np.where(occ, Space.OCCUPIED,
                                    np.where(free, Space.FREE, Space.UNKNOWN))
        # boxes leaving the densified request are answered by the exact query
        in_req = np.all((va >= self.req_lo) & (vb <= self.req_hi), axis=1)
        out[~in_req & (out != Space.OCCUPIED)] = -1
        return out


def _content_box(tree: Octree):
    """Inclusive voxel bounds of allocated blocks and uniform leaves."""
    lo = np.full(3, np.iinfo(np.int64).max)
    hi = np.full(3, np.iinfo(np.int64).min)
    _, slots = tree.allocated_slots()
    if slots.size:
        c = tree.pool.coord[slots]
        lo = np.minimum(lo, c.min(axis=0))
        hi = np.maximum(hi, c.max(axis=0) + BLOCK_SIDE - 1)
    for level, codes, _ in tree.uniform_leaves():
        c = decode_array(codes)
        lo = np.minimum(lo, c.min(axis=0))
        hi = np.maximum(hi, c.max(axis=0) + tree.node_side(level) - 1)
    if np.any(lo > hi):
        return np.zeros(3, dtype=np.int64), np.full(3, -1, dtype=np.int64)
    return lo, hi


class CollisionChecker:
    """Batched ``is_free`` over a planning region, exact at voxel resolution."""

    def __init__(self, submaps, lo: np.ndarray, hi: np.ndarray, radius: float,
                 allow_unknown: bool):
        self.submaps = list(submaps)
        self.radius = radius
        self.allow_unknown = allow_unknown
        self.views = [_DenseView(sm, lo, hi, radius) for sm in self.submaps]

    def free(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        st = np.stack([v.states(points, self.radius) for v in self.views], axis=1) \
            if self.views else np.full((len(points), 0), Space.UNKNOWN)
        occ = np.any(st == Space.OCCUPIED, axis=1)
        free = np.any(st == Space.FREE, axis=1)
        res = ~occ & (free | self.allow_unknown)
        for i in np.nonzero(np.any(st < 0, axis=1) & ~occ)[0]:
            res[i] = is_free(points[i], self.radius, self.submaps, self.allow_unknown)
        return res

    def segment_free(self, a: np.ndarray, b: np.ndarray) -> bool:
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / (0.5 * self.radius))))
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        return bool(np.all(self.free(a + t * (b - a))))


def _region(start, goal, config: PlannerConfig):
    if config.bounds is not None:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in config.bounds)
    else:
        lo = np.minimum(start, goal) - config.margin
        hi = np.maximum(start, goal) + config.margin
    if config.z_band is not None:
        lo = lo.copy()
        hi = hi.copy()
        lo[2], hi[2] = config.z_band
    return lo, hi


def plan(start, goal, submaps, config: PlannerConfig | None = None, seed: int = 0) -> Path | None:
    """RRT* from ``start`` to ``goal``; ``None`` if the budget runs out.

    Raises :class:`PlanningError` when the start is in collision.
    """
    config = config or PlannerConfig()
    start = np.asarray(start, dtype=np.float64).reshape(3)
    goal = np.asarray(goal, dtype=np.float64).reshape(3)
    lo, hi = _region(start, goal, config)
    checker = CollisionChecker(submaps, lo, hi, config.robot_radius, config.allow_unknown)
    if not checker.free(start)[0]:
        raise PlanningError("start is in collision")
    if not checker.free(goal)[0]:
        return None
    rng = np.random.default_rng(seed)
    cap = config.max_iterations + 1
    nodes = np.empty((cap, 3))
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.zeros(cap)
    nodes[0] = start
    n = 1
    best = math.inf
    best_node = -1
    history = []
    for it in range(config.max_iterations):
        if rng.random() < config.goal_bias:
            x = goal.copy()
        else:
            x = lo + rng.random(3) * (hi - lo)
        d = np.linalg.norm(nodes[:n] - x, axis=1)
        near_i = int(np.argmin(d))
        if d[near_i] > config.step:
            x = nodes[near_i] + (x - nodes[near_i]) * (config.step / d[near_i])
        if not np.all((x >= lo) & (x <= hi)):
            history.append(best)
            continue
        if not checker.segment_free(nodes[near_i], x):
            history.append(best)
            continue
        r = min(config.gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / 3.0), config.step)
        dn = np.linalg.norm(nodes[:n] - x, axis=1)
        near = np.nonzero(dn <= max(r, 1e-12))[0]
        p, c = near_i, cost[near_i] + float(np.linalg.norm(x - nodes[near_i]))
        order = near[np.argsort(cost[near] + dn[near])]
        for j in order:
            cj = cost[j] + dn[j]
            if cj >= c:
                break
            if checker.segment_free(nodes[j], x):
                p, c = int(j), cj
                break
        k = n
        nodes[k], parent[k], cost[k] = x, p, c
        n += 1
        for j in near:
            if j == p:
                continue
            cj = c + dn[j]
            if cj + 1e-12 < cost[j] and checker.segment_free(x, nodes[j]):
                delta = cost[j] - cj
                parent[j] = k
                # propagate the cost decrease to the subtree
                stack = [int(j)]
                while stack:
                    u = stack.pop()
                    cost[u] -= delta
                    stack.extend(np.nonzero(parent[:n] == u)[0].tolist())
        reach = np.linalg.norm(nodes[:n] - goal, axis=1) <= config.goal_tolerance
        if reach.any():
            cand = np.nonzero(reach)[0]
            tot = cost[cand] + np.linalg.norm(nodes[cand] - goal, axis=1)
            i = int(np.argmin(tot))
            if tot[i] < best:
                best, best_node = float(tot[i]), int(cand[i])
        history.append(best)
    if best_node < 0:
        return None
    chain = []
    u = best_node
    while u >= 0:
        chain.append(nodes[u])
        u = parent[u]
    pts = np.array(chain[::-1])
    if np.linalg.norm(pts[-1] - goal) > 0:
        pts = np.vstack([pts, goal]) if checker.segment_free(pts[-1], goal) else pts
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return Path(pts, length, config.max_iterations, history)


def planning_submaps(submaps):
    out = [sm for sm in submaps if sm.tree.kind == OCCUPANCY]
    if not out:
        raise ValueError("planning needs occupancy submaps")
    return out
