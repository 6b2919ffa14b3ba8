"""Offline fusion of all submaps into one map-frame reconstruction and its export."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry
from .fusion import fuse_tree_into
from .io import write_ply
from .occupancy import classify_voxels
from .octree import _kernels as K
from .octree.morton import decode_array
from .octree.tree import BLOCK_SIDE, OCCUPANCY, Octree
from .tsdf import extract_mesh

FORMATS = ("mesh-ply", "cloud-ply", "occupancy-slice-png")


def tree_corners(tree: Octree) -> np.ndarray:
    """Tree-frame corners of every allocated block and uniform leaf."""
    _, slots = tree.allocated_slots()
    corners = []
    if slots.size:
        base = tree.pool.coord[slots]
        for off in np.ndindex(2, 2, 2):
            corners.append(base + np.array(off) * BLOCK_SIDE)
    for level, codes, _ in tree.uniform_leaves():
        base = decode_array(codes)
        for off in np.ndindex(2, 2, 2):
            corners.append(base + np.array(off) * tree.node_side(level))
    if not corners:
        return np.empty((0, 3))
    return tree.origin + np.concatenate(corners) * tree.voxel_dim


def _content_bounds(submaps) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for sm in submaps:
        pts = tree_corners(sm.tree)
        if len(pts) == 0:
            continue
        pts = geometry.transform_points(sm.root_pose, pts)
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    return lo, hi


def fuse_global(submaps, voxel_dim: float | None = None, w_max: float = 100.0,
                clamp=(-5.0, 5.0)) -> Octree:
    """Fuse submaps (in id order) into a fresh tree whose frame is the map frame."""
    submaps = sorted(submaps, key=lambda s: s.id)
    if not submaps:
        raise ValueError("need at least one submap")
    kind = submaps[0].tree.kind
    voxel = voxel_dim or submaps[0].tree.voxel_dim
    lo, hi = _content_bounds(submaps)
    if not np.all(np.isfinite(lo)):
        lo = hi = np.zeros(3)
    blk = BLOCK_SIDE * voxel
    origin = np.floor(lo / blk) * blk - blk
    extent = float(np.max(hi - origin)) + blk
    depth = max(4, math.ceil(math.log2(extent / voxel)))
    tree = Octree(voxel, kind=kind, origin=origin, max_depth=depth)
    for sm in submaps:
        fuse_tree_into(tree, sm.tree, sm.root_pose, w_max, clamp)
    return tree


def occupied_centres(tree: Octree) -> np.ndarray:
    """Centres of occupied cells (log-odds > 0) at each block's current scale."""
    _, slots = tree.allocated_slots()
    out = []
    for s in range(4):
        group = slots[tree.pool.scale[slots] == s]
        if group.size == 0:
            continue
        n = BLOCK_SIDE >> s
        o = int(K.OFFSETS[s])
        vals = tree.pool.value[group, o:o + n ** 3]
        obs = tree.pool.obs_any[group, o:o + n ** 3]
        b, i = np.nonzero(obs & (vals > 0))
        loc = np.stack([i % n, (i // n) % n, i // (n * n)], axis=1)
        out.append(tree.origin + (tree.pool.coord[group[b]] + (loc + 0.5) * (1 << s)) * tree.voxel_dim)
    return np.concatenate(out) if out else np.empty((0, 3))


def occupancy_slice(tree: Octree, z: float, resolution: float | None = None) -> np.ndarray:
    """Horizontal slice as uint8 image: 255 free, 0 occupied, 128 unknown (row 0 = max y)."""
    res = resolution or tree.voxel_dim
    corners = tree_corners(tree)
    if len(corners) == 0:
        return np.full((1, 1), 128, dtype=np.uint8)
    lo, hi = corners[:, :2].min(axis=0), corners[:, :2].max(axis=0)
    xs = np.arange(lo[0] + res / 2, hi[0], res)
    ys = np.arange(lo[1] + res / 2, hi[1], res)
    gx, gy = np.meshgrid(xs, ys[::-1])
    pts = np.stack([gx, gy, np.full(gx.shape, z)], axis=-1).reshape(-1, 3)
    vi = np.floor(tree.to_voxel(pts)).astype(np.int64)
    state = classify_voxels(tree, vi).reshape(gx.shape)
    img = np.full(gx.shape, 128, dtype=np.uint8)
    img[state < 0] = 255
    img[state > 0] = 0
    return img


def export_global(submaps, path, fmt: str = "mesh-ply", binary: bool = True,
                  slice_z: float | None = None, **kwargs) -> Octree:
    """Fuse all submaps into the map frame and write ``fmt`` to ``path``."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown export format {fmt!r}")
    submaps = list(submaps)
    if not submaps:
        raise ValueError("need at least one submap")
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"directory {path.parent} does not exist")
    tree = fuse_global(submaps, **kwargs)
    if fmt == "occupancy-slice-png":
        if tree.kind != OCCUPANCY:
            raise ValueError("occupancy slices need an occupancy pipeline")
        z = slice_z if slice_z is not None else float(np.mean([s.root_pose[2, 3] for s in submaps]))
        Image.fromarray(occupancy_slice(tree, z)).save(path)
    elif tree.kind == OCCUPANCY:
        if fmt == "mesh-ply":
            raise ValueError("meshes need the TSDF pipeline")
        write_ply(path, occupied_centres(tree), binary=binary)
    else:
        verts, faces = extract_mesh(tree)
        write_ply(path, verts, faces if fmt == "mesh-ply" else None, binary=binary)
    return tree


def global_vertices(submaps, **kwargs) -> np.ndarray:
    """Map-frame mesh vertices (TSDF) or occupied centres (occupancy) of the fused map."""
    tree = fuse_global(list(submaps), **kwargs)
    if tree.kind == OCCUPANCY:
        return occupied_centres(tree)
    return extract_mesh(tree)[0]
