"""On-disk formats: PLY clouds/meshes, the pose-graph text file, bundles and metrics CSV."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import geometry
from .octree.tree import Octree
from .sensor import SphericalSensorModel, load_sensor_config, save_sensor_config
from .submaps import LOOP_CLOSURE, ODOMETRY, PoseGraph, RegisteredCloudList, Submap

GRAPH_FILE = "graph.txt"
SENSOR_FILE = "sensor.yaml"
CLOUD_DIR = "clouds"
QUAT_TOL = 1e-6


class BundleError(ValueError):
    pass


# --- PLY -------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class PlyData:
    points: np.ndarray
    faces: np.ndarray | None = None
    width: int | None = None
    height: int | None = None
    colors: np.ndarray | None = None


def write_ply(path, points: np.ndarray, faces: np.ndarray | None = None, binary: bool = True,
              width: int | None = None, height: int | None = None, double: bool = True,
              edges: np.ndarray | None = None) -> None:
    """Write vertices (and optional triangles or polyline edges) as PLY."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ptype = "double" if double else "float"
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    if width is not None:
        head.append(f"obj_info width {int(width)}")
    if height is not None:
        head.append(f"obj_info height {int(height)}")
    head += [f"element vertex {len(pts)}"] + [f"property {ptype} {c}" for c in "xyz"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    if edges is not None:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        head += [f"element edge {len(edges)}", "property int vertex1", "property int vertex2"]
    head.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(pts.astype("<f8" if double else "<f4").tobytes())
            if faces is not None:
                rec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = faces
                fh.write(rec.tobytes())
            if edges is not None:
                fh.write(edges.astype("<i4").tobytes())
        else:
            fmt = "%.17g" if double else "%.9g"
            np.savetxt(fh, pts, fmt=fmt)
            if faces is not None:
                np.savetxt(fh, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")
            if edges is not None:
                np.savetxt(fh, edges, fmt="%d")


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise BundleError("not a PLY file")
    fmt = None
    elements = []
    info = {}
    while True:
        line = fh.readline()
        if not line:
            raise BundleError("PLY header not terminated")
        tok = line.decode("ascii").split()
        if not tok:
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] in ("obj_info", "comment") and len(tok) == 3 and tok[1] in ("width", "height"):
            info[tok[1]] = int(tok[2])
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise BundleError(f"unsupported PLY format {fmt}")
    return fmt, elements, info


def read_ply(path) -> PlyData:
    with open(path, "rb") as fh:
        fmt, elements, info = _parse_header(fh)
        data: dict[str, dict] = {}
        if fmt == "ascii":
            rows = iter(fh.read().decode("ascii").split("\n"))
            for name, count, props in elements:
                cols: dict[str, list] = {p[0]: [] for p in props}
                for _ in range(count):
                    vals = next(rows).split()
                    j = 0
                    for pname, ptype in props:
                        if isinstance(ptype, tuple):
                            n = int(vals[j])
                            cols[pname].append([int(v) for v in vals[j + 1:j + 1 + n]])
                            j += 1 + n
                        else:
                            cols[pname].append(float(vals[j]) if ptype[0] == "f" else int(vals[j]))
                            j += 1
                data[name] = {k: np.array(v) for k, v in cols.items()}
        else:
            buf = fh.read()
            pos = 0
            for name, count, props in elements:
                if any(isinstance(p[1], tuple) for p in props):
                    # lists are read one record at a time (only triangles expected)
                    (pname, (_, ctype, itype)), = props
                    cdt, idt = np.dtype("<" + ctype), np.dtype("<" + itype)
                    tri = np.dtype([("n", cdt), ("i", idt, (3,))])
                    if len(buf) >= pos + count * tri.itemsize:
                        rec = np.frombuffer(buf, tri, count, pos)
                        if np.all(rec["n"] == 3):
                            data[name] = {pname: rec["i"].astype(np.int64)}
                            pos += count * tri.itemsize
                            continue
                    out = []
                    for _ in range(count):
                        n = int(np.frombuffer(buf, cdt, 1, pos)[0])
                        pos += cdt.itemsize
                        out.append(np.frombuffer(buf, idt, n, pos))
                        pos += n * idt.itemsize
                    data[name] = {pname: np.array(out, dtype=np.int64).reshape(count, -1)}
                else:
                    dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                    arr = np.frombuffer(buf, dt, count, pos)
                    pos += count * dt.itemsize
                    data[name] = {p[0]: arr[p[0]] for p in props}
    v = data.get("vertex")
    if v is None:
        raise BundleError("PLY has no vertex element")
    pts = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    faces = None
    if "face" in data:
        key = next(iter(data["face"]))
        faces = np.asarray(data["face"][key], dtype=np.int64).reshape(-1, 3)
    colors = None
    if all(c in v for c in ("red", "green", "blue")):
        colors = np.column_stack([v["red"], v["green"], v["blue"]])
    return PlyData(pts, faces, info.get("width"), info.get("height"), colors)


def save_cloud(path, cloud: np.ndarray, binary: bool = True) -> None:
    """Organised (height, width, 3) cloud as a row-major PLY."""
    cloud = np.asarray(cloud, dtype=np.float64)
    h, w = cloud.shape[:2]
    write_ply(path, cloud.reshape(-1, 3), binary=binary, width=w, height=h)


def load_cloud(path) -> np.ndarray:
    ply = read_ply(path)
    if ply.width is None or ply.height is None:
        raise BundleError(f"{path}: organised cloud needs width/height in the header")
    if ply.width * ply.height != len(ply.points):
        raise BundleError(f"{path}: {len(ply.points)} points for {ply.height}x{ply.width}")
    return ply.points.reshape(ply.height, ply.width, 3)


# --- pose graph text file ----------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_graph(path, graph: PoseGraph) -> None:
    lines = ["# elasticmap pose graph: NODE idx tx ty tz qx qy qz qw / EDGE type from to"]
    t, q = geometry.pose_to_tq(graph.extrinsic)
    lines.append(f"EXTRINSIC {_fmt(t)} {_fmt(q)}")
    for k, T in enumerate(graph.poses):
        t, q = geometry.pose_to_tq(T)
        lines.append(f"NODE {k} {_fmt(t)} {_fmt(q)}")
    for kind, a, b in graph.edges:
        lines.append(f"EDGE {kind} {a} {b}")
    Path(path).write_text("\n".join(lines) + "\n")


def _pose_fields(tok, where) -> np.ndarray:
    try:
        vals = [float(v) for v in tok]
    except ValueError as exc:
        raise BundleError(f"{where}: {exc}") from exc
    if len(vals) != 7 or not all(math.isfinite(v) for v in vals):
        raise BundleError(f"{where}: expected 7 finite pose values")
    q = np.array(vals[3:])
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise BundleError(f"{where}: quaternion not normalised (|q| = {np.linalg.norm(q):.9f})")
    return geometry.pose_from_tq(vals[:3], q / np.linalg.norm(q))


def read_graph(path) -> PoseGraph:
    nodes: dict[int, np.ndarray] = {}
    edges = []
    extrinsic = np.eye(4)
    for no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        where = f"{path}:{no}"
        if tok[0] == "NODE":
            if len(tok) != 9:
                raise BundleError(f"{where}: NODE needs index + 7 values")
            try:
                k = int(tok[1])
            except ValueError as exc:
                raise BundleError(f"{where}: bad node index") from exc
            if k in nodes:
                raise BundleError(f"{where}: duplicate node {k}")
            nodes[k] = _pose_fields(tok[2:], where)
        elif tok[0] == "EDGE":
            if len(tok) != 4 or tok[1] not in (ODOMETRY, LOOP_CLOSURE):
                raise BundleError(f"{where}: EDGE needs type {{odometry|loop_closure}} from to")
            try:
                edges.append((tok[1], int(tok[2]), int(tok[3]), where))
            except ValueError as exc:
                raise BundleError(f"{where}: bad edge endpoint") from exc
        elif tok[0] == "EXTRINSIC":
            if len(tok) != 8:
                raise BundleError(f"{where}: EXTRINSIC needs 7 values")
            extrinsic = _pose_fields(tok[1:], where)
        else:
            raise BundleError(f"{where}: unknown record {tok[0]!r}")
    if sorted(nodes) != list(range(len(nodes))):
        raise BundleError(f"{path}: node indices must be 0..Q without gaps")
    graph = PoseGraph([nodes[k] for k in range(len(nodes))], [], extrinsic)
    for kind, a, b, where in edges:
        try:
            graph.add_edge(kind, a, b)
        except ValueError as exc:
            raise BundleError(f"{where}: {exc}") from exc
    return graph


# --- bundles -----------------------------------------------------------------

def save_bundle(path, rcl: RegisteredCloudList, model: SphericalSensorModel,
                binary: bool = True) -> None:
    root = Path(path)
    (root / CLOUD_DIR).mkdir(parents=True, exist_ok=True)
    write_graph(root / GRAPH_FILE, rcl.graph)
    save_sensor_config(model, root / SENSOR_FILE)
    for k, cloud in enumerate(rcl.clouds):
        save_cloud(root / CLOUD_DIR / f"{k:06d}.ply", cloud, binary)


def load_bundle(path, load_clouds: bool = True) -> tuple[RegisteredCloudList, SphericalSensorModel]:
    """Read ``graph.txt``, ``sensor.yaml`` and ``clouds/NNNNNN.ply`` from a directory."""
    root = Path(path)
    for name in (GRAPH_FILE, SENSOR_FILE):
        if not (root / name).is_file():
            raise BundleError(f"{root / name} does not exist")
    graph = read_graph(root / GRAPH_FILE)
    model = load_sensor_config(root / SENSOR_FILE)
    clouds = []
    for k in range(len(graph)):
        f = root / CLOUD_DIR / f"{k:06d}.ply"
        if not f.is_file():
            raise BundleError(f"{f} does not exist")
        if load_clouds:
            c = load_cloud(f)
            if c.shape[:2] != (model.height, model.width):
                raise BundleError(f"{f}: cloud is {c.shape[0]}x{c.shape[1]}, sensor is "
                                  f"{model.height}x{model.width}")
            clouds.append(c)
        else:
            clouds.append(f)
    return RegisteredCloudList(graph, clouds), model


# --- metrics -----------------------------------------------------------------

@dataclass
class MetricsRecord:
    scan_index: int
    node: int
    integration_ms: float
    resident_mb: float
    allocated_bytes: int
    live_submaps: int
    cells_s0: int
    cells_s1: int
    cells_s2: int
    cells_s3: int


METRICS_HEADER = [f.name for f in fields(MetricsRecord)]
_FLOAT_COLUMNS = {"integration_ms", "resident_mb"}


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise BundleError(f"{path}: unexpected metrics header {reader.fieldnames}")
        out = []
        for row in reader:
            kw = {k: float(row[k]) if k in _FLOAT_COLUMNS else int(row[k])
                  for k in METRICS_HEADER}
            out.append(MetricsRecord(**kw))
        return out


# --- submap snapshots --------------------------------------------------------

def save_submaps(path, submaps) -> None:
    """Write live submaps (trees, root poses, node sets) to one ``.npz`` file."""
    arrays: dict[str, np.ndarray] = {"ids": np.array([sm.id for sm in submaps], dtype=np.int64)}
    for sm in submaps:
        pre = f"s{sm.id}_"
        arrays.update(sm.tree.to_arrays(pre))
        arrays[pre + "root_pose"] = sm.root_pose
        arrays[pre + "root_node"] = np.array(sm.root_node)
        arrays[pre + "nodes"] = np.array(sm.nodes, dtype=np.int64)
    np.savez_compressed(path, **arrays)


def load_submaps(path) -> list:
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise BundleError(f"{path}: not a submap snapshot ({exc})") from exc
    if "ids" not in data:
        raise BundleError(f"{path}: not a submap snapshot")
    out = []
    for sid in data["ids"].tolist():
        pre = f"s{sid}_"
        tree = Octree.from_arrays(data, pre)
        sm = Submap(sid, tree, np.array(data[pre + "root_pose"]), int(data[pre + "root_node"]),
                    data[pre + "nodes"].tolist())
        sm.scans_integrated = len(sm.nodes)
        out.append(sm)
    return out
