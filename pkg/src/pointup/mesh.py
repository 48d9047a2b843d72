"""Triangle meshes: parsing, surface sampling, and exact surface distance.

Supported formats: OBJ (v/f records), OFF, and PLY (ascii and
binary_little_endian). Polygons with more than three vertices are
fan-triangulated. Parsers report the offending line on failure.
"""

import heapq
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .geometry import GridIndex, PointCloud
from .validation import check_count, check_points

_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


class TriangleMesh:
    """Indexed triangle set: (V, 3) float64 vertices, (F, 3) int64 faces."""

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {self.faces.shape}")
        if not np.isfinite(self.vertices).all():
            raise ValueError("mesh vertices contain non-finite coordinates")
        if len(self.faces) == 0:
            raise ValueError("mesh has no faces")
        bad = (self.faces < 0) | (self.faces >= len(self.vertices))
        if bad.any():
            face = int(np.argwhere(bad.any(axis=1))[0][0])
            raise ValueError(f"face {face} references a vertex outside [0, {len(self.vertices)})")
        if not (self.face_areas() > 0).any():
            raise ValueError("mesh has no face with nonzero area")

    def triangles(self):
        return self.vertices[self.faces]

    def face_areas(self):
        tri = self.triangles()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.sqrt((cross * cross).sum(axis=1))

    def area(self):
        return float(self.face_areas().sum())

    def __repr__(self):
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.faces)} faces)"


@dataclass(frozen=True)
class SurfaceSample:
    """A surface point with its face and barycentric coordinates."""

    point: np.ndarray
    face_index: int
    barycentric: np.ndarray  # (u, v, w), nonnegative, summing to 1

    def reconstruct(self, mesh):
        a, b, c = mesh.triangles()[self.face_index]
        u, v, w = self.barycentric
        return u * a + v * b + w * c


def _fan(indices, face_origin, path, line):
    if len(indices) < 3:
        raise ParseError(path, line, f"face {face_origin} has fewer than 3 vertices")
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


# ---------------------------------------------------------------------------
# OBJ


def _parse_obj(path):
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(v) for v in rest[:3]])
                except ValueError:
                    raise ParseError(path, lineno, f"bad vertex coordinate in {line!r}") from None
            elif tag == "f":
                idx = []
                for token in rest:
                    head = token.split("/")[0]
                    try:
                        value = int(head)
                    except ValueError:
                        raise ParseError(path, lineno, f"bad face index {token!r}") from None
                    if value < 1:
                        raise ParseError(path, lineno,
                                         f"face {len(faces)} uses non-positive index {value}")
                    idx.append(value - 1)
                faces.extend(_fan(idx, len(faces), path, lineno))
            # vn / vt / mtllib / usemtl / o / g / s are ignored
    return vertices, faces


def _write_obj(path, mesh):
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# OFF


def _parse_off(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    cursor = 0

    def next_tokens():
        nonlocal cursor
        while cursor < len(lines):
            stripped = lines[cursor].strip()
            cursor += 1
            if stripped and not stripped.startswith("#"):
                return stripped.split(), cursor
        raise ParseError(path, cursor, "unexpected end of OFF file")

    tokens, lineno = next_tokens()
    if tokens[0] != "OFF":
        raise ParseError(path, lineno, "missing OFF header")
    if len(tokens) > 1:
        counts = tokens[1:4]
    else:
        counts, lineno = next_tokens()
    try:
        n_vert, n_face = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise ParseError(path, lineno, "bad OFF count line") from None

    vertices = []
    for _ in range(n_vert):
        tokens, lineno = next_tokens()
        try:
            vertices.append([float(v) for v in tokens[:3]])
        except ValueError:
            raise ParseError(path, lineno, "bad vertex line") from None
    faces = []
    for _ in range(n_face):
        tokens, lineno = next_tokens()
        try:
            count = int(tokens[0])
            idx = [int(v) for v in tokens[1:1 + count]]
        except (ValueError, IndexError):
            raise ParseError(path, lineno, "bad face line") from None
        if len(idx) != count:
            raise ParseError(path, lineno, f"face declares {count} vertices, lists {len(idx)}")
        faces.extend(_fan(idx, len(faces), path, lineno))
    return vertices, faces


def _write_off(path, mesh):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# ---------------------------------------------------------------------------
# PLY


def _parse_ply_header(fh, path):
    line = fh.readline()
    lineno = 1
    if line.strip() != b"ply":
        raise ParseError(path, lineno, "missing ply header")
    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError(path, lineno, "unexpected end of header")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(path, lineno, f"unsupported ply format {fmt!r}")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError(path, lineno, "property before any element")
            if tokens[1] == "list":
                count_t, value_t, name = tokens[2], tokens[3], tokens[4]
                elements[-1][2].append((name, value_t, count_t))
            else:
                type_name, prop_name = tokens[1], tokens[2]
                elements[-1][2].append((prop_name, type_name, None))
        elif tokens[0] == "end_header":
            break
        else:
            raise ParseError(path, lineno, f"unknown header keyword {tokens[0]!r}")
    if fmt is None:
        raise ParseError(path, lineno, "ply header missing format line")
    return fmt, elements, lineno


def _parse_ply(path):
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_ply_header(fh, path)
        vertices = []
        faces = []
        if fmt == "ascii":
            data_lines = fh.read().decode("ascii", errors="replace").splitlines()
            cursor = 0
            for name, count, props in elements:
                for _ in range(count):
                    while cursor < len(data_lines) and not data_lines[cursor].strip():
                        cursor += 1
                    if cursor >= len(data_lines):
                        raise ParseError(path, lineno + cursor + 1, "unexpected end of ply data")
                    tokens = data_lines[cursor].split()
                    cursor += 1
                    _consume_ply_row(name, props, tokens, vertices, faces,
                                     path, lineno + cursor)
        else:
            for name, count, props in elements:
                for _ in range(count):
                    values = []
                    for prop_name, value_t, count_t in props:
                        if count_t is not None:
                            n = _read_binary_scalar(fh, count_t, path)
                            values.append([_read_binary_scalar(fh, value_t, path)
                                           for _ in range(int(n))])
                        else:
                            values.append(_read_binary_scalar(fh, value_t, path))
                    _consume_ply_values(name, props, values, vertices, faces, path)
    return vertices, faces


def _read_binary_scalar(fh, type_name, path):
    code = _PLY_TYPES.get(type_name)
    if code is None:
        raise ParseError(path, 0, f"unsupported ply type {type_name!r}")
    size = struct.calcsize("<" + code)
    raw = fh.read(size)
    if len(raw) != size:
        raise ParseError(path, 0, "truncated ply payload")
    return struct.unpack("<" + code, raw)[0]


def _consume_ply_row(element, props, tokens, vertices, faces, path, lineno):
    values = []
    cursor = 0
    try:
        for prop_name, value_t, count_t in props:
            if count_t is not None:
                n = int(tokens[cursor])
                cursor += 1
                values.append([float(tokens[cursor + i]) for i in range(n)])
                cursor += n
            else:
                values.append(float(tokens[cursor]))
                cursor += 1
    except (ValueError, IndexError):
        raise ParseError(path, lineno, f"bad {element} row") from None
    _consume_ply_values(element, props, values, vertices, faces, path)


def _consume_ply_values(element, props, values, vertices, faces, path):
    names = [p[0] for p in props]
    if element == "vertex":
        try:
            xyz = [values[names.index(axis)] for axis in ("x", "y", "z")]
        except ValueError:
            raise ParseError(path, 0, "ply vertex element lacks x/y/z properties") from None
        vertices.append([float(v) for v in xyz])
    elif element == "face":
        key = "vertex_indices" if "vertex_indices" in names else "vertex_index"
        if key not in names:
            raise ParseError(path, 0, "ply face element lacks vertex_indices")
        idx = [int(v) for v in values[names.index(key)]]
        faces.extend(_fan(idx, len(faces), path, 0))


def write_cloud_ply(path, points, binary=True):
    """Write a vertex-only PLY point cloud (double precision)."""
    pts = check_points(points)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
        else:
            for p in pts:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n".encode("ascii"))


def read_cloud_ply(path):
    """Read a PLY file as a point cloud (faces, if any, are ignored)."""
    vertices, _ = _parse_ply(path)
    if not vertices:
        raise ParseError(path, 0, "ply file contains no vertices")
    return PointCloud(np.asarray(vertices))


def _write_ply(path, mesh, binary=False):
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
            for f in mesh.faces:
                fh.write(struct.pack("<Biii", 3, int(f[0]), int(f[1]), int(f[2])))
        else:
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n".encode("ascii"))
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# front door


def _format_from_path(path):
    suffix = str(path).rsplit(".", 1)[-1].lower()
    if suffix in ("obj", "off", "ply"):
        return suffix
    raise ValueError(f"cannot infer mesh format from {path!r}; pass format explicitly")


def parse_mesh(path, fmt=None):
    """Parse an OBJ/OFF/PLY file into a TriangleMesh."""
    fmt = fmt or _format_from_path(path)
    if fmt == "obj":
        vertices, faces = _parse_obj(path)
    elif fmt == "off":
        vertices, faces = _parse_off(path)
    elif fmt == "ply":
        vertices, faces = _parse_ply(path)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    if not vertices:
        raise ParseError(path, 0, "no vertices found")
    if not faces:
        raise ParseError(path, 0, "no faces found")
    try:
        return TriangleMesh(vertices, faces)
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None


def write_mesh(path, mesh, fmt=None, binary=False):
    fmt = fmt or _format_from_path(path)
    if fmt == "obj":
        _write_obj(path, mesh)
    elif fmt == "off":
        _write_off(path, mesh)
    elif fmt == "ply":
        _write_ply(path, mesh, binary=binary)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")


# ---------------------------------------------------------------------------
# surface sampling


def sample_surface(mesh, n, seed):
    """n area-weighted uniform surface samples.

    Returns (points (n,3), face_indices (n,), barycentric (n,3)). Faces are
    picked proportionally to area; the in-face position uses the square-root
    barycentric trick, which is exactly uniform.
    """
    n = check_count(n, "n")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cumulative = np.cumsum(areas)
    face_idx = np.searchsorted(cumulative, rng.random(n) * total)
    face_idx = np.minimum(face_idx, len(areas) - 1)

    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    u = 1.0 - r1
    v = r1 * (1.0 - r2)
    w = r1 * r2
    bary = np.stack([u, v, w], axis=1)
    tri = mesh.triangles()[face_idx]
    points = (tri * bary[:, :, None]).sum(axis=1)
    return points, face_idx.astype(np.intp), bary


def weighted_sample_elimination(points, n_keep, total_area):
    """Greedy blue-noise thinning: repeatedly drop the most crowded sample.

    Weights follow (1 - d / (2 r_max))^8 over neighbors within 2 r_max,
    with r_max derived from the surface area per kept sample. Deterministic:
    weight ties resolve toward the lower index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    n_keep = check_count(n_keep, "n_keep", minimum=1, maximum=n)
    if n_keep == n:
        return np.arange(n, dtype=np.intp)
    r_max = np.sqrt(total_area / (2.0 * np.sqrt(3.0) * n_keep))
    radius = 2.0 * r_max

    grid = GridIndex(pts)
    reach = max(1, int(np.ceil(radius / grid.cell)))
    neighbor_lists = [[] for _ in range(n)]
    for i in range(n):
        base = tuple(np.floor((pts[i] - grid.origin) / grid.cell).astype(np.int64).tolist())
        for ring in range(reach + 1):
            for key in grid._shell(base, ring):
                for j in grid.cells.get(key, ()):
                    if j <= i:
                        continue
                    d = pts[i] - pts[j]
                    dist = float(np.sqrt(d @ d))
                    if dist < radius:
                        neighbor_lists[i].append((j, dist))
                        neighbor_lists[j].append((i, dist))

    def pair_weight(dist):
        return (1.0 - dist / radius) ** 8

    weights = np.zeros(n)
    for i in range(n):
        weights[i] = sum(pair_weight(d) for _, d in neighbor_lists[i])

    alive = np.ones(n, dtype=bool)
    heap = [(-weights[i], i) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining > n_keep:
        neg_w, i = heapq.heappop(heap)
        if not alive[i]:
            continue
        if -neg_w != weights[i]:  # stale entry; reinsert with the live weight
            heapq.heappush(heap, (-weights[i], i))
            continue
        alive[i] = False
        remaining -= 1
        for j, dist in neighbor_lists[i]:
            if alive[j]:
                weights[j] -= pair_weight(dist)
                heapq.heappush(heap, (-weights[j], j))
    return np.flatnonzero(alive).astype(np.intp)


def sample_mesh_uniform(mesh, n, seed, mode="uniform"):
    """Sample n points from the surface; ``poisson`` mode oversamples 4x
    and thins with weighted sample elimination for blue-noise spacing."""
    if mode not in ("uniform", "poisson"):
        raise ValueError(f"mode must be 'uniform' or 'poisson', got {mode!r}")
    if mode == "uniform":
        points, _, _ = sample_surface(mesh, n, seed)
        return PointCloud(points)
    candidates, _, _ = sample_surface(mesh, 4 * n, seed)
    keep = weighted_sample_elimination(candidates, n, mesh.area())
    return PointCloud(candidates[keep])


# ---------------------------------------------------------------------------
# exact point-to-surface distance


def _segment_distance_sq(p, a, ab):
    """Squared distance from points p (...,3) to segments a + t*ab, t in [0,1]."""
    ab_sq = np.maximum((ab * ab).sum(axis=-1), 1e-300)
    t = ((p - a) * ab).sum(axis=-1) / ab_sq
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    d = p - closest
    return (d * d).sum(axis=-1)


def points_to_mesh_distances(points, mesh, chunk=256):
    """Exact Euclidean distance from each point to the nearest triangle.

    The closest point on a triangle is either the in-plane projection (when
    its barycentric coordinates are all nonnegative) or a point on one of
    the three edges; taking the minimum over those candidates is exact and
    robust to degenerate faces.
    """
    pts = check_points(points)
    tri = mesh.triangles()
    best = np.full(len(pts), np.inf)
    p = pts[:, None, :]
    for start in range(0, len(tri), chunk):
        t = tri[start:start + chunk]
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        ab, ac, bc = b - a, c - a, c - b
        d2 = _segment_distance_sq(p, a, ab)
        np.minimum(d2, _segment_distance_sq(p, a, ac), out=d2)
        np.minimum(d2, _segment_distance_sq(p, b, bc), out=d2)

        normal = np.cross(ab, ac)
        nn = (normal * normal).sum(axis=-1)
        valid = nn > 0
        if valid.any():
            ap = p - a
            d00 = (ab * ab).sum(axis=-1)
            d01 = (ab * ac).sum(axis=-1)
            d11 = (ac * ac).sum(axis=-1)
            d20 = (ap * ab).sum(axis=-1)
            d21 = (ap * ac).sum(axis=-1)
            denom = np.where(valid, nn, 1.0)
            v = (d11 * d20 - d01 * d21) / denom
            w = (d00 * d21 - d01 * d20) / denom
            inside = valid & (v >= 0.0) & (w >= 0.0) & (v + w <= 1.0)
            plane_d2 = (ap * normal).sum(axis=-1) ** 2 / denom
            d2 = np.where(inside, np.minimum(d2, plane_d2), d2)
        np.minimum(best, d2.min(axis=1), out=best)
    return np.sqrt(np.maximum(best, 0.0))


def point_to_mesh_distance(point, mesh):
    """Exact distance from a single point to the mesh surface."""
    return float(points_to_mesh_distances(np.asarray(point, dtype=np.float64).reshape(1, 3),
                                          mesh)[0])
