"""Point cloud file IO.

XYZ: one point per line, three whitespace-separated reals, ``#`` comments.
Values are written with 9 significant digits, which is also the round-trip
guarantee. PLY clouds delegate to the mesh module (binary little-endian by
default, double precision).
"""

from .errors import ParseError
from .geometry import PointCloud
from .mesh import read_cloud_ply, write_cloud_ply
from .validation import check_points


def read_xyz(path):
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 coordinates, got {len(parts)}")
            try:
                points.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ParseError(path, lineno, f"bad coordinate in {line!r}") from None
    if not points:
        raise ParseError(path, 0, "no points found")
    return PointCloud(points)


def write_xyz(path, points):
    pts = check_points(points)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pts:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def read_point_cloud(path):
    """Read .xyz or .ply by extension."""
    name = str(path).lower()
    if name.endswith(".xyz"):
        return read_xyz(path)
    if name.endswith(".ply"):
        return read_cloud_ply(path)
    raise ValueError(f"unsupported point cloud extension: {path!r}")


def write_point_cloud(path, points):
    """Write .xyz (text) or .ply (binary) by extension."""
    name = str(path).lower()
    if name.endswith(".xyz"):
        write_xyz(path, points)
    elif name.endswith(".ply"):
        write_cloud_ply(path, points, binary=True)
    else:
        raise ValueError(f"unsupported point cloud extension: {path!r}")
