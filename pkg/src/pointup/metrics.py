"""Evaluation metrics: Chamfer, Hausdorff, point-to-surface, uniformity.

All nearest-neighbor computations are exact. Uniformity reuses the
uniform-loss machinery with a fixed disk-seeding start so repeated
evaluation is bit-identical.
"""

import csv
from dataclasses import dataclass, field

from .geometry import normalize_unit_sphere
from .losses import UniformLossConfig, nearest_distances, uniform_loss
from .mesh import points_to_mesh_distances
from .validation import check_points

DEFAULT_AREA_FRACTIONS = (0.004, 0.006, 0.008, 0.01, 0.012)


def chamfer(a, b):
    """Symmetric mean nearest-neighbor distance (unsquared Euclidean)."""
    a = check_points(a, "a")
    b = check_points(b, "b")
    return 0.5 * (nearest_distances(a, b).mean() + nearest_distances(b, a).mean())


def hausdorff(a, b):
    """Symmetric Hausdorff distance: the worse of the two directed maxima."""
    a = check_points(a, "a")
    b = check_points(b, "b")
    return max(float(nearest_distances(a, b).max()),
               float(nearest_distances(b, a).max()))


def p2f(points, mesh):
    """Per-point exact surface distance, reported as (mean, population std)."""
    d = points_to_mesh_distances(points, mesh)
    return float(d.mean()), float(d.std())


def uniformity(points, p, neighbors=5, seeds=None):
    """Uniformity score at a single disk-area fraction (lower is better).

    Evaluated in the cloud's own unit-sphere frame with disk seeding
    started from index 0, so the value is deterministic.
    """
    unit, _ = normalize_unit_sphere(check_points(points))
    cfg = UniformLossConfig(area_fractions=(p,), neighbors=neighbors,
                            seeds=seeds, seed_start=0)
    return float(uniform_loss(unit.points, cfg).data)


@dataclass
class MetricsReport:
    """One evaluated cloud, with optional surface metrics."""

    name: str = ""
    cd: float = None
    hd: float = None
    p2f_mean: float = None
    p2f_std: float = None
    uniformity: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_kv_text(self):
        lines = [f"name = {self.name}"]
        for key in ("cd", "hd", "p2f_mean", "p2f_std"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} = {value:.12g}")
        for p in sorted(self.uniformity):
            lines.append(f"uni_{p:g} = {self.uniformity[p]:.12g}")
        for key in sorted(self.metadata):
            lines.append(f"meta.{key} = {self.metadata[key]}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header(area_fractions=DEFAULT_AREA_FRACTIONS):
        return ["name", "cd", "hd", "p2f_mean", "p2f_std"] + \
            [f"uni_{p:g}" for p in area_fractions]

    def csv_row(self, area_fractions=DEFAULT_AREA_FRACTIONS):
        def fmt(value):
            return "" if value is None else f"{value:.12g}"

        return [self.name, fmt(self.cd), fmt(self.hd), fmt(self.p2f_mean),
                fmt(self.p2f_std)] + \
            [fmt(self.uniformity.get(p)) for p in area_fractions]


def evaluate_cloud(generated, reference=None, mesh=None, name="",
                   area_fractions=DEFAULT_AREA_FRACTIONS, uniformity_neighbors=5,
                   metadata=None):
    """Assemble a MetricsReport for one generated cloud.

    ``reference`` drives CD/HD; ``mesh`` drives P2F. Uniformity is always
    computed on the generated cloud itself.
    """
    gen = check_points(generated, "generated")
    report = MetricsReport(name=name, metadata=dict(metadata or {}))
    report.metadata.setdefault("generated_points", len(gen))
    if reference is not None:
        ref = check_points(reference, "reference")
        report.cd = chamfer(gen, ref)
        report.hd = hausdorff(gen, ref)
        report.metadata.setdefault("reference_points", len(ref))
    if mesh is not None:
        report.p2f_mean, report.p2f_std = p2f(gen, mesh)
    for p in area_fractions:
        report.uniformity[p] = uniformity(gen, p, neighbors=uniformity_neighbors)
    return report


def write_reports_csv(path, reports, area_fractions=DEFAULT_AREA_FRACTIONS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsReport.csv_header(area_fractions))
        for report in reports:
            writer.writerow(report.csv_row(area_fractions))
