"""Point containers, neighbor search, downsampling kernels, and augmentation.

All neighbor queries are exact. Tie-breaking is always by lower index so
results are reproducible across runs and platforms.
"""

from dataclasses import dataclass

import numpy as np

from . import structure
from .validation import check_count, check_index, check_points, check_ratio

BRUTE_FORCE_LIMIT = 512  # below this, brute force beats the grid index


class PointCloud:
    """Immutable ordered set of 3D points with finite coordinates."""

    __slots__ = ("_points",)

    def __init__(self, points):
        arr = check_points(points)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "_points", arr)

    @property
    def points(self):
        return self._points

    def __len__(self):
        return self._points.shape[0]

    def __repr__(self):
        return f"PointCloud({len(self)} points)"

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self._points.shape == other._points.shape and \
            bool(np.all(self._points == other._points))

    def centroid(self):
        return self._points.mean(axis=0)

    def select(self, indices):
        return PointCloud(self._points[np.asarray(indices, dtype=np.intp)])


@dataclass(frozen=True)
class NormalizationTransform:
    """Centroid shift + radius divisor mapping a cloud into the unit sphere."""

    center: tuple
    scale: float
    degenerate: bool = False  # all points identical, scale forced to 1

    def apply(self, points):
        pts = check_points(points)
        return (pts - np.asarray(self.center)) / self.scale

    def invert(self, points):
        pts = check_points(points)
        return pts * self.scale + np.asarray(self.center)


def normalize_unit_sphere(pc):
    """Center a cloud on its centroid and scale the farthest point to norm 1.

    Returns (normalized PointCloud, NormalizationTransform). A cloud with
    zero extent keeps scale 1 and is flagged degenerate on the transform.
    """
    pts = check_points(pc)
    center = pts.mean(axis=0)
    shifted = pts - center
    radius = float(np.sqrt((shifted * shifted).sum(axis=1)).max())
    degenerate = radius <= 0.0
    scale = 1.0 if degenerate else radius
    transform = NormalizationTransform(tuple(center.tolist()), scale, degenerate)
    return PointCloud(shifted / scale), transform


# ---------------------------------------------------------------------------
# exact nearest neighbors


class GridIndex:
    """Uniform-grid spatial hash for exact nearest-neighbor queries.

    Cells are scanned in expanding shells; the search stops only once the
    shell's minimum possible distance exceeds the current k-th best, so
    results match brute force exactly (including index tie-breaks).
    """

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        n = len(self.points)
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        extent = hi - lo
        # aim for a couple of points per cell; guard degenerate extents
        max_extent = float(extent.max())
        if max_extent <= 0.0:
            max_extent = 1.0
        volume = float(np.prod(np.maximum(extent, 1e-3 * max_extent)))
        self.cell = max((2.0 * volume / n) ** (1.0 / 3.0), 1e-12)
        self.origin = lo
        self.cells = {}
        keys = np.floor((self.points - lo) / self.cell).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(i)

    def _shell(self, base, ring):
        """Cell keys at Chebyshev distance ``ring`` from ``base``."""
        bx, by, bz = base
        if ring == 0:
            yield base
            return
        for dx in range(-ring, ring + 1):
            for dy in range(-ring, ring + 1):
                for dz in range(-ring, ring + 1):
                    if max(abs(dx), abs(dy), abs(dz)) == ring:
                        yield (bx + dx, by + dy, bz + dz)

    def query(self, query_point, k, exclude=None):
        """Indices of the k nearest points to ``query_point``, sorted by
        (distance, index). ``exclude`` removes one index from candidacy."""
        q = np.asarray(query_point, dtype=np.float64)
        base = tuple(np.floor((q - self.origin) / self.cell).astype(np.int64).tolist())
        candidates = []
        dists = []
        ring = 0
        while True:
            for key in self._shell(base, ring):
                idx = self.cells.get(key)
                if not idx:
                    continue
                for i in idx:
                    if i == exclude:
                        continue
                    d = q - self.points[i]
                    candidates.append(i)
                    dists.append(float((d * d).sum()))
            # anything in an unscanned shell sits farther than ring * cell
            next_min = (ring * self.cell) ** 2
            if len(candidates) >= k:
                kth = np.partition(np.asarray(dists), k - 1)[k - 1]
                if next_min > kth:
                    break
            ring += 1
            if ring > 2 and not self._ring_possible(base, ring):
                break
        order = np.lexsort((np.asarray(candidates), np.asarray(dists)))
        return np.asarray(candidates, dtype=np.intp)[order[:k]]

    def _ring_possible(self, base, ring):
        # any occupied cell at Chebyshev distance >= ring left?
        for key in self.cells:
            if max(abs(key[0] - base[0]), abs(key[1] - base[1]),
                   abs(key[2] - base[2])) >= ring:
                return True
        return False


def _brute_knn_single(points, k, query_index):
    diff = points - points[query_index]
    d2 = (diff * diff).sum(axis=1)
    d2[query_index] = np.inf
    order = np.lexsort((np.arange(len(points)), d2))
    return order[:k].astype(np.intp)


def knn(pc, k, query_index):
    """Indices of the k nearest neighbors of one point (itself excluded).

    Ties break toward the lower index. Raises for k >= N.
    """
    pts = check_points(pc)
    n = len(pts)
    k = check_count(k, "k")
    query_index = check_index(query_index, n, "query_index")
    if k >= n:
        raise ValueError(f"insufficient points: k={k} requires N > k, got N={n}")
    if n < BRUTE_FORCE_LIMIT:
        return _brute_knn_single(pts, k, query_index)
    grid = GridIndex(pts)
    return grid.query(pts[query_index], k, exclude=query_index)


def knn_all(points, k, chunk=512):
    """(N, k) neighbor indices for every point, excluding self.

    Exact, with (distance, index) tie-breaking identical to ``knn``.
    Chunked so the distance matrix never exceeds chunk*N entries.
    """
    return structure.cached("knn_all", lambda: _knn_all(points, k, chunk))


def _knn_all(points, k, chunk):
    pts = check_points(points)
    n = len(pts)
    if k >= n:
        raise ValueError(f"insufficient points: k={k} requires N > k, got N={n}")
    out = np.empty((n, k), dtype=np.intp)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps equal distances in index order
        order = np.argsort(d2, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def fps(pc, m, seed_index=0):
    """Greedy farthest-point subset of size m, starting at ``seed_index``.

    Each pick maximizes the minimum distance to the already-selected set;
    ties break toward the lower index. Output order is selection order.
    """
    pts = check_points(pc)
    n = len(pts)
    m = check_count(m, "m", minimum=1, maximum=n)
    seed_index = check_index(seed_index, n, "seed_index")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = seed_index
    diff = pts - pts[seed_index]
    min_d2 = (diff * diff).sum(axis=1)
    min_d2[seed_index] = -1.0  # marks selected points so duplicates never re-win
    for i in range(1, m):
        nxt = int(np.argmax(min_d2))  # argmax returns the first (lowest) index on ties
        selected[i] = nxt
        diff = pts - pts[nxt]
        np.minimum(min_d2, (diff * diff).sum(axis=1), out=min_d2)
        min_d2[nxt] = -1.0
    return selected


def random_subsample(pc, m, seed):
    """m distinct indices, uniform without replacement, deterministic per seed."""
    pts = check_points(pc)
    n = len(pts)
    m = check_count(m, "m", minimum=1, maximum=n)
    rng = np.random.default_rng(seed)
    return rng.choice(n, size=m, replace=False).astype(np.intp)


def build_lr_hr_pairs(pc, num_pairs, kernel, ratio, seed):
    """Synthesize (low-res, high-res) training pairs from a single cloud.

    Every high-res side is the full cloud; each low-res side holds
    floor(N / ratio) points chosen by the ``random`` or ``fps`` kernel.
    Each pair draws an independent subsample (random kernel) or a fresh
    random start point (fps kernel) so the pairs differ.
    """
    cloud = pc if isinstance(pc, PointCloud) else PointCloud(pc)
    num_pairs = check_count(num_pairs, "num_pairs")
    ratio = check_ratio(ratio)
    if kernel not in ("random", "fps"):
        raise ValueError(f"kernel must be 'random' or 'fps', got {kernel!r}")
    n = len(cloud)
    low = n // ratio
    if low < 8:
        raise ValueError(
            f"cloud too small for ratio: N={n} at ratio {ratio} leaves {low} points (< 8)")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(num_pairs):
        if kernel == "random":
            idx = rng.choice(n, size=low, replace=False)
        else:
            start = int(rng.integers(0, n))
            idx = fps(cloud, low, seed_index=start)
        pairs.append((cloud.select(idx), cloud))
    return pairs


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    """Random-augmentation ranges, all in the unit-sphere frame."""

    rotation: str = "so3"          # "so3", "axis" (z only), or "none"
    jitter_sigma: float = 0.005    # fraction of the unit radius
    jitter_clip: float = 3.0       # clip jitter at this many sigma
    shift_range: float = 0.1       # global shift, uniform per axis
    scale_low: float = 0.8
    scale_high: float = 1.2
    seed: int = 0

    def validate(self):
        if self.rotation not in ("so3", "axis", "none"):
            raise ValueError(f"rotation mode must be so3/axis/none, got {self.rotation!r}")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.shift_range < 0:
            raise ValueError("shift_range must be >= 0")
        if self.scale_low <= 0 or self.scale_high < self.scale_low:
            raise ValueError("scale range must be positive with low <= high")
        return self


@dataclass(frozen=True)
class RigidAugment:
    """One sampled rotation/shift/scale, applicable to several clouds."""

    rotation: np.ndarray  # (3, 3)
    shift: np.ndarray     # (3,)
    scale: float

    def apply(self, points, jitter_sigma=0.0, jitter_clip=3.0, rng=None):
        """rotate -> jitter (optional) -> shift -> scale."""
        pts = check_points(points) @ self.rotation.T
        if jitter_sigma > 0.0:
            noise = rng.normal(0.0, jitter_sigma, size=pts.shape)
            bound = jitter_clip * jitter_sigma
            np.clip(noise, -bound, bound, out=noise)
            pts = pts + noise
        return (pts + self.shift) * self.scale


def _random_rotation(rng, mode):
    if mode == "none":
        return np.eye(3)
    if mode == "axis":
        theta = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    # uniform SO(3) via a random unit quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def sample_augment(params, rng):
    """Draw one RigidAugment from ``params`` using ``rng``."""
    rotation = _random_rotation(rng, params.rotation)
    shift = rng.uniform(-params.shift_range, params.shift_range, size=3)
    scale = float(rng.uniform(params.scale_low, params.scale_high))
    return RigidAugment(rotation, shift, scale)


def augment(pc, params):
    """Apply one random rotation/jitter/shift/scale pass, seeded by params."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    rigid = sample_augment(params, rng)
    pts = rigid.apply(check_points(pc), jitter_sigma=params.jitter_sigma,
                      jitter_clip=params.jitter_clip, rng=rng)
    return PointCloud(pts)
