"""Training losses: reconstruction (EMD or Chamfer), repulsion, uniformity,
adversarial, and their weighted combination.

EMD solves a true assignment problem: an exact Hungarian solver up to 256
points, an epsilon-scaling auction above that (within 1 + rel_gap of the
optimum). Gradients treat the matching as locally constant, the standard
subgradient for piecewise-constant assignments.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import structure
from .geometry import fps, knn_all
from .validation import check_points

HUNGARIAN_LIMIT = 256
AUCTION_REL_GAP = 0.01


# ---------------------------------------------------------------------------
# assignment solvers


def pairwise_distances(a, b, chunk=512):
    """(len(a), len(b)) Euclidean distance matrix, built in row chunks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((len(a), len(b)))
    for start in range(0, len(a), chunk):
        stop = min(start + chunk, len(a))
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = np.sqrt((diff * diff).sum(axis=2))
    return out


def hungarian(cost):
    """Exact minimum-cost assignment (rows -> columns) via shortest
    augmenting paths with potentials. O(n^3), deterministic."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n != m:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    u = np.zeros(n)
    v = np.zeros(n + 1)
    col_to_row = np.full(n + 1, -1, dtype=np.intp)  # index n is the virtual column

    for i in range(n):
        col_to_row[n] = i
        j0 = n
        minv = np.full(n, np.inf)
        prev = np.full(n, -1, dtype=np.intp)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_to_row[j0]
            reduced = cost[i0, :] - u[i0] - v[:n]
            free = ~used[:n]
            better = free & (reduced < minv)
            minv[better] = reduced[better]
            prev[better] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            used_cols = np.flatnonzero(used)
            u[col_to_row[used_cols]] += delta
            v[used_cols] -= delta
            minv[free] -= delta
            j0 = j1
            if col_to_row[j0] == -1:
                break
        while j0 != n:
            j_prev = prev[j0]
            col_to_row[j0] = col_to_row[j_prev]
            j0 = j_prev

    row_to_col = np.empty(n, dtype=np.intp)
    row_to_col[col_to_row[:n]] = np.arange(n)
    return row_to_col


def auction(cost, rel_gap=AUCTION_REL_GAP):
    """Near-optimal assignment via epsilon-scaling forward auction.

    The returned matching costs at most (1 + rel_gap) times the optimum
    (epsilon-complementary slackness gives cost <= opt + n * eps_final, and
    eps_final is pinned to rel_gap * lower_bound / n).
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if n == 1:
        return np.zeros(1, dtype=np.intp)
    benefit = -cost
    scale = float(np.abs(cost).max())
    if scale <= 0.0:
        return np.arange(n, dtype=np.intp)
    lower_bound = float(cost.min(axis=1).sum())
    eps_final = max(rel_gap * lower_bound / n, scale * 1e-12)
    eps = max(scale / 4.0, eps_final)
    prices = np.zeros(n)
    while True:
        assignment = _auction_phase(benefit, prices, eps)
        if eps <= eps_final:
            return assignment
        eps = max(eps / 4.0, eps_final)


def _auction_phase(benefit, prices, eps):
    """One forward-auction phase with Jacobi (parallel) bidding.

    Unassigned persons bid best-value + eps over their second-best; the
    highest bid per object wins, ties to the lowest person index.
    """
    n = benefit.shape[0]
    person_to_obj = np.full(n, -1, dtype=np.intp)
    obj_to_person = np.full(n, -1, dtype=np.intp)
    rows = np.arange(n)
    while True:
        people = np.flatnonzero(person_to_obj < 0)
        if people.size == 0:
            return person_to_obj
        values = benefit[people] - prices
        best = np.argmax(values, axis=1)
        sub = rows[:people.size]
        best_val = values[sub, best]
        values[sub, best] = -np.inf
        second_val = values.max(axis=1)
        bids = prices[best] + (best_val - second_val) + eps

        order = np.lexsort((people, -bids, best))
        obj_sorted = best[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = obj_sorted[1:] != obj_sorted[:-1]
        winners = order[first]

        objs = best[winners]
        winner_people = people[winners]
        evicted = obj_to_person[objs]
        person_to_obj[evicted[evicted >= 0]] = -1
        obj_to_person[objs] = winner_people
        person_to_obj[winner_people] = objs
        prices[objs] = bids[winners]


def match_points(a, b):
    """Minimum-cost bijection a[i] -> b[match[i]] between equal-size sets."""
    a = check_points(a, "a")
    b = check_points(b, "b")
    if len(a) != len(b):
        raise ValueError(f"point sets must match in size, got {len(a)} and {len(b)}")

    def solve():
        cost = pairwise_distances(a, b)
        if len(a) <= HUNGARIAN_LIMIT:
            return hungarian(cost)
        return auction(cost)

    return structure.cached("match_points", solve)


def nearest_indices(src, dst, chunk=512):
    """Index into dst of the nearest point for every src point (ties: lower)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    out = np.empty(len(src), dtype=np.intp)
    for start in range(0, len(src), chunk):
        stop = min(start + chunk, len(src))
        diff = src[start:stop, None, :] - dst[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        out[start:stop] = np.argmin(d2, axis=1)
    return out


def nearest_distances(src, dst, chunk=512):
    """Distance to the nearest dst point for every src point."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        stop = min(start + chunk, len(src))
        diff = src[start:stop, None, :] - dst[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        out[start:stop] = np.sqrt(d2.min(axis=1))
    return out


# ---------------------------------------------------------------------------
# differentiable losses


def _coords(points):
    if isinstance(points, ad.Tensor):
        return points
    return ad.constant(check_points(points))


def emd(a, b):
    """Mean minimum-cost transport distance between equal-size clouds.

    Differentiable w.r.t. ``a`` with the matching held fixed: each point's
    gradient is the unit vector toward its matched partner.
    """
    a_t = _coords(a)
    b_t = _coords(b)
    if a_t.shape[0] != b_t.shape[0]:
        raise ValueError(f"size mismatch: {a_t.shape[0]} vs {b_t.shape[0]} points")
    assignment = match_points(a_t.data, b_t.data)
    matched = ad.gather(b_t, assignment, axis=0)
    return ad.reduce_mean(ad.vecnorm(a_t - matched, axis=-1))


def chamfer_loss(a, b):
    """Symmetric mean nearest-neighbor distance (drop-in EMD replacement)."""
    a_t = _coords(a)
    b_t = _coords(b)
    idx_ab = structure.cached("nn_ab", lambda: nearest_indices(a_t.data, b_t.data))
    idx_ba = structure.cached("nn_ba", lambda: nearest_indices(b_t.data, a_t.data))
    d_ab = ad.reduce_mean(ad.vecnorm(a_t - ad.gather(b_t, idx_ab, axis=0), axis=-1))
    d_ba = ad.reduce_mean(ad.vecnorm(ad.gather(a_t, idx_ba, axis=0) - b_t, axis=-1))
    return 0.5 * (d_ab + d_ba)


def repulsion(points, neighbors=5, radius=0.03):
    """Hinge penalty on neighbor distances below ``radius``:
    mean over all (point, neighbor) pairs of max(0, radius - distance)."""
    coords = _coords(points)
    n = coords.shape[0]
    if n <= neighbors:
        raise ValueError(f"insufficient points: need N > {neighbors}, got {n}")
    idx = knn_all(coords.data, neighbors)
    nbrs = ad.gather(coords, idx.reshape(-1), axis=0)
    centers = ad.gather(coords, np.repeat(np.arange(n), neighbors), axis=0)
    dist = ad.vecnorm(centers - nbrs, axis=-1)
    return ad.reduce_mean(ad.relu(radius - dist))


@dataclass(frozen=True)
class UniformLossConfig:
    """Disk-based spacing penalty configuration.

    ``area_fractions`` are the disk areas as fractions of the unit area;
    ``neighbors`` is the per-disk neighbor count; ``seeds`` the number of
    farthest-point disk centers (default: 5% of the cloud).
    """

    area_fractions: tuple = (0.004, 0.006, 0.008, 0.01, 0.012)
    neighbors: int = 5
    seeds: int = None
    seed_start: int = 0

    def validate(self):
        if not self.area_fractions or any(not 0 < p < 1 for p in self.area_fractions):
            raise ValueError("area_fractions must lie in (0, 1)")
        if self.neighbors < 2:
            raise ValueError("neighbors must be >= 2")
        if self.seeds is not None and self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        return self


def uniform_loss(points, cfg=None):
    """Deviation of in-disk neighbor distances from the uniform-spacing target.

    For each area fraction p, disks of radius sqrt(p) are centered at
    farthest-point seeds; inside each disk the seed's K nearest neighbors
    should sit at distance sqrt(pi r^2 / K). Disks holding fewer than K
    points are scored against the count-adjusted target.
    """
    cfg = (cfg or UniformLossConfig()).validate()
    coords = _coords(points)
    pts = coords.data
    n = len(pts)
    if n < cfg.neighbors + 1:
        raise ValueError(f"insufficient points: need N >= {cfg.neighbors + 1}, got {n}")
    selections = structure.cached("uniform_disks", lambda: _select_disks(pts, cfg))

    total = None
    for seed_rep, neighbor_rep, targets in selections:
        target_arr = ad.constant(targets)
        seeds_t = ad.gather(coords, seed_rep, axis=0)
        nbrs_t = ad.gather(coords, neighbor_rep, axis=0)
        d_t = ad.vecnorm(seeds_t - nbrs_t, axis=-1)
        term = ad.reduce_sum(ad.square(d_t - target_arr) / target_arr)
        total = term if total is None else total + term
    if total is None:
        return ad.constant(0.0)
    return total


def _select_disks(pts, cfg):
    """Per area fraction: (seed indices, neighbor indices, target distances)."""
    n = len(pts)
    num_seeds = cfg.seeds if cfg.seeds is not None else max(1, int(0.05 * n))
    num_seeds = min(num_seeds, n)
    seed_idx = fps(pts, num_seeds, seed_index=min(cfg.seed_start, n - 1))
    dists = pairwise_distances(pts[seed_idx], pts)
    selections = []
    for p in cfg.area_fractions:
        disk_radius = float(np.sqrt(p))  # unit area A = 1
        seed_rep = []
        neighbor_rep = []
        targets = []
        for row, seed in enumerate(seed_idx):
            d = dists[row]
            inside = np.flatnonzero(d <= disk_radius)
            inside = inside[inside != seed]
            if inside.size == 0:
                continue
            order = np.lexsort((inside, d[inside]))
            take = inside[order[:cfg.neighbors]]
            count = take.size
            # a sparse disk is held to the spacing its own population implies
            target = np.sqrt(np.pi * disk_radius * disk_radius / count)
            seed_rep.extend([seed] * count)
            neighbor_rep.extend(take.tolist())
            targets.extend([target] * count)
        if targets:
            selections.append((np.asarray(seed_rep, dtype=np.intp),
                               np.asarray(neighbor_rep, dtype=np.intp),
                               np.asarray(targets)))
    return selections


# ---------------------------------------------------------------------------
# adversarial losses


def _check_score(score, name):
    value = float(score.data)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


def generator_adversarial_loss(score_fake):
    """(1 - log D(fake))^2 — pushes the generator toward high scores."""
    score_fake = ad.as_tensor(score_fake)
    _check_score(score_fake, "score_fake")
    return ad.square(1.0 - ad.log(score_fake))


def discriminator_adversarial_loss(score_fake, score_real):
    """(log D(fake))^2 + (1 - log D(real))^2."""
    score_fake = ad.as_tensor(score_fake)
    score_real = ad.as_tensor(score_real)
    _check_score(score_fake, "score_fake")
    _check_score(score_real, "score_real")
    return ad.square(ad.log(score_fake)) + ad.square(1.0 - ad.log(score_real))


def adversarial_losses(score_fake, score_real):
    """(generator loss, discriminator loss) from the two fidelity scores."""
    return (generator_adversarial_loss(score_fake),
            discriminator_adversarial_loss(score_fake, score_real))


# ---------------------------------------------------------------------------
# joint objective


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights of the joint generator objective."""

    adversarial: float = 0.005
    reconstruction: float = 1.0
    uniform: float = 0.1
    repulsion: float = 0.01
    weight_decay: float = 0.01

    def validate(self):
        for name in ("adversarial", "reconstruction", "uniform", "repulsion",
                     "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        return self


def weight_decay_term(parameters):
    """Sum of squared parameter values over an iterable of (name, Tensor)."""
    total = None
    for _, tensor in parameters:
        term = ad.reduce_sum(ad.square(tensor))
        total = term if total is None else total + term
    return ad.constant(0.0) if total is None else total


def joint_loss(generated, target, weights, *, score_fake=None, parameters=(),
               reconstruction="emd", uniform_cfg=None,
               repulsion_neighbors=5, repulsion_radius=0.03):
    """Weighted sum of the enabled loss terms.

    The reconstruction term enters as the *total* transport cost (point
    count times the mean distance): the default weights balance an
    unnormalized reconstruction sum against the unnormalized uniformity
    sum, and a per-point mean would be orders of magnitude too weak to
    steer training. The logged component value stays the per-point mean.

    A term with weight 0 is skipped entirely (its machinery never runs).
    Returns (total Tensor, components dict of unweighted float values).
    """
    weights.validate()
    if reconstruction not in ("emd", "cd"):
        raise ValueError(f"reconstruction must be 'emd' or 'cd', got {reconstruction!r}")
    components = {}
    total = ad.constant(0.0)
    if weights.adversarial > 0:
        if score_fake is None:
            raise ValueError("adversarial weight is set but no score_fake was provided")
        term = generator_adversarial_loss(score_fake)
        components["adversarial"] = float(term.data)
        total = total + weights.adversarial * term
    if weights.reconstruction > 0:
        if reconstruction == "emd":
            term = emd(generated, target)
        else:
            term = chamfer_loss(generated, target)
        components["reconstruction"] = float(term.data)
        count = float(_coords(generated).shape[0])
        total = total + (weights.reconstruction * count) * term
    if weights.uniform > 0:
        term = uniform_loss(generated, uniform_cfg)
        components["uniform"] = float(term.data)
        total = total + weights.uniform * term
    if weights.repulsion > 0:
        term = repulsion(generated, neighbors=repulsion_neighbors,
                         radius=repulsion_radius)
        components["repulsion"] = float(term.data)
        total = total + weights.repulsion * term
    if weights.weight_decay > 0 and parameters:
        term = weight_decay_term(parameters)
        components["weight_decay"] = float(term.data)
        total = total + weights.weight_decay * term
    components["total"] = float(total.data)
    return total, components
