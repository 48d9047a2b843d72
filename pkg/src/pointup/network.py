"""Upsampling generator and fidelity discriminator.

The generator alternates neighborhood feature extraction with an
up-expansion block that emits per-point offsets, doubling the point count
per stage (or jumping straight to the full ratio when progressive mode is
off). Zero-initialized expansion branches reproduce each input point
exactly, which anchors the residual-identity tests.
"""

import numpy as np

from . import autodiff as ad
from .geometry import knn_all
from .validation import check_ratio

LEAK = 0.2


def _coords(points):
    """Coerce PointCloud / ndarray / Tensor to an (N, 3) coordinate Tensor."""
    if isinstance(points, ad.Tensor):
        return points
    if hasattr(points, "points"):
        points = points.points
    return ad.constant(np.asarray(points, dtype=np.float64))


class Linear:
    """Dense layer. Weights are Glorot-uniform, biases zero."""

    def __init__(self, in_dim, out_dim, rng=None):
        if rng is None:
            weight = np.zeros((in_dim, out_dim))
        else:
            bound = np.sqrt(6.0 / (in_dim + out_dim))
            weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        self.weight = ad.Tensor(weight, requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return ad.matmul(x, self.weight) + self.bias

    def named(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class GraphFeatureParams:
    """Shared MLP over (neighbor offset, center) pairs, mean-pooled over k."""

    def __init__(self, k, channels, rng=None):
        self.k = k
        self.channels = channels
        self.layers = [Linear(6, channels, rng), Linear(channels, channels, rng)]

    def named(self, prefix):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"{prefix}.mlp{i}"))
        return out


class UpExpansionParams:
    """Two parallel offset branches: one per neighbor feature, one per center."""

    def __init__(self, channels, up_ratio, rng=None):
        self.up_ratio = up_ratio
        self.channels = channels
        self.neighbor = Linear(channels, 3 * up_ratio, rng)
        self.center = Linear(channels, 3 * up_ratio, rng)

    def named(self, prefix):
        return self.neighbor.named(f"{prefix}.neighbor") + \
            self.center.named(f"{prefix}.center")


class GeneratorParams:
    """One (feature extractor, up expansion) pair per stage."""

    def __init__(self, ratio, k=8, channels=32, progressive=True, rng=None):
        self.ratio = check_ratio(ratio)
        self.k = k
        self.channels = channels
        self.progressive = progressive
        if progressive:
            stage_ratios = [2] * int(np.log2(self.ratio))
        else:
            stage_ratios = [self.ratio]
        self.stages = [
            (GraphFeatureParams(k, channels, rng), UpExpansionParams(channels, u, rng))
            for u in stage_ratios
        ]

    @classmethod
    def create(cls, ratio, k=8, channels=32, progressive=True, seed=0):
        rng = np.random.default_rng(seed)
        return cls(ratio, k=k, channels=channels, progressive=progressive, rng=rng)

    @classmethod
    def zeros(cls, ratio, k=8, channels=32, progressive=True):
        return cls(ratio, k=k, channels=channels, progressive=progressive, rng=None)

    def named_parameters(self):
        out = []
        for i, (gfe, ue) in enumerate(self.stages):
            out.extend(gfe.named(f"stage{i}.graph"))
            out.extend(ue.named(f"stage{i}.expand"))
        return out

    def metadata(self):
        return {"kind": "generator", "ratio": self.ratio, "k": self.k,
                "channels": self.channels, "progressive": self.progressive}

    def load_arrays(self, tensors):
        for name, tensor in self.named_parameters():
            if name not in tensors:
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(
                    f"parameter {name!r} has shape {arr.shape}, expected {tensor.data.shape}")
            tensor.data = arr.copy()
        return self

    @classmethod
    def from_checkpoint(cls, tensors, metadata):
        if metadata.get("kind") != "generator":
            raise ValueError("checkpoint does not hold generator parameters")
        params = cls.zeros(metadata["ratio"], k=metadata["k"],
                           channels=metadata["channels"],
                           progressive=metadata["progressive"])
        return params.load_arrays(tensors)

    def copy(self):
        clone = GeneratorParams.zeros(self.ratio, k=self.k, channels=self.channels,
                                      progressive=self.progressive)
        for (_, src), (_, dst) in zip(self.named_parameters(), clone.named_parameters()):
            dst.data = src.data.copy()
        return clone


class DiscriminatorParams:
    """Point MLP + global max-pool concat + self-attention + score head."""

    def __init__(self, channels=32, rng=None):
        self.channels = channels
        width = 2 * channels  # after the global/point concat
        self.point_mlp = [Linear(3, channels, rng), Linear(channels, channels, rng)]
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.post = Linear(width, channels, rng)
        self.head = [Linear(channels, max(channels // 2, 4), rng),
                     Linear(max(channels // 2, 4), 1, rng)]

    @classmethod
    def create(cls, channels=32, seed=0):
        return cls(channels, rng=np.random.default_rng(seed))

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.point_mlp):
            out.extend(layer.named(f"point{i}"))
        out.extend(self.query.named("attn.query"))
        out.extend(self.key.named("attn.key"))
        out.extend(self.value.named("attn.value"))
        out.extend(self.post.named("post"))
        for i, layer in enumerate(self.head):
            out.extend(layer.named(f"head{i}"))
        return out

    def metadata(self):
        return {"kind": "discriminator", "channels": self.channels}

    def copy(self):
        clone = DiscriminatorParams(self.channels, rng=None)
        for (_, src), (_, dst) in zip(self.named_parameters(), clone.named_parameters()):
            dst.data = src.data.copy()
        return clone


# ---------------------------------------------------------------------------
# forward passes


def graph_features(points, params, neighbor_idx=None):
    """Per-point feature matrix (N, C) from local neighborhoods.

    For each point the k neighbor offsets are paired with the center
    coordinates, pushed through the shared MLP, and averaged over the
    neighborhood.
    """
    coords = _coords(points)
    n = coords.shape[0]
    if n <= params.k:
        raise ValueError(f"insufficient points: need N > k={params.k}, got N={n}")
    if neighbor_idx is None:
        neighbor_idx = knn_all(coords.data, params.k)
    k = neighbor_idx.shape[1]
    flat_idx = neighbor_idx.reshape(-1)
    center_idx = np.repeat(np.arange(n), k)

    neighbors = ad.gather(coords, flat_idx, axis=0)       # (N*k, 3)
    centers = ad.gather(coords, center_idx, axis=0)       # (N*k, 3)
    feats = ad.concat([neighbors - centers, centers], axis=1)
    for layer in params.layers:
        feats = ad.leaky_relu(layer(feats), LEAK)
    feats = ad.reshape(feats, (n, k, params.channels))
    return ad.reduce_mean(feats, axis=1)


def up_expand(points, feats, params, neighbor_idx=None):
    """Expand N points to u*N by adding predicted offsets to replicas.

    The neighbor branch maps each of the k neighbor features to 3u values
    and averages over the neighborhood; the center branch maps the point's
    own feature. Their elementwise mean, reshaped to (uN, 3), is the
    residual offset field.
    """
    coords = _coords(points)
    n = coords.shape[0]
    if feats.shape[0] != n:
        raise ValueError(f"feature rows {feats.shape[0]} != point count {n}")
    u = params.up_ratio
    if neighbor_idx is None:
        neighbor_idx = knn_all(coords.data, min(8, n - 1))
    k = neighbor_idx.shape[1]

    neighbor_feats = ad.gather(feats, neighbor_idx.reshape(-1), axis=0)  # (N*k, C)
    per_neighbor = params.neighbor(neighbor_feats)                       # (N*k, 3u)
    per_neighbor = ad.reshape(per_neighbor, (n, k, 3 * u))
    neighbor_branch = ad.reduce_mean(per_neighbor, axis=1)               # (N, 3u)
    center_branch = params.center(feats)                                 # (N, 3u)
    offsets = 0.5 * (neighbor_branch + center_branch)
    offsets = ad.reshape(offsets, (u * n, 3))

    replicated = ad.gather(coords, np.repeat(np.arange(n), u), axis=0)
    return replicated + offsets


def generator_forward(points, params):
    """Upsample a cloud by the generator's overall ratio."""
    coords = _coords(points)
    for gfe, ue in params.stages:
        neighbor_idx = knn_all(coords.data, params.k)
        feats = graph_features(coords, gfe, neighbor_idx)
        coords = up_expand(coords, feats, ue, neighbor_idx)
    return coords


def discriminator_forward(points, params, use_attention=True):
    """Scalar fidelity score in (0, 1), invariant to point order."""
    coords = _coords(points)
    n = coords.shape[0]
    if n < 2:
        raise ValueError("discriminator needs at least 2 points")
    feats = coords
    for layer in params.point_mlp:
        feats = ad.leaky_relu(layer(feats), LEAK)
    global_feat = ad.reduce_max(feats, axis=0, keepdims=True)            # (1, C)
    broadcast = ad.gather(global_feat, np.zeros(n, dtype=np.intp), axis=0)
    x = ad.concat([feats, broadcast], axis=1)                            # (N, 2C)

    if use_attention:
        width = 2 * params.channels
        q = params.query(x)
        k = params.key(x)
        v = params.value(x)
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(width))
        attn = ad.softmax(scores, axis=1)
        x = x + ad.matmul(attn, v)

    x = ad.leaky_relu(params.post(x), LEAK)
    pooled = ad.reduce_max(x, axis=0, keepdims=True)                     # (1, C)
    h = ad.leaky_relu(params.head[0](pooled), LEAK)
    logit = params.head[1](h)
    score = ad.sigmoid(ad.reshape(logit, ()))
    # keep the score strictly inside (0, 1) so log-based losses stay finite
    return ad.clip(score, 1e-7, 1.0 - 1e-7)
