"""Finite-difference verification sweeps.

Three scopes: the op set, the losses, and an end-to-end generator + joint
loss pass. Point-based losses run with frozen structure so the probe stays
on the smooth branch of their piecewise definition; kink-adjacent inputs
(relu at 0, repulsion at the hinge) are resampled away from the kink.
"""

import numpy as np

from . import autodiff as ad
from .losses import (LossWeights, UniformLossConfig, chamfer_loss, emd,
                     generator_adversarial_loss, joint_loss, repulsion,
                     uniform_loss)
from .network import (DiscriminatorParams, GeneratorParams,
                      discriminator_forward, generator_forward)

TOLERANCE = 1e-4

_OP_CASES = {
    "add": (2, lambda a, b: ad.reduce_sum(a + b)),
    "sub": (2, lambda a, b: ad.reduce_sum(a - b)),
    "mul": (2, lambda a, b: ad.reduce_sum(a * b)),
    "div": (2, lambda a, b: ad.reduce_sum(a / (b + 3.0))),
    "matmul": (2, lambda a, b: ad.reduce_sum(
        ad.matmul(ad.reshape(a, (2, 3)), ad.reshape(b, (3, 2))))),
    "relu": (1, lambda a: ad.reduce_sum(ad.relu(a))),
    "leaky_relu": (1, lambda a: ad.reduce_sum(ad.leaky_relu(a, 0.2))),
    "concat": (2, lambda a, b: ad.reduce_sum(ad.square(ad.concat([a, b], axis=0)))),
    "gather": (1, lambda a: ad.reduce_sum(ad.square(ad.gather(a, [0, 2, 2], axis=0)))),
    "reduce_mean": (1, lambda a: ad.reduce_mean(ad.square(a))),
    "reduce_max": (1, lambda a: ad.reduce_max(ad.square(a))),
    "reduce_sum": (1, lambda a: ad.reduce_sum(ad.square(a))),
    "reshape": (1, lambda a: ad.reduce_sum(ad.square(ad.reshape(a, (3, 2))))),
    "softmax": (1, lambda a: ad.reduce_sum(ad.square(ad.softmax(a, axis=0)))),
    "square": (1, lambda a: ad.reduce_sum(ad.square(a))),
    "sqrt": (1, lambda a: ad.reduce_sum(ad.sqrt(a * a + 1.0))),
    "log": (1, lambda a: ad.reduce_sum(ad.log(a * a + 1.5))),
    "exp": (1, lambda a: ad.reduce_sum(ad.exp(a))),
    "sigmoid": (1, lambda a: ad.reduce_sum(ad.sigmoid(a))),
    "transpose": (1, lambda a: ad.reduce_sum(
        ad.square(ad.transpose(ad.reshape(a, (2, 3)))))),
    "vecnorm": (1, lambda a: ad.reduce_sum(ad.vecnorm(ad.reshape(a, (2, 3))))),
    "clip": (1, lambda a: ad.reduce_sum(ad.clip(a, -0.9, 0.9))),
}


def _kink_free(arr, margin=0.05):
    """Push values away from zero so relu/clip probes stay one-sided."""
    return np.where(np.abs(arr) < margin, margin + np.abs(arr), arr)


def check_ops(instances=100, seed=0):
    """Max relative finite-difference error per op over random instances."""
    rng = np.random.default_rng(seed)
    report = {}
    for name, (arity, fn) in _OP_CASES.items():
        worst = 0.0
        for _ in range(instances):
            args = [rng.uniform(-1.5, 1.5, size=6) for _ in range(arity)]
            if name in ("relu", "leaky_relu", "clip"):
                args = [_kink_free(a) for a in args]
            worst = max(worst, ad.grad_check(fn, args))
        report[name] = worst
    return report


def _random_cloud(rng, n, spread=1.0):
    return rng.uniform(-spread, spread, size=(n, 3))


def check_losses(instances=100, seed=1, n=24):
    """Max error per loss on random clouds (structure frozen, kinks avoided)."""
    rng = np.random.default_rng(seed)
    report = {}

    worst = 0.0
    for _ in range(instances):
        a, b = _random_cloud(rng, n), _random_cloud(rng, n)
        worst = max(worst, ad.grad_check(
            lambda x: emd(x, ad.constant(b)), [a], freeze_structure=True,
            skip_nonsmooth=True))
    report["emd"] = worst

    worst = 0.0
    for _ in range(instances):
        a, b = _random_cloud(rng, n), _random_cloud(rng, n)
        worst = max(worst, ad.grad_check(
            lambda x: chamfer_loss(x, ad.constant(b)), [a], freeze_structure=True,
            skip_nonsmooth=True))
    report["chamfer"] = worst

    worst = 0.0
    count = 0
    while count < instances:
        pts = _random_cloud(rng, n, spread=0.08)
        idx_d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        np.fill_diagonal(idx_d, np.inf)
        near = np.sort(idx_d, axis=1)[:, :3]
        if np.any(np.abs(near - 0.06) < 1e-3):
            continue  # too close to the hinge; resample
        count += 1
        worst = max(worst, ad.grad_check(
            lambda x: repulsion(x, neighbors=3, radius=0.06), [pts],
            freeze_structure=True, skip_nonsmooth=True))
    report["repulsion"] = worst

    cfg = UniformLossConfig(area_fractions=(0.05,), neighbors=3, seeds=2)
    worst = 0.0
    for _ in range(instances):
        pts = _random_cloud(rng, n, spread=0.4)
        worst = max(worst, ad.grad_check(
            lambda x: uniform_loss(x, cfg), [pts], freeze_structure=True,
            skip_nonsmooth=True))
    report["uniform"] = worst

    worst = 0.0
    for _ in range(instances):
        logit = rng.uniform(-2.0, 2.0, size=1)
        worst = max(worst, ad.grad_check(
            lambda s: generator_adversarial_loss(ad.sigmoid(ad.reshape(s, ()))),
            [logit]))
    report["adversarial"] = worst

    weights = LossWeights()
    cfg_joint = UniformLossConfig(area_fractions=(0.05,), neighbors=3, seeds=2)
    worst = 0.0
    for _ in range(max(instances // 10, 3)):
        a, b = _random_cloud(rng, n), _random_cloud(rng, n)
        worst = max(worst, ad.grad_check(
            lambda x: joint_loss(x, ad.constant(b), weights,
                                 score_fake=ad.constant(0.4),
                                 uniform_cfg=cfg_joint,
                                 repulsion_neighbors=3,
                                 repulsion_radius=0.06)[0],
            [a], freeze_structure=True, skip_nonsmooth=True))
    report["joint"] = worst
    return report


def check_end_to_end(n=32, ratio=2, channels=4, k=4, seed=2):
    """Generator + full joint loss (adversarial path included) at desk scale."""
    rng = np.random.default_rng(seed)
    pts = _random_cloud(rng, n)
    target = _random_cloud(rng, ratio * n)
    generator = GeneratorParams.create(ratio, k=k, channels=channels,
                                       seed=seed + 1)
    discriminator = DiscriminatorParams.create(channels=channels, seed=seed + 2)
    weights = LossWeights()
    cfg = UniformLossConfig(area_fractions=(0.05,), neighbors=3, seeds=2)

    def loss_fn(*_):
        out = generator_forward(pts, generator)
        score = discriminator_forward(out, discriminator)
        total, _ = joint_loss(out, ad.constant(target), weights,
                              score_fake=score,
                              parameters=generator.named_parameters(),
                              uniform_cfg=cfg, repulsion_neighbors=3,
                              repulsion_radius=0.03)
        return total

    return ad.grad_check(loss_fn, [t for _, t in generator.named_parameters()],
                         freeze_structure=True, skip_nonsmooth=True)


def run_scope(scope, instances=100):
    """Run one scope; returns (report dict, worst error)."""
    if scope == "ops":
        report = check_ops(instances=instances)
    elif scope == "losses":
        report = check_losses(instances=instances)
    elif scope == "end2end":
        report = {"end2end": check_end_to_end()}
    else:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    return report, max(report.values())
