"""Self-supervised training on a single cloud.

The input cloud is normalized to the unit sphere, downsampled into
(LR, HR) pairs, and the generator learns to reproduce the HR side from
augmented LR inputs. With the discriminator enabled, each generator step
is followed by one discriminator step on (generated, HR). Everything is
deterministic given (seed, config, input).
"""

import hashlib
import time
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError, NumericalError
from .geometry import (AugmentParams, PointCloud, build_lr_hr_pairs,
                       normalize_unit_sphere, sample_augment)
from .losses import (LossWeights, UniformLossConfig,
                     discriminator_adversarial_loss, joint_loss,
                     weight_decay_term)
from .metrics import evaluate_cloud
from .network import (DiscriminatorParams, GeneratorParams,
                      discriminator_forward, generator_forward)
from .optim import Adam

LOSS_KEYS = ("total", "reconstruction", "uniform", "repulsion", "adversarial",
             "weight_decay", "discriminator")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 12
    lr_generator: float = 0.001
    lr_discriminator: float = 0.0001
    num_pairs: int = 12
    ratio: int = 4
    kernel: str = "random"            # or "fps"
    weights: LossWeights = field(default_factory=LossWeights)
    use_discriminator: bool = True
    use_self_attention: bool = True
    progressive: bool = True
    use_uniform_loss: bool = True
    use_repulsion_loss: bool = True
    reconstruction: str = "emd"       # or "cd"
    seed: int = 0
    neighbors: int = 8
    channels: int = 32
    repulsion_neighbors: int = 5
    repulsion_radius: float = 0.03
    uniform_fractions: tuple = (0.004, 0.006, 0.008, 0.01, 0.012)
    uniform_neighbors: int = 5
    augment: AugmentParams = field(default_factory=AugmentParams)

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be >= 1, got {self.epochs}")
        if self.num_pairs < 1:
            raise ConfigError("num_pairs", f"must be >= 1, got {self.num_pairs}")
        if not 1 <= self.batch_size <= self.num_pairs:
            raise ConfigError("batch_size",
                              f"must be in [1, num_pairs={self.num_pairs}], got {self.batch_size}")
        if self.ratio < 2 or (self.ratio & (self.ratio - 1)) != 0:
            raise ConfigError("ratio", f"must be a power of two >= 2, got {self.ratio}")
        if self.kernel not in ("random", "fps"):
            raise ConfigError("kernel", f"must be 'random' or 'fps', got {self.kernel!r}")
        if self.reconstruction not in ("emd", "cd"):
            raise ConfigError("reconstruction",
                              f"must be 'emd' or 'cd', got {self.reconstruction!r}")
        if self.lr_generator <= 0:
            raise ConfigError("lr_generator", "must be positive")
        if self.lr_discriminator <= 0:
            raise ConfigError("lr_discriminator", "must be positive")
        if self.neighbors < 1:
            raise ConfigError("neighbors", "must be >= 1")
        if self.channels < 1:
            raise ConfigError("channels", "must be >= 1")
        if self.repulsion_neighbors < 1:
            raise ConfigError("repulsion_neighbors", "must be >= 1")
        if self.repulsion_radius <= 0:
            raise ConfigError("repulsion_radius", "must be positive")
        try:
            self.weights.validate()
        except ValueError as exc:
            raise ConfigError("weights", str(exc)) from None
        try:
            self.augment.validate()
        except ValueError as exc:
            raise ConfigError("augment", str(exc)) from None
        return self

    def effective_weights(self):
        """Loss weights with the toggles folded in."""
        w = self.weights
        return LossWeights(
            adversarial=w.adversarial if self.use_discriminator else 0.0,
            reconstruction=w.reconstruction,
            uniform=w.uniform if self.use_uniform_loss else 0.0,
            repulsion=w.repulsion if self.use_repulsion_loss else 0.0,
            weight_decay=w.weight_decay,
        )

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "weights":
                for w in fields(LossWeights):
                    out[f"weight_{w.name}"] = getattr(value, w.name)
            elif f.name == "augment":
                out["augment_rotation"] = value.rotation
                out["augment_jitter"] = value.jitter_sigma
                out["augment_shift"] = value.shift_range
                out["augment_scale_low"] = value.scale_low
                out["augment_scale_high"] = value.scale_high
            elif f.name == "uniform_fractions":
                out[f.name] = list(value)
            else:
                out[f.name] = value
        return out


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    seconds: float
    rng_digest: str


class TrainLog:
    """Per-epoch loss components, wall-clock, and an rng-state digest."""

    def __init__(self):
        self.records = []

    def add(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def lines(self):
        out = []
        for r in self.records:
            parts = [f"epoch={r.epoch}"]
            parts += [f"{k}={r.losses[k]:.12g}" for k in LOSS_KEYS]
            parts.append(f"seconds={r.seconds:.3f}")
            parts.append(f"digest={r.rng_digest}")
            out.append(" ".join(parts))
        return out

    def digest(self):
        """Hash of the deterministic fields (wall-clock excluded)."""
        h = hashlib.sha256()
        for r in self.records:
            h.update(str(r.epoch).encode())
            for k in LOSS_KEYS:
                h.update(f"{r.losses[k]:.17g}".encode())
            h.update(r.rng_digest.encode())
        return h.hexdigest()

    def component(self, key):
        return [r.losses[key] for r in self.records]


@dataclass
class TrainResult:
    generator: GeneratorParams
    discriminator: DiscriminatorParams  # or None
    log: TrainLog


def _rng_digest(*rngs):
    h = hashlib.sha256()
    for rng in rngs:
        h.update(repr(rng.bit_generator.state).encode())
    return h.hexdigest()[:16]


def self_train(pc, cfg):
    """Train a generator (and optionally a discriminator) on one cloud."""
    cfg.validate()
    cloud = pc if isinstance(pc, PointCloud) else PointCloud(pc)
    unit, _ = normalize_unit_sphere(cloud)

    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    pairs = build_lr_hr_pairs(unit, cfg.num_pairs, cfg.kernel, cfg.ratio,
                              seed=seeds[0])
    generator = GeneratorParams(cfg.ratio, k=cfg.neighbors, channels=cfg.channels,
                                progressive=cfg.progressive,
                                rng=np.random.default_rng(seeds[1]))
    discriminator = None
    if cfg.use_discriminator:
        discriminator = DiscriminatorParams(cfg.channels,
                                            rng=np.random.default_rng(seeds[2]))
    shuffle_rng = np.random.default_rng(seeds[3])
    augment_rng = np.random.default_rng(seeds[4])

    adam_g = Adam(lr=cfg.lr_generator)
    adam_d = Adam(lr=cfg.lr_discriminator) if discriminator else None
    eff = cfg.effective_weights()
    uniform_cfg = UniformLossConfig(area_fractions=tuple(cfg.uniform_fractions),
                                    neighbors=cfg.uniform_neighbors)
    log = TrainLog()
    # params verified to produce finite losses (refreshed before each step)
    verified = (generator.copy(), discriminator.copy() if discriminator else None,
                "initialization")

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(cfg.num_pairs)
        sums = defaultdict(float)
        pair_count = 0
        try:
            for start in range(0, cfg.num_pairs, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                g_grads = {name: np.zeros_like(t.data)
                           for name, t in generator.named_parameters()}
                d_grads = None
                if discriminator is not None:
                    d_grads = {name: np.zeros_like(t.data)
                               for name, t in discriminator.named_parameters()}
                for pair_idx in batch:
                    lr_pc, hr_pc = pairs[int(pair_idx)]
                    rigid = sample_augment(cfg.augment, augment_rng)
                    lr_in = rigid.apply(lr_pc.points,
                                        jitter_sigma=cfg.augment.jitter_sigma,
                                        jitter_clip=cfg.augment.jitter_clip,
                                        rng=augment_rng)
                    # the target follows the same rigid transform, jitter excluded,
                    # so the pair stays geometrically consistent
                    hr_target = rigid.apply(hr_pc.points)

                    with ad.recording():
                        out = generator_forward(lr_in, generator)
                        score_fake = None
                        if discriminator is not None and eff.adversarial > 0:
                            score_fake = discriminator_forward(
                                out, discriminator, cfg.use_self_attention)
                        total, comps = joint_loss(
                            out, ad.constant(hr_target), eff,
                            score_fake=score_fake,
                            parameters=generator.named_parameters(),
                            reconstruction=cfg.reconstruction,
                            uniform_cfg=uniform_cfg,
                            repulsion_neighbors=cfg.repulsion_neighbors,
                            repulsion_radius=cfg.repulsion_radius)
                        ad.backward(total)
                    for name, tensor in generator.named_parameters():
                        g_grads[name] += tensor.grad_value()
                        tensor.zero_grad()
                    if discriminator is not None:
                        # discard any gradient the G pass left on D parameters
                        for _, tensor in discriminator.named_parameters():
                            tensor.zero_grad()
                        with ad.recording():
                            fake = discriminator_forward(
                                ad.constant(out.data), discriminator,
                                cfg.use_self_attention)
                            real = discriminator_forward(
                                ad.constant(hr_target), discriminator,
                                cfg.use_self_attention)
                            d_loss = discriminator_adversarial_loss(fake, real)
                            if eff.weight_decay > 0:
                                d_loss = d_loss + eff.weight_decay * weight_decay_term(
                                    discriminator.named_parameters())
                            ad.backward(d_loss)
                        for name, tensor in discriminator.named_parameters():
                            d_grads[name] += tensor.grad_value()
                            tensor.zero_grad()
                        comps["discriminator"] = float(d_loss.data)
                    for key in LOSS_KEYS:
                        sums[key] += comps.get(key, 0.0)
                    pair_count += 1
                # every forward in this batch was finite, so these params are
                # the newest safe restore point
                verified = (generator.copy(),
                            discriminator.copy() if discriminator else None,
                            f"epoch {epoch} (pre-step)")
                scale = 1.0 / len(batch)
                adam_g.step(generator.named_parameters(),
                            {k: v * scale for k, v in g_grads.items()})
                if discriminator is not None:
                    adam_d.step(discriminator.named_parameters(),
                                {k: v * scale for k, v in d_grads.items()})
        except NumericalError as exc:
            last_gen, last_disc, origin = verified
            raise DivergenceError(
                f"training diverged at epoch {epoch} ({exc}); "
                f"last good checkpoint is from {origin}",
                last_good=TrainResult(last_gen, last_disc, log)) from exc

        losses = {key: sums[key] / pair_count for key in LOSS_KEYS}
        log.add(EpochRecord(epoch=epoch, losses=losses,
                            seconds=time.perf_counter() - started,
                            rng_digest=_rng_digest(shuffle_rng, augment_rng)))

    return TrainResult(generator, discriminator, log)


def upsample(pc, generator, ratio=None):
    """Upsample a cloud with trained parameters, back in the input frame."""
    if ratio is not None and ratio != generator.ratio:
        raise ValueError(
            f"requested ratio {ratio} does not match generator ratio {generator.ratio}")
    cloud = pc if isinstance(pc, PointCloud) else PointCloud(pc)
    unit, transform = normalize_unit_sphere(cloud)
    out = generator_forward(unit.points, generator)
    return PointCloud(transform.invert(out.data))


# ---------------------------------------------------------------------------
# ablation harness


_NAMED_VARIANTS = {
    "full": {},
    "no_discriminator": {"use_discriminator": False},
    "no_self_attention": {"use_self_attention": False},
    "no_progressive": {"progressive": False},
    "no_uniform_loss": {"use_uniform_loss": False},
    "no_repulsion_loss": {"use_repulsion_loss": False},
    "chamfer": {"reconstruction": "cd"},
}

_SWEEP_KEYS = {
    "pairs": ("num_pairs", int),
    "num_pairs": ("num_pairs", int),
    "kernel": ("kernel", str),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "ratio": ("ratio", int),
    "seed": ("seed", int),
    "reconstruction": ("reconstruction", str),
}


def apply_variant(cfg, token):
    """Apply a variant token: a named toggle, ``key=value``, or several
    joined with ``+`` (e.g. ``pairs=2+kernel=fps``)."""
    updates = {}
    for part in token.split("+"):
        part = part.strip()
        if part in _NAMED_VARIANTS:
            updates.update(_NAMED_VARIANTS[part])
        elif "=" in part:
            key, _, raw = part.partition("=")
            key = key.strip()
            if key not in _SWEEP_KEYS:
                raise ConfigError(key, f"unknown variant key in {token!r}")
            field_name, cast = _SWEEP_KEYS[key]
            try:
                updates[field_name] = cast(raw.strip())
            except ValueError:
                raise ConfigError(key, f"bad value {raw!r} in variant {token!r}") from None
        else:
            raise ConfigError("variants", f"unknown variant {part!r}")
    new_cfg = replace(cfg, **updates)
    # a batch cannot exceed the number of pairs
    if new_cfg.batch_size > new_cfg.num_pairs:
        new_cfg = replace(new_cfg, batch_size=new_cfg.num_pairs)
    return new_cfg


@dataclass
class AblationRow:
    label: str
    config: TrainConfig
    report: object
    log: TrainLog


def run_ablation(pc, base_cfg, variants, reference=None, mesh=None):
    """Train one model per variant (same seed) and evaluate each output."""
    rows = []
    for token in variants:
        cfg = apply_variant(base_cfg, token)
        result = self_train(pc, cfg)
        out = upsample(pc, result.generator)
        report = evaluate_cloud(out.points, reference=reference, mesh=mesh,
                                name=token,
                                metadata={"seed": cfg.seed,
                                          "kernel": cfg.kernel,
                                          "num_pairs": cfg.num_pairs})
        rows.append(AblationRow(label=token, config=cfg, report=report,
                                log=result.log))
    return rows
