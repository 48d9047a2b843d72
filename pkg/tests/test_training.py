import numpy as np
import pytest

from conftest import sphere_points
from pointup.checkpoint import load_checkpoint, save_checkpoint
from pointup.errors import ConfigError, DivergenceError
from pointup.geometry import AugmentParams, PointCloud
from pointup.losses import LossWeights
from pointup.network import GeneratorParams
from pointup.training import (TrainConfig, apply_variant, run_ablation,
                              self_train, upsample)


def tiny_config(**overrides):
    base = dict(
        epochs=2, batch_size=4, num_pairs=4, ratio=2, kernel="random",
        use_discriminator=False, channels=8, neighbors=6, seed=0,
        augment=AugmentParams(jitter_sigma=0.002),
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_config_validation_names_fields():
    with pytest.raises(ConfigError, match="epochs"):
        tiny_config(epochs=0).validate()
    with pytest.raises(ConfigError, match="batch_size"):
        tiny_config(batch_size=9).validate()
    with pytest.raises(ConfigError, match="ratio"):
        tiny_config(ratio=3).validate()
    with pytest.raises(ConfigError, match="kernel"):
        tiny_config(kernel="grid").validate()
    with pytest.raises(ConfigError, match="reconstruction"):
        tiny_config(reconstruction="l2").validate()
    with pytest.raises(ConfigError, match="weights"):
        tiny_config(weights=LossWeights(adversarial=-1.0)).validate()


def test_zero_weights_leave_parameters_unchanged():
    pts = sphere_points(64, seed=0)
    cfg = tiny_config(weights=LossWeights(0.0, 0.0, 0.0, 0.0, 0.0))
    result = self_train(pts, cfg)
    fresh = GeneratorParams(cfg.ratio, k=cfg.neighbors, channels=cfg.channels,
                            progressive=cfg.progressive,
                            rng=np.random.default_rng(
                                np.random.SeedSequence(cfg.seed).spawn(5)[1]))
    for (_, trained), (_, init) in zip(result.generator.named_parameters(),
                                       fresh.named_parameters()):
        assert np.array_equal(trained.data, init.data)


def test_training_reduces_reconstruction_loss():
    # augmentation off so the per-epoch loss is directly comparable
    pts = sphere_points(128, seed=1)
    cfg = tiny_config(epochs=15, num_pairs=6, batch_size=6, seed=3,
                      augment=AugmentParams(rotation="none", jitter_sigma=0.0,
                                            shift_range=0.0, scale_low=1.0,
                                            scale_high=1.0))
    result = self_train(pts, cfg)
    rec = result.log.component("reconstruction")
    assert rec[-1] < rec[0]


def test_training_is_deterministic():
    pts = sphere_points(64, seed=2)
    cfg = tiny_config(seed=11)
    a = self_train(pts, cfg)
    b = self_train(pts, cfg)
    assert a.log.digest() == b.log.digest()
    for (_, ta), (_, tb) in zip(a.generator.named_parameters(),
                                b.generator.named_parameters()):
        assert np.array_equal(ta.data, tb.data)
    out_a = upsample(pts, a.generator)
    out_b = upsample(pts, b.generator)
    assert np.array_equal(out_a.points, out_b.points)


def test_different_seeds_differ():
    pts = sphere_points(64, seed=3)
    a = self_train(pts, tiny_config(seed=1))
    b = self_train(pts, tiny_config(seed=2))
    assert a.log.digest() != b.log.digest()


def test_discriminator_alternation_logs_both_losses():
    pts = sphere_points(48, seed=4)
    cfg = tiny_config(epochs=1, num_pairs=2, batch_size=2, neighbors=4,
                      use_discriminator=True, seed=5)
    result = self_train(pts, cfg)
    assert result.discriminator is not None
    record = result.log.records[0]
    assert record.losses["adversarial"] > 0.0
    assert record.losses["discriminator"] > 0.0


def test_disabled_losses_logged_at_exact_zero():
    pts = sphere_points(64, seed=5)
    cfg = tiny_config(use_uniform_loss=False, use_repulsion_loss=False, seed=6)
    result = self_train(pts, cfg)
    for record in result.log.records:
        assert record.losses["uniform"] == 0.0
        assert record.losses["repulsion"] == 0.0
        assert record.losses["adversarial"] == 0.0  # discriminator off
        assert record.losses["reconstruction"] > 0.0


def test_cloud_too_small_for_ratio():
    with pytest.raises(ValueError, match="too small"):
        self_train(sphere_points(16, seed=6), tiny_config(ratio=4))


def test_divergence_aborts_with_last_good_checkpoint():
    pts = sphere_points(64, seed=7)
    cfg = tiny_config(epochs=5, lr_generator=1e150, seed=7)
    with pytest.raises(DivergenceError) as excinfo:
        self_train(pts, cfg)
    last = excinfo.value.last_good
    assert last is not None
    out = upsample(pts, last.generator)
    assert np.isfinite(out.points).all()


def test_train_log_lines_format():
    pts = sphere_points(64, seed=8)
    result = self_train(pts, tiny_config(seed=9))
    lines = result.log.lines()
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 ")
    assert "reconstruction=" in lines[0]
    assert "seconds=" in lines[0]


# ---------------------------------------------------------------------------
# upsample


def test_upsample_counts_and_frame():
    pts = sphere_points(64, seed=9) * 3.0 + np.array([5.0, 0.0, -2.0])
    cfg = tiny_config(seed=10)
    result = self_train(pts, cfg)
    out = upsample(pts, result.generator)
    assert len(out) == 128
    # output should stay in the neighborhood of the input frame
    assert np.linalg.norm(out.centroid() - pts.mean(axis=0)) < 3.0


def test_upsample_zero_params_duplicates():
    pts = sphere_points(32, seed=10)
    gen = GeneratorParams.zeros(4, k=4, channels=8)
    out = upsample(pts, gen)
    assert len(out) == 128
    uniq = np.unique(np.round(out.points, 12), axis=0)
    assert len(uniq) == 32


def test_upsample_ratio_mismatch():
    gen = GeneratorParams.zeros(2, k=4, channels=8)
    with pytest.raises(ValueError, match="ratio"):
        upsample(sphere_points(16, seed=11), gen, ratio=4)


def test_checkpoint_round_trip_preserves_upsample(tmp_path):
    pts = sphere_points(64, seed=12)
    cfg = tiny_config(seed=13)
    result = self_train(pts, cfg)
    before = upsample(pts, result.generator).points
    path = tmp_path / "generator.ckpt"
    save_checkpoint(path, dict(result.generator.named_parameters()),
                    metadata=result.generator.metadata())
    tensors, metadata, _ = load_checkpoint(path)
    restored = GeneratorParams.from_checkpoint(tensors, metadata)
    after = upsample(pts, restored).points
    assert np.array_equal(before, after)


# ---------------------------------------------------------------------------
# ablation harness


def test_apply_variant_tokens():
    cfg = tiny_config()
    assert apply_variant(cfg, "full") == cfg
    assert apply_variant(cfg, "no_uniform_loss").use_uniform_loss is False
    assert apply_variant(cfg, "no_repulsion_loss").use_repulsion_loss is False
    assert apply_variant(cfg, "no_progressive").progressive is False
    assert apply_variant(cfg, "chamfer").reconstruction == "cd"
    swept = apply_variant(cfg, "pairs=2+kernel=fps")
    assert swept.num_pairs == 2 and swept.kernel == "fps"
    assert swept.batch_size == 2  # clamped to the pair count


def test_apply_variant_rejects_unknown():
    with pytest.raises(ConfigError):
        apply_variant(tiny_config(), "warp_drive")
    with pytest.raises(ConfigError):
        apply_variant(tiny_config(), "epochs=three")


def test_run_ablation_structure():
    pts = sphere_points(72, seed=14)
    reference = sphere_points(200, seed=15)
    cfg = tiny_config(epochs=1, num_pairs=2, batch_size=2, seed=16)
    rows = run_ablation(pts, cfg, ["full", "no_uniform_loss", "no_repulsion_loss",
                                   "chamfer"], reference=reference)
    assert [r.label for r in rows] == ["full", "no_uniform_loss",
                                       "no_repulsion_loss", "chamfer"]
    for row in rows:
        assert row.report.cd is not None
    uniform_off = rows[1].log.records[-1].losses["uniform"]
    assert uniform_off == 0.0
    repulsion_off = rows[2].log.records[-1].losses["repulsion"]
    assert repulsion_off == 0.0


def test_run_ablation_reproducible():
    pts = sphere_points(64, seed=17)
    reference = sphere_points(128, seed=18)
    cfg = tiny_config(epochs=1, num_pairs=2, batch_size=2, seed=19)
    variants = ["pairs=2+kernel=random", "pairs=2+kernel=fps"]
    rows_a = run_ablation(pts, cfg, variants, reference=reference)
    rows_b = run_ablation(pts, cfg, variants, reference=reference)
    for ra, rb in zip(rows_a, rows_b):
        assert ra.report.cd == rb.report.cd
        assert ra.report.hd == rb.report.hd
        assert ra.report.uniformity == rb.report.uniformity
        assert ra.log.digest() == rb.log.digest()
