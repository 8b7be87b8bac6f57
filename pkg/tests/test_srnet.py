import numpy as np
import pytest

from app.core.errors import ConfigurationError, DimensionError, DivergenceError
from app.models.schemas import LossKind, PluginInit, SRModelConfig, TrainConfig, parse_config
from app.services.complexity import fouriersr_param_count, model_param_count
from app.services.imaging import synth_dataset
from app.services.serialization import read_csv, read_pgm
from app.services.srnet import (
    bicubic_baseline,
    build_conv_stack,
    build_model,
    build_plugin_block,
    erf_map,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    support_fraction,
    train,
    train_run,
    write_erf,
    write_history,
)

TINY = dict(channels=4, blocks=2, rho=2, seed=0)


def tiny_train(**overrides):
    values = dict(steps=3, batch_size=2, patch_size=8, learning_rate=0.01, dataset_size=2, val_size=1, hr_size=24)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.mark.parametrize("positions", [[], [0], [0, 1]])
def test_parameter_count_matches_closed_form(positions):
    cfg = SRModelConfig(**TINY, plugin_positions=positions)
    model = build_model(cfg)
    assert model.graph.parameter_count() == model_param_count(cfg)
    assert len(model.plugins) == len(positions)


def test_each_plugin_adds_its_block_budget():
    plain = build_model(SRModelConfig(**TINY))
    with_plugin = build_model(SRModelConfig(**TINY, plugin_positions=[1]))
    added = with_plugin.graph.parameter_count() - plain.graph.parameter_count()
    assert added == 4 * 4 // 2 + 6 * 4 == fouriersr_param_count(4, 2)


@pytest.mark.parametrize("scale", [1, 2, 3])
def test_output_shape_follows_scale(rng, scale):
    model = build_model(SRModelConfig(**TINY, scale=scale))
    out = model.predict(rng.uniform(size=(1, 6, 5)))
    assert out.shape == (1, 6 * scale, 5 * scale)


def test_plugin_position_outside_blocks():
    with pytest.raises(ConfigurationError):
        parse_config(SRModelConfig, {"blocks": "2", "plugin_positions": "0,5"})
    with pytest.raises(ConfigurationError):
        parse_config(SRModelConfig, {"blocks": "2", "plugin_positions": "1,1"})


def test_random_positions_are_seeded():
    a = parse_config(SRModelConfig, {"blocks": "8", "seed": "3", "plugin_positions": "random:3"})
    b = parse_config(SRModelConfig, {"blocks": "8", "seed": "3", "plugin_positions": "random:3"})
    assert a.plugin_positions == b.plugin_positions
    assert len(set(a.plugin_positions)) == 3
    assert all(0 <= p < 8 for p in a.plugin_positions)


def test_identity_plugin_leaves_network_unchanged(rng):
    lr = rng.uniform(size=(2, 1, 7, 6))
    plain = build_model(SRModelConfig(**TINY))
    inserted = build_model(SRModelConfig(**TINY, plugin_positions=[0, 1], plugin_init=PluginInit.IDENTITY))
    np.testing.assert_allclose(inserted.predict(lr), plain.predict(lr), atol=1e-14)


def test_default_plugin_start_leaves_network_unchanged(rng):
    lr = rng.uniform(size=(2, 1, 7, 6))
    plain = build_model(SRModelConfig(**TINY))
    inserted = build_model(SRModelConfig(**TINY, plugin_positions=[0, 1]))
    assert inserted.config.plugin_init is PluginInit.ZERO_BRANCH
    np.testing.assert_allclose(inserted.predict(lr), plain.predict(lr), atol=1e-14)


def test_default_plugin_start_trains_fusion_weights():
    model = build_model(SRModelConfig(**TINY, plugin_positions=[1]))
    dataset = synth_dataset(0, 2, 24)
    train(model, dataset, tiny_train())
    values = model.graph.parameter_values()
    fused = [name for name in values if name.endswith("fuse_a") or name.endswith("fuse_b")]
    assert len(fused) == 2
    assert all(np.any(values[name] != 0.0) for name in fused)


def test_near_identity_plugin_changes_network(rng):
    lr = rng.uniform(size=(1, 1, 6, 6))
    plain = build_model(SRModelConfig(**TINY))
    inserted = build_model(SRModelConfig(**TINY, plugin_positions=[0], plugin_init=PluginInit.NEAR_IDENTITY))
    assert np.max(np.abs(inserted.predict(lr) - plain.predict(lr))) > 1e-6


def test_loss_node_is_attached_once():
    model = build_model(SRModelConfig(**TINY))
    assert model.loss_node(LossKind.L1) == model.loss_node(LossKind.L1)
    assert model.loss_node(LossKind.MSE) != model.loss_node(LossKind.L1)


def test_zero_learning_rate_keeps_parameters():
    model = build_model(SRModelConfig(**TINY, plugin_positions=[0]))
    before = {k: v.copy() for k, v in model.graph.parameter_values().items()}
    dataset = synth_dataset(0, 2, 24)
    history = train(model, dataset, tiny_train(learning_rate=0.0))
    assert history.steps == [1, 2, 3]
    for name, value in model.graph.parameter_values().items():
        np.testing.assert_array_equal(value, before[name])


def test_training_is_deterministic():
    runs = [train_run(SRModelConfig(**TINY, plugin_positions=[1]), tiny_train()) for _ in range(2)]
    (m1, h1), (m2, h2) = runs
    assert h1.loss == h2.loss
    assert h1.val_psnr == h2.val_psnr
    for name, value in m1.graph.parameter_values().items():
        assert value.tobytes() == m2.graph.parameter_values()[name].tobytes()


def test_validation_schedule_and_baseline():
    _, history = train_run(SRModelConfig(**TINY), tiny_train(steps=5, val_every=2))
    assert [v is not None for v in history.val_psnr] == [False, True, False, True, True]
    assert history.bicubic_psnr is not None and np.isfinite(history.bicubic_psnr)
    assert history.last_val_psnr == history.val_psnr[-1]


def test_divergence_reports_step():
    model = build_model(SRModelConfig(**TINY))
    dataset = synth_dataset(0, 2, 24)
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError) as info:
            train(model, dataset, tiny_train(steps=50, learning_rate=1e12, loss=LossKind.MSE))
    assert info.value.step > 1
    assert not np.isfinite(info.value.loss)


def test_patch_larger_than_image():
    model = build_model(SRModelConfig(**TINY))
    dataset = synth_dataset(0, 1, 12)
    with pytest.raises(ConfigurationError):
        train(model, dataset, tiny_train(patch_size=8))


def test_hr_scale_mismatch():
    model = build_model(SRModelConfig(**TINY, scale=3))
    dataset = synth_dataset(0, 1, 24, scale=2)
    with pytest.raises(DimensionError):
        train(model, dataset, tiny_train())


def test_history_csv(tmp_path):
    _, history = train_run(SRModelConfig(**TINY), tiny_train(val_every=3))
    path = str(tmp_path / "history.csv")
    write_history(history, path)
    header, rows = read_csv(path)
    assert header == ["step", "loss", "val_psnr"]
    assert [int(r[0]) for r in rows] == [1, 2, 3]
    assert float(rows[0][1]) == history.loss[0]
    assert rows[0][2] == ""
    assert float(rows[2][2]) == history.val_psnr[2]


def test_checkpoint_round_trip(tmp_path, rng):
    model, _ = train_run(SRModelConfig(**TINY, plugin_positions=[0]), tiny_train())
    directory = str(tmp_path / "checkpoint")
    save_checkpoint(model, directory)
    restored = load_checkpoint(directory)
    assert restored.config == model.config
    lr = rng.uniform(size=(1, 1, 5, 5))
    np.testing.assert_array_equal(restored.predict(lr), model.predict(lr))


def test_checkpoint_requires_config(tmp_path):
    with pytest.raises(ConfigurationError):
        save_checkpoint(build_conv_stack(1), str(tmp_path / "x"))


def test_evaluate_is_bounded():
    pairs = synth_dataset(1, 2, 24)
    model = build_model(SRModelConfig(**TINY))
    score = evaluate(model, pairs)
    assert 0.0 < score <= 100.0
    assert bicubic_baseline(pairs) > 0.0


def nonzero_window(heatmap, threshold=1e-12):
    ys, xs = np.nonzero(heatmap.data > threshold)
    return ys.min(), ys.max(), xs.min(), xs.max()


def test_single_conv_receptive_field_is_three_by_three():
    heatmap = erf_map(build_conv_stack(1), (8, 8))
    assert heatmap.shape == (16, 16)
    assert heatmap.data.max() == 1.0
    assert nonzero_window(heatmap) == (7, 9, 7, 9)
    assert support_fraction(heatmap) == pytest.approx(9 / 256)


def test_two_convs_stay_within_five_by_five():
    heatmap = erf_map(build_conv_stack(2), (8, 8))
    y0, y1, x0, x1 = nonzero_window(heatmap)
    assert 6 <= y0 and y1 <= 10 and 6 <= x0 and x1 <= 10
    assert heatmap.data[8, 8] > 0


def test_erf_wraps_around_borders():
    heatmap = erf_map(build_conv_stack(1), (0, 0), size=(8, 8))
    for y, x in [(0, 0), (7, 7), (1, 7), (7, 1)]:
        assert heatmap.data[y, x] > 0


def test_fouriersr_receptive_field_covers_mirrored_rows():
    heatmap = erf_map(build_plugin_block(), (2, 4), size=(9, 9)).data
    # the lower branch reaches row 2, the flipped upper branch row 9 - 2
    assert np.all(heatmap[[2, 7], :] > 1e-9)
    others = np.delete(heatmap, [2, 7], axis=0)
    assert np.max(others) < 1e-12
    assert support_fraction(erf_map(build_plugin_block(), (2, 4), size=(9, 9))) == pytest.approx(2 / 9)


def test_zero_weights_give_empty_map():
    model = build_conv_stack(1)
    model.graph.set_parameter("conv0.weight", np.zeros((1, 1, 3, 3)))
    heatmap = erf_map(model, (4, 4), size=(8, 8))
    assert not heatmap.data.any()
    assert support_fraction(heatmap) == 0.0


def test_erf_position_out_of_range():
    model = build_model(SRModelConfig(**TINY))
    with pytest.raises(DimensionError):
        erf_map(model, (32, 0))
    with pytest.raises(DimensionError):
        erf_map(model, (0, -1))


def test_erf_of_sr_model_uses_output_grid():
    model = build_model(SRModelConfig(**TINY))
    heatmap = erf_map(model, (31, 31))
    assert heatmap.shape == (16, 16)
    assert heatmap.data.max() == 1.0


def test_write_erf(tmp_path):
    heatmap = erf_map(build_conv_stack(1), (3, 3), size=(8, 8))
    path = str(tmp_path / "maps" / "erf.pgm")
    write_erf(heatmap, path)
    image = read_pgm(path)
    assert image.shape == (8, 8)
    assert image.max() == 1.0
    assert image[0, 0] == 0.0


@pytest.mark.slow
def test_training_reduces_loss():
    cfg = dict(steps=300, batch_size=4, patch_size=12, learning_rate=0.02, dataset_size=4, val_size=2, hr_size=32)
    _, history = train_run(SRModelConfig(channels=8, blocks=2, rho=2), tiny_train(**cfg, val_every=300))
    assert np.mean(history.loss[-20:]) < np.mean(history.loss[:20])


@pytest.mark.slow
def test_overfits_single_sample():
    # the 8x8 LR patch is the whole image, so every step is a full-batch step
    cfg = dict(steps=500, batch_size=1, patch_size=8, learning_rate=0.05, loss=LossKind.MSE, dataset_size=1, hr_size=16)
    model, _ = train_run(SRModelConfig(channels=16, blocks=2, rho=4), tiny_train(**cfg, val_every=500))
    assert evaluate(model, synth_dataset(0, 1, 16)) > 40.0


@pytest.mark.slow
def test_plugin_comparison_over_paired_seeds():
    gains = []
    for seed in range(5):
        train_cfg = TrainConfig(seed=seed, steps=2000, patch_size=32, val_every=2000)
        _, base = train_run(SRModelConfig(channels=16, blocks=2, scale=2, seed=seed), train_cfg)
        _, plug = train_run(SRModelConfig(channels=16, blocks=2, scale=2, seed=seed, plugin_positions=[0, 1]), train_cfg)
        assert all(np.isfinite(base.loss)) and all(np.isfinite(plug.loss))
        gains.append(plug.last_val_psnr - base.last_val_psnr)
    assert min(gains) >= -0.05, gains
    assert sum(g > 0 for g in gains) >= 3, gains
