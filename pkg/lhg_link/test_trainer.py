from dataclasses import replace

import numpy
import pytest

from lhg_link.common import ConfigurationError, DivergenceError
from lhg_link.graph_store import build_graph, split_links
from lhg_link.trainer import (
    BEST_CHECKPOINT_NAME,
    REPORT_FILE_NAME,
    OptimizerState,
    TrainConfig,
    init_params_for,
    measure_scaling,
    optimizer_step,
    train,
)


def _small_config(**overrides) -> TrainConfig:
    settings = dict(
        hidden_dims=[8, 8],
        semantic_dims=[4, 4],
        num_paths=5,
        max_path_length=3,
        batch_size=32,
        learning_rate=0.01,
        max_epochs=10,
        steps_per_epoch=20,
        patience=100,
        seed=0,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


def test_zero_gradients_leave_parameters_unchanged():
    params = {"w": numpy.array([1.0, -2.0])}
    for kind in ("adam", "sgd"):
        updated = optimizer_step(params, {"w": numpy.zeros(2)}, OptimizerState(kind=kind), 0.1)
        numpy.testing.assert_array_equal(updated["w"], params["w"])


def test_adam_minimises_a_quadratic():
    params = {"w": numpy.array([1.0])}
    state = OptimizerState()
    for _ in range(500):
        params = optimizer_step(params, {"w": 2.0 * params["w"]}, state, 0.01)
    assert abs(params["w"][0]) < 1e-3


def test_frozen_entries_do_not_move():
    params = {"w": numpy.array([1.0, 1.0]), "v": numpy.array([1.0])}
    grads = {"w": numpy.array([1.0, 1.0]), "v": numpy.array([1.0])}
    frozen = {"w": numpy.array([True, False]), "v": numpy.array(True)}
    updated = optimizer_step(params, grads, OptimizerState(kind="sgd"), 0.5, frozen)
    numpy.testing.assert_array_equal(updated["w"], [1.0, 0.5])
    numpy.testing.assert_array_equal(updated["v"], [1.0])


def test_non_finite_gradient_aborts():
    with pytest.raises(DivergenceError, match="batch 7"):
        optimizer_step(
            {"w": numpy.ones(2)}, {"w": numpy.array([1.0, numpy.nan])}, OptimizerState(), 0.1, batch_id=7
        )


def test_training_halves_the_loss(ring_graph):
    split = split_links(ring_graph, (0.8, 0.1, 0.1), seed=0)
    report = train(_small_config(film_weight=0.0), split, verbose=False).report
    assert len(report.step_losses) == 200
    first, last = numpy.mean(report.step_losses[:10]), numpy.mean(report.step_losses[-10:])
    assert last <= 0.5 * first
    assert report.best_val_map == max(report.val_map)


def test_patience_zero_stops_at_the_first_flat_epoch(ring_graph, tmp_path):
    split = split_links(ring_graph, (0.8, 0.1, 0.1), seed=0)
    config = _small_config(learning_rate=1e-12, patience=0, steps_per_epoch=2)
    report = train(config, split, output_dir=tmp_path, verbose=False).report
    assert len(report.losses) == 2
    assert report.stopped_early
    assert report.convergence_epoch == 1
    assert (tmp_path / BEST_CHECKPOINT_NAME).exists()
    assert (tmp_path / REPORT_FILE_NAME).exists()


def test_same_seed_gives_the_same_run(ring_graph):
    split = split_links(ring_graph, (0.8, 0.1, 0.1), seed=3)
    config = _small_config(max_epochs=2, steps_per_epoch=3)
    first = train(config, split, verbose=False)
    second = train(config, split, verbose=False)
    assert first.report.step_losses == second.report.step_losses
    for name, values in first.params.as_dict().items():
        numpy.testing.assert_array_equal(second.params.as_dict()[name], values)


def test_film_penalty_shrinks_gamma_and_beta(ring_graph):
    split = split_links(ring_graph, (0.8, 0.1, 0.1), seed=0)
    free = train(_small_config(film_weight=0.0), split, verbose=False).report
    penalised = train(_small_config(film_weight=1e3), split, verbose=False).report
    assert numpy.mean(penalised.gamma_norms[-20:]) < numpy.mean(free.gamma_norms[-20:])
    assert numpy.mean(penalised.beta_norms[-20:]) < numpy.mean(free.beta_norms[-20:])


def test_no_personalization_keeps_film_parameters(ring_graph):
    split = split_links(ring_graph, (0.8, 0.1, 0.1), seed=0)
    config = _small_config(variant="no_personalization", max_epochs=1, steps_per_epoch=3)
    result = train(config, split, verbose=False)
    initial = init_params_for(config, split.train_graph)
    for layer, start in zip(result.params.layers, initial.layers):
        numpy.testing.assert_array_equal(layer.W_gamma, start.W_gamma)
        numpy.testing.assert_array_equal(layer.b_beta, start.b_beta)
    assert not numpy.array_equal(result.params.layers[0].W_h, initial.layers[0].W_h)
    assert result.report.gamma_norms[-1] == 0.0


def test_config_validation_and_fingerprint():
    config = TrainConfig.from_items({"num_layers": 3, "hidden_dims": [16], "semantic_dims": [4], "unknown": 1})
    assert config.hidden_dims == [16, 16, 16]
    config.validate()
    base = {"num_layers": 3, "hidden_dims": [16], "semantic_dims": [4]}
    assert config.fingerprint() == TrainConfig.from_items(dict(base, workers=4)).fingerprint()
    assert config.fingerprint() != TrainConfig.from_items(dict(base, seed=1)).fingerprint()
    for bad in ({"decay": 0.0}, {"optimizer": "rmsprop"}, {"hidden_dims": [8, 8, 8]}, {"margin": -1.0}):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_items(bad).validate()


def test_without_validation_links_every_epoch_runs(ring_graph, tmp_path):
    split = split_links(ring_graph, (1.0, 0.0, 0.0), seed=0)
    config = _small_config(max_epochs=6, steps_per_epoch=5, patience=1)
    result = train(config, split, output_dir=tmp_path, verbose=False)
    assert len(result.report.losses) == 6
    assert not result.report.stopped_early
    assert result.report.convergence_epoch == 6
    assert (tmp_path / BEST_CHECKPOINT_NAME).exists()
    shorter = train(replace(config, max_epochs=5), split, verbose=False)
    assert not numpy.array_equal(result.params.layers[0].W_h, shorter.params.layers[0].W_h)


def test_scaling_table_handles_a_single_node_graph(ring_graph):
    lone = build_graph(1, numpy.zeros((0, 2), dtype=numpy.int64), features=numpy.ones((1, 6)))
    edges = numpy.array([(i, (i + 1) % 24) for i in range(24)])
    double_ring = build_graph(24, edges, features=numpy.random.default_rng(2).normal(size=(24, 6)))
    config = _small_config(steps_per_epoch=2)
    df = measure_scaling([("one", lone), ("ring", ring_graph), ("double", double_ring)], config, epochs=1)
    assert df["graph"].tolist() == ["one", "ring", "double"]
    assert df["nodes"].tolist() == [1, 12, 24]
    assert df.loc[0, "secs_per_epoch"] == 0.0
    assert df.loc[0, "epochs"] == 0
    assert df["epochs"].tolist()[1:] == [1, 1]
    assert df.loc[0, "within_linear_band"] is None
    assert df.loc[1, "within_linear_band"] is None
    assert df.loc[2, "within_linear_band"] in (True, False)
    assert df.loc[2, "time_ratio"] > 0
