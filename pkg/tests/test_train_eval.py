import warnings

import numpy as np
import pytest

from clef.baselines import SimpleLinearModel, VARModel, fit_var
from clef.conditions import ConditionRegistry
from clef.datagen.synthetic import GeneratorConfig, generate_dataset, split_dataset
from clef.errors import ClefError, LeakageError
from clef.evaluation import (
    compute_metrics,
    evaluate_delayed,
    evaluate_immediate,
    evaluate_zero_shot_cf,
    r2_score,
    r2_similarity,
)
from clef.model import ClefConfig, ClefModel
from clef.persistence import counterfactual_pairs
from clef.timeenc import grid_timestamps
from clef.training import TrainConfig, train
from clef.trajectory import Trajectory


def tiny_dataset(noise=0.05, n=40, seed=3, **kwargs):
    config = GeneratorConfig(n_variables=4, n_tokens=3, min_length=8, max_length=12,
                             noise_sigma=noise, seed=seed, **kwargs)
    return config, generate_dataset(config, n)


def tiny_model(seed=0, V=4, d_z=8):
    config = ClefConfig(n_variables=V, condition_dim=d_z, ffn_enabled=False,
                        encoder_kind="recurrent", layers=1, dropout=0.0)
    return ClefModel(config, ConditionRegistry(dim=d_z), np.random.default_rng(seed))


class OracleModel:
    """Predicts the target exactly; exercises the evaluation arithmetic."""

    kind = "oracle"

    def __init__(self, n_variables):
        self.variable_names = [f"x{i}" for i in range(n_variables)]
        self.registry = ConditionRegistry(dim=1)
        self.norm_mean = np.zeros(n_variables)
        self.norm_std = np.ones(n_variables)
        self.counters = {"encoder_passes": 0, "decodes": 0}

    def normalize(self, values):
        return values

    def predict_batch(self, batch, train=False, rng=None):
        from clef.autodiff import Tensor

        self.counters["decodes"] += batch.batch_size
        return Tensor(batch.target.copy())


class TestTrain:
    def test_zero_epochs_leaves_parameters(self):
        _, data = tiny_dataset()
        splits = split_dataset(data, (0.7, 0.15, 0.15), seed=0)
        model = tiny_model()
        before = [p.array.copy() for _, p in model.parameters()]
        train(model, splits, TrainConfig(epochs=0, seed=0))
        after = [p.array.copy() for _, p in model.parameters()]
        for a, b in zip(before, after):
            assert np.array_equal(a, b)

    def test_same_seed_bit_identical(self):
        _, data = tiny_dataset()
        splits = split_dataset(data, (0.7, 0.15, 0.15), seed=0)
        results = []
        for _ in range(2):
            model = tiny_model(seed=1)
            train(model, splits, TrainConfig(epochs=3, seed=5, samples_per_epoch=256,
                                             batch_size=64, val_pairs=128))
            results.append([p.array.copy() for _, p in model.parameters()])
        for a, b in zip(*results):
            assert np.array_equal(a, b)

    def test_loss_halves_on_noiseless_data(self):
        _, data = tiny_dataset(noise=0.0, n=60)
        splits = split_dataset(data, (0.8, 0.2, 0.0), seed=0)
        model = tiny_model(seed=2)
        result = train(model, splits, TrainConfig(
            epochs=20, seed=0, samples_per_epoch=1024, batch_size=128,
            learning_rate=5e-3, patience=20, horizon_cap=6, val_pairs=256))
        assert result.loss_curve[-1] <= 0.5 * result.loss_curve[0]

    def test_empty_train_split_rejected(self):
        model = tiny_model()
        with pytest.raises(ClefError):
            train(model, {"train": [], "val": []}, TrainConfig(epochs=1))


class TestEvaluateImmediate:
    def test_simple_linear_on_constant_trajectory(self):
        values = np.ones((6, 2))
        traj = Trajectory("c", grid_timestamps(6), values, [["none"]] * 6)
        report = evaluate_immediate(SimpleLinearModel(n_variables=2), [traj])
        assert report.mae == 0.0
        assert report.rmse == 0.0

    def test_oracle_concepts_give_zero_error(self):
        _, data = tiny_dataset()
        report = evaluate_immediate(OracleModel(4), data[:5])
        assert report.mae == 0.0

    def test_mae_arithmetic(self):
        pred = np.array([[1.0], [3.0]])
        target = np.array([[2.0], [5.0]])
        report = compute_metrics(pred, target, ["x0"])
        assert report.mae == pytest.approx(1.5)

    def test_one_call_per_pair(self):
        _, data = tiny_dataset(n=6)
        model = SimpleLinearModel(n_variables=4)
        report = evaluate_immediate(model, data)
        expected_pairs = sum(t.length - 1 for t in data)
        assert model.counters["decodes"] == expected_pairs == report.n_samples


class TestEvaluateDelayed:
    def test_horizon_one_reproduces_immediate(self):
        _, data = tiny_dataset(n=10)
        model = SimpleLinearModel(n_variables=4)
        immediate = evaluate_immediate(model, data)
        delayed = evaluate_delayed(model, data, horizon=1)
        assert delayed.mae == pytest.approx(immediate.mae)
        assert delayed.rmse == pytest.approx(immediate.rmse)

    def test_immediate_subset_matches(self):
        _, data = tiny_dataset(n=10)
        model = SimpleLinearModel(n_variables=4)
        delayed = evaluate_delayed(model, data, horizon=5)
        immediate = evaluate_immediate(model, data)
        assert delayed.per_horizon[1]["mae"] == pytest.approx(immediate.mae)

    def test_delayed_bucket_count(self):
        _, data = tiny_dataset(n=20, noise=0.0, none_probability=0.9)
        model = SimpleLinearModel(n_variables=4)
        horizon = 5
        report = evaluate_delayed(model, data, horizon=horizon)
        delayed_buckets = [h for h in report.per_horizon if h >= 2]
        assert len(delayed_buckets) == horizon - 1

    def test_persistence_delayed_not_better_than_immediate(self):
        _, data = tiny_dataset(n=40, noise=0.05)
        model = SimpleLinearModel(n_variables=4)
        immediate = evaluate_immediate(model, data)
        delayed = evaluate_delayed(model, data, horizon=6)
        assert delayed.mae >= immediate.mae

    def test_one_call_per_pair(self):
        _, data = tiny_dataset(n=8)
        model = SimpleLinearModel(n_variables=4)
        report = evaluate_delayed(model, data, horizon=4)
        assert model.counters["decodes"] == report.n_samples


class TestZeroShot:
    def make_zero_shot(self):
        config = GeneratorConfig(n_variables=3, n_tokens=3, min_length=10, max_length=14,
                                 noise_sigma=0.0, seed=11)
        data = generate_dataset(config, 16, cf_pairs=6, divergence=4)
        splits = split_dataset(data, (0.7, 0.15, 0.15), seed=1, zero_shot=True)
        pairs = counterfactual_pairs(data)
        return splits, pairs

    def test_leakage_detected(self):
        splits, pairs = self.make_zero_shot()
        train_ids = {pairs[0].counterfactual.id}
        with pytest.raises(LeakageError):
            evaluate_zero_shot_cf(SimpleLinearModel(n_variables=3), pairs, train_ids)

    def test_prefix_steps_contribute_no_errors(self):
        splits, pairs = self.make_zero_shot()
        model = SimpleLinearModel(n_variables=3)
        report = evaluate_zero_shot_cf(model, pairs, {t.id for t in splits["train"]})
        expected = sum(p.counterfactual.length - p.divergence for p in pairs)
        assert report.n_samples == expected
        assert min(report.per_horizon) == pairs[0].divergence

    def test_oracle_exact_at_divergence(self):
        splits, pairs = self.make_zero_shot()
        report = evaluate_zero_shot_cf(OracleModel(3), pairs, set())
        assert report.mae == 0.0


class TestVAR:
    def test_recovers_linear_system(self):
        rng = np.random.default_rng(0)
        A = np.array([[0.9, 0.05], [-0.1, 0.8]])
        trajs = []
        for k in range(5):
            x = rng.uniform(0.5, 1.5, 2)
            rows = [x]
            for _ in range(29):
                rows.append(A @ rows[-1])
            trajs.append(Trajectory(f"t{k}", grid_timestamps(30), np.array(rows),
                                    [["none"]] * 30))
        model = fit_var(trajs, order=1)
        assert np.linalg.norm(model.coefs[0] - A) < 1e-8
        assert np.linalg.norm(model.intercept) < 1e-8

    def test_constant_series_recovered_via_ridge(self):
        values = np.tile([2.0, 3.0], (20, 1))
        traj = Trajectory("c", grid_timestamps(20), values, [["none"]] * 20)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = fit_var([traj], order=1)
        assert any("ridge" in str(w.message) for w in caught)
        pred = model.step([np.array([2.0, 3.0])])
        assert np.allclose(pred, [2.0, 3.0], atol=1e-6)

    def test_iterated_blow_up_with_unit_exceeding_spectrum(self):
        A = 1.1 * np.eye(2)
        model = VARModel(order=1, intercept=np.zeros(2), coefs=[A])
        prefix = np.ones((3, 2))
        forecast = model.forecast(prefix, horizon=200)
        magnitudes = np.abs(forecast).max(axis=1)
        assert np.all(np.diff(magnitudes) > 0)
        assert magnitudes[-1] > 1e8 * magnitudes[0]

    def test_insufficient_rows_rejected(self):
        traj = Trajectory("s", grid_timestamps(3), np.ones((3, 4)), [["none"]] * 3)
        with pytest.raises(ClefError):
            fit_var([traj], order=2)

    def test_var_through_eval_harness(self):
        _, data = tiny_dataset(n=10, noise=0.0)
        model = fit_var(data, order=1)
        report = evaluate_delayed(model, data, horizon=3)
        assert report.n_samples > 0
        assert np.isfinite(report.mae)


class TestR2:
    def test_perfect_prediction(self):
        target = np.array([[1.0], [2.0], [3.0]])
        assert r2_score(target.copy(), target) == pytest.approx(1.0)

    def test_mean_prediction_zero(self):
        target = np.array([[1.0], [2.0], [3.0]])
        pred = np.full_like(target, 2.0)
        assert r2_score(pred, target) == pytest.approx(0.0)

    def test_anticorrelated_negative(self):
        target = np.array([[1.0], [2.0], [3.0]])
        pred = np.array([[3.0], [2.0], [1.0]])
        assert r2_score(pred, target) < 0

    def test_zero_variance_missing(self):
        target = np.ones((4, 1))
        assert r2_score(np.ones((4, 1)), target) is None

    def test_similarity_modes(self):
        a = Trajectory("a", grid_timestamps(4), np.array([[1.0], [2.0], [3.0], [4.0]]),
                       [["none"]] * 4)
        b = Trajectory("b", grid_timestamps(4), np.array([[1.0], [2.0], [3.0], [4.0]]),
                       [["none"]] * 4)
        assert r2_similarity(a, b) == pytest.approx(1.0)
        assert r2_similarity(a, b, symmetric=True) == pytest.approx(1.0)

    def test_similarity_dimension_mismatch(self):
        a = Trajectory("a", grid_timestamps(3), np.ones((3, 2)), [["none"]] * 3)
        b = Trajectory("b", grid_timestamps(3), np.ones((3, 1)), [["none"]] * 3)
        with pytest.raises(ClefError):
            r2_similarity(a, b)


class TestMetricInvariants:
    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            pred = rng.normal(0, 2, (10, 3))
            target = rng.normal(0, 2, (10, 3))
            report = compute_metrics(pred, target, ["a", "b", "c"])
            assert report.rmse >= report.mae

    def test_self_metrics(self):
        rng = np.random.default_rng(5)
        target = rng.normal(0, 1, (10, 2))
        report = compute_metrics(target.copy(), target, ["a", "b"])
        assert report.mae == 0.0
        assert report.rmse == 0.0
        assert report.r2 == pytest.approx(1.0)

    def test_flat_serialization(self):
        report = compute_metrics(np.ones((3, 1)), np.zeros((3, 1)), ["x0"],
                                 horizons=np.array([1, 1, 2]))
        rows = report.to_flat()
        assert {"metric", "scope", "horizon", "value"} == set(rows[0])
        horizons = {r["horizon"] for r in rows}
        assert {None, 1, 2} <= horizons
