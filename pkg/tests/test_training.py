"""Losses, Adam, dropout, the training loop, and grid search."""

import math

import numpy as np
import pytest

from conftest import make_separable
from fuselab import fusion, numerics, training
from fuselab.data import Dataset
from fuselab.errors import ConfigError, DivergenceError, DomainError, InputError


def _rand_probs(rng):
    p = rng.uniform(0.05, 1.0, 3)
    return p / p.sum()


class TestFocalLoss:
    def test_gamma_zero_is_cross_entropy(self, rng):
        for _ in range(200):
            probs = _rand_probs(rng)
            label = int(rng.integers(0, 3))
            fl = training.focal_loss(probs, label, 0.0)
            ce = training.cross_entropy(probs, label)
            assert fl == ce
            assert fl == pytest.approx(-math.log(probs[label]), rel=1e-12)

    def test_perfect_prediction_is_zero(self):
        assert training.focal_loss([0.0, 1.0, 0.0], 1, 2.0) == 0.0

    def test_closed_form_case(self):
        # p_label 0.5, gamma 2 -> 0.25 * (-ln 0.5)
        loss = training.focal_loss([0.2, 0.5, 0.3], 1, 2.0)
        assert loss == pytest.approx(0.25 * math.log(2.0), rel=1e-12)

    def test_uniform_probs_cross_entropy(self):
        third = 1.0 / 3.0
        assert training.cross_entropy([third, third, third], 0) == pytest.approx(math.log(3.0))

    def test_never_exceeds_cross_entropy(self, rng):
        for _ in range(300):
            probs = _rand_probs(rng)
            label = int(rng.integers(0, 3))
            ce = training.cross_entropy(probs, label)
            for gamma in (2.0, 3.0, 4.0):
                assert training.focal_loss(probs, label, gamma) <= ce

    def test_monotone_decreasing_in_confidence(self):
        losses = []
        for p in (0.2, 0.4, 0.6, 0.8, 0.95):
            rest = (1.0 - p) / 2.0
            losses.append(training.focal_loss([rest, p, rest], 1, 2.0))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_class_weights_scale(self):
        base = training.focal_loss([0.2, 0.5, 0.3], 1, 2.0)
        weighted = training.focal_loss([0.2, 0.5, 0.3], 1, 2.0, class_weights=[1.0, 3.0, 1.0])
        assert weighted == pytest.approx(3.0 * base, rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            training.focal_loss([0.2, 0.5, 0.3], 3, 2.0)
        with pytest.raises(DomainError):
            training.focal_loss([0.2, 0.5, 0.3], 1, -1.0)
        with pytest.raises(DomainError):
            training.focal_loss([0.9, 0.4, 0.3], 1, 2.0)  # does not sum to 1

    def test_gradient_matches_finite_differences(self, rng):
        # d(mean focal)/d(logits), checked through the softmax, away from clamps
        for gamma in (0.0, 2.0, 3.0):
            logits0 = rng.normal(0.0, 1.5, (4, 3))
            labels = rng.integers(0, 3, 4)

            def f(theta):
                probs = numerics.softmax_rows(theta.reshape(4, 3))
                loss, _ = training.focal_loss_batch(probs, labels, gamma)
                return loss

            def grad(theta):
                probs = numerics.softmax_rows(theta.reshape(4, 3))
                _, d_logits = training.focal_loss_batch(probs, labels, gamma)
                return d_logits.reshape(-1)

            err = numerics.grad_check(f, grad, logits0.reshape(-1), eps=1e-3)
            assert err < 1e-4, (gamma, err)

    def test_batch_mean_matches_scalar_loss(self, rng):
        probs = np.stack([_rand_probs(rng) for _ in range(6)])
        labels = rng.integers(0, 3, 6)
        loss, _ = training.focal_loss_batch(probs, labels, 2.0)
        scalar = np.mean([training.focal_loss(probs[i], int(labels[i]), 2.0) for i in range(6)])
        assert loss == pytest.approx(scalar, rel=1e-12)

    def test_inverse_frequency_weights(self):
        w = training.inverse_frequency_weights([0] * 8 + [1] * 2 + [2] * 2)
        assert w[1] == w[2] > w[0]
        assert w.mean() == pytest.approx(1.0)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([[1.0, -2.0]], dtype=np.float32)}
        state = training.AdamState.for_params(params)
        before = params["w"].copy()
        training.adam_step(params, {"w": np.zeros((1, 2), np.float32)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], before)
        assert not state.m["w"].any() and not state.v["w"].any()

    def test_constant_gradient_update_approaches_lr_sign(self):
        # independent oracle: iterate the scalar recurrence directly
        g, lr, b1, b2, eps = 0.37, 1e-2, 0.9, 0.999, 1e-8
        m = v = 0.0
        updates = []
        for t in range(1, 201):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            updates.append(lr * m_hat / (math.sqrt(v_hat) + eps))
        assert updates[-1] == pytest.approx(lr, rel=1e-6)

        params = {"w": np.zeros((1, 1))}
        state = training.AdamState.for_params(params)
        prev = 0.0
        for t in range(200):
            before = params["w"][0, 0]
            training.adam_step(params, {"w": np.full((1, 1), g)}, state, lr=lr)
            prev = before - params["w"][0, 0]
        assert prev == pytest.approx(updates[-1], rel=1e-9)

    def test_bias_correction_first_step(self):
        # after one step from zero state the update is exactly lr * g/(|g| + eps')
        params = {"w": np.array([[0.0]])}
        state = training.AdamState.for_params(params)
        training.adam_step(params, {"w": np.array([[0.5]])}, state, lr=0.1)
        expected = 0.1 * 0.5 / (math.sqrt(0.25) + 1e-8)
        assert -params["w"][0, 0] == pytest.approx(expected, rel=1e-9)

    def test_gradient_scaling_preserves_direction(self, rng):
        g = rng.normal(size=(2, 3))
        for scale in (0.1, 10.0):
            pa = {"w": np.zeros((2, 3))}
            pb = {"w": np.zeros((2, 3))}
            training.adam_step(pa, {"w": g}, training.AdamState.for_params(pa), lr=1e-3)
            training.adam_step(pb, {"w": g * scale}, training.AdamState.for_params(pb), lr=1e-3)
            np.testing.assert_array_equal(np.sign(pa["w"]), np.sign(pb["w"]))
            # epsilon breaks exact scale invariance; magnitudes agree only loosely
            np.testing.assert_allclose(pa["w"], pb["w"], rtol=1e-4)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            params = {"w": np.ones((2, 2), dtype=np.float32)}
            state = training.AdamState.for_params(params)
            rng = np.random.default_rng(0)
            for _ in range(10):
                training.adam_step(params, {"w": rng.normal(size=(2, 2)).astype(np.float32)},
                                   state, lr=1e-3)
            runs.append(params["w"].tobytes())
        assert runs[0] == runs[1]

    def test_shape_mismatch(self):
        params = {"w": np.zeros((2, 2))}
        state = training.AdamState.for_params(params)
        with pytest.raises(Exception):
            training.adam_step(params, {"w": np.zeros((2, 3))}, state, lr=1e-3)


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = rng.normal(size=100)
        np.testing.assert_array_equal(training.dropout_apply(x, 0.0, rng), x)

    def test_inference_ignores_rate(self, rng):
        x = rng.normal(size=100)
        np.testing.assert_array_equal(training.dropout_apply(x, 0.9, training=False), x)

    def test_expected_value_preserved(self):
        # Monte Carlo oracle: mean over 1e5 masks within 2 percent
        rng = np.random.default_rng(77)
        x = np.ones(8)
        total = np.zeros(8)
        n = 100_000
        for _ in range(n):
            total += training.dropout_apply(x, 0.5, rng)
        np.testing.assert_allclose(total / n, x, rtol=0.02)

    def test_survivors_scaled(self, rng):
        x = np.ones(1000)
        out = training.dropout_apply(x, 0.2, rng)
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.8)

    def test_rate_one_rejected(self, rng):
        with pytest.raises(DomainError):
            training.dropout_apply(np.ones(3), 1.0, rng)


class TestTrainConfig:
    def test_json_round_trip(self):
        config = training.TrainConfig(learning_rate=1e-4, focal_gamma=3.0, dropout_rate=0.2,
                                      loss_kind="focal", batch_size=16, max_epochs=50,
                                      patience=3, seed=7, selection_metric="weighted_f1")
        again = training.TrainConfig.from_json(config.to_json())
        assert again == config

    def test_field_names_exact(self):
        payload = training.TrainConfig().to_json()
        import json
        assert set(json.loads(payload)) == {
            "learning_rate", "focal_gamma", "dropout_rate", "loss_kind", "batch_size",
            "max_epochs", "patience", "seed", "selection_metric"}

    @pytest.mark.parametrize("kwargs", [
        dict(learning_rate=0.0), dict(focal_gamma=-1.0), dict(dropout_rate=1.0),
        dict(loss_kind="hinge"), dict(batch_size=0), dict(patience=0),
        dict(selection_metric="auc"),
    ])
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            training.TrainConfig(**kwargs)

    def test_unknown_json_field_rejected(self):
        with pytest.raises(ConfigError):
            training.TrainConfig.from_json('{"learning_rate": 0.1, "momentum": 0.9}')


def _quick_config(**kwargs):
    base = dict(learning_rate=1e-3, focal_gamma=2.0, dropout_rate=0.0, loss_kind="focal",
                batch_size=16, max_epochs=12, patience=5, seed=1,
                selection_metric="accuracy")
    base.update(kwargs)
    return training.TrainConfig(**base)


class TestTrainLoop:
    def test_reaches_full_accuracy_on_separable_data(self):
        train_set = make_separable(sizes=(8, 8, 8), seed=10)
        val_set = make_separable(sizes=(3, 3, 3), seed=11, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        model, history = training.train(model, train_set, val_set, _quick_config())
        xt, xv, y = train_set.to_arrays()
        report = training.evaluate_model(model, xt, xv, y)
        assert report.accuracy == 1.0
        assert history.epochs[0].train_loss > history.epochs[-1].train_loss * 0.99

    def test_patience_one_stops_at_epoch_two(self):
        # constant inputs make every epoch identical, so the metric never improves
        ds = make_separable(sizes=(4, 4, 4), noise=0.0, seed=0)
        val = make_separable(sizes=(3, 3, 3), noise=0.0, seed=0, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        config = _quick_config(patience=1, max_epochs=50, learning_rate=1e-12)
        model, history = training.train(model, ds, val, config)
        assert len(history.epochs) == 2
        assert history.best_epoch == 1

    def test_same_seed_identical_history(self):
        ds = make_separable(sizes=(6, 6, 6), seed=2)
        val = make_separable(sizes=(3, 3, 3), seed=3, prefix="v")
        csvs = []
        for _ in range(2):
            model = fusion.init_params(fusion.FusionKind.SELF_ATTENTION, seed=4)
            _, history = training.train(model, ds, val, _quick_config(max_epochs=4, dropout_rate=0.2))
            csvs.append(history.to_csv())
        assert csvs[0] == csvs[1]

    def test_returns_best_epoch_parameters(self):
        ds = make_separable(sizes=(6, 6, 6), seed=5)
        val = make_separable(sizes=(4, 4, 4), seed=6, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=7)
        model, history = training.train(model, ds, val, _quick_config(max_epochs=6))
        vxt, vxv, vy = val.to_arrays()
        restored = training.evaluate_model(model, vxt, vxv, vy)
        best = history.epochs[history.best_epoch - 1].val_report
        assert restored.accuracy == pytest.approx(best.accuracy)
        recorded_best = max(e.val_report.value("accuracy") for e in history.epochs)
        assert best.value("accuracy") == recorded_best

    def test_empty_dataset_rejected(self):
        val = make_separable(sizes=(3, 3, 3), seed=0)
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        with pytest.raises(InputError):
            training.train(model, Dataset([]), val, _quick_config())

    def test_divergence_reports_epoch_and_batch(self):
        ds = make_separable(sizes=(4, 4, 4), seed=1)
        val = make_separable(sizes=(3, 3, 3), seed=2, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        model.params["fc2_b"] += np.float32(np.inf)
        with np.errstate(invalid="ignore"):
            with pytest.raises(DivergenceError) as info:
                training.train(model, ds, val, _quick_config())
        assert info.value.epoch == 1 and info.value.batch == 0

    def test_history_csv_columns(self):
        ds = make_separable(sizes=(4, 4, 4), seed=1)
        val = make_separable(sizes=(3, 3, 3), seed=2, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        _, history = training.train(model, ds, val, _quick_config(max_epochs=3, patience=10))
        lines = history.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_accuracy,val_macro_f1,val_weighted_f1,f1_negative,f1_neutral,f1_positive"
        assert len(lines) == 1 + len(history.epochs)

    def test_breakdown_series_matches_history(self):
        from fuselab import metrics
        ds = make_separable(sizes=(4, 4, 4), seed=1)
        val = make_separable(sizes=(3, 3, 3), seed=2, prefix="v")
        model = fusion.init_params(fusion.FusionKind.BASIC, seed=0)
        _, history = training.train(model, ds, val, _quick_config(max_epochs=3, patience=10))
        rows = metrics.breakdown_series(history)
        assert [r[0] for r in rows] == [e.epoch for e in history.epochs]
        for row, rec in zip(rows, history.epochs):
            assert row[1:] == tuple(float(x) for x in rec.val_report.f1)


class TestGridSearch:
    def _datasets(self):
        return (make_separable(sizes=(5, 5, 5), seed=20),
                make_separable(sizes=(3, 3, 3), seed=21, prefix="v"))

    def test_default_grid_cardinality(self):
        assert len(training.ParamGrid().cells()) == 108

    def test_single_cell_equals_plain_train(self):
        train_set, val_set = self._datasets()
        config = _quick_config(max_epochs=3, patience=10)
        grid = training.ParamGrid(kinds=(fusion.FusionKind.BASIC,),
                                  learning_rates=(1e-3,), dropout_rates=(0.0,), gammas=(2.0,))
        result = training.grid_search(train_set, val_set, config, grid)
        assert len(result.cells) == 1
        model = fusion.init_params(fusion.FusionKind.BASIC, config.seed)
        _, history = training.train(model, train_set, val_set, config)
        best = history.epochs[history.best_epoch - 1].val_report.value("accuracy")
        assert result.best.metric == pytest.approx(best)

    def test_restricted_grid_is_three_kinds(self):
        train_set, val_set = self._datasets()
        grid = training.ParamGrid(learning_rates=(1e-3,), dropout_rates=(0.0,), gammas=(2.0,))
        result = training.grid_search(train_set, val_set, _quick_config(max_epochs=2, patience=10), grid)
        assert len(result.cells) == 3
        assert {c.kind for c in result.cells} == set(fusion.FusionKind.ALL)

    def test_best_attains_column_maximum(self):
        train_set, val_set = self._datasets()
        grid = training.ParamGrid(kinds=(fusion.FusionKind.BASIC,),
                                  learning_rates=(1e-2, 1e-4), dropout_rates=(0.0, 0.2),
                                  gammas=(2.0,))
        result = training.grid_search(train_set, val_set, _quick_config(max_epochs=2, patience=10), grid)
        metrics_seen = [c.metric for c in result.cells if c.metric is not None]
        assert result.best.metric == max(metrics_seen)

    def test_cell_failures_recorded_and_sweep_continues(self, monkeypatch):
        train_set, val_set = self._datasets()
        calls = {"n": 0}
        real_train = training.train

        def flaky(model, tr, va, config, class_weights=None):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("boom")
            return real_train(model, tr, va, config, class_weights)

        monkeypatch.setattr(training, "train", flaky)
        grid = training.ParamGrid(kinds=(fusion.FusionKind.BASIC,),
                                  learning_rates=(1e-3, 1e-4), dropout_rates=(0.0,), gammas=(2.0,))
        result = training.grid_search(train_set, val_set, _quick_config(max_epochs=2), grid)
        assert result.cells[0].error and "boom" in result.cells[0].error
        assert result.cells[1].metric is not None
        assert result.best is not None

    def test_empty_grid_axis_rejected(self):
        with pytest.raises(InputError):
            training.ParamGrid(learning_rates=())
