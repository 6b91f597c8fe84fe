import math

import numpy as np
import pytest

from gpkoopman.embedding import SnapshotSequence, TrainingSet, build_training_set
from gpkoopman.errors import FitError
from gpkoopman.gp import (
    KernelParams,
    TaskCovariance,
    default_hyper_grid,
    diag_task_covariance,
    fit,
    gram_matrix,
    kernel_eval,
    kernel_vector,
    loocv_select,
    predict_cov,
    predict_mean,
)

import helpers


def random_training_set(seed, n=6, m=2, p=2):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(m, n + p))
    return build_training_set(SnapshotSequence(values=values, sample_period=1.0), p)


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        z = np.array([1.0, -2.0, 3.0])
        params = KernelParams(2.5, 1.3)
        assert kernel_eval(z, z, params, np.ones(3)) == 2.5

    def test_analytic_value(self):
        # scaled squared distance 2 with unit hyperparameters -> exp(-1)
        z_a, z_b = np.array([1.0, 1.0]), np.array([0.0, 0.0])
        val = kernel_eval(z_a, z_b, KernelParams(1.0, 1.0), np.ones(2))
        assert val == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(7)
        z_a, z_b = rng.normal(size=10), rng.normal(size=10)
        s = rng.uniform(0.5, 2.0, size=10)
        params = KernelParams(1.7, 0.8)
        acc = 0.0
        for i in range(10):
            acc += abs(z_a[i] / s[i] - z_b[i] / s[i]) ** 2
        expected = 1.7 * math.exp(-acc / (2 * 0.8**2))
        assert kernel_eval(z_a, z_b, params, s) == pytest.approx(expected, rel=1e-14)

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        z_a, z_b = rng.normal(size=4), rng.normal(size=4)
        params = KernelParams(1.0, 2.0)
        s = np.ones(4)
        assert kernel_eval(z_a, z_b, params, s) == kernel_eval(z_b, z_a, params, s)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(np.ones(3), np.ones(4), KernelParams(1.0, 1.0), np.ones(4))

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, 1.0)
        with pytest.raises(ValueError):
            KernelParams(1.0, -2.0)


class TestGramMatrix:
    def test_singleton(self):
        ts = TrainingSet(inputs=[[0.3]], outputs=[[1.0]], embedding_order=1,
                         input_scales=[0.3], output_scales=[1.0], sample_period=1.0)
        np.testing.assert_array_equal(gram_matrix(ts, KernelParams(2.0, 1.0)), [[2.0]])

    def test_matches_entrywise_bruteforce(self):
        ts = random_training_set(9, n=3)
        params = KernelParams(1.5, 1.1)
        k = gram_matrix(ts, params)
        for i in range(3):
            for j in range(3):
                expected = kernel_eval(ts.inputs[i], ts.inputs[j], params, ts.input_scales)
                assert k[i, j] == pytest.approx(expected, rel=1e-14, abs=1e-15)

    def test_psd(self):
        ts = random_training_set(10, n=12)
        k = gram_matrix(ts, KernelParams(3.0, 0.7))
        assert np.linalg.eigvalsh(k).min() >= -1e-10 * 3.0

    def test_diagonal_pinned(self):
        ts = random_training_set(11, n=8)
        k = gram_matrix(ts, KernelParams(0.5, 2.0))
        assert np.all(np.diag(k) == 0.5)
        assert np.array_equal(k, k.T)


class TestTaskCovariance:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            TaskCovariance(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            TaskCovariance(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2))

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError):
            TaskCovariance(np.eye(2), np.array([0.1, -0.1]))

    def test_diag_task_covariance_inverts_output_scales(self):
        ts = random_training_set(12, m=3, n=5)
        tasks = diag_task_covariance(ts, 0.01)
        np.testing.assert_allclose(np.diag(tasks.matrix), 1.0 / ts.output_scales)
        assert np.all(tasks.noise_variances == 0.01)


class TestFit:
    def test_single_task_reduces_to_standard_gp(self):
        ts = random_training_set(13, n=7, m=1, p=1)
        params = KernelParams(1.2, 0.9)
        sigma2 = 0.05
        model = fit(ts, params, TaskCovariance(np.eye(1), np.array([sigma2])))
        k = gram_matrix(ts, params)
        expected_h = np.linalg.solve(k + sigma2 * np.eye(7), ts.outputs.ravel())
        np.testing.assert_allclose(model.weight_H[0], expected_h, rtol=1e-10)

    def test_noise_free_interpolation(self):
        ts = random_training_set(14, n=6, m=2)
        model = fit(ts, KernelParams(1.0, 1.5), TaskCovariance(np.eye(2), np.zeros(2)))
        latent = model.weight_B @ model.gram
        np.testing.assert_allclose(latent.T, ts.outputs, atol=1e-8)

    def test_vec_h_matches_dense_kronecker_solve(self):
        ts = random_training_set(15, n=4, m=2)
        params = KernelParams(1.0, 1.0)
        tasks = TaskCovariance(np.array([[1.0, 0.3], [0.3, 2.0]]),
                               np.array([0.01, 0.02]))
        model = fit(ts, params, tasks)
        k = gram_matrix(ts, params)
        big = np.kron(k, tasks.matrix) + np.kron(np.eye(4), np.diag(tasks.noise_variances))
        vec_h = np.linalg.solve(big, ts.outputs.ravel())
        np.testing.assert_allclose(model.weight_H.T.ravel(), vec_h, atol=1e-10)

    def test_weight_b_is_kg_times_h(self):
        ts = random_training_set(16, n=5, m=2)
        tasks = diag_task_covariance(ts, 1e-3)
        model = fit(ts, KernelParams(1.0, 1.0), tasks)
        np.testing.assert_array_equal(model.weight_B, tasks.matrix @ model.weight_H)

    def test_dimension_mismatch(self):
        ts = random_training_set(17, m=2)
        with pytest.raises(ValueError):
            fit(ts, KernelParams(1.0, 1.0), TaskCovariance(np.eye(3), np.zeros(3)))

    def test_deterministic(self):
        ts = random_training_set(18, n=5, m=2)
        tasks = diag_task_covariance(ts, 1e-2)
        a = fit(ts, KernelParams(1.0, 1.0), tasks)
        b = fit(ts, KernelParams(1.0, 1.0), tasks)
        assert np.array_equal(a.weight_H, b.weight_H)
        assert np.array_equal(a.gram, b.gram)


class TestPredict:
    def test_zero_outputs_give_zero_mean(self):
        values = np.zeros((2, 8))
        ts = build_training_set(SnapshotSequence(values=values, sample_period=1.0), 2)
        model = fit(ts, KernelParams(1.0, 1.0), TaskCovariance(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(predict_mean(model, np.ones(4) * 0.1), np.zeros(2))

    def test_interpolates_training_outputs_when_noise_free(self):
        ts = random_training_set(19, n=6, m=2)
        model = fit(ts, KernelParams(1.0, 2.0), TaskCovariance(np.eye(2), np.zeros(2)))
        for k in range(ts.n_pairs):
            np.testing.assert_allclose(
                predict_mean(model, ts.inputs[k]), ts.outputs[k], atol=1e-8
            )

    def test_mean_matches_dense_oracle(self):
        ts = random_training_set(20, n=6, m=2)
        params = KernelParams(1.3, 1.1)
        tasks = TaskCovariance(np.array([[1.0, 0.4], [0.4, 1.5]]),
                               np.array([0.02, 0.05]))
        model = fit(ts, params, tasks)
        z_star = np.random.default_rng(21).normal(size=ts.inputs.shape[1])
        mean, _ = helpers.dense_gp_oracle(ts, params, tasks, z_star)
        np.testing.assert_allclose(predict_mean(model, z_star), mean, atol=1e-10)

    def test_cov_matches_dense_oracle(self):
        ts = random_training_set(22, n=6, m=2)
        params = KernelParams(0.8, 1.4)
        tasks = TaskCovariance(np.array([[1.0, -0.2], [-0.2, 0.9]]),
                               np.array([0.01, 0.03]))
        model = fit(ts, params, tasks)
        z_star = np.random.default_rng(23).normal(size=ts.inputs.shape[1])
        _, cov = helpers.dense_gp_oracle(ts, params, tasks, z_star)
        np.testing.assert_allclose(predict_cov(model, z_star), cov, atol=1e-10)

    def test_zero_variance_at_training_input_when_noise_free(self):
        ts = random_training_set(24, n=5, m=2)
        model = fit(ts, KernelParams(1.0, 1.5), TaskCovariance(np.eye(2), np.zeros(2)))
        cov = predict_cov(model, ts.inputs[2])
        assert np.abs(np.diag(cov)).max() <= 1e-8 * 1.0

    def test_prior_recovered_far_from_data(self):
        ts = random_training_set(25, n=5, m=2)
        kg = np.array([[1.0, 0.2], [0.2, 0.7]])
        model = fit(ts, KernelParams(2.0, 0.5), TaskCovariance(kg, np.full(2, 1e-4)))
        z_far = np.full(ts.inputs.shape[1], 50.0)
        np.testing.assert_allclose(predict_cov(model, z_far), 2.0 * kg, atol=1e-10)

    def test_cov_symmetric_psd(self):
        ts = random_training_set(26, n=7, m=3)
        model = fit(ts, KernelParams(1.0, 1.0), diag_task_covariance(ts, 1e-3))
        cov = predict_cov(model, np.random.default_rng(27).normal(size=ts.inputs.shape[1]))
        assert np.array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-8

    def test_dimension_mismatch(self):
        ts = random_training_set(28)
        model = fit(ts, KernelParams(1.0, 1.0), diag_task_covariance(ts, 1e-3))
        with pytest.raises(ValueError):
            predict_mean(model, np.ones(3))


class TestLoocvSelect:
    def test_single_candidate_returned(self):
        ts = random_training_set(29, n=5, m=2)
        grid = [(KernelParams(1.0, 2.0), 0.01)]
        params, tasks = loocv_select(ts, grid)
        assert params == KernelParams(1.0, 2.0)
        assert np.all(tasks.noise_variances == 0.01)

    def test_empty_grid_rejected(self):
        ts = random_training_set(30)
        with pytest.raises(ValueError):
            loocv_select(ts, [])

    def test_unknown_objective_rejected(self):
        ts = random_training_set(31)
        with pytest.raises(ValueError):
            loocv_select(ts, default_hyper_grid(), objective="nonsense")

    def test_length_scale_recovery_from_known_gp(self):
        # truth ell = 0.5 is in the default grid; one grid step = {0.5, 1.0}
        hits = 0
        for seed in range(50):
            ts, _ = helpers.gp_draw_training_set(seed, ell_true=0.5, noise=0.05)
            params, _ = loocv_select(ts, default_hyper_grid())
            hits += params.length_scale in (0.5, 1.0)
        assert hits >= 45

    def test_selected_noise_variance_monotone_in_injected_noise(self):
        monotone = 0
        for seed in range(9):
            rng = np.random.default_rng(100 + seed)
            ts_latent, latent = helpers.gp_draw_training_set(200 + seed, noise=0.0)
            selected = []
            for sigma in (0.01, 0.1):
                y = latent + sigma * rng.standard_normal(latent.shape[0])
                ts = TrainingSet(
                    inputs=ts_latent.inputs, outputs=y[:, None], embedding_order=1,
                    input_scales=ts_latent.input_scales,
                    output_scales=np.abs(y).max(keepdims=True), sample_period=1.0,
                )
                _, tasks = loocv_select(ts, default_hyper_grid())
                selected.append(tasks.noise_variances[0])
            monotone += selected[1] >= selected[0]
        assert monotone >= 5  # majority vote across seeds

    def test_nlpd_objective_runs(self):
        ts, _ = helpers.gp_draw_training_set(3, noise=0.05)
        params, tasks = loocv_select(
            ts, default_hyper_grid(length_scales=(0.5, 1.0)), objective="nlpd"
        )
        assert params.length_scale in (0.5, 1.0)

    def test_order_independent_tie_breaking(self):
        ts = random_training_set(32, n=5)
        grid = default_hyper_grid(signal_variances=(1.0, 2.0), length_scales=(1.0, 2.0),
                                  noise_variances=(1e-3, 1e-2))
        a = loocv_select(ts, grid)
        b = loocv_select(ts, list(reversed(grid)))
        assert a[0] == b[0]
        assert np.array_equal(a[1].noise_variances, b[1].noise_variances)


class TestJitterLadder:
    def test_exactly_duplicated_inputs_still_fit(self):
        # duplicated rows make K (and K x Kg) exactly singular with D = 0
        inputs = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, -0.3], [0.9, 0.7]])
        ts = TrainingSet(inputs=inputs, outputs=np.ones((4, 1)), embedding_order=2,
                         input_scales=np.abs(inputs).max(axis=0),
                         output_scales=np.ones(1), sample_period=1.0)
        model = fit(ts, KernelParams(1.0, 1.0), TaskCovariance(np.eye(1), np.zeros(1)))
        assert model.jitter > 0

    def test_fit_error_reports_condition(self):
        inputs = np.array([[0.1], [0.2], [0.3]])
        ts = TrainingSet(inputs=inputs, outputs=np.ones((3, 1)), embedding_order=1,
                         input_scales=np.ones(1), output_scales=np.ones(1),
                         sample_period=1.0)
        # a negative-definite "task covariance" cannot be fixed by tiny jitter;
        # bypass the TaskCovariance PSD validation to exercise the failure path
        bad = TaskCovariance(np.eye(1), np.zeros(1))
        object.__setattr__(bad, "matrix", np.array([[-1.0]]))
        with pytest.raises(FitError) as err:
            fit(ts, KernelParams(1.0, 1.0), bad)
        assert err.value.condition is not None
