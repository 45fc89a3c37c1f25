import numpy as np
import pytest
import scipy.linalg

from opfbench import (
    DecompositionInputs,
    OpfParams,
    error_decomposition,
    epoch_schedule,
    markov_params,
    persistent_excitation_check,
    regret_order_ratio,
    regret_series,
    run_opf,
    run_steady_predictor,
    simulate,
    truncation_bias,
    whiteness_check,
)
from opfbench.diagnostics import (
    decomposition_series,
    loss_spike_ratios,
    regressor_windows,
)
from opfbench.errors import NumericalError, ParameterError
from opfbench.opf import scaling_matrix

from conftest import scalar_model


def build_inputs(model, filt, filter_output, obs, p, gamma, lam, k_end):
    """Assemble stacked decomposition inputs for columns l = p .. k_end."""
    D = scaling_matrix(p, gamma, model.m)
    W = regressor_windows(obs[:k_end], p)
    Zbar = W[: k_end - p + 1].T
    E = filter_output.innovations[p : k_end + 1].T
    B = truncation_bias(model, filt, filter_output, p)[: k_end - p + 1].T
    Vbar = np.diag(lam / D.diag**2) + Zbar @ Zbar.T
    S = obs[p : k_end + 1].T @ Zbar.T
    return DecompositionInputs(B=B, E=E, Zbar=Zbar, Vbar=Vbar, S_cross=S), D


class TestRegretSeries:
    def test_equal_predictors_zero_regret(self):
        y = np.arange(12.0).reshape(-1, 1)
        yk = y + 0.3
        rec = regret_series(y, yk, yk)
        assert np.allclose(rec.cum_regret, 0.0)

    def test_perfect_hindsight_nonpositive(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((30, 2))
        yk = y + rng.standard_normal((30, 2))
        rec = regret_series(y, y, yk)
        assert rec.final_regret <= 0.0
        e2 = np.sum((y - yk) ** 2)
        assert rec.final_regret == pytest.approx(-e2)

    def test_three_step_hand_example(self):
        y = np.array([[1.0], [2.0], [3.0]])
        online = np.zeros((3, 1))
        kalman = np.ones((3, 1))
        rec = regret_series(y, online, kalman)
        assert rec.final_regret == pytest.approx((1 + 4 + 9) - (0 + 1 + 4))

    def test_identity_holds(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((500, 3))
        online = y + rng.standard_normal((500, 3))
        kalman = y + 0.1 * rng.standard_normal((500, 3))
        rec = regret_series(y, online, kalman)
        assert rec.identity_defect() < 1e-12
        rec.assert_identity()

    def test_length_mismatch(self):
        with pytest.raises(ParameterError, match="length"):
            regret_series(np.zeros((3, 1)), np.zeros((4, 1)), np.zeros((3, 1)))


class TestOrderRatios:
    def test_zero_regret_zero_ratios(self):
        y = np.ones((20, 1))
        rec = regret_series(y, y, y, ks=np.arange(10, 30))
        ratios = regret_order_ratio(rec, [1, 2, 3])
        assert all(np.allclose(v, 0.0) for v in ratios.values())

    def test_synthetic_log_squared(self):
        ks = np.arange(10, 200)
        target = np.log(ks.astype(float)) ** 2
        online = np.sqrt(np.diff(target, prepend=0.0)).reshape(-1, 1)
        y = np.zeros_like(online)
        kalman = np.zeros_like(online)
        rec = regret_series(y, online, kalman, ks=ks)
        ratios = regret_order_ratio(rec, [2], ks=list(ks[5:]))
        assert np.allclose(ratios[2], 1.0, rtol=1e-10)

    def test_requires_k_above_e(self):
        y = np.ones((5, 1))
        rec = regret_series(y, y, y, ks=np.arange(1, 6))
        with pytest.raises(ParameterError):
            regret_order_ratio(rec, [1])


class TestTruncationBias:
    def test_zero_noise_zero_initial_state(self, scalar):
        model, filt = scalar
        noiseless = scalar_model(a=0.5, q=1e-30, r=1e-30)
        traj = simulate(noiseless, 50, seed=0)
        out = run_steady_predictor(filt, model, traj)
        b = truncation_bias(model, filt, out, 5)
        assert np.max(np.abs(b)) < 1e-12

    def test_geometric_decay_in_p(self, tracking):
        model, filt = tracking
        traj = simulate(model, 400, seed=2)
        out = run_steady_predictor(filt, model, traj)
        b_small = truncation_bias(model, filt, out, 5)
        b_large = truncation_bias(model, filt, out, 60)
        assert np.max(np.linalg.norm(b_large, axis=1)) < 1e-6
        assert np.max(np.linalg.norm(b_large, axis=1)) < np.max(
            np.linalg.norm(b_small, axis=1)
        )

    def test_alignment(self, tracking):
        model, filt = tracking
        traj = simulate(model, 100, seed=3)
        out = run_steady_predictor(filt, model, traj)
        p = 7
        b = truncation_bias(model, filt, out, p)
        A_cl = filt.closed_loop(model)
        expected = model.C @ np.linalg.matrix_power(A_cl, p) @ out.states[10 - p]
        assert np.allclose(b[10 - p], expected)


class TestErrorDecomposition:
    def _small_run(self, tracking, gamma=0.8, lam=1.0):
        model, filt = tracking
        params = OpfParams(beta=2.5, lam=lam, gamma=gamma, T_init=30, N_E=2)
        sched = epoch_schedule(params)
        traj = simulate(model, sched.final_step, seed=4)
        out = run_steady_predictor(filt, model, traj)
        return model, filt, params, sched, traj, out

    def test_zero_innovations_and_bias_give_zero_factors(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking)
        epoch = sched.epochs[0]
        inputs, D = build_inputs(
            model, filt, out, traj.observations, epoch.horizon, 0.8, 1.0, epoch.end
        )
        zeroed = DecompositionInputs(
            B=np.zeros_like(inputs.B),
            E=np.zeros_like(inputs.E),
            Zbar=inputs.Zbar,
            Vbar=inputs.Vbar,
            S_cross=inputs.S_cross,
        )
        G = markov_params(model, filt, epoch.horizon)
        rep = error_decomposition(zeroed, G, D, 1.0)
        assert rep.regress_factor == pytest.approx(0.0, abs=1e-12)
        assert rep.bias_factor == pytest.approx(0.0, abs=1e-12)
        assert rep.reg_factor > 0.0

    def test_vanishing_regularizer(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking, gamma=1.0)
        epoch = sched.epochs[0]
        G = markov_params(model, filt, epoch.horizon)
        lams = [1.0, 1e-4, 1e-8]
        vals = []
        for lam in lams:
            inputs, D = build_inputs(
                model, filt, out, traj.observations, epoch.horizon, 1.0, lam, epoch.end
            )
            vals.append(error_decomposition(inputs, G, D, lam).reg_factor)
        assert vals[1] < vals[0] * 1e-2
        assert vals[2] < 1e-10

    def test_factors_nonnegative_and_post_increments_bounded(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking)
        epoch = sched.epochs[0]
        inputs, D = build_inputs(
            model, filt, out, traj.observations, epoch.horizon, 0.8, 1.0, epoch.end
        )
        G = markov_params(model, filt, epoch.horizon)
        rep = error_decomposition(
            inputs, G, D, 1.0, accum_from=epoch.start - epoch.horizon
        )
        assert rep.reg_factor >= 0 and rep.regress_factor >= 0 and rep.bias_factor >= 0
        assert np.all(rep.accum_prior >= 0)
        assert np.all((rep.accum_post >= 0) & (rep.accum_post <= 1.0))
        assert np.allclose(
            rep.accum_post, rep.accum_prior / (1 + rep.accum_prior), atol=1e-12
        )
        assert len(rep.accum_prior) == epoch.steps

    def test_quadratic_form_two_ways(self, tracking):
        # factorization solve vs explicit inverse
        model, filt, params, sched, traj, out = self._small_run(tracking)
        epoch = sched.epochs[0]
        inputs, D = build_inputs(
            model, filt, out, traj.observations, epoch.horizon, 0.8, 1.0, epoch.end
        )
        z = inputs.Zbar[:, -1]
        cf = scipy.linalg.cho_factor(inputs.Vbar, lower=True)
        via_solve = float(z @ scipy.linalg.cho_solve(cf, z))
        via_inv = float(z @ np.linalg.inv(inputs.Vbar) @ z)
        assert via_solve == pytest.approx(via_inv, rel=1e-8)

    def test_driver_matches_pure_operation(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking)
        series = decomposition_series(
            model, filt, out, traj.observations, sched, 0.8, 1.0
        )
        epoch = sched.epochs[0]
        inputs, D = build_inputs(
            model, filt, out, traj.observations, epoch.horizon, 0.8, 1.0, epoch.end
        )
        G = markov_params(model, filt, epoch.horizon)
        rep = error_decomposition(
            inputs, G, D, 1.0, accum_from=epoch.start - epoch.horizon
        )
        drv = series.epochs[0].report
        assert drv.reg_factor == pytest.approx(rep.reg_factor, rel=1e-10)
        assert drv.regress_factor == pytest.approx(rep.regress_factor, rel=1e-10)
        assert drv.bias_factor == pytest.approx(rep.bias_factor, rel=1e-10)
        assert np.allclose(drv.accum_prior, rep.accum_prior, rtol=1e-10)
        assert drv.logdet_Vtilde == pytest.approx(rep.logdet_Vtilde, rel=1e-10)
        assert drv.trace_term == pytest.approx(rep.trace_term, rel=1e-10)

    def test_gap_reconstruction_matches_run(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking)
        run = run_opf(traj.observations, params)
        series = decomposition_series(
            model,
            filt,
            out,
            traj.observations,
            sched,
            params.gamma,
            params.lam,
            collect_gap_terms=True,
        )
        gap_direct = run.predictions - out.predictions[run.ks]
        gap_rebuilt = series.gap_terms.reconstructed_gap()
        assert np.array_equal(series.gap_terms.ks, run.ks)
        scale = np.max(np.abs(gap_direct))
        assert np.max(np.abs(gap_rebuilt - gap_direct)) / scale < 1e-6

    def test_column_count_mismatch_rejected(self):
        with pytest.raises(ParameterError, match="column counts"):
            DecompositionInputs(
                B=np.zeros((2, 3)),
                E=np.zeros((2, 4)),
                Zbar=np.zeros((6, 3)),
                Vbar=np.eye(6),
                S_cross=np.zeros((2, 6)),
            )

    def test_indefinite_gram_rejected(self, tracking):
        model, filt, params, sched, traj, out = self._small_run(tracking)
        epoch = sched.epochs[0]
        inputs, D = build_inputs(
            model, filt, out, traj.observations, epoch.horizon, 0.8, 1.0, epoch.end
        )
        bad = DecompositionInputs(
            B=inputs.B,
            E=inputs.E,
            Zbar=inputs.Zbar,
            Vbar=-inputs.Vbar,
            S_cross=inputs.S_cross,
        )
        G = markov_params(model, filt, epoch.horizon)
        with pytest.raises(NumericalError):
            error_decomposition(bad, G, D, 1.0)


class TestPersistentExcitation:
    def test_iid_observations_have_margin(self):
        rng = np.random.default_rng(7)
        ratios = []
        for rep in range(20):
            y = rng.standard_normal((2000, 2))  # R = I, sigma_R = 1
            ratios.append(persistent_excitation_check(y, 4, 1.0, [1990])[0])
        assert np.median(ratios) >= 1.0
        assert np.mean(np.asarray(ratios) >= 1.0) >= 0.95

    def test_repeated_observation_degenerates(self):
        y = np.tile(np.array([[1.0, -2.0]]), (500, 1))
        ratio = persistent_excitation_check(y, 3, 1.0, [499])[0]
        assert ratio < 1e-10

    def test_requires_positive_sigma(self):
        with pytest.raises(ParameterError):
            persistent_excitation_check(np.zeros((10, 1)), 2, 0.0, [5])


class TestWhiteness:
    def test_iid_gaussian_passes(self):
        rng = np.random.default_rng(8)
        passed = 0
        for rep in range(20):
            e = rng.standard_normal((4000, 3))
            passed += whiteness_check(e).passed
        assert passed >= 19

    def test_constant_series_is_maximal_failure(self):
        e = np.ones((100, 2))
        report = whiteness_check(e)
        assert np.allclose(report.ratios, 1.0)
        assert not report.passed

    def test_correlated_series_fails(self):
        rng = np.random.default_rng(9)
        e = rng.standard_normal((3000, 1))
        ar = np.empty_like(e)
        ar[0] = e[0]
        for k in range(1, len(e)):
            ar[k] = 0.5 * ar[k - 1] + e[k]
        assert not whiteness_check(ar).passed


class TestSpikeRatios:
    def test_detects_boundary_jump(self):
        ks = np.arange(100, 400)
        losses = np.ones(300)
        losses[150] = 50.0  # spike at k = 250
        ratios = loss_spike_ratios(ks, losses, [250], window=50)
        assert ratios.shape == (1,)
        assert ratios[0] == pytest.approx(50.0)

    def test_skips_boundaries_without_history(self):
        ks = np.arange(10)
        ratios = loss_spike_ratios(ks, np.ones(10), [2], window=50)
        assert ratios.size == 0
