import math

import numpy as np
import pytest
import scipy.stats
from scipy.special import expit, logit

from lscp.logistic import (
    ConvergenceError,
    DataError,
    FitResult,
    ModelData,
    batch_pretest_fit,
    confidence_intervals,
    coupling_vector,
    fit_glm,
    fit_glm_batch,
    fit_full,
    fit_model,
    fit_restricted,
    information,
    load_model_data,
    violation_vector,
    wald_statistic,
    _spd_inverse_sqrt,
)
from lscp.synthetic import make_example_casecontrol, make_grouped_logistic


@pytest.fixture(scope="module")
def example():
    return make_example_casecontrol()


@pytest.fixture(scope="module")
def example_fit(example):
    return fit_model(example)


class TestFitGlm:
    def test_intercept_only_closed_form(self):
        fit = fit_glm(np.ones((1, 1)), np.array([30.0]), np.array([100.0]))
        assert fit.beta[0] == pytest.approx(logit(0.3), abs=1e-10)

    def test_saturated_two_group(self):
        # One parameter per group: fitted probabilities equal frequencies.
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        fit = fit_glm(X, np.array([12.0, 70.0]), np.array([40.0, 100.0]))
        assert expit(fit.beta) == pytest.approx([0.3, 0.7], abs=1e-10)

    def test_score_at_mle(self, example):
        fit = fit_glm(example.design_full, example.successes, example.trials)
        assert fit.max_abs_score < 1e-8
        assert fit.converged

    def test_complete_separation_detected(self):
        X = np.array([[1.0, -2.0], [1.0, -1.0], [1.0, 1.0], [1.0, 2.0]])
        y = np.array([0.0, 0.0, 20.0, 20.0])
        m = np.array([20.0, 20.0, 20.0, 20.0])
        with pytest.raises(ConvergenceError):
            fit_glm(X, y, m)

    def test_batch_matches_single(self, example):
        rng = np.random.default_rng(6)
        Y = rng.binomial(example.trials.astype(int)[:, None], 0.4, size=(example.n_rows, 5)).astype(float)
        betas, ok = fit_glm_batch(example.design_full, Y, example.trials)
        assert ok.all()
        for j in range(5):
            single = fit_glm(example.design_full, Y[:, j], example.trials)
            assert betas[:, j] == pytest.approx(single.beta, abs=1e-8)


class TestModelData:
    def test_rank_deficiency(self):
        with pytest.raises(DataError):
            ModelData(
                design_theta=np.ones((4, 2)),  # duplicated constant column
                design_gamma=np.arange(4.0).reshape(4, 1),
                successes=np.ones(4),
                trials=np.full(4, 5.0),
                a_vector=np.array([1.0, 0.0]),
                gamma_tilde=np.zeros(1),
            )

    def test_count_sanity(self):
        with pytest.raises(DataError):
            ModelData(
                design_theta=np.ones((2, 1)),
                design_gamma=np.array([[0.0], [1.0]]),
                successes=np.array([3.0, 9.0]),
                trials=np.array([5.0, 5.0]),
                a_vector=np.array([1.0]),
                gamma_tilde=np.zeros(1),
            )

    def test_zero_contrast_rejected(self, example):
        with pytest.raises(DataError):
            ModelData(
                design_theta=example.design_theta,
                design_gamma=example.design_gamma,
                successes=example.successes,
                trials=example.trials,
                a_vector=np.zeros(4),
                gamma_tilde=np.zeros(2),
            )

    def test_replicated_trials_equals_stacked_design(self, example):
        # Stacking identical covariate rows r times is the same likelihood
        # as multiplying the trial counts, so the fits must agree.
        r = 3
        stacked = ModelData(
            design_theta=np.tile(example.design_theta, (r, 1)),
            design_gamma=np.tile(example.design_gamma, (r, 1)),
            successes=np.tile(example.successes, r),
            trials=np.tile(example.trials, r),
            a_vector=example.a_vector,
            gamma_tilde=example.gamma_tilde,
        )
        folded = example.with_replicated_trials(r)
        fit_stacked = fit_glm(stacked.design_full, stacked.successes, stacked.trials)
        fit_folded = fit_glm(folded.design_full, folded.successes, folded.trials)
        assert fit_folded.beta == pytest.approx(fit_stacked.beta, abs=1e-9)


class TestFits:
    def test_restricted_with_zero_gamma_tilde_is_plain_fit(self, example):
        theta_r = fit_restricted(example)
        plain = fit_glm(example.design_theta, example.successes, example.trials)
        assert theta_r == pytest.approx(plain.beta, abs=1e-10)

    def test_nested_likelihoods(self, example):
        full = fit_glm(example.design_full, example.successes, example.trials)
        restricted = fit_glm(
            example.design_theta,
            example.successes,
            example.trials,
            offset=example.design_gamma @ example.gamma_tilde,
        )
        assert restricted.log_likelihood <= full.log_likelihood + 1e-10

    def test_information_is_xtwx(self, example):
        theta = np.array([-1.0, 0.5, 0.3, 0.4])
        gamma = np.array([0.1, -0.2])
        got = information(example, theta, gamma)
        eta = example.design_theta @ theta + example.design_gamma @ gamma
        pi = expit(eta)
        X = example.design_full
        expected = sum(
            m * pi_i * (1 - pi_i) * np.outer(x, x)
            for m, pi_i, x in zip(example.trials, pi, X)
        )
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(got.T)
        assert np.linalg.eigvalsh(got)[0] > 0.0

    def test_block_inverse_identity(self, example_fit):
        blocks = example_fit.info_blocks
        inv = np.block(
            [
                [blocks["inv_theta_theta"], blocks["inv_theta_gamma"]],
                [blocks["inv_gamma_theta"], blocks["inv_gamma_gamma"]],
            ]
        )
        assert example_fit.info @ inv == pytest.approx(np.eye(6), abs=1e-10)


class TestWald:
    def test_zero_at_restriction(self, example):
        theta_r = fit_restricted(example)
        assert wald_statistic(example, theta_r, example.gamma_tilde) == 0.0

    def test_scalar_reduction_q1(self):
        # For q = 1 the statistic is (gamma_hat - gamma_tilde)^2 divided by
        # the scalar inverse-information element.
        data = make_grouped_logistic(30, 40, 2, 1, seed=3)
        theta_hat, gamma_hat, _ = fit_full(data)
        theta_r = fit_restricted(data)
        info = information(data, theta_r, data.gamma_tilde)
        inv_gg = np.linalg.inv(info)[data.p :, data.p :]
        expected = float((gamma_hat - data.gamma_tilde) ** 2 / inv_gg)
        assert wald_statistic(data, theta_r, gamma_hat) == pytest.approx(expected, rel=1e-9)

    def test_null_distribution_ks(self):
        # Under the restriction the statistic is asymptotically chi-square
        # with q degrees of freedom; 5000 replicates, KS at the 1% level.
        data = make_grouped_logistic(40, 50, 3, 2, seed=12)
        fit = fit_model(data)
        rng = np.random.default_rng(77)
        pi = expit(data.design_theta @ fit.theta_hat_restricted + data.design_gamma @ data.gamma_tilde)
        Y = rng.binomial(data.trials.astype(int)[:, None], pi[:, None], size=(data.n_rows, 5000)).astype(float)
        batch = batch_pretest_fit(data, Y, theta_start=fit.theta_hat_restricted, gamma_start=data.gamma_tilde)
        stats = batch.wald[batch.ok]
        pvalue = scipy.stats.kstest(stats, scipy.stats.chi2(df=2).cdf).pvalue
        assert pvalue > 0.01


class TestIntervals:
    def test_pretest_accepts_on_example(self, example, example_fit):
        full, restricted, chosen, selected = confidence_intervals(example, example_fit, 0.05, 0.05)
        assert selected == "restricted"
        assert chosen == restricted
        # Restricted interval is narrower here (coupled designs).
        assert restricted[1] - restricted[0] < full[1] - full[0]

    def test_forced_rejection_selects_full(self, example, example_fit):
        forced = FitResult(**{**example_fit.__dict__, "wald": 100.0})
        _, _, chosen, selected = confidence_intervals(example, forced, 0.05, 0.05)
        assert selected == "full"

    def test_zero_wald_selects_restricted(self, example, example_fit):
        forced = FitResult(**{**example_fit.__dict__, "wald": 0.0})
        _, restricted, chosen, selected = confidence_intervals(example, forced, 0.05, 0.05)
        assert selected == "restricted" and chosen == restricted

    def test_fit_result_roundtrip(self, example_fit):
        again = FitResult.from_dict(example_fit.to_dict())
        assert again.wald == example_fit.wald
        assert again.theta_hat == pytest.approx(example_fit.theta_hat)
        assert again.info == pytest.approx(example_fit.info)


class TestCouplingVector:
    def test_orthogonal_design_gives_zero(self):
        # Disjoint supports make the theta/gamma information block vanish.
        data = ModelData(
            design_theta=np.array([[1.0], [1.0], [0.0], [0.0]]),
            design_gamma=np.array([[0.0], [0.0], [1.0], [1.0]]),
            successes=np.array([5.0, 7.0, 6.0, 9.0]),
            trials=np.full(4, 20.0),
            a_vector=np.array([1.0]),
            gamma_tilde=np.zeros(1),
        )
        b, norm_b = coupling_vector(np.array([0.2]), data)
        assert norm_b == pytest.approx(0.0, abs=1e-14)

    def test_scalar_case_formula(self):
        data = make_grouped_logistic(25, 30, 2, 1, seed=9)
        theta = np.array([-0.3, 0.5])
        inv = np.linalg.inv(information(data, theta, data.gamma_tilde))
        p = data.p
        a = data.a_vector
        expected = (inv[p:, :p] @ a) / math.sqrt(inv[p:, p:][0, 0] * float(a @ inv[:p, :p] @ a))
        b, norm_b = coupling_vector(theta, data)
        assert b == pytest.approx(expected, rel=1e-10)
        assert norm_b == pytest.approx(abs(float(expected)), rel=1e-10)

    def test_norm_below_one_on_random_designs(self):
        rng = np.random.default_rng(0)
        for trial in range(1000):
            n, p, q = 12, 2, 2
            data = make_grouped_logistic(n, 10, p, q, seed=int(rng.integers(1 << 31)), coupling=rng.uniform(0.0, 0.95))
            theta = rng.normal(scale=0.5, size=p)
            _, norm_b = coupling_vector(theta, data)
            assert 0.0 <= norm_b < 1.0


class TestViolationVector:
    def test_zero_at_restriction(self, example, example_fit):
        lam, norm_lam, psi = violation_vector(example_fit.theta_hat, example.gamma_tilde, example)
        assert norm_lam == 0.0
        assert psi == 1.0

    def test_sign_symmetry(self, example, example_fit):
        gamma = np.array([0.4, -0.2])
        _, n_plus, _ = violation_vector(example_fit.theta_hat, gamma, example)
        _, n_minus, _ = violation_vector(example_fit.theta_hat, -gamma, example)
        assert n_plus == pytest.approx(n_minus, rel=1e-12)

    def test_identity_root_norm(self):
        # With an identity matrix the inverse square root is the identity,
        # so the standardized violation of (3, 4) has norm 5.
        assert _spd_inverse_sqrt(np.eye(2)) @ np.array([3.0, 4.0]) == pytest.approx([3.0, 4.0])
        assert np.linalg.norm(_spd_inverse_sqrt(np.eye(2)) @ np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_matches_eigendecomposition_oracle(self, example, example_fit):
        gamma = np.array([0.3, 0.1])
        inv_gg = np.linalg.inv(information(example, example_fit.theta_hat, example.gamma_tilde))[4:, 4:]
        w, v = np.linalg.eigh(inv_gg)
        oracle = (v / np.sqrt(w)) @ v.T @ gamma
        lam, norm_lam, _ = violation_vector(example_fit.theta_hat, gamma, example)
        assert lam == pytest.approx(oracle, rel=1e-10)


class TestCsvLoading:
    def write_csv(self, path, text):
        path.write_text(text)
        return str(path)

    def test_roundtrip(self, tmp_path, example):
        lines = ["exposure,age,smoking,ea,es,cases,total"]
        for i in range(example.n_rows):
            e, g, s = example.design_theta[i, 1:]
            lines.append(
                f"{e},{g},{s},{example.design_gamma[i,0]},{example.design_gamma[i,1]},"
                f"{example.successes[i]},{example.trials[i]}"
            )
        path = self.write_csv(tmp_path / "d.csv", "\n".join(lines) + "\n")
        data = load_model_data(
            path,
            theta_cols=["exposure", "age", "smoking"],
            gamma_cols=["ea", "es"],
            successes_col="cases",
            trials_col="total",
            a_vector=example.a_vector,
            gamma_tilde=example.gamma_tilde,
            intercept=True,
        )
        assert data.design_theta == pytest.approx(example.design_theta)
        assert data.design_gamma == pytest.approx(example.design_gamma)
        fit = fit_model(data)
        assert fit.wald == pytest.approx(fit_model(example).wald, abs=1e-10)

    def test_unknown_column(self, tmp_path):
        path = self.write_csv(tmp_path / "d.csv", "x,s,m\n1,2,5\n")
        with pytest.raises(DataError, match="'y'"):
            load_model_data(path, ["x"], ["y"], "s", "m", [1.0], [0.0])

    def test_non_numeric_field_reports_line(self, tmp_path):
        path = self.write_csv(tmp_path / "d.csv", "x,g,s,m\n1,0,2,5\n1,oops,3,9\n")
        with pytest.raises(DataError, match=":3"):
            load_model_data(path, ["x"], ["g"], "s", "m", [1.0], [0.0])

    def test_bernoulli_default_trials(self, tmp_path):
        path = self.write_csv(
            tmp_path / "d.csv",
            "x,g,s\n" + "\n".join(f"{v},{w},{y}" for v, w, y in
                                  [(0.1, 1, 1), (0.4, 0, 0), (1.2, 1, 1), (-0.3, 0, 0), (0.9, 1, 0), (0.5, 0, 1)]) + "\n",
        )
        data = load_model_data(path, ["x"], ["g"], "s", None, [1.0], [0.0])
        assert np.all(data.trials == 1.0)
