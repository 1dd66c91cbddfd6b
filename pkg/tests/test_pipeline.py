import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iitr.dataset import DataError, Dataset, kfold_split, normalize
from iitr.nuisance import GLMNuisance, estimate_value_aipw
from iitr.pipeline import (
    PipelineConfig,
    Policy,
    complementary_analysis,
    cv_path,
    fit_full,
    predict,
    run_pipeline,
    select_lambda,
)
from iitr.sim import DGPConfig, generate

SMALL = PipelineConfig(n_lambda=6, lambda_min=1e-3, lambda_max=1.0, prune_frac=0.01)


@pytest.fixture(scope="module")
def small_data():
    data, _ = generate(DGPConfig(n=400, p=5, seed=7))
    return data


@pytest.fixture(scope="module")
def small_run(small_data):
    return run_pipeline(small_data, SMALL)


def planted_single_signal(n=600, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    A = rng.integers(0, 2, n)
    Y = X[:, 1] + A * 3.0 * X[:, 0] + 0.5 * rng.normal(size=n)
    return Dataset(X, A, Y, ("s", "b", "c", "d"))


def test_select_lambda_hand_example():
    assert select_lambda([0.1, 1.0, 10.0], [0.9, 1.0, 0.95], [0.1, 0.1, 0.1]) == (1.0, 10.0)


def test_select_lambda_ties_prefer_larger():
    assert select_lambda([0.1, 1.0, 10.0], [1.0, 1.0, 0.5], [0.0, 0.0, 0.0]) == (1.0, 1.0)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 2)), min_size=1, max_size=25))
def test_lambda_1se_not_below_lambda_min(cells):
    lambdas = np.geomspace(1e-4, 10, len(cells))
    mean, se = map(np.array, zip(*cells))
    lam_min, lam_1se = select_lambda(lambdas, mean, se)
    assert lam_1se >= lam_min
    assert mean[list(lambdas).index(lam_min)] == mean.max()


def test_default_grid():
    lams = PipelineConfig().lambdas()
    assert lams.size == 20
    assert lams[0] == pytest.approx(1e-4) and lams[-1] == pytest.approx(10.0)
    np.testing.assert_allclose(lams[1:] / lams[:-1], lams[1] / lams[0])


def test_single_fold_rejected():
    with pytest.raises(ValueError, match="K >= 2"):
        PipelineConfig(K=1)


@pytest.mark.parametrize("kw", [{"prune_frac": 1.0}, {"loss_kind": "logistic"},
                                {"lambda_rule": "2se"}, {"lambda_min": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PipelineConfig(**kw)


def test_cv_path_aggregation(small_data, small_run):
    _, cv, _ = small_run
    assert cv.lambda_1se >= cv.lambda_min
    used = np.where(cv.converged, cv.fold_values, np.nan)
    np.testing.assert_allclose(cv.mean_value, np.nanmean(used, axis=0))
    k_used = cv.converged.sum(axis=0)
    np.testing.assert_allclose(cv.se_value, np.nanstd(used, axis=0, ddof=1) / np.sqrt(k_used))


class SpyNuisance(GLMNuisance):
    log = []

    def fit(self, design, treatment, outcome):
        self.log.append(("fit", design.shape[0], float(design[:, 1].sum())))
        return super().fit(design, treatment, outcome)

    def predict(self, design):
        self.log.append(("predict", design.shape[0], float(design[:, 1].sum())))
        return super().predict(design)


def test_cv_nuisances_fit_on_training_and_applied_to_test(small_data):
    nd = normalize(small_data)
    folds = kfold_split(small_data.treatment, 5, 0)
    SpyNuisance.log = []
    cv_path(nd, folds, [0.01, 0.1], "ramp", SMALL, nuisance_factory=SpyNuisance)
    expected = []
    for k in range(5):
        tr, te = folds.train_test(k)
        sig_tr = ("fit", tr.size, float(nd.design[tr, 1].sum()))
        expected += [sig_tr, ("predict",) + sig_tr[1:],
                     ("predict", te.size, float(nd.design[te, 1].sum()))]
    assert SpyNuisance.log == expected


def test_cv_rejects_unsorted_grid(small_data):
    nd = normalize(small_data)
    folds = kfold_split(small_data.treatment, 5, 0)
    with pytest.raises(ValueError):
        cv_path(nd, folds, [1.0, 0.1], "ramp", SMALL)


def test_fit_full_single_dominant_signal():
    data = planted_single_signal()
    nd = normalize(data)
    policy = fit_full(nd, 0.05, "ramp", 0.5, SMALL)
    assert policy.selected == (0,)
    assert policy.eta[1] > 0 and np.all(policy.eta[2:] == 0)
    assert policy.eta_full[1] > 0
    assert not policy.trivial


def test_fit_full_everything_pruned_is_trivial():
    nd = normalize(planted_single_signal())
    policy = fit_full(nd, 1e6, "ramp", 0.1, SMALL)
    assert policy.trivial and policy.selected == ()
    assert np.all(policy.eta[1:] == 0)


@pytest.mark.parametrize("loss", ["ramp", "hinge"])
def test_refit_never_adds_variables(small_data, loss):
    nd = normalize(small_data)
    for prune in (0.0, 0.1, 0.5):
        policy = fit_full(nd, 0.01, loss, prune, SMALL)
        assert len(policy.selected) <= np.count_nonzero(policy.eta_full[1:])
        unselected = np.setdiff1d(np.arange(len(nd.names)), policy.selected)
        assert np.all(policy.eta[1 + unselected] == 0)


def test_max_vars_caps_selection(small_data):
    nd = normalize(small_data)
    policy = fit_full(nd, 1e-3, "ramp", 0.0, PipelineConfig(max_vars=1))
    assert len(policy.selected) == 1
    assert policy.selected[0] == int(np.argmax(np.abs(policy.eta_full[1:])))


def test_exclusion_keeps_variable_out_of_policy(small_data):
    nd = normalize(small_data)
    cfg = PipelineConfig(exclude=("x1",))
    policy = fit_full(nd, 1e-3, "ramp", 0.0, cfg)
    assert policy.eta_full[1] == 0 and policy.eta[1] == 0
    assert 0 not in policy.selected


def make_policy(eta, means, sds):
    names = tuple(f"v{j}" for j in range(len(eta) - 1))
    return Policy(np.array(eta, float), tuple(j for j in range(len(eta) - 1) if eta[j + 1]),
                  "ramp", 0.0, True, names, np.array(means, float), np.array(sds, float))


def test_predict_single_coordinate_rule():
    policy = make_policy([0, 1, 0], [2.0, 0.0], [3.0, 1.0])
    X = np.array([[5.0, 9.0], [1.0, -9.0], [2.5, 0.0]])
    np.testing.assert_array_equal(predict(policy, X), [1, 0, 1])


def test_predict_scale_invariant():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    eta = np.array([0.2, 1.0, -0.5, 0.3])
    a = predict(make_policy(eta, [0, 0, 0], [1, 1, 1]), X)
    b = predict(make_policy(3 * eta, [0, 0, 0], [1, 1, 1]), X)
    np.testing.assert_array_equal(a, b)


def test_predict_tie_assigns_control():
    policy = make_policy([0, 1, 0], [2.0, 0.0], [3.0, 1.0])
    assert predict(policy, [[2.0, 4.0]]).tolist() == [0]


def test_predict_by_name_and_missing_column():
    policy = make_policy([0.5, 1, 0], [0.0, 0.0], [1.0, 1.0])
    X = np.array([[7.0, -1.0]])
    assert predict(policy, X, names=["other", "v0"]).tolist() == [0]
    with pytest.raises(DataError, match="v0"):
        predict(policy, X, names=["other", "v1"])


def test_raw_coefficients_reproduce_scores():
    rng = np.random.default_rng(1)
    policy = make_policy([0.3, 1.2, -0.7], [1.5, -2.0], [0.5, 4.0])
    X = rng.normal(size=(100, 2)) * 3
    b0, b = policy.raw_coefficients()
    Z = (X - policy.column_means) / policy.column_sds
    np.testing.assert_allclose(b0 + X @ b, policy.eta[0] + Z @ policy.eta[1:], atol=1e-12)


def test_policy_json_round_trip(small_run):
    policy, _, _ = small_run
    back = Policy.from_json(policy.to_json())
    np.testing.assert_array_equal(back.eta, policy.eta)
    np.testing.assert_array_equal(back.eta_full, policy.eta_full)
    assert back.selected == policy.selected and back.names == policy.names
    obj = json.loads(policy.to_json())
    assert {"coefficients_normalized", "coefficients_raw", "selected", "lambda_used",
            "config_hash"} <= set(obj)


def test_cv_csv_schema(tmp_path, small_run):
    _, cv, _ = small_run
    cv.to_csv(tmp_path / "cv.csv")
    rows = list(csv.DictReader(open(tmp_path / "cv.csv")))
    assert list(rows[0]) == ["lambda", "mean_value", "se_value", "n_folds", "is_lambda_min",
                             "is_lambda_1se"]
    assert len(rows) == SMALL.n_lambda
    assert sum(int(r["is_lambda_min"]) for r in rows) == 1


def test_complementary_curve(small_data, small_run):
    policy, _, nf = small_run
    nd = normalize(small_data)
    curve = complementary_analysis(nd, nf, policy.eta_full, (), "ramp", SMALL)
    A, Y = nd.treatment, nd.outcome
    n = A.size
    trivial = [estimate_value_aipw(A, Y, nf, np.full(n, a))[0] for a in (0, 1)]
    assert curve.value_k[0] == pytest.approx(max(trivial))
    assert curve.k.tolist() == list(range(6))
    np.testing.assert_allclose(curve.ci_k[:, 1] - curve.ci_k[:, 0], 2 * 1.96 * curve.se_k)
    assert np.all(curve.ci_k[:, 0] <= curve.value_k) and np.all(curve.value_k <= curve.ci_k[:, 1])
    ranked = np.argsort(-np.abs(policy.eta_full[1:]), kind="stable")
    assert curve.ranked_names == tuple(nd.names[j] for j in ranked)


def test_complementary_exclusion(small_data, small_run):
    policy, _, nf = small_run
    nd = normalize(small_data)
    curve = complementary_analysis(nd, nf, policy.eta_full, ("x1", "x3"), "ramp", SMALL)
    assert set(curve.ranked_names) == {"x2", "x4", "x5"}
    with pytest.raises(DataError, match="no variables available"):
        complementary_analysis(nd, nf, policy.eta_full, nd.names, "ramp", SMALL)


def test_value_curve_csv(tmp_path, small_data, small_run):
    policy, _, nf = small_run
    curve = complementary_analysis(normalize(small_data), nf, policy.eta_full, (), "ramp", SMALL)
    curve.to_csv(tmp_path / "v.csv")
    rows = list(csv.DictReader(open(tmp_path / "v.csv")))
    assert list(rows[0]) == ["k", "added_variable", "value", "se", "ci_lo", "ci_hi", "failed"]
    assert rows[0]["added_variable"] in ("all_0", "all_1")
    assert [r["added_variable"] for r in rows[1:]] == list(curve.ranked_names)


def test_pipeline_deterministic(tmp_path, small_data, small_run):
    policy, cv, _ = small_run
    again, cv2, _ = run_pipeline(small_data, SMALL)
    assert again.to_json() == policy.to_json()
    cv.to_csv(tmp_path / "a.csv")
    cv2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_hinge_pipeline_runs(small_data):
    policy, cv, _ = run_pipeline(small_data, PipelineConfig(
        loss_kind="hinge", n_lambda=4, lambda_min=1e-3, lambda_max=1.0, lambda_rule="1se"))
    assert policy.loss_kind == "hinge"
    assert policy.lambda_used == cv.lambda_1se
