import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agekit.core import QuantizerSpec
from agekit.svm import (
    SvmParams,
    SvrParams,
    dumps_svm,
    grid_search,
    kkt_report,
    load_svm,
    loads_svm,
    rbf_kernel,
    save_svm,
    smo_solve,
    svm_regressor_from_model,
    svr_dual,
    train_history_svm,
    train_svm,
    train_svr,
)

sklearn_svm = pytest.importorskip("sklearn.svm")


def blobs(rng, n=40, k=3, d=2, spread=0.6):
    centers = rng.normal(0, 3, (k, d))
    y = np.repeat(np.arange(k), n)
    X = centers[y] + rng.normal(0, spread, (k * n, d))
    return X, y


def brute_decision(model, x):
    out = []
    for bm in model.machines:
        s = sum(c * np.exp(-model.params.gamma * np.sum((x - model.sv[i]) ** 2))
                for i, c in zip(bm.support, bm.coef))
        out.append(s - bm.rho)
    return np.array(out)


class TestKernel:
    @settings(max_examples=30)
    @given(arrays(np.float64, (5, 3), elements=st.floats(-10, 10)), st.floats(1e-3, 10))
    def test_symmetric_unit_diagonal(self, X, gamma):
        K = rbf_kernel(X, X, gamma)
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        np.testing.assert_allclose(np.diag(K), 1.0)
        assert np.all((K >= 0) & (K <= 1))


class TestSmo:
    def test_kkt_within_tight_tolerance(self, rng):
        X, y = blobs(rng, 30, 2, spread=1.5)
        yy = np.where(y == 0, 1.0, -1.0)
        Q = yy[:, None] * yy[None, :] * rbf_kernel(X, X, 0.5)
        sol = smo_solve(Q, -np.ones(len(yy)), yy, 10.0, tol=1e-6)
        rep = kkt_report(Q, -np.ones(len(yy)), yy, 10.0, sol)
        assert sol.converged
        assert rep["equality"] <= 1e-6
        assert rep["box"] <= 1e-6
        assert rep["gap"] <= 1e-6

    def test_svr_dual_kkt(self, rng):
        X = rng.uniform(0, 1, (40, 2))
        z = np.sin(3 * X[:, 0]) + X[:, 1]
        params = SvrParams(10.0, 1.0, 0.05)
        Q, p, y = svr_dual(X, z, params)
        sol = smo_solve(Q, p, y, params.C, tol=1e-6)
        rep = kkt_report(Q, p, y, params.C, sol)
        assert max(rep.values()) <= 1e-6

    def test_iteration_cap_warns(self, rng, caplog):
        X, y = blobs(rng, 20, 2, spread=3.0)
        yy = np.where(y == 0, 1.0, -1.0)
        Q = yy[:, None] * yy[None, :] * rbf_kernel(X, X, 1.0)
        sol = smo_solve(Q, -np.ones(len(yy)), yy, 100.0, tol=1e-12, max_iter=3)
        assert not sol.converged and sol.iterations == 3
        assert "iteration cap" in caplog.text


class TestClassifier:
    def test_separable_perfect(self, rng):
        X, y = blobs(rng, 30, 2, spread=0.3)
        m = train_svm(X, y, SvmParams(10.0, 0.5))
        assert np.all(m.predict(X) == y)

    def test_conflicting_duplicates_terminate(self):
        X = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]] * 2)
        y = np.array([0, 1, 0, 1, 0, 1, 0, 0])
        m = train_svm(X, y, SvmParams(100.0, 1.0))
        assert set(m.predict(X).tolist()) <= {0, 1}

    def test_box_and_equality_per_machine(self, rng):
        X, y = blobs(rng, 25, 3, spread=1.2)
        m = train_svm(X, y, SvmParams(5.0, 0.3, tol=1e-6))
        for bm in m.machines:
            alpha = np.abs(bm.coef)
            assert np.all(alpha <= 5.0 + 1e-12)
            assert abs(bm.coef.sum()) <= 1e-6

    def test_decision_matches_kernel_sum(self, rng):
        X, y = blobs(rng, 30, 3, spread=1.0)
        m = train_svm(X, y, SvmParams(10.0, 0.2))
        pts = rng.normal(0, 3, (100, 2))
        dec = m.decision_function(pts)
        for x, d in zip(pts, dec):
            np.testing.assert_allclose(d, brute_decision(m, x), atol=1e-9)

    def test_matches_sklearn(self, rng):
        X, y = blobs(rng, 40, 4, spread=1.3)
        ours = train_svm(X, y, SvmParams(10.0, 0.1, tol=1e-5))
        ref = sklearn_svm.SVC(C=10.0, gamma=0.1, tol=1e-5, decision_function_shape="ovo").fit(X, y)
        pts = rng.normal(0, 3, (200, 2))
        np.testing.assert_allclose(ours.decision_function(pts), ref.decision_function(pts), atol=5e-3)
        np.testing.assert_array_equal(ours.predict(pts), ref.predict(pts))

    def test_single_class_and_vote_ties(self):
        m = train_svm(np.zeros((3, 1)), np.array([4, 4, 4]))
        assert m.predict(np.ones((2, 1))).tolist() == [4, 4]

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            train_svm(np.array([[np.nan], [1.0]]), np.array([0, 1]))
        with pytest.raises(ValueError):
            train_svr(np.array([[0.0], [1.0]]), np.array([np.inf, 1.0]))


class TestRegressor:
    def test_epsilon_tube_identity(self):
        x = np.linspace(0, 1, 50)
        params = SvrParams()
        m = train_svr(x[:, None], x, params)
        assert np.max(np.abs(m.predict(x[:, None]) - x)) <= params.epsilon + 0.05

    def test_support_coefficients_bounded(self, rng):
        X = rng.uniform(0, 1, (60, 3))
        z = X @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.normal(size=60)
        m = train_svr(X, z, SvrParams(2.0, 0.5, 0.05))
        assert np.all(np.abs(m.coef) <= 2.0 + 1e-12)

    def test_matches_sklearn(self, rng):
        X = rng.uniform(0, 1, (80, 4))
        z = 5 * np.sin(2 * X[:, 0]) + X[:, 1] ** 2 - X[:, 2]
        ours = train_svr(X, z, SvrParams(100.0, 0.5, 0.1, tol=1e-4))
        ref = sklearn_svm.SVR(C=100.0, gamma=0.5, epsilon=0.1, tol=1e-4).fit(X, z)
        pts = rng.uniform(0, 1, (100, 4))
        np.testing.assert_allclose(ours.predict(pts), ref.predict(pts), atol=5e-3)
        assert ours.rho == pytest.approx(-float(ref.intercept_[0]), abs=5e-3)


class TestGrid:
    def test_full_grid_and_argmax(self, rng):
        X = rng.uniform(0, 1, (60, 3))
        z = X.sum(1) ** 2
        best, grid = grid_search(X[:40], z[:40], X[40:], z[40:])
        cells = {(c["C"], c["gamma"]) for c in grid}
        assert len(grid) == 9 and (100.0, 0.001) in cells
        assert all(best["score"] >= c["score"] for c in grid)

    def test_single_cell(self, rng):
        X, y = blobs(rng, 15, 2)
        best, grid = grid_search(X, y, X, y, "classification", Cs=(3.0,), gammas=(0.2,))
        assert (best["C"], best["gamma"]) == (3.0, 0.2) and len(grid) == 1
        assert best["score"] == 1.0


class TestFiles:
    def test_svc_round_trip(self, rng, tmp_path):
        X, y = blobs(rng, 20, 3)
        m = train_svm(X, y, SvmParams(10.0, 0.3), {"tag": "t"})
        data = dumps_svm(m)
        assert data[:8] == b"AGKSVM01"
        path = tmp_path / "m.svm"
        save_svm(path, m)
        back = load_svm(path)
        assert dumps_svm(back) == data
        np.testing.assert_array_equal(back.decision_function(X), m.decision_function(X))
        assert back.meta == {"tag": "t"}

    def test_svr_round_trip(self, rng):
        X = rng.uniform(0, 1, (30, 2))
        m = train_svr(X, X[:, 0] * 3, SvrParams(10.0, 1.0))
        back = loads_svm(dumps_svm(m))
        assert dumps_svm(back) == dumps_svm(m)
        np.testing.assert_array_equal(back.predict(X), m.predict(X))

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            loads_svm(b"NOTASVM!" + bytes(8))


class TestHistoryAdapter:
    def test_feature_scaling_and_round_trip(self, rng):
        h = 2
        q = QuantizerSpec(0, 16, 8)
        X = np.column_stack([rng.choice([0.0, 0.7], (60, h + 1)), rng.uniform(0, 16, (60, h))])
        y = X[:, h + 1] * 0.9 + np.where(X[:, 0] == 0, 1.5, -1.0)
        y = np.clip(y, 0, 16)
        reg = train_history_svm(X, y, h, q, SvmParams(100.0, 1.0))
        F = reg.features(X)
        assert F.max() <= 1.0 + 1e-12 and F.min() >= 0.0
        again = svm_regressor_from_model(loads_svm(dumps_svm(reg.model)))
        assert again.h == h and again.quantizer == q
        np.testing.assert_array_equal(again.predict_mv(X), reg.predict_mv(X))
        with pytest.raises(ValueError, match="expected 5 features"):
            reg.features(X[:, :4])
