import math

import numpy as np
import pytest

from braincsvm import csvm, synthetic
from braincsvm.errors import ConvergenceError, InvalidArgumentError

from ._oracles import oracle_bias, oracle_objective, qp_oracle, rbf_gram_direct

TWO_X = np.array([[0.0, 0.0], [1.0, 0.0]])
TWO_Y = np.array([1, -1])

XOR_X = np.array([[0, 0], [1, 1], [0.2, 0.1], [0.9, 1.1],
                  [0, 1], [1, 0], [0.1, 0.9], [1.1, 0.2]], dtype=float)
XOR_Y = np.array([1, 1, 1, 1, -1, -1, -1, -1])


class TestKernel:
    def test_self_similarity(self):
        x = np.random.default_rng(0).normal(size=7)
        assert csvm.rbf(x, x, 0.3) == 1.0

    def test_value(self):
        assert csvm.rbf([0.0], [1.0], 1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert csvm.rbf([0.0], [1.0], 1.0) == pytest.approx(0.367879, abs=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x, z = rng.normal(size=(2, 5))
            assert csvm.rbf(x, z, 0.7) == csvm.rbf(z, x, 0.7)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            csvm.rbf([0, 1], [0, 1, 2], 1.0)

    def test_gram_matches_direct_and_is_psd(self):
        X = np.random.default_rng(2).normal(size=(9, 3))
        K = csvm.gram(X, X, 0.8)
        np.testing.assert_allclose(K, rbf_gram_direct(X, 0.8), atol=1e-12)
        np.testing.assert_allclose(K, K.T, atol=0)
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_spec_validation(self):
        with pytest.raises(InvalidArgumentError):
            csvm.KernelSpec(0.0)
        with pytest.raises(InvalidArgumentError):
            csvm.CostSpec(0.0)
        with pytest.raises(InvalidArgumentError):
            csvm.CostSpec(1.0, 0.5)


class TestCosts:
    def test_protected_class_boosted(self):
        c = csvm.CostSpec(2.0, 4.0)
        np.testing.assert_array_equal(c.penalties([1, -1, 1]), [8.0, 2.0, 8.0])

    def test_ratio_one_is_symmetric(self):
        np.testing.assert_array_equal(csvm.CostSpec(3.0, 1.0).penalties([1, -1]), [3.0, 3.0])


class TestTwoPoints:
    @pytest.fixture
    def model(self):
        return csvm.train_svm(TWO_X, TWO_Y, csvm.KernelSpec(0.5), csvm.CostSpec(10.0, 1.0))

    def test_alphas_equal_and_optimal(self, model):
        a = np.zeros(2)
        a[model.support_indices] = model.alphas
        assert a[0] == pytest.approx(a[1], abs=1e-12)
        k12 = math.exp(-0.5)
        # single free variable: W(t) = 2t - t^2 (1 - k12), maximized on a dense grid
        grid = np.linspace(0.0, 10.0, 2_000_001)
        w = 2 * grid - grid ** 2 * (1 - k12)
        best = grid[np.argmax(w)]
        assert a[0] == pytest.approx(best, abs=1e-5)
        assert a[0] == pytest.approx(1.0 / (1.0 - k12), rel=1e-9)
        assert model.objective == pytest.approx(w.max(), abs=1e-6)

    def test_bisector(self, model):
        score, label = csvm.decide(model, np.array([0.5, 0.0]))
        assert score == pytest.approx(0.0, abs=1e-6)

    def test_exact_tie_goes_to_protected_class(self):
        flat = csvm.SvmModel(TWO_X, np.zeros(2), 0.0, csvm.KernelSpec(1.0), csvm.CostSpec(1.0))
        assert csvm.decide(flat, np.array([3.0, 4.0])) == (0.0, 1)

    def test_equality_constraint(self, model):
        assert abs(model.dual_coef.sum()) <= 1e-6 * model.cost.C


class TestOracleAgreement:
    def test_xor(self):
        kernel, cost = csvm.KernelSpec(1.0), csvm.CostSpec(5.0, 1.0)
        model = csvm.train_svm(XOR_X, XOR_Y, kernel, cost)
        K = rbf_gram_direct(XOR_X, 1.0)
        upper = cost.penalties(XOR_Y)
        ref = qp_oracle(K, XOR_Y, upper)
        assert model.objective == pytest.approx(oracle_objective(ref, K, XOR_Y), abs=1e-4)
        ref_pred = np.where(K @ (ref * XOR_Y) + oracle_bias(ref, K, XOR_Y, upper) >= 0, 1, -1)
        np.testing.assert_array_equal(csvm.predict(model, XOR_X), ref_pred)
        np.testing.assert_array_equal(ref_pred, XOR_Y)

    def test_oracle_solves_two_point_case(self):
        K = rbf_gram_direct(TWO_X, 0.5)
        a = qp_oracle(K, TWO_Y, np.array([10.0, 10.0]))
        np.testing.assert_allclose(a, 1.0 / (1.0 - math.exp(-0.5)), rtol=1e-8)

    @pytest.mark.parametrize("r", [1.0, 3.0])
    def test_objective_reported_matches_recomputed(self, r):
        X, y = synthetic.overlapping_blobs(40, seed=3)
        model = csvm.train_svm(X, y, csvm.KernelSpec(0.5), csvm.CostSpec(2.0, r))
        a = np.zeros(len(y))
        a[model.support_indices] = model.alphas
        assert model.objective == pytest.approx(csvm.dual_objective(a, X, y, 0.5), rel=1e-9)


class TestKKT:
    @pytest.mark.parametrize("seed,r", [(0, 1.0), (1, 4.0), (2, 2.5)])
    def test_bands_and_feasibility(self, seed, r):
        X, y = synthetic.overlapping_blobs(120, separation=1.0, seed=seed)
        cost = csvm.CostSpec(3.0, r)
        model = csvm.train_svm(X, y, csvm.KernelSpec(1.0), cost)
        assert csvm.kkt_violations(model, X, y).size == 0
        assert abs(model.dual_coef.sum()) <= 1e-6 * cost.C
        upper = cost.penalties(y[model.support_indices])
        assert np.all(model.alphas > 0) and np.all(model.alphas <= upper)

    def test_free_vectors_on_margin(self):
        X, y = synthetic.overlapping_blobs(80, seed=4)
        cost = csvm.CostSpec(2.0, 4.0)
        tol = csvm.DEFAULT_TOL
        model = csvm.train_svm(X, y, csvm.KernelSpec(0.5), cost, tol=tol)
        upper = cost.penalties(y[model.support_indices])
        free = model.alphas < upper
        assert free.any()
        margins = model.sv_labels[free] * csvm.decision_function(model, model.support_vectors[free])
        np.testing.assert_allclose(margins, 1.0, atol=10 * tol)

    def test_separable_data_classified(self):
        X, y = synthetic.overlapping_blobs(60, separation=8.0, seed=5)
        model = csvm.train_svm(X, y, csvm.KernelSpec(0.5), csvm.CostSpec(10.0, 4.0))
        np.testing.assert_array_equal(csvm.predict(model, X), y)


class TestSolver:
    def test_row_cache_path_matches_full_gram(self):
        X, y = synthetic.overlapping_blobs(60, seed=6)
        k, c = csvm.KernelSpec(0.7), csvm.CostSpec(2.0, 2.0)
        full = csvm.solve_dual(X, y, k, c)
        rows = csvm.solve_dual(X, y, k, c, full_gram_limit=0)
        np.testing.assert_allclose(rows[0], full[0], atol=1e-12)
        assert rows[1] == pytest.approx(full[1], abs=1e-12)

    def test_symmetric_run_is_order_independent(self):
        X, y = synthetic.overlapping_blobs(80, seed=7)
        k, c = csvm.KernelSpec(0.5), csvm.CostSpec(2.0, 1.0)
        a1 = csvm.solve_dual(X, y, k, c, tol=1e-6)[0]
        perm = np.random.default_rng(99).permutation(len(y))
        a2 = np.empty_like(a1)
        a2[perm] = csvm.solve_dual(X[perm], y[perm], k, c, tol=1e-6)[0]
        np.testing.assert_allclose(a1, a2, atol=1e-3 * c.C)

    def test_stalled_solver_raises(self):
        X, y = synthetic.overlapping_blobs(100, separation=0.2, seed=8)
        with pytest.raises(ConvergenceError):
            csvm.solve_dual(X, y, csvm.KernelSpec(5.0), csvm.CostSpec(100.0, 1.0), tol=1e-12, max_passes=1)

    def test_input_errors(self):
        with pytest.raises(InvalidArgumentError):
            csvm.train_svm(TWO_X, np.array([1, 1]), csvm.KernelSpec(1.0), csvm.CostSpec(1.0))
        with pytest.raises(InvalidArgumentError):
            csvm.train_svm(np.array([[np.inf, 0], [0, 0]]), TWO_Y, csvm.KernelSpec(1.0), csvm.CostSpec(1.0))
        with pytest.raises(InvalidArgumentError):
            csvm.train_svm(TWO_X, np.array([1, 0]), csvm.KernelSpec(1.0), csvm.CostSpec(1.0))

    def test_decide_length_mismatch(self):
        model = csvm.train_svm(TWO_X, TWO_Y, csvm.KernelSpec(0.5), csvm.CostSpec(1.0))
        with pytest.raises(InvalidArgumentError):
            csvm.decide(model, np.zeros(3))


class TestCostSensitivity:
    def test_fewer_false_negatives_with_boosted_penalty(self):
        X, y = synthetic.overlapping_blobs(300, positive_fraction=0.3, seed=10)
        Xtr, ytr, Xte, yte = X[:200], y[:200], X[200:], y[200:]
        fn = {}
        for r in (1.0, 4.0):
            model = csvm.train_svm(Xtr, ytr, csvm.KernelSpec(0.5), csvm.CostSpec(1.0, r))
            fn[r] = int(np.sum((yte == 1) & (csvm.predict(model, Xte) == -1)))
        assert fn[4.0] <= fn[1.0]
