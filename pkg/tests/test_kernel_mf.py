import numpy as np
import pytest

from annimpute import kernel_mf as km
from annimpute import synth
from annimpute.core import AnnotationMatrix, LabelSchema
from annimpute.imputation import NumericError
from annimpute.metrics import rmse
from conftest import random_matrix
from oracles import central_diff, rel_error


def _rank2_4x4():
    W0 = np.array([[1, 0], [0, 1], [1, 1], [1, 0]], dtype=float)
    H0 = np.array([[2, 1], [1, 2], [0, 1], [3, 0]], dtype=float)
    full = np.clip(np.rint(W0 @ H0.T), 0, 4).astype(int)
    return AnnotationMatrix.from_dense(full, LabelSchema(0, 4))


def test_rank2_target_is_achievable():
    dense = _rank2_4x4().to_dense()
    U, S, Vt = np.linalg.svd(dense)
    assert np.sqrt(np.mean(((U[:, :2] * S[:2]) @ Vt[:2] - dense) ** 2)) < 1e-12


@pytest.mark.parametrize("kernel", km.KERNELS)
def test_cell_gradient_matches_finite_differences(kernel):
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = int(rng.integers(1, 6))
        w, h = rng.normal(size=f), rng.normal(size=f)
        a, c, y = rng.normal(), rng.uniform(0.5, 2), rng.uniform(0, 4)
        reg, gamma = 0.05, 1.0 / f
        _, dw, dh, da, dc = km.cell_loss_grad(kernel, w, h, a, c, y, reg, gamma)
        p = np.array([a, c])

        def loss():
            return km.cell_loss_grad(kernel, w, h, p[0], p[1], y, reg, gamma)[0]

        assert rel_error(dw, central_diff(loss, w, 1e-5)) < 1e-4
        assert rel_error(dh, central_diff(loss, h, 1e-5)) < 1e-4
        assert rel_error([da, dc], central_diff(loss, p, 1e-5)) < 1e-4


def test_predict_examples():
    s = LabelSchema(0, 4)

    def model(kernel, w, h, a, c):
        hyper = km.KernelMFHyper(factors=len(w), kernel=kernel)
        return km.KernelMFModel(np.array([w], float), np.array([h], float), a, c, hyper, s, [])

    assert km.predict(model("linear", [1, 0], [1, 0], 0.0, 1.0), 0, 0) == 1.0
    assert km.predict(model("rbf", [0.3, -2], [0.3, -2], 0.0, 4.0), 0, 0) == 4.0
    assert km.predict(model("sigmoid", [1, 0], [0, 1], 0.0, 4.0), 0, 0) == 2.0
    with pytest.raises(IndexError):
        km.predict(model("linear", [1], [1], 0, 1), 1, 0)


def test_rank2_training_fits():
    m = _rank2_4x4()
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=256, kernel="linear"))
    assert rmse(km.predict_cells(model, m.items, m.annotators), m.labels) < 0.15


def test_zero_init_linear_predicts_bias():
    m = _rank2_4x4()
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=0, init_std=0.0))
    np.testing.assert_array_equal(km.predict_all(model), np.full(m.shape, model.bias))
    assert model.bias == pytest.approx(m.labels.mean())


def test_training_is_deterministic():
    m = _rank2_4x4()
    h = km.KernelMFHyper(factors=3, epochs=20, kernel="rbf")
    a, b = km.train(m, h), km.train(m, h)
    assert np.array_equal(a.item_factors, b.item_factors)
    assert np.array_equal(a.annotator_factors, b.annotator_factors)


def test_loss_is_nearly_monotone_at_small_lr():
    data = synth.generate(30, 12, rank=2, observed=0.5, seed=4)
    model = km.train(data.dataset.matrix, km.KernelMFHyper(factors=2, epochs=64, learning_rate=1e-4))
    h = model.loss_history
    assert sum(1 for x, y in zip(h, h[1:]) if y > x) <= 2


@pytest.mark.parametrize("seed", [0, 1])
def test_rank_recovery_on_synthetic_truth(seed):
    data = synth.generate(seed=seed)
    m = data.dataset.matrix
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=256))
    miss = ~m.mask()
    assert rmse(km.predict_all(model)[miss], data.truth[miss]) < 0.2


def test_grid_search_examples():
    data = synth.generate(seed=2)
    m = data.dataset.matrix
    healthy = km.KernelMFHyper(factors=2, epochs=64)
    broken = km.KernelMFHyper(factors=2, epochs=1, learning_rate=1e-9)
    assert km.grid_search(m, [healthy], 0)[0] == healthy
    best, score = km.grid_search(m, [broken, healthy], 0)
    assert best == healthy
    assert km.grid_search(m, [broken, healthy], 0) == (best, score)


def test_grid_search_skips_failures_and_errors_when_all_fail(caplog):
    m = _rank2_4x4()
    exploding = km.KernelMFHyper(factors=2, epochs=50, learning_rate=1e6)
    ok = km.KernelMFHyper(factors=2, epochs=4)
    assert km.grid_search(m, [exploding, ok], 0)[0] == ok
    assert "failed" in caplog.text
    with pytest.raises(NumericError):
        km.grid_search(m, [exploding], 0)


def test_full_grid_size():
    assert len(km.make_grid(km.FULL_GRID_AXES)) == 2916


def test_impute_fully_observed_is_identity():
    m = AnnotationMatrix.from_dense([[0, 4], [2, 3]], LabelSchema(0, 4))
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=3))
    full_int, full_raw = km.impute(m, model)
    np.testing.assert_array_equal(full_int, [[0, 4], [2, 3]])
    np.testing.assert_array_equal(full_raw, [[0, 4], [2, 3]])


def _fixed_model(value, shape=(1, 2)):
    # linear kernel with zero factors predicts the bias everywhere
    hyper = km.KernelMFHyper(factors=1)
    return km.KernelMFModel(np.zeros((shape[0], 1)), np.zeros((shape[1], 1)), value, 1.0, hyper, LabelSchema(0, 4), [])


@pytest.mark.parametrize("raw, expected", [(4.7, 4), (2.49, 2), (3.5, 4), (-0.6, 0)])
def test_impute_rounding_and_clamp(raw, expected):
    m = AnnotationMatrix(1, 2, [(0, 0, 1)], LabelSchema(0, 4))
    full_int, full_raw = km.impute(m, _fixed_model(raw))
    assert full_int[0, 1] == expected
    assert full_raw[0, 1] == raw
    assert full_int[0, 0] == 1


def test_impute_shape_mismatch():
    m = AnnotationMatrix(2, 2, [(0, 0, 1), (1, 1, 1)], LabelSchema(0, 4))
    with pytest.raises(ValueError, match="dimension"):
        km.impute(m, _fixed_model(1.0, (1, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_observed_cells_never_altered(seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng)
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=5, kernel=km.KERNELS[seed % 3], seed=seed))
    full_int, _ = km.impute(m, model)
    for (i, j), y in m.cells().items():
        assert full_int[i, j] == y


def test_model_round_trip(tmp_path):
    m = _rank2_4x4()
    model = km.train(m, km.KernelMFHyper(factors=2, epochs=3, kernel="sigmoid"))
    model.save(tmp_path / "m.json")
    back = km.KernelMFModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(km.predict_all(back), km.predict_all(model))
    assert back.hyper == model.hyper
