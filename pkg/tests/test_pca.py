import numpy as np
import pytest

from splitlab.pca import PcaError, compress_reconstruct, load_pca, pca_fit, project, save_pca
from splitlab.synth import make_digits


@pytest.fixture(scope="module")
def digits():
    (x, _), _ = make_digits(600, 10, seed=2)
    return x.reshape(len(x), -1)


def test_line_component():
    t = np.linspace(-1, 1, 21)
    data = np.stack([t, 2 * t], axis=1) * 0.3 + 0.5
    model = pca_fit(data, 1)
    np.testing.assert_allclose(model.components[0], np.array([1, 2]) / np.sqrt(5), atol=1e-12)
    assert np.max(np.abs(project(model, data) - data)) < 1e-12


def test_full_basis_is_identity():
    data = np.random.default_rng(0).random((50, 6))
    model = pca_fit(data, 6)
    assert np.max(np.abs(compress_reconstruct(model, data) - data)) < 1e-8


def test_isotropic_variances():
    data = np.random.default_rng(1).normal(size=(10_000, 2))
    ev = pca_fit(data, 2).explained_variance
    assert ev[1] / ev[0] > 0.9


def test_mean_is_fixed_point_and_idempotent(digits):
    model = pca_fit(digits, 4)
    np.testing.assert_allclose(compress_reconstruct(model, model.mean[None])[0], np.clip(model.mean, 0, 1))
    once = compress_reconstruct(model, digits)
    # clamping is not a projection, so check idempotence on the unclamped map
    p1 = project(model, digits)
    assert np.max(np.abs(project(model, p1) - p1)) < 1e-10
    assert once.min() >= 0 and once.max() <= 1


def test_error_monotone_in_k(digits):
    full = pca_fit(digits, 16)
    errs = []
    for k in (2, 4, 8, 16):
        sub = type(full)(full.mean, full.components[:k], full.explained_variance[:k])
        errs.append(np.mean((project(sub, digits) - digits) ** 2))
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_invariants(digits):
    model = pca_fit(digits, 8)
    assert np.max(np.abs(model.components @ model.components.T - np.eye(8))) < 1e-8
    assert np.all(np.diff(model.explained_variance) <= 1e-12)
    resid = digits - project(model, digits)
    assert np.max(np.abs(resid @ model.components.T)) < 1e-8
    big = np.argmax(np.abs(model.components), axis=1)
    assert np.all(model.components[np.arange(8), big] > 0)


def test_variance_sums_to_trace():
    data = np.random.default_rng(3).random((40, 7))
    model = pca_fit(data, 7)
    trace = np.trace(np.cov(data, rowvar=False))
    assert abs(model.explained_variance.sum() / trace - 1) < 1e-6


def test_gram_path_matches_covariance_path():
    data = np.random.default_rng(4).random((12, 30))
    gram = pca_fit(data, 5)
    cov_model = pca_fit(np.concatenate([data, data]), 5)  # n >= d path on duplicated rows
    np.testing.assert_allclose(np.abs(gram.components @ cov_model.components.T), np.eye(5), atol=1e-8)


def test_errors():
    with pytest.raises(PcaError):
        pca_fit(np.ones((5, 3)), 2)
    with pytest.raises(PcaError):
        pca_fit(np.random.rand(5, 3), 4)
    with pytest.raises(PcaError):
        pca_fit(np.random.rand(1, 3), 1)
    model = pca_fit(np.random.rand(10, 3), 2)
    with pytest.raises(PcaError, match="dimension"):
        compress_reconstruct(model, np.zeros((2, 4)))


def test_serialisation_round_trip(tmp_path):
    model = pca_fit(np.random.default_rng(5).random((30, 9)), 3)
    save_pca(model, tmp_path / "m.pca")
    raw = (tmp_path / "m.pca").read_bytes()
    assert raw[:8] == (9).to_bytes(4, "little") + (3).to_bytes(4, "little")
    back = load_pca(tmp_path / "m.pca")
    for a, b in zip((model.mean, model.components, model.explained_variance),
                    (back.mean, back.components, back.explained_variance)):
        assert a.tobytes() == b.tobytes()
