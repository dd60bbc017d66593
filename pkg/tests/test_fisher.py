"""PCA, GMM/EM and Fisher vector tests.

The Fisher encoding is pinned by an independent direct-formula oracle:
posteriors via per-component normal pdfs and plain double loops over the
two gradient formulas.
"""

import numpy as np
import pytest

from fvretrieval.fisher import (
    FisherVector,
    GmmModel,
    PcaModel,
    apply_pca,
    encode_fv,
    normalize_fv,
    posteriors,
    read_gmm_file,
    read_pca_file,
    train_gmm,
    train_pca,
    write_gmm_file,
    write_pca_file,
)
from fvretrieval.store import ValidationError


def random_gmm(rng, k, d):
    weights = rng.uniform(0.2, 1.0, size=k)
    weights /= weights.sum()
    means = rng.normal(scale=2.0, size=(k, d))
    variances = rng.uniform(0.3, 2.0, size=(k, d))
    return GmmModel(weights, means, variances)


def oracle_posteriors(model, x, floor=None):
    """Posteriors from per-component scalar normal pdfs."""
    from scipy.stats import norm

    dens = np.empty(model.n_components)
    for k in range(model.n_components):
        pdf = 1.0
        for d in range(model.dim):
            pdf *= norm.pdf(x[d], loc=model.means[k, d], scale=np.sqrt(model.variances[k, d]))
        dens[k] = model.weights[k] * pdf
    post = dens / dens.sum()
    if floor is not None:
        post[post < floor] = 0.0
        post /= post.sum()
    return post


def oracle_fisher(model, xs, floor=None):
    """Direct double-loop evaluation of the two gradient formulas."""
    t = len(xs)
    k, d = model.n_components, model.dim
    mean_grad = np.zeros((k, d))
    var_grad = np.zeros((k, d))
    for x in xs:
        post = oracle_posteriors(model, x, floor)
        for j in range(k):
            z = (x - model.means[j]) / np.sqrt(model.variances[j])
            mean_grad[j] += post[j] * z
            var_grad[j] += post[j] * (z**2 - 1.0)
    for j in range(k):
        mean_grad[j] /= t * np.sqrt(model.weights[j])
        var_grad[j] /= t * np.sqrt(2.0 * model.weights[j])
    return np.concatenate([mean_grad.ravel(), var_grad.ravel()])


class TestPca:
    def test_line_principal_axis(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=200)
        samples = np.stack([t, 2 * t], axis=1)
        model = train_pca(samples, 1)
        expected = np.array([1.0, 2.0]) / np.sqrt(5.0)
        assert np.allclose(model.basis[0], expected, atol=1e-9)

    def test_mean_projects_to_zero(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(loc=3.0, size=(50, 8))
        model = train_pca(samples, 4)
        assert np.allclose(apply_pca(model, samples.mean(axis=0)), 0.0, atol=1e-9)

    def test_reconstruction_error_equals_discarded_eigenvalues(self):
        rng = np.random.default_rng(2)
        n, dim, keep = 300, 10, 4
        samples = rng.normal(size=(n, dim)) @ rng.normal(size=(dim, dim))
        model = train_pca(samples, keep)
        centered = samples - samples.mean(axis=0)
        projected = centered @ model.basis.T
        reconstructed = projected @ model.basis
        error = ((centered - reconstructed) ** 2).sum(axis=1).mean()
        eigvals = np.sort(np.linalg.eigvalsh(np.cov(samples, rowvar=False)))[::-1]
        expected = eigvals[keep:].sum() * (n - 1) / n
        assert error == pytest.approx(expected, abs=1e-8)

    def test_rank_deficiency_reported(self):
        rng = np.random.default_rng(3)
        t = rng.normal(size=(100, 2))
        samples = np.concatenate([t, t @ np.ones((2, 3))], axis=1)  # rank 2 in 5-d
        with pytest.raises(ValidationError, match="rank 2"):
            train_pca(samples, 4)

    def test_orthonormal_rows(self):
        rng = np.random.default_rng(4)
        model = train_pca(rng.normal(size=(100, 12)), 6)
        gram = model.basis @ model.basis.T
        assert np.allclose(gram, np.eye(6), atol=1e-10)

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        model = train_pca(rng.normal(size=(80, 6)), 3)
        for row in model.basis:
            assert row[np.argmax(np.abs(row))] > 0

    def test_apply_identity_basis(self):
        model = PcaModel(mean=np.array([1.0, 2.0]), basis=np.eye(2))
        out = apply_pca(model, np.array([[4.0, 6.0]]))
        assert np.allclose(out, [[3.0, 4.0]])

    def test_projection_never_grows_norm(self):
        rng = np.random.default_rng(6)
        model = train_pca(rng.normal(size=(60, 8)), 5)
        for _ in range(20):
            x = rng.normal(size=8)
            assert np.linalg.norm(apply_pca(model, x)) <= np.linalg.norm(x - model.mean) + 1e-9

    def test_dim_mismatch(self):
        model = PcaModel(mean=np.zeros(3), basis=np.eye(3))
        with pytest.raises(ValidationError):
            apply_pca(model, np.zeros((2, 4)))


class TestGmmTraining:
    def test_k1_closed_form(self):
        rng = np.random.default_rng(7)
        xs = rng.normal(loc=1.5, scale=2.0, size=(500, 3))
        model = train_gmm(xs, 1, seed=0)
        assert np.allclose(model.weights, [1.0])
        assert np.allclose(model.means[0], xs.mean(axis=0), atol=1e-9)
        assert np.allclose(model.variances[0], xs.var(axis=0), atol=1e-9)

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(8)
        a = rng.normal(loc=-4.0, scale=0.3, size=(400, 2))
        b = rng.normal(loc=4.0, scale=0.3, size=(400, 2))
        xs = np.concatenate([a, b])
        model = train_gmm(xs, 2, seed=1)
        centers = sorted(model.means[:, 0])
        assert abs(centers[0] - a[:, 0].mean()) < 0.05
        assert abs(centers[1] - b[:, 0].mean()) < 0.05

    def test_log_likelihood_monotone(self):
        rng = np.random.default_rng(9)
        xs = np.concatenate(
            [rng.normal(loc=c, scale=0.5, size=(150, 4)) for c in (-2.0, 0.0, 3.0)]
        )
        model = train_gmm(xs, 3, seed=2)
        lls = model.train_log_likelihoods
        assert len(lls) >= 2
        assert all(b - a >= -1e-9 for a, b in zip(lls, lls[1:]))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(10)
        xs = rng.normal(size=(300, 3))
        m1 = train_gmm(xs, 4, seed=42)
        m2 = train_gmm(xs, 4, seed=42)
        assert np.array_equal(m1.means, m2.means)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.variances, m2.variances)

    def test_too_many_components(self):
        with pytest.raises(ValidationError):
            train_gmm(np.zeros((3, 2)), 5)

    def test_weights_and_variances_valid(self):
        rng = np.random.default_rng(11)
        xs = rng.normal(size=(200, 2))
        model = train_gmm(xs, 5, seed=3)
        assert model.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert (model.weights > 0).all()
        assert (model.variances > 0).all()


class TestPosteriors:
    def test_k1_is_one(self):
        model = GmmModel([1.0], np.zeros((1, 2)), np.ones((1, 2)))
        assert np.allclose(posteriors(model, np.array([3.0, -1.0])), [1.0])

    def test_symmetric_midpoint(self):
        model = GmmModel(
            [0.5, 0.5], np.array([[-1.0], [1.0]]), np.array([[0.7], [0.7]])
        )
        post = posteriors(model, np.array([0.0]))
        assert np.allclose(post, [0.5, 0.5], atol=1e-9)

    def test_sums_to_one_and_nonnegative(self):
        rng = np.random.default_rng(12)
        model = random_gmm(rng, 4, 3)
        xs = rng.normal(size=(50, 3))
        post = posteriors(model, xs)
        assert np.allclose(post.sum(axis=1), 1.0, atol=1e-9)
        assert (post >= 0).all()

    def test_matches_scalar_pdf_oracle(self):
        rng = np.random.default_rng(13)
        model = random_gmm(rng, 3, 2)
        for _ in range(10):
            x = rng.normal(scale=2.0, size=2)
            assert np.allclose(posteriors(model, x), oracle_posteriors(model, x), atol=1e-12)

    def test_truncation_l1_bound_two_components(self):
        # With two components at most one posterior can sit below the
        # floor, so truncation moves at most 1e-4 of mass: L1 <= 2e-4.
        rng = np.random.default_rng(14)
        model = random_gmm(rng, 2, 3)
        xs = rng.normal(scale=2.0, size=(200, 3))
        full = posteriors(model, xs)
        floored = posteriors(model, xs, floor=1e-4)
        assert np.abs(full - floored).sum(axis=1).max() <= 2e-4

    def test_truncation_l1_bound_general(self):
        # General bound: truncated mass is below (K-1) * floor, and
        # renormalization redistributes the same amount.
        rng = np.random.default_rng(14)
        k, floor = 6, 1e-4
        model = random_gmm(rng, k, 3)
        xs = rng.normal(scale=2.0, size=(200, 3))
        full = posteriors(model, xs)
        floored = posteriors(model, xs, floor=floor)
        assert np.abs(full - floored).sum(axis=1).max() <= 2 * (k - 1) * floor

    def test_finite_for_huge_inputs(self):
        rng = np.random.default_rng(15)
        model = random_gmm(rng, 3, 2)
        post = posteriors(model, np.array([1e6, -1e6]))
        assert np.isfinite(post).all()
        assert post.sum() == pytest.approx(1.0, abs=1e-9)


class TestFisherEncoding:
    def test_output_length(self):
        rng = np.random.default_rng(16)
        model = random_gmm(rng, 256, 64)
        fv = encode_fv(model, rng.normal(size=(5, 64)))
        assert fv.values.shape == (2 * 256 * 64,)
        assert fv.values.shape == (32768,)

    def test_empty_input_flagged_zero(self):
        rng = np.random.default_rng(17)
        model = random_gmm(rng, 2, 3)
        fv = encode_fv(model, np.empty((0, 3)))
        assert fv.degenerate
        assert not fv.values.any()

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(18)
        model = random_gmm(rng, 2, 3)
        xs = rng.normal(scale=1.5, size=(20, 3))
        got = encode_fv(model, xs, posterior_floor=None)
        expected = oracle_fisher(model, xs)
        denom = max(np.abs(expected).max(), 1e-30)
        assert np.abs(got.values - expected).max() / denom < 1e-10

    def test_matches_oracle_with_floor(self):
        rng = np.random.default_rng(19)
        model = random_gmm(rng, 3, 2)
        xs = rng.normal(scale=3.0, size=(15, 2))
        got = encode_fv(model, xs, posterior_floor=1e-4)
        expected = oracle_fisher(model, xs, floor=1e-4)
        denom = max(np.abs(expected).max(), 1e-30)
        assert np.abs(got.values - expected).max() / denom < 1e-10

    def test_permutation_invariance_bit_exact(self):
        rng = np.random.default_rng(20)
        model = random_gmm(rng, 3, 4)
        xs = rng.normal(size=(30, 4))
        a = encode_fv(model, xs)
        b = encode_fv(model, xs[rng.permutation(30)])
        assert np.array_equal(a.values, b.values)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(21)
        model = random_gmm(rng, 2, 3)
        xs = rng.normal(size=(12, 3))
        a = encode_fv(model, xs)
        b = encode_fv(model, np.concatenate([xs, xs]))
        assert np.abs(a.values - b.values).max() < 1e-12

    def test_dim_mismatch(self):
        rng = np.random.default_rng(22)
        model = random_gmm(rng, 2, 3)
        with pytest.raises(ValidationError):
            encode_fv(model, rng.normal(size=(5, 4)))


class TestNormalizeFv:
    def test_signed_power(self):
        fv = FisherVector(np.array([-4.0, 0.0, 9.0]))
        powered = np.sign(fv.values) * np.abs(fv.values) ** 0.5
        assert powered[0] == -2.0
        out = normalize_fv(fv)
        assert np.allclose(out.values, powered / np.linalg.norm(powered))

    def test_zero_stays_flagged(self):
        out = normalize_fv(FisherVector(np.zeros(8), degenerate=True))
        assert out.degenerate
        assert not out.values.any()
        assert out.normalized

    def test_unit_norm_and_sign_pattern(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            values = rng.normal(size=64)
            out = normalize_fv(FisherVector(values))
            assert np.linalg.norm(out.values) == pytest.approx(1.0, abs=1e-9)
            assert np.array_equal(np.sign(out.values), np.sign(values))


class TestModelFiles:
    def test_pca_round_trip(self, tmp_path):
        rng = np.random.default_rng(24)
        model = train_pca(rng.normal(size=(100, 8)).astype(np.float32), 4)
        path = tmp_path / "m.gpca"
        write_pca_file(model, path)
        loaded = read_pca_file(path)
        assert loaded.input_dim == 8 and loaded.output_dim == 4
        assert np.allclose(loaded.basis, model.basis, atol=1e-6)
        assert np.allclose(loaded.mean, model.mean, atol=1e-6)
        assert path.read_bytes()[:4] == b"GPCA"

    def test_gmm_round_trip(self, tmp_path):
        rng = np.random.default_rng(25)
        model = random_gmm(rng, 5, 3)
        path = tmp_path / "m.ggmm"
        write_gmm_file(model, path)
        loaded = read_gmm_file(path)
        assert loaded.n_components == 5 and loaded.dim == 3
        assert np.allclose(loaded.means, model.means, atol=1e-5)
        assert loaded.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert path.read_bytes()[:4] == b"GGMM"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        from fvretrieval.store import FormatError

        with pytest.raises(FormatError):
            read_pca_file(path)
        with pytest.raises(FormatError):
            read_gmm_file(path)
