"""PCA, diagonal-covariance GMM trained by EM, and Fisher vector encoding.

The Fisher vector of a descriptor set concatenates, per mixture component,
the normalized gradients of the average log-likelihood with respect to the
component means and standard deviations:

    mean block  k:  (1 / (T * sqrt(w_k)))   * sum_t g_t(k) * (x_t - mu_k) / sigma_k
    var  block  k:  (1 / (T * sqrt(2 w_k))) * sum_t g_t(k) * (((x_t - mu_k) / sigma_k)^2 - 1)

where g_t(k) are the component posteriors of descriptor x_t. The output
layout is all mean blocks for k = 1..K followed by all variance blocks.

Model files use the GPCA/GGMM layouts (little-endian, float32 payload),
mirroring the GDSC header style.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .store import FormatError, ValidationError

GPCA_MAGIC = b"GPCA"
GGMM_MAGIC = b"GGMM"
MODEL_VERSION = 1

DEFAULT_POSTERIOR_FLOOR = 1e-4


@dataclass(eq=False)
class PcaModel:
    """Orthonormal projection onto the leading principal axes.

    ``basis`` is (output_dim, input_dim) with orthonormal rows sorted by
    decreasing eigenvalue; projection is ``basis @ (x - mean)``.
    """

    mean: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.output_dim), atol=1e-6):
            raise ValidationError("PCA basis rows are not orthonormal")

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]


def train_pca(samples: np.ndarray, output_dim: int) -> PcaModel:
    """Fit a PCA projection by eigendecomposition of the sample covariance.

    Covariance uses the 1/(n-1) convention; no whitening. Each basis row
    is sign-fixed so its largest-magnitude component is positive.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, input_dim = samples.shape
    if output_dim < 1 or output_dim > input_dim:
        raise ValidationError(f"output_dim must be in [1, {input_dim}], got {output_dim}")
    if n <= output_dim:
        raise ValidationError(f"need more than {output_dim} samples, got {n}")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False).reshape(input_dim, input_dim)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    rank = int((eigvals > max(eigvals[0], 0.0) * 1e-10).sum())
    if rank < output_dim:
        raise ValidationError(
            f"sample covariance has effective rank {rank}, below requested {output_dim}"
        )
    basis = eigvecs[:, order[:output_dim]].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, basis=basis)


def apply_pca(model: PcaModel, vectors: np.ndarray) -> np.ndarray:
    """Project vectors (one per row) onto the PCA basis."""
    vectors = np.asarray(vectors, dtype=np.float64)
    single = vectors.ndim == 1
    rows = np.atleast_2d(vectors)
    if rows.shape[1] != model.input_dim:
        raise ValidationError(
            f"vector dim {rows.shape[1]} does not match PCA input dim {model.input_dim}"
        )
    out = (rows - model.mean) @ model.basis.T
    return out[0] if single else out


@dataclass(eq=False)
class GmmModel:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    train_log_likelihoods: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValidationError("mixture weights must sum to 1")
        if (self.weights <= 0).any():
            raise ValidationError("mixture weights must be positive")
        if (self.variances <= 0).any():
            raise ValidationError("variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_component_densities(model: GmmModel, xs: np.ndarray) -> np.ndarray:
    """(T, K) matrix of log w_k + log N(x_t; mu_k, diag sigma2_k)."""
    inv_var = 1.0 / model.variances
    const = -0.5 * (
        model.dim * np.log(2.0 * np.pi) + np.log(model.variances).sum(axis=1)
    )
    quad = (
        (xs**2) @ inv_var.T
        - 2.0 * xs @ (model.means * inv_var).T
        + (model.means**2 * inv_var).sum(axis=1)[None, :]
    )
    return np.log(model.weights)[None, :] + const[None, :] - 0.5 * quad


def _kmeans_pp_centers(xs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = xs.shape[0]
    centers = np.empty((k, xs.shape[1]))
    centers[0] = xs[rng.integers(n)]
    closest = ((xs - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[i:] = xs[rng.integers(n, size=k - i)]
            break
        probs = closest / total
        centers[i] = xs[rng.choice(n, p=probs)]
        closest = np.minimum(closest, ((xs - centers[i]) ** 2).sum(axis=1))
    return centers


def train_gmm(
    samples: np.ndarray,
    n_components: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-5,
    weight_floor: float = 1e-6,
    variance_floor_scale: float = 1e-4,
) -> GmmModel:
    """Fit a diagonal-covariance GMM with EM from a k-means++ start.

    Stops when the relative log-likelihood gain drops below ``tol`` or
    after ``max_iters`` iterations. Variances are floored at
    ``variance_floor_scale`` times the mean per-dimension sample variance;
    weights are floored at ``weight_floor`` and renormalized.
    """
    xs = np.asarray(samples, dtype=np.float64)
    n, dim = xs.shape
    if n_components < 1 or n_components > n:
        raise ValidationError(
            f"n_components must be in [1, {n}] for {n} samples, got {n_components}"
        )
    var_floor = variance_floor_scale * float(xs.var(axis=0).mean())
    if var_floor <= 0:
        var_floor = 1e-12

    rng = np.random.default_rng(seed)
    means = _kmeans_pp_centers(xs, n_components, rng)
    assign = np.empty(n, dtype=np.int64)
    center_sq = (means**2).sum(axis=1)
    for start in range(0, n, 65536):
        block = xs[start : start + 65536]
        d2 = (block**2).sum(axis=1)[:, None] - 2.0 * block @ means.T + center_sq[None, :]
        assign[start : start + len(block)] = d2.argmin(axis=1)
    weights = np.full(n_components, 1.0 / n_components)
    variances = np.full((n_components, dim), max(float(xs.var(axis=0).mean()), var_floor))
    for k in range(n_components):
        members = xs[assign == k]
        if len(members) > 0:
            weights[k] = len(members) / n
            means[k] = members.mean(axis=0)
            variances[k] = np.maximum(members.var(axis=0), var_floor)
    weights = np.maximum(weights, weight_floor)
    weights /= weights.sum()

    model = GmmModel(weights, means, variances)
    log_likelihoods: list[float] = []
    for _ in range(max_iters):
        joint = _log_component_densities(model, xs)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        if not np.isfinite(ll):
            raise ValidationError("non-finite log-likelihood during EM")
        resp = np.exp(joint - norm[:, None])

        counts = resp.sum(axis=0)
        safe = np.maximum(counts, 1e-12)
        new_weights = np.maximum(counts / n, weight_floor)
        new_weights /= new_weights.sum()
        new_means = (resp.T @ xs) / safe[:, None]
        new_vars = (resp.T @ xs**2) / safe[:, None] - new_means**2
        new_vars = np.maximum(new_vars, var_floor)
        stale = counts < 1e-10
        new_means[stale] = model.means[stale]
        new_vars[stale] = model.variances[stale]
        model = GmmModel(new_weights, new_means, new_vars)

        if log_likelihoods and ll - log_likelihoods[-1] < tol * abs(log_likelihoods[-1]):
            log_likelihoods.append(ll)
            break
        log_likelihoods.append(ll)
    model.train_log_likelihoods = log_likelihoods
    return model


def posteriors(
    model: GmmModel, xs: np.ndarray, floor: float | None = None
) -> np.ndarray:
    """Component posteriors, computed in log-space.

    With ``floor`` set, posteriors below it are truncated to zero and the
    rest renormalized (a speed knob for encoding; keep ``None`` during
    training).
    """
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 1
    rows = np.atleast_2d(xs)
    if rows.shape[1] != model.dim:
        raise ValidationError(
            f"vector dim {rows.shape[1]} does not match mixture dim {model.dim}"
        )
    joint = _log_component_densities(model, rows)
    resp = np.exp(joint - logsumexp(joint, axis=1)[:, None])
    if floor is not None:
        top = resp.argmax(axis=1)
        resp[resp < floor] = 0.0
        dead = resp.sum(axis=1) == 0.0
        resp[dead, top[dead]] = 1.0
        resp /= resp.sum(axis=1)[:, None]
    return resp[0] if single else resp


@dataclass(eq=False)
class FisherVector:
    """2*K*D gradient statistics; ``degenerate`` marks the all-zero vector
    produced by an empty descriptor set."""

    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False


def encode_fv(
    model: GmmModel,
    descriptors: np.ndarray,
    posterior_floor: float | None = DEFAULT_POSTERIOR_FLOOR,
) -> FisherVector:
    """Aggregate descriptors into an unnormalized Fisher vector.

    Descriptors are accumulated in a canonical (lexicographically sorted)
    order so the encoding is bit-for-bit invariant to input permutation.
    An empty input yields the flagged all-zero vector.
    """
    k, d = model.n_components, model.dim
    xs = np.asarray(descriptors, dtype=np.float64)
    if xs.size == 0:
        return FisherVector(np.zeros(2 * k * d), normalized=False, degenerate=True)
    if xs.ndim != 2 or xs.shape[1] != d:
        raise ValidationError(
            f"descriptors must be (T, {d}), got shape {xs.shape}"
        )
    xs = xs[np.lexsort(xs.T[::-1])]

    t = xs.shape[0]
    resp = posteriors(model, xs, floor=posterior_floor)
    s0 = resp.sum(axis=0)
    s1 = resp.T @ xs
    s2 = resp.T @ xs**2

    sigma = np.sqrt(model.variances)
    mean_grad = (s1 - model.means * s0[:, None]) / (
        t * np.sqrt(model.weights)[:, None] * sigma
    )
    second_moment = (
        s2 - 2.0 * model.means * s1 + model.means**2 * s0[:, None]
    ) / model.variances
    var_grad = (second_moment - s0[:, None]) / (t * np.sqrt(2.0 * model.weights)[:, None])
    values = np.concatenate([mean_grad.ravel(), var_grad.ravel()])
    return FisherVector(values, normalized=False, degenerate=False)


def normalize_fv(fv: FisherVector, power_alpha: float = 0.5) -> FisherVector:
    """Apply component-wise signed power-law then L2 normalization.

    The all-zero degenerate vector passes through unchanged but keeps its
    flag: it cannot be given unit norm.
    """
    powered = np.sign(fv.values) * np.abs(fv.values) ** power_alpha
    norm = np.linalg.norm(powered)
    if norm == 0.0:
        return FisherVector(np.zeros_like(fv.values), normalized=True, degenerate=True)
    return FisherVector(powered / norm, normalized=True, degenerate=False)


def write_pca_file(model: PcaModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GPCA_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, model.input_dim, model.output_dim))
        fh.write(model.mean.astype("<f4").tobytes())
        fh.write(model.basis.astype("<f4").tobytes())


def read_pca_file(path) -> PcaModel:
    data = Path(path).read_bytes()
    if data[:4] != GPCA_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {GPCA_MAGIC!r}")
    version, input_dim, output_dim = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = 16 + 4 * (input_dim + output_dim * input_dim)
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    mean = np.frombuffer(data, dtype="<f4", count=input_dim, offset=16)
    basis = np.frombuffer(
        data, dtype="<f4", count=output_dim * input_dim, offset=16 + 4 * input_dim
    ).reshape(output_dim, input_dim)
    return PcaModel(mean=mean.astype(np.float64), basis=basis.astype(np.float64))


def write_gmm_file(model: GmmModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GGMM_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, model.n_components, model.dim))
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.means.astype("<f4").tobytes())
        fh.write(model.variances.astype("<f4").tobytes())


def read_gmm_file(path) -> GmmModel:
    data = Path(path).read_bytes()
    if data[:4] != GGMM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {GGMM_MAGIC!r}")
    version, k, dim = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = 16 + 4 * (k + 2 * k * dim)
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    weights = np.frombuffer(data, dtype="<f4", count=k, offset=16).astype(np.float64)
    means = np.frombuffer(data, dtype="<f4", count=k * dim, offset=16 + 4 * k)
    variances = np.frombuffer(
        data, dtype="<f4", count=k * dim, offset=16 + 4 * (k + k * dim)
    )
    # float32 rounding perturbs the weight sum; restore the invariant.
    weights /= weights.sum()
    return GmmModel(
        weights,
        means.astype(np.float64).reshape(k, dim),
        variances.astype(np.float64).reshape(k, dim),
    )
