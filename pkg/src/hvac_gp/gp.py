"""Exact GP regression with an anisotropic RBF kernel.

The kernel is

    k(x, x') = theta_scale * exp(-0.5 * ||Theta^{-1} (x - x')||^2)

with a full 8x8 length-scale matrix ``Theta``. Writing the quadratic form as
``||Theta^{-1} d||^2`` keeps the kernel positive semi-definite for any
invertible ``Theta`` reached during gradient descent, and equals
``d^T Theta^{-2} d`` whenever ``Theta`` is symmetric.

Inputs are standardized per dimension with statistics of the fit set before
the kernel is applied, so ``Theta`` lives in standardized units. The prior
mean is the constant mean of the fit targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IllConditionedKernelError, NumericDomainError, ValidationError

INPUT_NAMES = (
    "outdoor_drybulb",
    "outdoor_rh",
    "wind_speed",
    "radiation",
    "occupant_count",
    "zone_temp",
    "heat_setpoint",
    "cool_setpoint",
)
INPUT_DIM = len(INPUT_NAMES)
ZONE_TEMP_INDEX = 5
HEAT_SP_INDEX = 6
COOL_SP_INDEX = 7

MAX_THETA_CONDITION = 1e12
JITTER_BASE = 1e-10
JITTER_RETRIES = 4


@dataclass(frozen=True)
class KernelParams:
    """Signal variance, length-scale matrix and noise variance.

    ``theta_scale`` and the 64 entries of ``theta`` are the learnable reals;
    ``noise_var`` is held fixed.
    """

    theta_scale: float
    theta: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValidationError(f"theta must be square, got shape {theta.shape}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta_scale", float(self.theta_scale))
        object.__setattr__(self, "noise_var", float(self.noise_var))
        if not np.isfinite(self.theta_scale) or self.theta_scale <= 0:
            raise ValidationError(f"theta_scale must be positive, got {self.theta_scale}")
        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise ValidationError(f"noise_var must be >= 0, got {self.noise_var}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta has non-finite entries")
        cond = np.linalg.cond(theta)
        if not np.isfinite(cond) or cond >= MAX_THETA_CONDITION:
            raise ValidationError(f"theta is near-singular (condition number {cond:.3g})")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def num_learnable(self) -> int:
        return 1 + self.theta.size

    @classmethod
    def identity(cls, dim: int = INPUT_DIM, theta_scale: float = 1.0, noise_var: float = 0.0):
        return cls(theta_scale, np.eye(dim), noise_var)

    @classmethod
    def random_init(cls, rng: np.random.Generator, dim: int = INPUT_DIM, noise_var: float = 0.0,
                    spread: float = 0.05):
        """Unit signal variance and ``I + U(-spread, spread)`` length scales."""
        theta = np.eye(dim) + rng.uniform(-spread, spread, size=(dim, dim))
        return cls(1.0, theta, noise_var)

    def replace(self, **changes) -> "KernelParams":
        values = {"theta_scale": self.theta_scale, "theta": self.theta, "noise_var": self.noise_var}
        values.update(changes)
        return KernelParams(**values)

    def to_dict(self) -> dict:
        return {
            "theta_scale": self.theta_scale,
            "theta": self.theta.tolist(),
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(d["theta_scale"], np.asarray(d["theta"], dtype=float), d.get("noise_var", 0.0))

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (self.theta_scale == other.theta_scale and self.noise_var == other.noise_var
                and np.array_equal(self.theta, other.theta))

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    """Regression data: ``inputs`` of shape (n, d) and ``targets`` of shape (n,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"inputs have {X.shape[0]} rows but targets have {y.shape[0]}")
        if y.shape[0] < 1:
            raise ValidationError("dataset is empty")
        if not np.all(np.isfinite(X)):
            raise ValidationError("inputs contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise ValidationError("targets contain non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.targets[index])


def validate_input_vectors(X: np.ndarray) -> None:
    """Check the physical-domain invariants of raw 8-dimensional inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != INPUT_DIM:
        raise ValidationError(f"expected {INPUT_DIM} input columns, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValidationError(f"non-finite {INPUT_NAMES[bad[1]]} at row {bad[0]}")
    checks = [
        (1, (X[:, 1] < 0) | (X[:, 1] > 100), "outside [0, 100]"),
        (2, X[:, 2] < 0, "negative"),
        (3, X[:, 3] < 0, "negative"),
        (4, X[:, 4] < 0, "negative"),
        (6, (X[:, 6] < 15) | (X[:, 6] > 30), "outside [15, 30]"),
        (7, (X[:, 7] < 15) | (X[:, 7] > 30), "outside [15, 30]"),
    ]
    for col, mask, what in checks:
        if np.any(mask):
            row = int(np.flatnonzero(mask)[0])
            raise ValidationError(f"{INPUT_NAMES[col]} {what} at row {row}")
    swapped = X[:, HEAT_SP_INDEX] > X[:, COOL_SP_INDEX]
    if np.any(swapped):
        row = int(np.flatnonzero(swapped)[0])
        raise ValidationError(f"heat_setpoint above cool_setpoint at row {row}")


def _inverse_lengthscale(params: KernelParams) -> np.ndarray:
    return np.linalg.inv(params.theta)


def _sq_dist(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    d2 = (U * U).sum(1)[:, None] + (V * V).sum(1)[None, :] - 2.0 * U @ V.T
    return np.maximum(d2, 0.0)


def kernel_eval(params: KernelParams, a, b) -> float:
    """RBF kernel value between two input vectors (no standardization)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    u = np.linalg.solve(params.theta, d)
    q = float(u @ u)
    value = params.theta_scale * np.exp(-0.5 * q)
    if not np.isfinite(value) or not np.isfinite(q):
        raise NumericDomainError(f"kernel quadratic form is not finite ({q})")
    return float(value)


def kernel_matrix(params: KernelParams, A, B=None) -> np.ndarray:
    """Gram matrix k(A_i, B_j) for row-stacked inputs (no standardization)."""
    Ainv = _inverse_lengthscale(params)
    U = np.atleast_2d(A) @ Ainv.T
    V = U if B is None else np.atleast_2d(B) @ Ainv.T
    K = params.theta_scale * np.exp(-0.5 * _sq_dist(U, V))
    if B is None:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, params.theta_scale)
    if not np.all(np.isfinite(K)):
        raise NumericDomainError("kernel matrix has non-finite entries")
    return K


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine map to zero mean and unit variance."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.atleast_2d(X)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # constant columns are only centred
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class GpPosterior:
    """A fitted GP. Immutable; ``predict`` may be called concurrently."""

    params: KernelParams
    train_inputs: np.ndarray
    chol_factor: np.ndarray
    alpha: np.ndarray
    mean_const: float
    standardizer: Standardizer
    jitter: float = 0.0
    # train inputs standardized then mapped through Theta^{-1}
    _train_features: np.ndarray = field(repr=False, default=None)
    _inv_lengthscale: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.alpha.shape[0]

    def features(self, X) -> np.ndarray:
        return self.standardizer(np.atleast_2d(X)) @ self._inv_lengthscale.T

    def cross_kernel(self, X) -> np.ndarray:
        """k(X, train_inputs), shape (m, n)."""
        F = self.features(X)
        Kq = self.params.theta_scale * np.exp(-0.5 * _sq_dist(F, self._train_features))
        if not np.all(np.isfinite(Kq)):
            raise NumericDomainError("cross-kernel has non-finite entries")
        return Kq


def _cholesky_with_jitter(K: np.ndarray, theta_scale: float):
    n = K.shape[0]
    floor_ = 100.0 * n * np.finfo(float).eps * float(np.max(np.diag(K)))
    jitters = [0.0] + [JITTER_BASE * theta_scale * 10.0**i for i in range(JITTER_RETRIES)]
    for jitter in jitters:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        # jitter may only repair rounding: the factor must not be singular up to it
        if np.min(np.diag(L)) ** 2 >= 100.0 * max(jitter, floor_):
            return L, jitter
    raise IllConditionedKernelError(
        f"Cholesky of the {n}x{n} kernel matrix failed up to jitter {jitters[-1]:.3g}",
        jitter=jitters[-1],
    )


def fit(params: KernelParams, data: Dataset, standardize: bool = True) -> GpPosterior:
    """Condition the GP on ``data``.

    Raises IllConditionedKernelError when ``K + noise_var * I`` cannot be
    factorized even with the maximum jitter.
    """
    X = data.inputs
    y = data.targets
    if X.shape[1] != params.dim:
        raise ValidationError(f"inputs have {X.shape[1]} columns, kernel expects {params.dim}")
    std = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
    Ainv = _inverse_lengthscale(params)
    F = std(X) @ Ainv.T
    K = params.theta_scale * np.exp(-0.5 * _sq_dist(F, F))
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, params.theta_scale)
    K[np.diag_indices_from(K)] += params.noise_var
    if not np.all(np.isfinite(K)):
        raise NumericDomainError("kernel matrix has non-finite entries")
    L, jitter = _cholesky_with_jitter(K, params.theta_scale)
    mean_const = float(np.mean(y))
    resid = y - mean_const
    alpha = solve_triangular(L.T, solve_triangular(L, resid, lower=True), lower=False)
    return GpPosterior(
        params=params,
        train_inputs=X,
        chol_factor=L,
        alpha=alpha,
        mean_const=mean_const,
        standardizer=std,
        jitter=jitter,
        _train_features=F,
        _inv_lengthscale=Ainv,
    )


def predict_batch(post: GpPosterior, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at each row of ``X``.

    The variance is clamped to [0, theta_scale]; rounding can push
    ``theta_scale - k^T C^{-1} k`` slightly outside that range.
    """
    Kq = post.cross_kernel(X)
    mean = post.mean_const + Kq @ post.alpha
    V = solve_triangular(post.chol_factor, Kq.T, lower=True, check_finite=False)
    var = post.params.theta_scale - np.einsum("ij,ij->j", V, V)
    var = np.clip(var, 0.0, post.params.theta_scale)
    return mean, var


def predict(post: GpPosterior, x) -> tuple[float, float]:
    mean, var = predict_batch(post, np.atleast_2d(x))
    return float(mean[0]), float(var[0])
