"""Kernel learning on an MSE loss and first-order meta kernel learning.

Every task is split contiguously into a fit part (earlier 80%) and an
evaluation part (later 20%). With exact regression the GP interpolates its
fit data, so the MSE is measured on the evaluation part only.

Parameters are optimized in the coordinates ``(log theta_scale, Theta)``;
``loss_gradient`` reports derivatives with respect to ``theta_scale`` itself.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from . import gp
from .errors import (
    DivergedOptimizationError,
    IllConditionedKernelError,
    NumericDomainError,
    ValidationError,
)
from .gp import Dataset, KernelParams

log = logging.getLogger(__name__)

LEARN_NOISE_VAR = 1e-4


@dataclass(frozen=True)
class TrainTask:
    fit_split: Dataset
    eval_split: Dataset
    label: str = ""

    @classmethod
    def from_dataset(cls, data: Dataset, label: str = "", eval_fraction: float = 0.2) -> "TrainTask":
        """Contiguous split: the earlier rows fit, the later rows evaluate."""
        n = len(data)
        n_eval = int(round(n * eval_fraction))
        n_eval = min(max(n_eval, 1), n - 1)
        if n - n_eval < 1:
            raise ValidationError(f"task {label!r} needs at least 2 rows, has {n}")
        return cls(data.subset(slice(0, n - n_eval)), data.subset(slice(n - n_eval, n)), label)


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if len(self.tasks) < 2:
            raise ValidationError("meta-learning needs at least 2 tasks")


@dataclass
class LearnConfig:
    iterations: int = 800
    learn_rate: float = 1e-2
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    inner_step: float = 1e-3
    outer_step: float = 1e-3
    meta_batch: int = 4
    max_outer_iterations: int = 500
    convergence_window: int = 20
    convergence_tol: float = 1e-6
    grad_mode: str = "analytic"
    noise_var: float = LEARN_NOISE_VAR
    diagonal_only: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("learn_rate", "inner_step", "outer_step"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.meta_batch < 1:
            raise ValidationError("meta_batch must be >= 1")
        if self.grad_mode not in ("analytic", "finite_difference"):
            raise ValidationError(f"unknown grad_mode {self.grad_mode!r}")


def _eval_predictions(params: KernelParams, task: TrainTask):
    post = gp.fit(params, task.fit_split)
    mean, _ = gp.predict_batch(post, task.eval_split.inputs)
    return post, mean


def task_loss(params: KernelParams, task: TrainTask) -> float:
    """Held-out MSE of the GP fit on ``task.fit_split``."""
    _, mean = _eval_predictions(params, task)
    return float(np.mean((mean - task.eval_split.targets) ** 2))


def _pair_moment(Z1, Z2, Q):
    """sum_ij Q_ij (z1_i - z2_j)(z1_i - z2_j)^T."""
    C = Z1.T @ Q @ Z2
    return (Z1.T * Q.sum(1)) @ Z1 + (Z2.T * Q.sum(0)) @ Z2 - C - C.T


def _analytic(params: KernelParams, task: TrainTask):
    post, mean = _eval_predictions(params, task)
    y_eval = task.eval_split.targets
    resid = mean - y_eval
    loss = float(np.mean(resid**2))
    g = 2.0 * resid / resid.shape[0]

    Zf = post.standardizer(task.fit_split.inputs)
    Ze = post.standardizer(task.eval_split.inputs)
    Kq = post.cross_kernel(task.eval_split.inputs)
    Ff = post._train_features
    K = params.theta_scale * np.exp(-0.5 * gp._sq_dist(Ff, Ff))
    alpha = post.alpha
    v = cho_solve((post.chol_factor, True), Kq.T @ g)

    # dL = sum W* . dK* + sum W . dK
    Q_eval = np.outer(g, alpha) * Kq
    Q_fit = -np.outer(v, alpha) * K
    d_log_scale = Q_eval.sum() + Q_fit.sum()

    A = post._inv_lengthscale
    M = _pair_moment(Ze, Zf, Q_eval) + _pair_moment(Zf, Zf, Q_fit)
    grad_A = -A @ M
    grad_theta = -A.T @ grad_A @ A.T
    return loss, d_log_scale / params.theta_scale, grad_theta


def _unpack(params: KernelParams, vec: np.ndarray) -> KernelParams:
    d = params.dim
    return params.replace(theta_scale=vec[0], theta=vec[1:].reshape(d, d))


def _finite_difference(params: KernelParams, task: TrainTask):
    base = np.concatenate([[params.theta_scale], params.theta.ravel()])
    grad = np.empty_like(base)
    for i, p in enumerate(base):
        h = 1e-4 * (1.0 + abs(p))
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (task_loss(_unpack(params, up), task) - task_loss(_unpack(params, dn), task)) / (2 * h)
    return task_loss(params, task), grad[0], grad[1:].reshape(params.theta.shape)


def loss_and_gradient(params: KernelParams, task: TrainTask, mode: str = "analytic"):
    """Return ``(loss, grad)`` where ``grad`` is the 65-vector
    ``[dL/dtheta_scale, dL/dTheta.ravel()]``."""
    if mode == "analytic":
        loss, gs, gt = _analytic(params, task)
    elif mode == "finite_difference":
        loss, gs, gt = _finite_difference(params, task)
    else:
        raise ValidationError(f"unknown grad_mode {mode!r}")
    grad = np.concatenate([[gs], gt.ravel()])
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        i = int(bad[0])
        name = "theta_scale" if i == 0 else f"theta[{(i - 1) // params.dim}, {(i - 1) % params.dim}]"
        raise NumericDomainError(f"non-finite gradient component {name}")
    return loss, grad


def loss_gradient(params: KernelParams, task: TrainTask, mode: str = "analytic") -> np.ndarray:
    return loss_and_gradient(params, task, mode)[1]


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# optimizer coordinates: z = [log theta_scale, Theta.ravel()]

def _to_z(params: KernelParams) -> np.ndarray:
    return np.concatenate([[np.log(params.theta_scale)], params.theta.ravel()])


def _from_z(z: np.ndarray, template: KernelParams) -> KernelParams:
    d = template.dim
    return template.replace(theta_scale=float(np.exp(z[0])), theta=z[1:].reshape(d, d))


def _z_gradient(params: KernelParams, task: TrainTask, cfg: LearnConfig):
    loss, grad = loss_and_gradient(params, task, cfg.grad_mode)
    gz = grad.copy()
    gz[0] *= params.theta_scale
    if cfg.diagonal_only:
        mask = np.eye(params.dim, dtype=bool).ravel()
        gz[1:][~mask] = 0.0
    return loss, gz


def kernel_learn(init: KernelParams, task: TrainTask, cfg: LearnConfig | None = None,
                 history: list | None = None) -> KernelParams:
    """Adam on the held-out MSE; returns the best iterate seen."""
    cfg = cfg or LearnConfig()
    params = init.replace(noise_var=cfg.noise_var)
    opt = Adam(cfg.learn_rate, cfg.adam_betas, cfg.adam_eps)
    z = _to_z(params)
    best_loss, best = np.inf, params
    for _ in range(cfg.iterations):
        loss, gz = _z_gradient(params, task, cfg)
        if not np.isfinite(loss):
            raise DivergedOptimizationError(f"loss became {loss} during kernel learning")
        if history is not None:
            history.append(loss)
        if loss < best_loss:
            best_loss, best = loss, params
        z = opt.step(z, gz)
        params = _from_z(z, params)
    final = task_loss(params, task)
    if not np.isfinite(final):
        raise DivergedOptimizationError(f"loss became {final} during kernel learning")
    if final < best_loss:
        best = params
    return best


def fine_tune(meta_init: KernelParams, target: TrainTask, cfg: LearnConfig | None = None,
              iterations: int = 200) -> KernelParams:
    """Kernel learning from a meta-learned initialization (200 iterations by default)."""
    cfg = cfg or LearnConfig()
    if cfg.iterations != iterations:
        cfg = LearnConfig(**{**cfg.__dict__, "iterations": iterations})
    return kernel_learn(meta_init, target, cfg)


def meta_learn(tasks: TaskSet, cfg: LearnConfig | None = None, init: KernelParams | None = None,
               history: list | None = None) -> KernelParams:
    """First-order meta kernel learning.

    Each outer iteration samples ``meta_batch`` tasks, takes one inner
    gradient step of size ``inner_step`` per task, and moves the shared
    initialization by Adam (learning rate ``outer_step``) along the summed
    gradients evaluated at the adapted parameters. Stops when the mean outer
    loss over the last ``convergence_window`` iterations improves on the
    preceding window by less than ``convergence_tol``.
    """
    cfg = cfg or LearnConfig()
    rng = np.random.default_rng(tasks.seed)
    if init is None:
        init = KernelParams.random_init(rng, noise_var=cfg.noise_var)
    theta = init.replace(noise_var=cfg.noise_var)
    if cfg.inner_step == 0 and cfg.outer_step == 0:
        return theta
    opt = Adam(cfg.outer_step, cfg.adam_betas, cfg.adam_eps)
    z = _to_z(theta)
    losses: list[float] = []
    batch_size = min(cfg.meta_batch, len(tasks.tasks))
    w = cfg.convergence_window
    for _ in range(cfg.max_outer_iterations):
        batch = rng.choice(len(tasks.tasks), size=batch_size, replace=False)
        outer_grad = np.zeros_like(z)
        batch_losses = []
        for i in sorted(batch):
            task = tasks.tasks[i]
            try:
                _, g_inner = _z_gradient(theta, task, cfg)
                adapted = _from_z(z - cfg.inner_step * g_inner, theta)
                loss_adapted, g_outer = _z_gradient(adapted, task, cfg)
            except (IllConditionedKernelError, ValidationError) as exc:
                log.warning("skipping task %r: %s", task.label, exc)
                continue
            outer_grad += g_outer
            batch_losses.append(loss_adapted)
        if not batch_losses:
            raise IllConditionedKernelError("every task in the meta batch failed", jitter=np.nan)
        mean_loss = float(np.mean(batch_losses))
        if not np.isfinite(mean_loss):
            raise DivergedOptimizationError(f"outer loss became {mean_loss}")
        losses.append(mean_loss)
        if history is not None:
            history.append(mean_loss)
        z = opt.step(z, outer_grad)
        theta = _from_z(z, theta)
        if len(losses) >= 2 * w:
            improvement = np.mean(losses[-2 * w:-w]) - np.mean(losses[-w:])
            if improvement < cfg.convergence_tol:
                break
    return theta


def calibrate_signal_variance(params: KernelParams, data: Dataset) -> KernelParams:
    """Rescale ``theta_scale`` to its closed-form maximum-likelihood value.

    The held-out MSE depends on ``theta_scale`` only through the ratio
    ``noise_var / theta_scale``, so it barely pins down the prior variance and
    with it the units of the predictive std. Holding Theta and that ratio fixed,
    the Gaussian likelihood is maximized at ``theta_scale * r^T K^-1 r / n``
    for centred targets ``r``. Noise is scaled by the same factor, so
    predictive means are unchanged and only the std is recalibrated.
    """
    post = gp.fit(params, data)
    r = data.targets - post.mean_const
    factor = float(r @ post.alpha) / len(data)
    if not np.isfinite(factor) or factor <= 0:
        raise NumericDomainError(f"signal variance calibration failed (factor {factor})")
    return params.replace(theta_scale=params.theta_scale * factor, noise_var=params.noise_var * factor)


def tasks_from_datasets(datasets: Sequence[Dataset], labels: Sequence[str] | None = None,
                        seed: int = 0) -> TaskSet:
    labels = labels or [f"task{i}" for i in range(len(datasets))]
    return TaskSet(tuple(TrainTask.from_dataset(d, lab) for d, lab in zip(datasets, labels)), seed)


__all__ = [
    "Adam", "LearnConfig", "TaskSet", "TrainTask", "fine_tune", "kernel_learn",
    "loss_and_gradient", "loss_gradient", "meta_learn", "task_loss", "tasks_from_datasets",
    "calibrate_signal_variance",
]
