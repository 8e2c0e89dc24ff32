"""Independent reference implementations used by the tests.

Nothing here imports the library's numerical code paths: every oracle is a
direct, slow transcription of the defining formula (explicit inverses,
Python loops, exhaustive search).
"""
from __future__ import annotations

import math
from decimal import Decimal, localcontext

import numpy as np


def rbf(theta_scale, theta, a, b):
    d = np.asarray(a, float) - np.asarray(b, float)
    u = np.linalg.inv(theta) @ d
    return theta_scale * math.exp(-0.5 * float(u @ u))


def standardize(X_fit, X):
    mean = X_fit.mean(axis=0)
    std = X_fit.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return (X - mean) / std


def dense_gp(theta_scale, theta, noise_var, X, y, Xq, standardize_inputs=True):
    """Posterior mean and variance via an explicit matrix inverse."""
    X = np.asarray(X, float)
    Xq = np.atleast_2d(np.asarray(Xq, float))
    if standardize_inputs:
        Z, Zq = standardize(X, X), standardize(X, Xq)
    else:
        Z, Zq = X, Xq
    n = len(y)
    K = np.array([[rbf(theta_scale, theta, Z[i], Z[j]) for j in range(n)] for i in range(n)])
    Kinv = np.linalg.inv(K + noise_var * np.eye(n))
    m = float(np.mean(y))
    means, variances = [], []
    for q in Zq:
        k = np.array([rbf(theta_scale, theta, q, Z[j]) for j in range(n)])
        means.append(m + k @ Kinv @ (np.asarray(y) - m))
        variances.append(theta_scale - k @ Kinv @ k)
    return np.array(means), np.array(variances)


def heldout_mse(theta_scale, theta, noise_var, fit_X, fit_y, eval_X, eval_y):
    mu, _ = dense_gp(theta_scale, theta, noise_var, fit_X, fit_y, eval_X)
    return float(np.mean((np.asarray(eval_y) - mu) ** 2))


def central_difference_gradient(theta_scale, theta, noise_var, fit_X, fit_y, eval_X, eval_y, h=1e-5):
    """d loss / d (theta_scale, Theta.ravel()) by central differences on ``heldout_mse``."""
    base = np.concatenate([[theta_scale], np.asarray(theta, float).ravel()])
    d = theta.shape[0]
    grad = np.empty_like(base)
    for i in range(base.size):
        step = h * (1.0 + abs(base[i]))
        vals = []
        for sgn in (1.0, -1.0):
            p = base.copy()
            p[i] += sgn * step
            vals.append(heldout_mse(p[0], p[1:].reshape(d, d), noise_var, fit_X, fit_y, eval_X, eval_y))
        grad[i] = (vals[0] - vals[1]) / (2.0 * step)
    return grad


def _dec_solve(A, B):
    """Gauss-Jordan elimination with partial pivoting on lists of Decimals; returns A^{-1} B."""
    n = len(A)
    M = [list(A[i]) + list(B[i]) for i in range(n)]
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        p = M[c][c]
        M[c] = [v / p for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [row[n:] for row in M]


def heldout_mse_decimal(theta_scale, theta, noise_var, fit_X, fit_y, eval_X, eval_y):
    """``heldout_mse`` in Decimal arithmetic at the ambient context precision."""
    D = Decimal
    fit_X = [[D(float(v)) for v in row] for row in np.asarray(fit_X, float)]
    eval_X = [[D(float(v)) for v in row] for row in np.asarray(eval_X, float)]
    fit_y = [D(float(v)) for v in fit_y]
    eval_y = [D(float(v)) for v in eval_y]
    n, d = len(fit_X), len(fit_X[0])
    mean = [sum(r[j] for r in fit_X) / n for j in range(d)]
    std = []
    for j in range(d):
        s = (sum((r[j] - mean[j]) ** 2 for r in fit_X) / n).sqrt()
        std.append(s if s > D("1e-12") else D(1))

    def feat(row):
        z = [(row[j] - mean[j]) / std[j] for j in range(d)]
        return [sum(z_row) for z_row in _dec_solve(theta, [[v] for v in z])]

    def k(u, v):
        return theta_scale * (-sum((a - b) ** 2 for a, b in zip(u, v)) / 2).exp()

    F = [feat(r) for r in fit_X]
    K = [[k(F[i], F[j]) + (noise_var if i == j else 0) for j in range(n)] for i in range(n)]
    m = sum(fit_y) / n
    alpha = [a[0] for a in _dec_solve(K, [[v - m] for v in fit_y])]
    err = D(0)
    for row, target in zip(eval_X, eval_y):
        q = feat(row)
        mu = m + sum(k(q, F[j]) * alpha[j] for j in range(n))
        err += (target - mu) ** 2
    return err / len(eval_y)


def central_difference_gradient_decimal(theta_scale, theta, noise_var, fit_X, fit_y, eval_X, eval_y,
                                        h="1e-15", digits=50):
    """Central differences on ``heldout_mse_decimal``.

    With 50 significant digits the roundoff of a 1e-15 step is near 1e-35,
    so the difference quotient is exact to about the truncation error h^2.
    """
    with localcontext() as ctx:
        ctx.prec = digits
        D = Decimal
        base = [D(float(theta_scale))] + [D(float(v)) for v in np.asarray(theta, float).ravel()]
        dim = np.asarray(theta).shape[0]
        nv = D(float(noise_var))
        step = D(h)
        grad = np.empty(len(base))
        for i in range(len(base)):
            vals = []
            for sgn in (1, -1):
                p = list(base)
                p[i] += sgn * step
                th = [p[1 + r * dim:1 + (r + 1) * dim] for r in range(dim)]
                vals.append(heldout_mse_decimal(p[0], th, nv, fit_X, fit_y, eval_X, eval_y))
            grad[i] = float((vals[0] - vals[1]) / (2 * step))
    return grad


def brute_force_threshold(mu, sigma, y, e_star):
    """Scan every candidate epsilon with a Python loop; same tie rules as the library."""
    s = sorted(set(float(v) for v in sigma))
    cands = [(a + b) / 2.0 for a, b in zip(s[:-1], s[1:])] + [s[-1] + 1.0]
    if s[0] > 0:
        cands = [s[0] / 2.0] + cands
    best = None
    for eps in cands:
        tp = fp = tn = fn = 0
        for m, sg, yy in zip(mu, sigma, y):
            pos = abs(yy - m) > e_star
            flag = sg > eps
            tp += pos and flag
            fp += (not pos) and flag
            fn += pos and (not flag)
            tn += (not pos) and (not flag)
        key = (tp + tn, tp, -eps)
        if best is None or key > best[0]:
            best = (key, eps, (tp, fp, tn, fn))
    return best[1], best[2]


def all_subset_accuracy(sigma, positive):
    """Best accuracy over every threshold rule ``sigma > eps`` (distinct cut points)."""
    order = sorted(set(float(v) for v in sigma))
    cuts = [-math.inf] + order
    best = 0
    for c in cuts:
        correct = sum((sg > c) == pos for sg, pos in zip(sigma, positive))
        best = max(best, correct)
    return best / len(sigma)


def softmax_weights(scores, temperature):
    m = max(scores)
    w = [math.exp((s - m) / temperature) for s in scores]
    z = sum(w)
    return [v / z for v in w]


def rc_step(T, t_out, occupants, radiation, heat_sp, cool_sp, R=5.0, C=2.0, q_max=6.0,
            gain=0.1, aperture=4.0, dt=0.25, cop=3.0):
    """One predictive-deadband thermostat step of the single-zone RC model."""
    passive = (t_out - T) / R + occupants * gain + aperture * radiation / 1000.0
    ff = T + dt / C * passive
    if ff < heat_sp:
        q = min(q_max, C * (heat_sp - T) / dt - passive)
    elif ff > cool_sp:
        q = -min(q_max, passive - C * (cool_sp - T) / dt)
    else:
        q = 0.0
    return T + dt / C * (passive + q), abs(q) * dt / cop


def reward(T_next, heat_sp, cool_sp, occupied, lower, upper):
    w = 0.1 if occupied else 1.0
    effort = abs(heat_sp - T_next) + abs(cool_sp - T_next)
    viol = max(0.0, T_next - upper) + max(0.0, lower - T_next)
    return -w * effort - (1 - w) * viol


def recount_violation_rate(trace, lower, upper, tol=1e-6):
    n = len(trace)
    bad = 0
    for row in trace:
        t_next, occupied = row[8], row[11] > 0
        if occupied and (t_next > upper + tol or t_next < lower - tol):
            bad += 1
    return bad / n

