"""Target densities with analytic gradients, plus dataset ingestion and an
autoregressive reference chain with known long-run variance.

Every potential and gradient is vectorized over leading axes: inputs of shape
(d,) or (C, d) both work, which is what the lock-step chain driver relies on.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, log_ndtr

from .chains import ROLE_NORMAL, SeedKey, Trajectory, TrajectoryMeta

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TargetModel:
    """Unnormalized density exp(-U) with analytic gradient of U."""

    dim: int
    potential: Callable
    gradient: Callable
    value_and_grad: Callable
    label: str = ""
    exact_moments: dict = field(default_factory=dict)


def _make_target(dim, value_and_grad, label, exact_moments=None) -> TargetModel:
    def potential(x):
        return value_and_grad(x)[0]

    def gradient(x):
        return value_and_grad(x)[1]

    return TargetModel(
        dim=dim,
        potential=potential,
        gradient=gradient,
        value_and_grad=value_and_grad,
        label=label,
        exact_moments=dict(exact_moments or {}),
    )


def gmm_target(rho: float, mu, sigma) -> TargetModel:
    """Two-component Gaussian mixture rho * N(mu, S) + (1 - rho) * N(-mu, S).

    The potential drops the shared normalizer; gradients weight the component
    pulls by responsibilities computed through a stable two-term log-sum-exp.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    d = mu.size
    if sigma.shape != (d, d):
        raise ValueError("covariance shape must match the mean")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be symmetric positive definite") from None
    if not 0.0 <= rho <= 1.0:
        raise ValueError("mixture weight must lie in [0, 1]")
    sinv = np.linalg.inv(sigma)
    with np.errstate(divide="ignore"):
        log_w1, log_w2 = np.log(rho), np.log(1.0 - rho)

    def value_and_grad(x):
        x = np.asarray(x, dtype=np.float64)
        m1 = x - mu
        m2 = x + mu
        g1 = m1 @ sinv
        g2 = m2 @ sinv
        a1 = log_w1 - 0.5 * np.sum(m1 * g1, axis=-1)
        a2 = log_w2 - 0.5 * np.sum(m2 * g2, axis=-1)
        u = -np.logaddexp(a1, a2)
        w1 = expit(a1 - a2)
        grad = np.expand_dims(w1, -1) * g1 + np.expand_dims(1.0 - w1, -1) * g2
        return u, grad

    moments = {}
    for i in range(d):
        moments[f"coordinate[{i}]"] = (2.0 * rho - 1.0) * mu[i]
        moments[f"second_moment[{i}]"] = sigma[i, i] + mu[i] ** 2
    return _make_target(d, value_and_grad, "gaussian-mixture", moments)


def gmm_isolated_target(rho: float, mu1: float, sigma1: float,
                        mu2: float, sigma2: float) -> TargetModel:
    """One-dimensional mixture rho * N(mu1, s1^2) + (1 - rho) * N(-mu2, s2^2)
    with per-component scales, stable far into either tail."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("component scales must be positive")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("mixture weight must lie in [0, 1]")
    m = np.array([mu1, -mu2], dtype=np.float64)
    s = np.array([sigma1, sigma2], dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_w = np.array([np.log(rho), np.log(1.0 - rho)])
    log_norm = log_w - np.log(s)

    def value_and_grad(x):
        x = np.asarray(x, dtype=np.float64)
        x1 = x[..., 0]
        z1 = (x1 - m[0]) / s[0]
        z2 = (x1 - m[1]) / s[1]
        a1 = log_norm[0] - 0.5 * z1 * z1
        a2 = log_norm[1] - 0.5 * z2 * z2
        u = -np.logaddexp(a1, a2)
        w1 = expit(a1 - a2)
        du = w1 * (z1 / s[0]) + (1.0 - w1) * (z2 / s[1])
        return u, np.expand_dims(du, -1)

    w = np.exp(log_w)
    moments = {
        "coordinate[0]": float(w @ m),
        "second_moment[0]": float(w @ (m**2 + s**2)),
        "cube[0]": float(w @ (m**3 + 3.0 * m * s**2)),
    }
    return _make_target(1, value_and_grad, "gaussian-mixture-separated", moments)


def banana_target(p: float, b: float, d: int) -> TargetModel:
    """Curved-ridge density: a wide Gaussian in the first coordinate, the
    second bent along a parabola of curvature b, standard normal elsewhere."""
    if p <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if d < 2:
        raise ValueError("needs at least two dimensions")

    def value_and_grad(x):
        x = np.asarray(x, dtype=np.float64)
        x1 = x[..., 0]
        x2 = x[..., 1]
        bend = x2 + b * x1 * x1 - p * b
        u = x1 * x1 / (2.0 * p) + bend * bend
        grad = np.array(x, copy=True)
        grad[..., 0] = x1 / p + 4.0 * b * x1 * bend
        grad[..., 1] = 2.0 * bend
        if d > 2:
            rest = x[..., 2:]
            u = u + 0.5 * np.sum(rest * rest, axis=-1)
        return u, grad

    moments = {
        "coordinate[0]": 0.0,
        "coordinate[1]": 0.0,
        "second_moment[0]": float(p),
    }
    return _make_target(d, value_and_grad, "banana", moments)


@dataclass(frozen=True)
class Dataset:
    """Binary-response design with the covariate whitening transform applied.

    Covariates are mapped through (X'X)^{-1/2} of the training design so the
    prior on the transformed parameter is spherical; inner products between
    a parameter and a covariate row are preserved by the dual transform.
    """

    features_train: np.ndarray
    labels_train: np.ndarray
    features_test: np.ndarray
    labels_test: np.ndarray
    cov_half: np.ndarray
    cov_inv_half: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    label: str = "dataset"
    generating_coefficients: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.features_train.shape[1]


def build_dataset(x_raw, y, k_test: int, seed: int, label: str = "dataset",
                  generating_coefficients=None) -> Dataset:
    """Split off k_test rows (deterministic in the seed), then whiten all
    covariates by the training design's (X'X)^{-1/2}."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_rows = x_raw.shape[0]
    if y.shape != (n_rows,):
        raise ValueError("labels must be one per row")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be binary 0/1")
    if not 0 < k_test < n_rows:
        raise ValueError("test split must leave both parts non-empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(n_rows)
    test_idx = np.sort(perm[:k_test])
    train_idx = np.sort(perm[k_test:])
    x_train = x_raw[train_idx]
    gram = x_train.T @ x_train
    evals, evecs = np.linalg.eigh(gram)
    tol = max(gram.shape[0], 1) * np.finfo(np.float64).eps * max(evals.max(), 0.0)
    if evals.min() <= tol:
        raise ValueError(
            f"rank-deficient design: eigenvalue {evals.min():.6g} of X'X is not positive"
        )
    cov_half = (evecs * np.sqrt(evals)) @ evecs.T
    cov_inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    return Dataset(
        features_train=x_train @ cov_inv_half,
        labels_train=y[train_idx],
        features_test=x_raw[test_idx] @ cov_inv_half,
        labels_test=y[test_idx],
        cov_half=cov_half,
        cov_inv_half=cov_inv_half,
        train_idx=train_idx,
        test_idx=test_idx,
        label=label,
        generating_coefficients=None if generating_coefficients is None
        else np.asarray(generating_coefficients, dtype=np.float64),
    )


def ingest_csv(path, label_column, k_test: int, seed: int,
               add_intercept: bool = False, max_rows: Optional[int] = None) -> Dataset:
    """Load a numeric CSV with a header row; `label_column` may be a column
    name or index. Optionally subsample to max_rows (seeded) before the
    train/test split."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if isinstance(label_column, str):
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not 0 <= label_idx < len(header):
            raise ValueError(f"label column index {label_idx} out of range")
    data = np.asarray([[float(v) for v in row] for row in rows], dtype=np.float64)
    y = data[:, label_idx]
    x = np.delete(data, label_idx, axis=1)
    if max_rows is not None and max_rows < x.shape[0]:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        keep = np.sort(rng.permutation(x.shape[0])[:max_rows])
        x, y = x[keep], y[keep]
    if add_intercept:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
    return build_dataset(x, y, k_test, seed, label=path.stem)


def synthetic_logistic_dataset(n_rows: int = 500, n_features: int = 8,
                               k_test: int = 100, seed: int = 90210) -> Dataset:
    """Self-contained stand-in for the real regression datasets: Gaussian
    covariates, known coefficient vector, Bernoulli responses."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal((n_rows, n_features))
    coeff = rng.standard_normal(n_features)
    probs = expit(x @ coeff)
    y = (rng.random(n_rows) < probs).astype(np.float64)
    return build_dataset(x, y, k_test, seed, label="synthetic-logistic",
                         generating_coefficients=coeff)


def _regression_target(dataset: Dataset, g: float, kind: str) -> TargetModel:
    feats = dataset.features_train
    y = dataset.labels_train
    d = dataset.dim
    inv_g = 1.0 / g

    if kind == "logistic":

        def value_and_grad(x):
            x = np.asarray(x, dtype=np.float64)
            t = x @ feats.T
            u = np.sum(np.logaddexp(0.0, t) - y * t, axis=-1) \
                + 0.5 * inv_g * np.sum(x * x, axis=-1)
            grad = (expit(t) - y) @ feats + inv_g * x
            return u, grad

    elif kind == "probit":

        def value_and_grad(x):
            x = np.asarray(x, dtype=np.float64)
            t = x @ feats.T
            log_phi = -0.5 * t * t - _LOG_SQRT_2PI
            log_cdf_pos = log_ndtr(t)
            log_cdf_neg = log_ndtr(-t)
            u = -np.sum(y * log_cdf_pos + (1.0 - y) * log_cdf_neg, axis=-1) \
                + 0.5 * inv_g * np.sum(x * x, axis=-1)
            dl_dt = y * np.exp(log_phi - log_cdf_pos) \
                - (1.0 - y) * np.exp(log_phi - log_cdf_neg)
            grad = -dl_dt @ feats + inv_g * x
            return u, grad

    else:
        raise ValueError(f"unknown regression kind {kind!r}")

    return _make_target(d, value_and_grad, f"{kind}-{dataset.label}")


def logistic_target(dataset: Dataset, g: float = 100.0) -> TargetModel:
    """Posterior potential of logistic regression with a spherical N(0, g I)
    prior on the whitened parameter."""
    return _regression_target(dataset, g, "logistic")


def probit_target(dataset: Dataset, g: float = 100.0) -> TargetModel:
    """Probit analogue of `logistic_target`; the Gaussian CDF enters through
    its log, evaluated stably for large negative arguments."""
    return _regression_target(dataset, g, "probit")


def ar1_reference(a: float, n: int, seed: int):
    """Linear autoregressive chain x' = a x + z with standard normal
    innovations, started in stationarity. Returns the trajectory and the
    exact long-run variance of the identity functional:
    (1 / (1 - a^2)) * (1 + a) / (1 - a)."""
    if not abs(a) < 1:
        raise ValueError("autoregressive coefficient must satisfy |a| < 1")
    if n < 1:
        raise ValueError("need at least one state")
    rng = SeedKey(seed, 0).generator(ROLE_NORMAL)
    x0 = rng.standard_normal() / np.sqrt(1.0 - a * a)
    series = np.empty(n)
    series[0] = x0
    if n > 1:
        z = rng.standard_normal(n - 1)
        series[1:] = lfilter([1.0], [1.0, -a], z, zi=np.array([a * x0]))[0]
    v_infinity = (1.0 / (1.0 - a * a)) * (1.0 + a) / (1.0 - a)
    meta = TrajectoryMeta(sampler="ar1", gamma=a, seed_master=seed, seed_stream=0)
    return Trajectory(series[:, None], meta), float(v_infinity)


def finite_difference_gradient(potential, x, scale: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar potential, one coordinate at a
    time, with per-coordinate step scale * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        h = scale * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (potential(xp) - potential(xm)) / (2.0 * h)
    return out
