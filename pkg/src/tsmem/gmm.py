"""Diagonal-covariance Gaussian mixtures fitted by expectation-maximization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
MAX_ITER = 100
TOL = 1e-4
MIN_CLUSTER = 2
LOG_2PI = math.log(2 * math.pi)


@dataclass
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d)
    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihoods[-1] if self.log_likelihoods else float("nan")

    def n_parameters(self) -> int:
        return 2 * self.k * self.dim + self.k - 1


def _as_matrix(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a nonempty list of equal-length vectors")
    return X


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def log_joint(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """``log w_z + log N(x | mu_z, diag var_z)`` for every point and component, shape (n, k)."""
    X = _as_matrix(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"point dimension {X.shape[1]} != model dimension {model.dim}")
    inv = 1.0 / model.variances  # (k, d)
    log_det = np.sum(np.log(model.variances), axis=1)  # (k,)
    maha = np.stack([((X - mu) ** 2) @ iv for mu, iv in zip(model.means, inv)], axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return log_w - 0.5 * (model.dim * LOG_2PI + log_det + maha)


def posterior(model: GmmModel, point) -> np.ndarray:
    """Responsibilities p(z | x) for one point, computed in log space."""
    lj = log_joint(model, np.asarray(point, dtype=np.float64)[None, :])[0]
    return np.exp(lj - _logsumexp(lj, axis=0))


def total_log_likelihood(model: GmmModel, X) -> float:
    return float(np.sum(_logsumexp(log_joint(model, X), axis=1)))


def farthest_point_indices(X: np.ndarray, k: int, seed: int) -> list[int]:
    """Seeded start point, then repeatedly the point farthest from all chosen ones."""
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(X.shape[0]))]
    nearest = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.sum((X - X[nxt]) ** 2, axis=1))
    return chosen


def _initial_model(X: np.ndarray, k: int, seed: int, var_floor: float, lloyd_iter: int = 20) -> GmmModel:
    """Farthest-point seeds refined by hard nearest-centre assignment.

    The first EM iteration then starts from per-cluster means and variances
    instead of a single global variance.
    """
    centres = X[farthest_point_indices(X, k, seed)].copy()
    labels = None
    for _ in range(lloyd_iter):
        d2 = np.stack([np.sum((X - c) ** 2, axis=1) for c in centres], axis=1)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for z in range(k):
            members = X[labels == z]
            if len(members):
                centres[z] = members.mean(axis=0)
    resp = np.zeros((X.shape[0], k))
    resp[np.arange(X.shape[0]), labels] = 1.0
    base_var = np.maximum(X.var(axis=0), var_floor)
    seed_model = GmmModel(np.full(k, 1.0 / k), centres, np.tile(base_var, (k, 1)))
    model = _m_step(X, resp, seed_model, var_floor)
    # a component left without points would get weight 0 forever; give it a share
    if np.any(model.weights == 0):
        w = np.maximum(model.weights, 1.0 / X.shape[0])
        model.weights = w / w.sum()
    return model


def _m_step(X: np.ndarray, resp: np.ndarray, prev: GmmModel, var_floor: float) -> GmmModel:
    n = X.shape[0]
    nk = resp.sum(axis=0)
    weights = nk / n
    means = prev.means.copy()
    variances = prev.variances.copy()
    for z in range(resp.shape[1]):
        if nk[z] < 1e-12:
            # an empty component keeps its parameters; its weight is ~0
            continue
        r = resp[:, z]
        mu = r @ X / nk[z]
        means[z] = mu
        variances[z] = np.maximum(r @ (X - mu) ** 2 / nk[z], var_floor)
    return GmmModel(weights / weights.sum(), means, variances)


def fit_gmm(points, k: int, seed: int = 0, *, max_iter: int = MAX_ITER, tol: float = TOL,
            var_floor: float = VAR_FLOOR) -> GmmModel:
    """Fit a k-component diagonal GMM.

    Stops when the total log-likelihood improves by less than ``tol`` or after
    ``max_iter`` EM iterations. The per-iteration log-likelihood trace is kept
    on the returned model.
    """
    X = _as_matrix(points)
    n, d = X.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    model = _initial_model(X, k, seed, var_floor)
    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        lj = log_joint(model, X)
        norm = _logsumexp(lj, axis=1)
        ll = float(norm.sum())
        if trace and ll < trace[-1] - 1e-9 * max(1.0, abs(trace[-1])):
            logger.warning("EM log-likelihood decreased: %.12g -> %.12g", trace[-1], ll)
        trace.append(ll)
        if len(trace) > 1 and ll - trace[-2] < tol:
            converged = True
            break
        model = _m_step(X, np.exp(lj - norm[:, None]), model, var_floor)
    else:
        trace.append(total_log_likelihood(model, X))
    model.log_likelihoods = trace
    model.converged = converged
    return model


def bic(model: GmmModel, points) -> float:
    X = _as_matrix(points)
    return -2.0 * total_log_likelihood(model, X) + model.n_parameters() * math.log(X.shape[0])


def select_k(points, k_max: int, seed: int = 0, min_cluster: int = MIN_CLUSTER) -> int:
    """k in ``[1, min(k_max, n)]`` with the lowest BIC; ties go to the smaller k.

    Fits for k > 1 in which some component owns fewer than ``min_cluster``
    points are skipped: their variances collapse onto the floor and the
    likelihood grows without bound.
    """
    X = _as_matrix(points)
    best_k, best = 1, math.inf
    for k in range(1, max(1, min(k_max, X.shape[0])) + 1):
        model = fit_gmm(X, k, seed)
        if k > 1 and np.bincount(assign(model, X), minlength=k).min() < min_cluster:
            continue
        score = bic(model, X)
        if best == math.inf or score < best - 1e-9 * max(1.0, abs(best)):
            best_k, best = k, score
    return best_k


def assign(model: GmmModel, points) -> np.ndarray:
    """Most likely component per point."""
    return np.argmax(log_joint(model, points), axis=1)
