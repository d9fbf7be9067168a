"""Embedding-conditioned baselines: a linear-UCB bandit and GP regression.

Both models score candidates from their embeddings alone; batch selection is
a plain top-B over the acquisition scores with index tie-breaking.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import pdist

from .errors import NumericalError
from .memory import CandidateMemory


class LinUcb:
    """Ridge-regularized linear bandit with an uncertainty bonus.

    Maintains A = ridge*I + sum(x x^T) and b = sum(y x); the score of a
    feature vector is theta.x + alpha * sqrt(x^T A^-1 x) with theta = A^-1 b.
    """

    def __init__(self, dim: int, ridge: float = 1.0, alpha: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be positive")
        if ridge <= 0.0:
            raise ValueError("ridge weight must be positive")
        if alpha < 0.0:
            raise ValueError("exploration weight must be nonnegative")
        self.dim = dim
        self.ridge = float(ridge)
        self.alpha = float(alpha)
        self.A = ridge * np.eye(dim)
        self.b = np.zeros(dim)
        self.num_updates = 0

    def _check(self, x: Sequence[float]) -> np.ndarray:
        xv = np.asarray(x, dtype=np.float64)
        if xv.ndim != 1 or xv.shape[0] != self.dim:
            raise ValueError(f"feature vector has shape {xv.shape}, expected ({self.dim},)")
        return xv

    def update(self, x: Sequence[float], y: float) -> None:
        """Rank-one update with one (features, response) observation."""
        xv = self._check(x)
        y = float(y)
        if not math.isfinite(y):
            raise ValueError("response must be finite")
        self.A += np.outer(xv, xv)
        self.b += y * xv
        self.num_updates += 1

    def fit_batch(self, X: np.ndarray, y: Sequence[float]) -> None:
        """Reset and ingest a whole batch; equal to update() row by row."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim or X.shape[0] != y.shape[0]:
            raise ValueError("feature matrix and responses do not line up")
        self.A = self.ridge * np.eye(self.dim) + X.T @ X
        self.b = X.T @ y
        self.num_updates = X.shape[0]

    @property
    def theta(self) -> np.ndarray:
        """Current ridge estimate A^-1 b (dense solve)."""
        return cho_solve(cho_factor(self.A), self.b)

    def score_many(self, X: np.ndarray) -> np.ndarray:
        """UCB scores for a stack of feature rows."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"feature matrix has shape {X.shape}, expected (*, {self.dim})")
        factor = cho_factor(self.A)
        theta = cho_solve(factor, self.b)
        solved = cho_solve(factor, X.T)
        quad = np.einsum("ij,ji->i", X, solved)
        return X @ theta + self.alpha * np.sqrt(np.clip(quad, 0.0, None))

    def score(self, x: Sequence[float]) -> float:
        return float(self.score_many(self._check(x)[None, :])[0])


def median_heuristic(X: np.ndarray, max_points: int = 512) -> float:
    """Median pairwise Euclidean distance over an evenly spaced subsample.

    The standard RBF length-scale default. Falls back to 1.0 when the
    subsample collapses onto a single point.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        return 1.0
    take = min(max_points, X.shape[0])
    idx = np.linspace(0, X.shape[0] - 1, take).astype(int)
    med = float(np.median(pdist(X[idx])))
    return med if med > 0.0 else 1.0


class GaussianProcess:
    """GP regression with an RBF kernel and a UCB acquisition.

    k(a, b) = signal_var * exp(-|a - b|^2 / (2 length_scale^2)). Unset
    hyperparameters are resolved at fit time: length_scale by the median
    heuristic on the training inputs, signal_var as the variance of the
    (possibly standardized) targets, noise_var as 1e-4 * signal_var. With
    ``standardize`` on, targets are z-scored before fitting and explicit
    signal/noise variances are interpreted in the standardized space;
    posteriors are mapped back to raw units.
    """

    def __init__(
        self,
        length_scale: float | None = None,
        signal_var: float | None = None,
        noise_var: float | None = None,
        beta: float = 2.0,
        standardize: bool = True,
    ):
        if length_scale is not None and length_scale <= 0.0:
            raise ValueError("length scale must be positive")
        if signal_var is not None and signal_var <= 0.0:
            raise ValueError("signal variance must be positive")
        if noise_var is not None and noise_var < 0.0:
            raise ValueError("noise variance must be nonnegative")
        if beta < 0.0:
            raise ValueError("exploration weight must be nonnegative")
        self.length_scale = length_scale
        self.signal_var = signal_var
        self.noise_var = noise_var
        self.beta = float(beta)
        self.standardize = standardize
        self._X: np.ndarray | None = None
        self._chol: np.ndarray | None = None
        self._alpha: np.ndarray | None = None
        self._mu = 0.0
        self._sd = 1.0
        self._length = length_scale
        self._signal = signal_var if signal_var is not None else 1.0

    def _kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        sq = (
            np.square(A).sum(axis=1)[:, None]
            + np.square(B).sum(axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        np.clip(sq, 0.0, None, out=sq)
        return self._signal * np.exp(-0.5 * sq / (self._length**2))

    def fit(self, X: np.ndarray, y: Sequence[float]) -> None:
        """Refit on the full training set (replaces any previous fit)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have matching lengths")
        if X.shape[0] == 0:
            self._X = None
            self._chol = None
            self._alpha = None
            self._mu, self._sd = 0.0, 1.0
            return
        if self.standardize:
            self._mu = float(y.mean())
            sd = float(y.std())
            self._sd = sd if sd > 0.0 else 1.0
        else:
            self._mu, self._sd = 0.0, 1.0
        z = (y - self._mu) / self._sd

        self._length = (
            self.length_scale if self.length_scale is not None else median_heuristic(X)
        )
        if self.signal_var is not None:
            self._signal = self.signal_var
        else:
            var = float(z.var())
            self._signal = var if var > 0.0 else 1.0
        noise = self.noise_var if self.noise_var is not None else 1e-4 * self._signal

        K = self._kernel(X, X)
        n = K.shape[0]
        jitter = 0.0
        while True:
            try:
                self._chol = np.linalg.cholesky(K + (noise + jitter) * np.eye(n))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12 * self._signal)
                if jitter > 1e-4 * self._signal:
                    raise NumericalError(
                        "kernel matrix is not positive-definite even after jitter"
                    ) from None
        self._X = X
        self._alpha = cho_solve((self._chol, True), z)

    @property
    def num_observations(self) -> int:
        return 0 if self._X is None else self._X.shape[0]

    def posterior_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at a stack of query rows (raw units)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self._X is None:
            prior_var = self.signal_var if self.signal_var is not None else 1.0
            return (
                np.zeros(X.shape[0]),
                np.full(X.shape[0], prior_var * self._sd**2),
            )
        k_star = self._kernel(self._X, X)
        mean_z = k_star.T @ self._alpha
        v = solve_triangular(self._chol, k_star, lower=True)
        var_z = np.clip(self._signal - np.square(v).sum(axis=0), 0.0, None)
        return self._mu + self._sd * mean_z, self._sd**2 * var_z

    def posterior(self, x: Sequence[float]) -> tuple[float, float]:
        mean, var = self.posterior_many(np.asarray(x, dtype=np.float64)[None, :])
        return float(mean[0]), float(var[0])

    def acquisition(self, X: np.ndarray) -> np.ndarray:
        """UCB scores: posterior mean + beta * posterior stddev."""
        mean, var = self.posterior_many(X)
        return mean + self.beta * np.sqrt(var)


def select_top_b(
    scores: Mapping[str, float], memory: CandidateMemory, batch_size: int
) -> list[str]:
    """The batch_size unexplored candidates with the largest scores.

    Ties break toward the lower pool index. Selected candidates are marked
    explored. Scores must cover every unexplored candidate.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    pool = memory.pool
    avail = np.flatnonzero(~memory.explored_mask)
    missing = [pool.names[i] for i in avail if pool.names[i] not in scores]
    if missing:
        raise ValueError(
            f"scores missing for {len(missing)} unexplored candidates, "
            f"e.g. {missing[:3]}"
        )
    ranked = sorted(avail, key=lambda i: (-float(scores[pool.names[i]]), i))
    chosen = [pool.names[i] for i in ranked[:batch_size]]
    memory.mark_explored(chosen)
    return chosen
