"""Bayesian Bradley-Terry posterior over latent candidate utilities.

Candidates are addressed by dense integer ids ``0..n-1``; a utility vector is a
float array of length ``n``. The posterior is approximated by its MAP point and
a diagonal Laplace approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit


@dataclass(frozen=True)
class Prior:
    """Independent zero-mean Gaussian prior on every latent utility."""

    sigma0: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma0) and self.sigma0 > 0):
            raise ValueError(f"sigma0 must be positive and finite, got {self.sigma0!r}")

    @property
    def precision(self) -> float:
        return 1.0 / (self.sigma0 * self.sigma0)


@dataclass(frozen=True)
class ComparisonRecord:
    """One decisive duel: ``outcome=+1`` means ``first`` was preferred."""

    first: int
    second: int
    outcome: int

    def __post_init__(self) -> None:
        if self.first == self.second:
            raise ValueError(f"self-comparison of candidate {self.first}")
        if self.outcome not in (-1, 1):
            raise ValueError(f"outcome must be +1 or -1, got {self.outcome!r}")

    @property
    def winner(self) -> int:
        return self.first if self.outcome == 1 else self.second

    @property
    def loser(self) -> int:
        return self.second if self.outcome == 1 else self.first


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-candidate Gaussian marginals ``N(mu_i, sigma_i^2)``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ValueError("mu and sigma must be 1-D arrays of equal length")

    def __len__(self) -> int:
        return len(self.mu)

    @classmethod
    def from_prior(cls, n: int, prior: Prior) -> "PosteriorSummary":
        return cls(np.zeros(n), np.full(n, prior.sigma0))


@dataclass
class MapEstimate:
    theta: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float


def win_probability(theta_i: float, theta_j: float) -> float:
    """P(i preferred over j) under the Bradley-Terry model."""
    if not (math.isfinite(theta_i) and math.isfinite(theta_j)):
        raise ValueError("utilities must be finite")
    return float(expit(theta_i - theta_j))


def _as_arrays(log: Sequence[ComparisonRecord] | Iterable[ComparisonRecord]):
    log = list(log)
    first = np.fromiter((r.first for r in log), dtype=np.intp, count=len(log))
    second = np.fromiter((r.second for r in log), dtype=np.intp, count=len(log))
    outcome = np.fromiter((r.outcome for r in log), dtype=float, count=len(log))
    return first, second, outcome


def _check_ids(n: int, first: np.ndarray, second: np.ndarray) -> None:
    if len(first) and (max(first.max(), second.max()) >= n or min(first.min(), second.min()) < 0):
        bad = sorted({int(k) for k in np.concatenate([first, second]) if k < 0 or k >= n})
        raise IndexError(f"comparison log references unknown candidate ids {bad} (n={n})")


def _objective(theta, first, second, outcome, precision):
    # -log sigmoid(z) = softplus(-z) = logaddexp(0, -z)
    z = outcome * (theta[first] - theta[second])
    nll = np.logaddexp(0.0, -z).sum()
    return float(nll + 0.5 * precision * theta.dot(theta))


def _gradient(theta, first, second, outcome, precision):
    z = outcome * (theta[first] - theta[second])
    w = -outcome * expit(-z)
    g = precision * theta
    np.add.at(g, first, w)
    np.add.at(g, second, -w)
    return g


def neg_log_posterior(theta: np.ndarray, log: Sequence[ComparisonRecord], prior: Prior) -> float:
    """Negative log posterior (up to a constant) of the BT model with Gaussian prior."""
    theta = np.asarray(theta, dtype=float)
    first, second, outcome = _as_arrays(log)
    _check_ids(len(theta), first, second)
    return _objective(theta, first, second, outcome, prior.precision)


def gradient(theta: np.ndarray, log: Sequence[ComparisonRecord], prior: Prior) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    first, second, outcome = _as_arrays(log)
    _check_ids(len(theta), first, second)
    return _gradient(theta, first, second, outcome, prior.precision)


def n_candidates(log: Sequence[ComparisonRecord], n: int | None = None) -> int:
    seen = max((max(r.first, r.second) for r in log), default=-1) + 1
    if n is None:
        return seen
    if n < seen:
        raise IndexError(f"comparison log references candidate {seen - 1} but n={n}")
    return n


def fit_map(
    log: Sequence[ComparisonRecord],
    prior: Prior,
    n: int | None = None,
    *,
    tol: float = 1e-8,
    max_iters: int = 500,
    theta0: np.ndarray | None = None,
) -> MapEstimate:
    """Compute the MAP utility vector with L-BFGS.

    ``n`` is the number of registered candidates (defaults to one past the
    largest id in ``log``); candidates without comparisons sit at the prior
    mode. ``theta0`` warm-starts the solver and may be shorter than ``n``, in
    which case the remaining entries start at zero.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = n_candidates(log, n)
    x0 = np.zeros(n)
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=float)[:n]
        x0[: len(theta0)] = theta0
    if not log:
        return MapEstimate(np.zeros(n), True, 0, 0.0)

    first, second, outcome = _as_arrays(log)
    precision = prior.precision
    args = (first, second, outcome, precision)

    # L-BFGS-B bounds the max-abs gradient; scale so the 2-norm meets tol.
    gtol = tol / math.sqrt(n)
    res = minimize(
        _objective,
        x0,
        args=args,
        jac=_gradient,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 0.0, "maxiter": max_iters, "maxcor": 20},
    )
    theta = res.x
    g = _gradient(theta, *args)
    gnorm = float(np.linalg.norm(g))
    n_iter = int(res.nit)

    # Close the last few decimals with Newton steps on the exact Hessian when
    # the line search stalls on float resolution of the objective.
    if gnorm > tol and n <= 2000:
        for _ in range(max(0, min(20, max_iters - n_iter))):
            H = _hessian(theta, first, second, outcome, precision)
            theta = theta - np.linalg.solve(H, g)
            g = _gradient(theta, *args)
            gnorm = float(np.linalg.norm(g))
            n_iter += 1
            if gnorm <= tol:
                break
    return MapEstimate(theta, gnorm <= tol, n_iter, gnorm)


def _hessian(theta, first, second, outcome, precision):
    n = len(theta)
    p = expit(theta[first] - theta[second])
    w = p * (1.0 - p)
    H = np.zeros((n, n))
    np.add.at(H, (first, first), w)
    np.add.at(H, (second, second), w)
    np.add.at(H, (first, second), -w)
    np.add.at(H, (second, first), -w)
    H[np.diag_indices(n)] += precision
    return H


def hessian_diagonal(theta: np.ndarray, log: Sequence[ComparisonRecord], prior: Prior) -> np.ndarray:
    """Diagonal of the Hessian of :func:`neg_log_posterior` at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    first, second, _ = _as_arrays(log)
    _check_ids(len(theta), first, second)
    p = expit(theta[first] - theta[second])
    w = p * (1.0 - p)
    h = np.full(len(theta), prior.precision)
    np.add.at(h, first, w)
    np.add.at(h, second, w)
    return h


def laplace_diagonal(theta_hat: np.ndarray, log: Sequence[ComparisonRecord], prior: Prior) -> PosteriorSummary:
    h = hessian_diagonal(theta_hat, log, prior)
    sigma = 1.0 / np.sqrt(h)
    # prior-only entries must equal sigma0 bit-for-bit
    untouched = h == prior.precision
    sigma[untouched] = prior.sigma0
    return PosteriorSummary(np.array(theta_hat, dtype=float), sigma)


def fit_posterior(
    log: Sequence[ComparisonRecord],
    prior: Prior,
    n: int | None = None,
    *,
    theta0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iters: int = 500,
) -> PosteriorSummary:
    """MAP fit followed by the diagonal Laplace approximation."""
    est = fit_map(log, prior, n, tol=tol, max_iters=max_iters, theta0=theta0)
    return laplace_diagonal(est.theta, log, prior)
