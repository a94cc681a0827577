"""Gaussian-mixture prior and its closed-form linear-Gaussian observation model.

For a mixture prior p(x) = sum_k w_k N(x; mu_k, Sigma_k) observed through
s = H x + n with n ~ N(0, sigma^2 I), every quantity of interest is exact:

    p(s | H)       = sum_k w_k N(s; H mu_k, S_k),   S_k = H Sigma_k Hᵀ + sigma² I
    E[x | s, H]    = sum_k wtilde_k(s) (mu_k + Sigma_k Hᵀ S_k^{-1} (s - H mu_k))
    ∇_s log p(s|H) = (H E[x | s, H] - s) / sigma²

with posterior responsibilities wtilde_k ∝ w_k N(s; H mu_k, S_k). The last
identity (score of the degraded observation) is what makes the restoration
residual usable as a stochastic gradient.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .operators import DimensionMismatch

_LOG_2PI = float(np.log(2.0 * np.pi))
_JITTERS = (0.0, 1e-12, 1e-10)  # escalation ladder before giving up


class FactorizationError(RuntimeError):
    """A covariance (or innovation covariance) failed to factorize as SPD."""


def _chol_with_jitter(mat, what):
    for jitter in _JITTERS:
        try:
            return scipy.linalg.cholesky(
                mat + jitter * np.eye(mat.shape[0]), lower=True
            )
        except scipy.linalg.LinAlgError:
            continue
    raise FactorizationError(f"{what}: not positive definite (jitter up to 1e-10)")


def _normalize_cov(cov, dim):
    """Covariance as a 0-d (isotropic), 1-d (diagonal) or 2-d array."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        if cov <= 0:
            raise FactorizationError("isotropic variance must be positive")
        return cov
    if cov.ndim == 1:
        if cov.shape != (dim,):
            raise DimensionMismatch("diagonal covariance", dim, cov.shape[0])
        if np.any(cov <= 0):
            raise FactorizationError("diagonal covariance must be positive")
        if np.all(cov == cov[0]):
            return np.asarray(cov[0])
        return cov
    if cov.shape != (dim, dim):
        raise DimensionMismatch("covariance rows", dim, cov.shape[0])
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise FactorizationError("covariance must be symmetric")
    try:
        # strictly positive definite: non-degeneracy is a model hypothesis,
        # so no jitter is allowed here (the jitter ladder is for the
        # observation-side innovation covariances only)
        scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"prior covariance not positive definite: {exc}")
    return cov


class GmmPrior:
    """Non-degenerate Gaussian mixture over R^n.

    ``covariances`` is a per-component list/tuple whose entries are scalars
    (isotropic), length-n vectors (diagonal) or (n, n) matrices; a single
    bare scalar or vector is shared across all components.
    """

    def __init__(self, weights, means, covariances):
        weights = np.array(weights, dtype=float)
        means = np.array(means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        if weights.ndim != 1 or weights.shape[0] != means.shape[0]:
            raise ValueError("weights and means disagree on component count")
        if np.any(weights <= 0):
            raise ValueError("component weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        dim = means.shape[1]
        if isinstance(covariances, (list, tuple)):
            covs = list(covariances)
        else:
            arr = np.asarray(covariances, dtype=float)
            if arr.ndim > 1:
                raise ValueError(
                    "a bare array covariance is ambiguous; pass a per-component "
                    "list (one scalar, vector or matrix per component)"
                )
            covs = [arr for _ in range(len(weights))]
        if len(covs) != len(weights):
            raise ValueError("covariances and weights disagree on component count")
        weights.flags.writeable = False
        means.flags.writeable = False
        self.weights = weights
        self.means = means
        self.covariances = [_normalize_cov(c, dim) for c in covs]
        self.dim = dim
        self._chols = None

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def is_isotropic(self):
        return all(c.ndim == 0 for c in self.covariances)

    def cov_matrix(self, k):
        c = self.covariances[k]
        if c.ndim == 0:
            return float(c) * np.eye(self.dim)
        if c.ndim == 1:
            return np.diag(c)
        return np.asarray(c)

    def cov_diag(self, k):
        c = self.covariances[k]
        if c.ndim == 0:
            return np.full(self.dim, float(c))
        if c.ndim == 1:
            return np.asarray(c)
        return np.diag(c)

    def overall_mean(self):
        return self.weights @ self.means

    def _component_chol(self, k):
        if self._chols is None:
            self._chols = [None] * self.n_components
        if self._chols[k] is None:
            c = self.covariances[k]
            if c.ndim == 2:
                self._chols[k] = _chol_with_jitter(c, f"component {k}")
            else:
                self._chols[k] = np.sqrt(self.cov_diag(k))
        return self._chols[k]

    def sample(self, rng, size=None):
        """Exact ancestral sample: component by weight, then a Gaussian draw."""
        single = size is None
        count = 1 if single else int(size)
        comps = rng.choice(self.n_components, size=count, p=self.weights)
        noise = rng.standard_normal((count, self.dim))
        out = np.empty((count, self.dim))
        for k in range(self.n_components):
            sel = comps == k
            if not np.any(sel):
                continue
            chol = self._component_chol(k)
            if chol.ndim == 2:
                out[sel] = self.means[k] + noise[sel] @ chol.T
            else:
                out[sel] = self.means[k] + noise[sel] * chol
        return out[0] if single else out

    def logpdf(self, x):
        """Mixture log-density, batched over leading axes."""
        x = _check_points(x, self.dim)
        per = np.empty(x.shape[:-1] + (self.n_components,))
        for k in range(self.n_components):
            diff = x - self.means[k]
            chol = self._component_chol(k)
            if chol.ndim == 2:
                sol = scipy.linalg.solve_triangular(
                    chol, diff.reshape(-1, self.dim).T, lower=True
                ).T.reshape(diff.shape)
                quad = np.sum(sol ** 2, axis=-1)
                logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            else:
                quad = np.sum((diff / chol) ** 2, axis=-1)
                logdet = 2.0 * np.sum(np.log(chol))
            per[..., k] = -0.5 * (quad + logdet + self.dim * _LOG_2PI)
        return logsumexp(per + np.log(self.weights), axis=-1)


def _check_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise DimensionMismatch("point", dim, x.shape[-1] if x.ndim else 1)
    return x


class ObservationModel:
    """Degraded-observation channel s = H x + n, n ~ N(0, sigma² I)."""

    def __init__(self, H, sigma):
        sigma = float(sigma)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.H = H
        self.sigma = sigma


class LinearGaussianPosterior:
    """Precomputed closed-form machinery for one (prior, H, sigma) triple.

    Isotropic component covariances route through the operator's innovation
    hooks (cheap for masks, Fourier compositions and circulants); anything
    else falls back to dense factorizations of H Sigma_k Hᵀ + sigma² I.
    """

    def __init__(self, prior, obs):
        self.prior = prior
        self.obs = obs
        H, sigma = obs.H, obs.sigma
        if H.in_dim != prior.dim:
            raise DimensionMismatch("observation operator in_dim", prior.dim, H.in_dim)
        self.sigma2 = sigma * sigma
        self.h_mu = np.stack([H.apply(mu) for mu in prior.means])
        self.log_w = np.log(prior.weights)
        self._iso = prior.is_isotropic
        if self._iso:
            self._cvals = [float(c) for c in prior.covariances]
            self._logdets = np.array(
                [H.innovation_logdet(c, self.sigma2) for c in self._cvals]
            )
        else:
            hd = H.to_dense()
            self._chos, self._cross, logdets = [], [], []
            for k in range(prior.n_components):
                cov = prior.cov_matrix(k)
                s_mat = hd @ cov @ hd.T + self.sigma2 * np.eye(H.out_dim)
                chol = _chol_with_jitter(s_mat, f"innovation covariance {k}")
                self._chos.append((chol, True))
                self._cross.append(cov @ hd.T)
                logdets.append(2.0 * np.sum(np.log(np.diag(chol))))
            self._logdets = np.array(logdets)

    def _solve(self, k, r):
        if self._iso:
            return self.obs.H.innovation_solve(self._cvals[k], self.sigma2, r)
        flat = r.reshape(-1, self.obs.H.out_dim)
        z = scipy.linalg.cho_solve(self._chos[k], flat.T).T
        return z.reshape(r.shape)

    def component_loglik(self, s):
        """log N(s; H mu_k, S_k) for each component, batched; shape (..., K)."""
        s = _check_points(s, self.obs.H.out_dim)
        m = self.obs.H.out_dim
        out = np.empty(s.shape[:-1] + (self.prior.n_components,))
        for k in range(self.prior.n_components):
            r = s - self.h_mu[k]
            quad = np.sum(r * self._solve(k, r), axis=-1)
            out[..., k] = -0.5 * (quad + self._logdets[k] + m * _LOG_2PI)
        return out

    def logpdf(self, s):
        return logsumexp(self.component_loglik(s) + self.log_w, axis=-1)

    def responsibilities(self, s):
        logp = self.component_loglik(s) + self.log_w
        return np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))

    def posterior_mean(self, s, with_responsibilities=False):
        s = _check_points(s, self.obs.H.out_dim)
        resp = self.responsibilities(s)
        mean = np.zeros(s.shape[:-1] + (self.prior.dim,))
        for k in range(self.prior.n_components):
            r = s - self.h_mu[k]
            z = self._solve(k, r)
            if self._iso:
                shift = self._cvals[k] * self.obs.H.adjoint_apply(z)
            else:
                shift = z @ self._cross[k].T
            mean += resp[..., k, None] * (self.prior.means[k] + shift)
        if with_responsibilities:
            return mean, resp
        return mean

    def score(self, s):
        """∇_s log p(s | H) via the restoration residual identity."""
        s = _check_points(s, self.obs.H.out_dim)
        return (self.obs.H.apply(self.posterior_mean(s)) - s) / self.sigma2


# -- functional entry points ----------------------------------------------------


def sample_prior(prior, rng, size=None):
    """Draw from the prior (deterministic for a given generator state)."""
    return prior.sample(rng, size=size)


def observation_logpdf(prior, obs, s):
    """log p(s | H): exact Gaussian-mixture convolution, log-sum-exp reduced."""
    return LinearGaussianPosterior(prior, obs).logpdf(s)


def mmse_restore(prior, obs, s):
    """Posterior mean E[x | s, H]: the exact MMSE restoration of s."""
    return LinearGaussianPosterior(prior, obs).posterior_mean(s)


def observation_score(prior, obs, s):
    """∇_s log p(s | H) = (H E[x|s,H] - s) / sigma²."""
    return LinearGaussianPosterior(prior, obs).score(s)
