"""Differentiable target distributions with analytic gradients and Hessians.

Every target exposes an unnormalised log-density together with its exact
gradient and Hessian; no automatic differentiation is used anywhere.  All
three evaluators accept either a single point of shape ``(d,)`` or a batch
of shape ``(n, d)`` and return correspondingly shaped arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, logsumexp, ndtr

from .errors import InvalidSimplex, NoExactSampler, NonConvergence, NotPositiveDefinite

__all__ = [
    "TargetModel",
    "ModeInfo",
    "find_mode",
    "make_gaussian",
    "make_gaussian_mixture",
    "make_regression_posterior",
    "simulated_regression_data",
    "make_skew_normal_2d",
    "make_garch_posterior",
    "simulate_garch_series",
]

_REGRESSION_DATA_SEED = 111  # fixed so the simulated posterior is byte-reproducible


def _as_batch(x, dim):
    """Coerce input to (n, d), remembering whether it was a single point."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise DimensionError(dim, x.shape)
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise DimensionError(dim, x.shape)


class DimensionError(ValueError):
    def __init__(self, dim, shape):
        super().__init__(f"expected point(s) of dimension {dim}, got shape {shape}")


class TargetModel:
    """A distribution known up to a constant, with exact derivatives.

    Subclasses implement the batched ``_log_density``, ``_grad`` and
    ``_hessian`` over arrays of shape (n, d).  Evaluation is pure and
    re-entrant; instances are safe to share across threads.
    """

    dim: int

    def _log_density(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise NotImplementedError

    def _hessian(self, x):
        raise NotImplementedError

    def log_density(self, x):
        xb, single = _as_batch(x, self.dim)
        out = self._log_density(xb)
        return float(out[0]) if single else out

    def grad_log_density(self, x):
        xb, single = _as_batch(x, self.dim)
        out = self._grad(xb)
        return out[0] if single else out

    def hessian_log_density(self, x):
        xb, single = _as_batch(x, self.dim)
        out = self._hessian(xb)
        return out[0] if single else out

    def log_density_with_grad(self, x):
        """(log p, grad) in one call; subclasses may share work."""
        return self.log_density(x), self.grad_log_density(x)

    def sample(self, n, rng):
        """Draw n exact samples, when the target admits an exact sampler."""
        raise NoExactSampler(f"{type(self).__name__} has no exact sampler")


@dataclass(frozen=True)
class ModeInfo:
    """A mode x* of the target with the local curvature factorised.

    ``sigma_inv`` is the negative Hessian of log p at x*, ``sigma`` its
    inverse and ``chol_sigma_inv`` the lower-triangular Cholesky factor of
    ``sigma_inv``.
    """

    x_star: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    chol_sigma_inv: np.ndarray

    @classmethod
    def from_hessian(cls, x_star, hessian):
        """Build from x* and the Hessian of log p at x*.

        Raises NotPositiveDefinite when the negative Hessian has an
        eigenvalue at or below a small scale-relative floor, i.e. when the
        curvature is numerically indistinguishable from degenerate.
        """
        x_star = np.asarray(x_star, dtype=np.float64)
        sigma_inv = -np.asarray(hessian, dtype=np.float64)
        sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
        eigvals = np.linalg.eigvalsh(sigma_inv)
        floor = 1e-6 * max(1.0, float(np.max(np.abs(eigvals))))
        if eigvals.min() <= floor:
            raise NotPositiveDefinite(
                f"negative Hessian at the mode has min eigenvalue {eigvals.min():.3e}"
            )
        chol = np.linalg.cholesky(sigma_inv)
        ident = np.eye(len(x_star))
        sigma = np.linalg.solve(sigma_inv, ident)
        sigma = 0.5 * (sigma + sigma.T)
        return cls(x_star=x_star, sigma=sigma, sigma_inv=sigma_inv, chol_sigma_inv=chol)


def find_mode(target, init, max_iter=200, grad_tol=1e-8):
    """Locate a mode by damped Newton ascent with backtracking.

    Falls back to the gradient direction whenever the Hessian is not
    negative definite at an iterate.  On a multimodal target this finds
    the mode reached from ``init``; it makes no global claim.

    Raises NonConvergence if the gradient norm does not reach ``grad_tol``
    within ``max_iter`` iterations, and NotPositiveDefinite if the negative
    Hessian at the located mode is not positive definite.
    """
    if grad_tol <= 0:
        raise ValueError("grad_tol must be positive")
    x = np.asarray(init, dtype=np.float64).copy()
    if not np.all(np.isfinite(target.grad_log_density(x))):
        raise ValueError("target gradient is not finite at init")
    logp = target.log_density(x)
    for _ in range(max_iter):
        g = target.grad_log_density(x)
        gnorm = np.linalg.norm(g)
        if gnorm <= grad_tol:
            return ModeInfo.from_hessian(x, target.hessian_log_density(x))
        h = target.hessian_log_density(x)
        step = None
        try:
            # Newton ascent direction solve(-H, g); valid only if -H is PD.
            chol = np.linalg.cholesky(-h)
            step = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        except np.linalg.LinAlgError:
            step = None
        if step is None or step @ g <= 0:
            step = g / max(gnorm, 1.0)
        # Backtracking line search on log p with an Armijo condition.
        t = 1.0
        descent = step @ g
        for _ in range(60):
            cand = x + t * step
            logp_cand = target.log_density(cand)
            if np.isfinite(logp_cand) and logp_cand >= logp + 1e-4 * t * descent:
                break
            t *= 0.5
        else:
            raise NonConvergence("line search failed to make progress")
        x = x + t * step
        logp = target.log_density(x)
    raise NonConvergence(
        f"gradient norm {np.linalg.norm(target.grad_log_density(x)):.3e} "
        f"above tolerance {grad_tol:.3e} after {max_iter} iterations"
    )


class Gaussian(TargetModel):
    """N(mean, cov), exactly normalised, with an exact sampler."""

    def __init__(self, mean, cov=None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.dim = self.mean.shape[0]
        if cov is None:
            cov = np.eye(self.dim)
        self.cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self._chol = np.linalg.cholesky(self.cov)
        self._prec = np.linalg.inv(self.cov)
        self._prec = 0.5 * (self._prec + self._prec.T)
        sign, logdet = np.linalg.slogdet(self.cov)
        self._log_norm = -0.5 * (self.dim * np.log(2.0 * np.pi) + logdet)

    def _log_density(self, x):
        delta = x - self.mean
        quad = np.einsum("ni,ij,nj->n", delta, self._prec, delta)
        return self._log_norm - 0.5 * quad

    def _grad(self, x):
        return -(x - self.mean) @ self._prec

    def _hessian(self, x):
        return np.broadcast_to(-self._prec, (x.shape[0], self.dim, self.dim)).copy()

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


def make_gaussian(mean, cov=None):
    """Gaussian target; ``cov`` defaults to the identity."""
    return Gaussian(mean, cov)


class GaussianMixture(TargetModel):
    """Mixture of isotropic Gaussian components with analytic derivatives.

    Components are stored in a canonical sorted order so the log-density is
    bitwise invariant under permutations of the component list.
    """

    def __init__(self, weights, means, scales):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        scales = np.asarray(scales, dtype=np.float64)
        if not (weights.shape[0] == means.shape[0] == scales.shape[0]):
            raise InvalidSimplex("weights, means and scales must have equal length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidSimplex("mixture weights must be nonnegative and sum to 1")
        if np.any(scales <= 0):
            raise ValueError("scales must be positive")
        order = np.lexsort(
            (weights, scales) + tuple(means[:, j] for j in reversed(range(means.shape[1])))
        )
        self.weights = weights[order]
        self.means = means[order]
        self.scales = scales[order]
        self.dim = means.shape[1]
        self._log_w = np.log(self.weights)
        self._var = self.scales**2
        self._log_norm = -0.5 * self.dim * np.log(2.0 * np.pi) - self.dim * np.log(self.scales)

    def _component_logpdfs(self, x):
        # (n, k): log w_j + log N(x; m_j, s_j^2 I)
        delta = x[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nkd,nkd->nk", delta, delta) / self._var
        return self._log_w + self._log_norm - 0.5 * quad

    def _log_density(self, x):
        return logsumexp(self._component_logpdfs(x), axis=1)

    def _responsibilities(self, x):
        lp = self._component_logpdfs(x)
        lp -= lp.max(axis=1, keepdims=True)
        r = np.exp(lp)
        r /= r.sum(axis=1, keepdims=True)
        return r

    def _grad(self, x):
        r = self._responsibilities(x)
        comp_grads = (self.means[None, :, :] - x[:, None, :]) / self._var[None, :, None]
        return np.einsum("nk,nkd->nd", r, comp_grads)

    def _hessian(self, x):
        r = self._responsibilities(x)
        comp_grads = (self.means[None, :, :] - x[:, None, :]) / self._var[None, :, None]
        g = np.einsum("nk,nkd->nd", r, comp_grads)
        outer = np.einsum("nk,nkd,nke->nde", r, comp_grads, comp_grads)
        diag_term = np.einsum("nk,k->n", r, 1.0 / self._var)
        eye = np.eye(self.dim)
        return outer - diag_term[:, None, None] * eye - np.einsum("nd,ne->nde", g, g)

    def log_density_with_grad(self, x):
        xb, single = _as_batch(x, self.dim)
        lp_comp = self._component_logpdfs(xb)
        m = lp_comp.max(axis=1, keepdims=True)
        e = np.exp(lp_comp - m)
        s = e.sum(axis=1, keepdims=True)
        logp = (m + np.log(s))[:, 0]
        r = e / s
        comp_grads = (self.means[None, :, :] - xb[:, None, :]) / self._var[None, :, None]
        grad = np.einsum("nk,nkd->nd", r, comp_grads)
        if single:
            return float(logp[0]), grad[0]
        return logp, grad

    def sample(self, n, rng):
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[idx] + self.scales[idx, None] * z


def make_gaussian_mixture(weights, means, scales):
    """Gaussian mixture target from simplex weights, means and scales."""
    return GaussianMixture(weights, means, scales)


def default_mixture():
    """The built-in trimodal 1D mixture used by the bundled experiments."""
    return make_gaussian_mixture(
        weights=(0.3, 0.4, 0.3), means=(-3.0, 0.0, 3.0), scales=(0.8, 1.0, 0.8)
    )


class RegressionPosterior(TargetModel):
    """Posterior of the 2-parameter nonlinear regression y_i = x1(1 + t_i x2) + e_i.

    Standard normal prior on x and unit observation noise give
    log p(x) = -||x||^2/2 - sum_i (y_i - x1(1 + t_i x2))^2 / 2 + const.
    """

    dim = 2

    def __init__(self, t, y):
        t = np.asarray(t, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if t.shape != y.shape or t.ndim != 1:
            raise DimensionError(1, (t.shape, y.shape))
        self.t = t
        self.y = y

    def _pieces(self, x):
        x1 = x[:, 0:1]
        x2 = x[:, 1:2]
        basis = 1.0 + self.t[None, :] * x2  # d f_i / d x1
        f = x1 * basis
        resid = self.y[None, :] - f
        dfdx2 = self.t[None, :] * x1
        return basis, resid, dfdx2

    def _log_density(self, x):
        _, resid, _ = self._pieces(x)
        return -0.5 * np.einsum("nd,nd->n", x, x) - 0.5 * np.einsum("ni,ni->n", resid, resid)

    def _grad(self, x):
        basis, resid, dfdx2 = self._pieces(x)
        g1 = np.einsum("ni,ni->n", resid, basis)
        g2 = np.einsum("ni,ni->n", resid, dfdx2)
        return -x + np.stack([g1, g2], axis=1)

    def _hessian(self, x):
        basis, resid, dfdx2 = self._pieces(x)
        h11 = -np.einsum("ni,ni->n", basis, basis)
        h22 = -np.einsum("ni,ni->n", dfdx2, dfdx2)
        # cross term picks up resid_i * d^2 f_i / dx1 dx2 = resid_i * t_i
        h12 = -np.einsum("ni,ni->n", basis, dfdx2) + resid @ self.t
        hess = np.empty((x.shape[0], 2, 2))
        hess[:, 0, 0] = h11 - 1.0
        hess[:, 1, 1] = h22 - 1.0
        hess[:, 0, 1] = h12
        hess[:, 1, 0] = h12
        return hess


def simulated_regression_data(seed=_REGRESSION_DATA_SEED):
    """Design t_i = i - 5 (i = 1..10) and observations simulated at x = (0, 0).

    The seed is fixed so the resulting posterior is reproducible
    byte-for-byte across runs and machines.
    """
    t = np.arange(1, 11, dtype=np.float64) - 5.0
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(10)
    return t, y


def make_regression_posterior(t=None, y=None):
    """Regression posterior; defaults to the bundled simulated dataset."""
    if t is None and y is None:
        t, y = simulated_regression_data()
    return RegressionPosterior(t, y)


def _normal_hazard(z):
    """phi(z) / Phi(z), stable across the whole real line."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    neg = z < -1.0
    # For z << 0 use Phi(z) = exp(-z^2/2) * erfcx(-z/sqrt(2)) / 2.
    out[neg] = np.sqrt(2.0 / np.pi) / erfcx(-z[neg] / np.sqrt(2.0))
    zpos = z[~neg]
    phi = np.exp(-0.5 * zpos**2) / np.sqrt(2.0 * np.pi)
    out[~neg] = phi / ndtr(zpos)
    return out


class SkewNormal2D(TargetModel):
    """Bivariate skew-normal density 4 phi(x1) Phi(a1 x1) phi(x2) Phi(a2 x2)."""

    dim = 2

    def __init__(self, a1=6.0, a2=-3.0):
        self.a = np.array([a1, a2], dtype=np.float64)

    def _log_density(self, x):
        z = x * self.a[None, :]
        return (
            np.log(4.0)
            - 0.5 * np.einsum("nd,nd->n", x, x)
            - np.log(2.0 * np.pi)
            + log_ndtr(z).sum(axis=1)
        )

    def _grad(self, x):
        z = x * self.a[None, :]
        return -x + self.a[None, :] * _normal_hazard(z)

    def _hessian(self, x):
        z = x * self.a[None, :]
        h = _normal_hazard(z)
        hprime = -z * h - h**2
        hess = np.zeros((x.shape[0], 2, 2))
        diag = -1.0 + self.a[None, :] ** 2 * hprime
        hess[:, 0, 0] = diag[:, 0]
        hess[:, 1, 1] = diag[:, 1]
        return hess


def make_skew_normal_2d():
    """The built-in heavily skewed bivariate target."""
    return SkewNormal2D()


def _sigmoid(t):
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class GarchPosterior(TargetModel):
    """GARCH(1,1) log-posterior in an unconstrained parameterisation.

    The natural parameters are phi = (phi1, phi2, phi3, phi4) with
    phi2 > 0, phi3 > 0, phi4 > 0 and phi3 + phi4 < 1; the volatility
    recursion is s2_t = phi2 + phi3 a_{t-1}^2 + phi4 s2_{t-1} with
    a_t = y_t - phi1.  Sampling happens in theta, mapped through

        phi1 = theta1
        phi2 = exp(theta2)
        phi3 = sigmoid(theta3)
        phi4 = (1 - sigmoid(theta3)) * sigmoid(theta4)

    (a stick-breaking map for the stationarity triangle), with a flat prior
    on theta, so the log-Jacobian of the inverse map is added:
    log|J| = theta2 + log s'(theta3) + log(1 - s(theta3)) + log s'(theta4).
    Initial conditions: s2_0 is the sample variance of y and a_0 = 0.
    """

    dim = 4

    def __init__(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] < 2:
            raise ValueError("need a 1D series of length >= 2")
        self.y = y
        self.sigma2_0 = float(np.var(y))

    # phi(theta), its Jacobian d phi_i / d theta_j and per-component
    # second-derivative matrices.
    def _transform(self, theta):
        t1, t2, t3, t4 = theta
        s3 = float(_sigmoid(np.array([t3]))[0])
        s4 = float(_sigmoid(np.array([t4]))[0])
        ds3 = s3 * (1.0 - s3)
        ds4 = s4 * (1.0 - s4)
        phi = np.array([t1, np.exp(t2), s3, (1.0 - s3) * s4])
        jac = np.zeros((4, 4))
        jac[0, 0] = 1.0
        jac[1, 1] = phi[1]
        jac[2, 2] = ds3
        jac[3, 2] = -ds3 * s4
        jac[3, 3] = (1.0 - s3) * ds4
        d2s3 = ds3 * (1.0 - 2.0 * s3)
        d2s4 = ds4 * (1.0 - 2.0 * s4)
        hess = np.zeros((4, 4, 4))
        hess[1, 1, 1] = phi[1]
        hess[2, 2, 2] = d2s3
        hess[3, 2, 2] = -d2s3 * s4
        hess[3, 2, 3] = hess[3, 3, 2] = -ds3 * ds4
        hess[3, 3, 3] = (1.0 - s3) * d2s4
        return phi, jac, hess, (s3, s4, ds3, ds4)

    def _log_jac_terms(self, theta, sig):
        s3, s4, ds3, ds4 = sig
        value = theta[1] + np.log(ds3) + np.log(1.0 - s3) + np.log(ds4)
        grad = np.array([0.0, 1.0, 1.0 - 3.0 * s3, 1.0 - 2.0 * s4])
        hess = np.diag([0.0, 0.0, -3.0 * ds3, -2.0 * ds4])
        return value, grad, hess

    def _loglik_phi(self, phi, order=2):
        """Log-likelihood in phi with gradient/Hessian via recursion."""
        y = self.y
        n = y.shape[0]
        e3 = np.zeros(4)
        e3[2] = 1.0
        e4 = np.zeros(4)
        e4[3] = 1.0
        s2 = self.sigma2_0  # s2_{t-1}, constant w.r.t. phi at t = 1
        g_s2 = np.zeros(4)
        h_s2 = np.zeros((4, 4))
        value = 0.0
        grad = np.zeros(4)
        hess = np.zeros((4, 4))
        a_prev = 0.0  # a_0, constant
        da_prev = np.zeros(4)  # gradient of a_{t-1}; a_t = y_t - phi1
        for t in range(n):
            # advance recursion: S_t = phi2 + phi3 a_{t-1}^2 + phi4 S_{t-1}
            ga2 = 2.0 * a_prev * da_prev
            s2_t = phi[1] + phi[2] * a_prev**2 + phi[3] * s2
            g_t = np.zeros(4)
            g_t[1] = 1.0
            g_t += a_prev**2 * e3 + s2 * e4 + phi[2] * ga2 + phi[3] * g_s2
            if order >= 2:
                h_t = phi[3] * h_s2.copy()
                h_t += np.outer(e3, ga2) + np.outer(ga2, e3)
                h_t += np.outer(e4, g_s2) + np.outer(g_s2, e4)
                # d^2(a^2)/dphi1^2 = 2 (da/dphi1)^2 since a is affine in phi1
                h_t[0, 0] += phi[2] * 2.0 * da_prev[0] ** 2
            yt2 = y[t] ** 2
            fp = -0.5 / s2_t + yt2 / (2.0 * s2_t**2)
            value += -0.5 * np.log(s2_t) - yt2 / (2.0 * s2_t)
            grad += fp * g_t
            if order >= 2:
                fpp = 0.5 / s2_t**2 - yt2 / s2_t**3
                hess += fpp * np.outer(g_t, g_t) + fp * h_t
                h_s2 = h_t
            s2, g_s2 = s2_t, g_t
            a_prev = y[t] - phi[0]
            da_prev = np.array([-1.0, 0.0, 0.0, 0.0])
        return value, grad, hess

    def _eval_one(self, theta, order):
        phi, jac, jhess, sig = self._transform(theta)
        lj, lj_grad, lj_hess = self._log_jac_terms(theta, sig)
        value, g_phi, h_phi = self._loglik_phi(phi, order=order)
        logp = value + lj
        grad = jac.T @ g_phi + lj_grad
        if order < 2:
            return logp, grad, None
        hess = jac.T @ h_phi @ jac + np.einsum("k,kij->ij", g_phi, jhess) + lj_hess
        return logp, grad, hess

    def _log_density(self, x):
        return np.array([self._eval_one(row, order=0)[0] for row in x])

    def _grad(self, x):
        return np.stack([self._eval_one(row, order=1)[1] for row in x])

    def _hessian(self, x):
        return np.stack([self._eval_one(row, order=2)[2] for row in x])

    def log_density_with_grad(self, x):
        xb, single = _as_batch(x, self.dim)
        pairs = [self._eval_one(row, order=1)[:2] for row in xb]
        logp = np.array([p[0] for p in pairs])
        grad = np.stack([p[1] for p in pairs])
        if single:
            return float(logp[0]), grad[0]
        return logp, grad

    def log_jacobian(self, theta):
        """log |J| of the unconstraining transform's inverse at theta."""
        theta = np.asarray(theta, dtype=np.float64)
        _, _, _, sig = self._transform(theta)
        return float(self._log_jac_terms(theta, sig)[0])


def simulate_garch_series(phi, n, seed=0, burn=200):
    """Simulate a GARCH(1,1) series y_t = phi1 + sigma_t eps_t of length n."""
    phi1, phi2, phi3, phi4 = phi
    if phi2 <= 0 or phi3 <= 0 or phi4 <= 0 or phi3 + phi4 >= 1:
        raise ValueError("phi violates the stationarity constraints")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n + burn)
    s2 = phi2 / (1.0 - phi3 - phi4)
    a = 0.0
    out = np.empty(n + burn)
    for t in range(n + burn):
        s2 = phi2 + phi3 * a**2 + phi4 * s2
        a = np.sqrt(s2) * eps[t]
        out[t] = phi1 + a
    return out[burn:]


def make_garch_posterior(y):
    """GARCH(1,1) posterior over the unconstrained parameter theta."""
    return GarchPosterior(y)
