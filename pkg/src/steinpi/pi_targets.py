"""Over-dispersed sampling targets built from a base target and its kernel.

The recommended sampling density multiplies the target by the square root
of the kernel diagonal, log pi(x) = log p(x) + log(k_P(x)) / 2 up to a
constant; its gradient uses the analytic kernel-diagonal gradient.  The
power tilt p(x)^{d/(d+r)} is the generic over-dispersion alternative.
Neither density needs a normalising constant anywhere in the package;
``estimate_c2`` exists purely as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PiTarget", "PowerTilt", "make_pi", "make_power_tilt", "estimate_c2", "C2Estimate"]


class PiTarget:
    """Density proportional to p(x) sqrt(k_P(x)).

    Compatible with the sampler interface (log_density, grad_log_density);
    the kernel diagonal is strictly positive, so the log is always finite.
    A Hessian is deliberately not provided: it would require third
    derivatives of log p.
    """

    def __init__(self, target, kernel):
        self.base = target
        self.kernel = kernel
        self.dim = target.dim

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        out = self.base.log_density(xb) + 0.5 * np.log(self.kernel.diag_values(xb))
        return float(out[0]) if single else out

    def grad_log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        values = self.kernel.diag_values(xb)
        grads = self.kernel.diag_grads(xb)
        out = self.base.grad_log_density(xb) + 0.5 * grads / values[:, None]
        return out[0] if single else out

    def log_density_with_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        logp, grad = self.base.log_density_with_grad(xb)
        values = self.kernel.diag_values(xb)
        grads = self.kernel.diag_grads(xb)
        logq = logp + 0.5 * np.log(values)
        gradq = grad + 0.5 * grads / values[:, None]
        if single:
            return float(logq[0]), gradq[0]
        return logq, gradq

    def density_ratio_to_base(self, x):
        """Unnormalised dP/dPi, proportional to 1 / sqrt(k_P(x))."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return 1.0 / np.sqrt(self.kernel.diag_values(x))


class PowerTilt:
    """Density proportional to p(x)^{d/(d+r)}."""

    def __init__(self, target, r):
        if r <= 0:
            raise ValueError("r must be positive")
        self.base = target
        self.r = float(r)
        self.dim = target.dim
        self.exponent = target.dim / (target.dim + self.r)

    def log_density(self, x):
        return self.exponent * self.base.log_density(x)

    def grad_log_density(self, x):
        return self.exponent * self.base.grad_log_density(x)

    def hessian_log_density(self, x):
        return self.exponent * self.base.hessian_log_density(x)

    def log_density_with_grad(self, x):
        logp, grad = self.base.log_density_with_grad(x)
        return self.exponent * logp, self.exponent * grad


def make_pi(target, kernel):
    """The over-dispersed sampling target for the given base and kernel."""
    return PiTarget(target, kernel)


def make_power_tilt(target, r):
    """The power-tilted sampling target p^{d/(d+r)}.

    No integrability check is performed; for heavy-tailed targets the tilt
    may fail to normalise and the caller is responsible for judging that.
    """
    return PowerTilt(target, r)


@dataclass(frozen=True)
class C2Estimate:
    """Monte Carlo estimate of the mean root kernel diagonal under P."""

    value: float
    standard_error: float
    n: int


def estimate_c2(target, kernel, n, rng):
    """Estimate E_P[sqrt(k_P(X))] from n exact draws of the target.

    Raises NoExactSampler for targets without an exact sampler.  The
    standard error is the plain CLT one; a drifting estimate across
    growing n is the practical signal that the integral may diverge.
    """
    x = target.sample(n, rng)  # raises NoExactSampler where unsupported
    roots = np.sqrt(kernel.diag_values(x))
    value = float(roots.mean())
    se = float(roots.std(ddof=1) / np.sqrt(n))
    return C2Estimate(value=value, standard_error=se, n=n)
