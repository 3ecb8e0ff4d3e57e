"""Preconditioned Metropolis-adjusted Langevin sampling with adaptive warm-up.

The proposal from state x is

    x' = x + eps M^{-1} grad(x) + sqrt(2 eps) M^{-1/2} Z,   Z ~ N(0, I),

where grad is the gradient of the sampled log-density (for the
over-dispersed target this already contains the half log-kernel term; for
the plain target it is just grad log p).  Acceptance uses the exact
Metropolis--Hastings log-ratio, with squared norms ||z||^2 = z^T M z.

Randomness is counter-based (Philox) with a fixed raw budget per step, so
a chain can be restarted bitwise from any intermediate state and replicate
streams are independent of thread scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "AdaptSchedule",
    "mala_step",
    "run_chain",
    "adaptive_warmup",
    "random_window",
]


def _as_spd_matrix(m, dim):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 0:
        m = m * np.eye(dim)
    elif m.ndim == 1:
        m = np.diag(m)
    if m.shape != (dim, dim):
        raise ValueError(f"preconditioner must be {dim}x{dim}, got {m.shape}")
    return m


@dataclass(frozen=True, eq=False)
class ChainConfig:
    """Step size, preconditioner, length and RNG stream of one chain."""

    epsilon: float
    m: np.ndarray
    n: int
    seed: int
    stream: tuple = ()

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n < 1:
            raise ValueError("chain length must be >= 1")
        np.linalg.cholesky(np.asarray(self.m, dtype=np.float64))  # SPD check


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """States and acceptance statistics of a completed chain."""

    states: np.ndarray
    accept_flags: np.ndarray
    accept_rate: float
    final_config: ChainConfig
    nonfinite_proposals: int = 0


@dataclass(frozen=True)
class AdaptSchedule:
    """Epoch schedule for the adaptive warm-up.

    Defaults: unit initial step, identity preconditioner, nine tuning
    epochs of 1000 steps followed by a production epoch of 1e5, blending
    rate 0.3 and acceptance target 0.57.
    """

    epsilon0: float = 1.0
    m0: np.ndarray | None = None
    epoch_lengths: tuple = (1000,) * 9 + (100_000,)
    learning_rates: tuple = (0.3,) * 9
    target_accept: float = 0.57

    def __post_init__(self):
        if len(self.learning_rates) != len(self.epoch_lengths) - 1:
            raise ValueError("need one learning rate per epoch after the first")
        if any(not 0.0 <= a <= 1.0 for a in self.learning_rates):
            raise ValueError("learning rates must lie in [0, 1]")
        if any(n < 1 for n in self.epoch_lengths):
            raise ValueError("epoch lengths must be positive")
        if self.epsilon0 <= 0:
            raise ValueError("epsilon0 must be positive")


class _Precond:
    """Cholesky-backed preconditioner operations, factorised once."""

    def __init__(self, m):
        self.m = np.asarray(m, dtype=np.float64)
        self.chol = np.linalg.cholesky(self.m)
        ident = np.eye(self.m.shape[0])
        li = np.linalg.solve(self.chol, ident)
        self.m_inv = li.T @ li

    def sqrt_inv_apply(self, z):
        # B z with B B^T = M^{-1}; B is inv(chol(M))^T.
        return np.linalg.solve(self.chol.T, z)

    def quad(self, z):
        # z^T M z, the squared proposal norm.
        return float(z @ self.m @ z)


def _raws_per_step(dim):
    # d normals + 1 uniform, padded to whole Philox blocks of 4 outputs.
    return 4 * ((dim + 1 + 3) // 4)


def _stream_randoms(seed, stream, n, dim, start_step=0):
    """Normals (n, dim) and log-uniforms (n,) for steps start_step..+n-1."""
    key = np.random.SeedSequence(seed, spawn_key=tuple(stream)).generate_state(2, np.uint64)
    bitgen = np.random.Philox(key=key)
    rps = _raws_per_step(dim)
    if start_step:
        bitgen.advance(start_step * (rps // 4))
    raws = bitgen.random_raw(n * rps).reshape(n, rps)
    u = (raws[:, : dim + 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u[:, :dim]), np.log(u[:, dim])


class _StepResult:
    __slots__ = ("x", "logp", "grad", "accepted", "nonfinite", "proposal", "log_ratio")

    def __init__(self, x, logp, grad, accepted, nonfinite, proposal, log_ratio):
        self.x = x
        self.logp = logp
        self.grad = grad
        self.accepted = accepted
        self.nonfinite = nonfinite
        self.proposal = proposal
        self.log_ratio = log_ratio


def _step(x, logp_x, grad_x, target, eps, pre, z, log_u):
    """One MALA transition from a state with cached density and gradient."""
    nu_x = x + eps * (pre.m_inv @ grad_x)
    prop = nu_x + math.sqrt(2.0 * eps) * pre.sqrt_inv_apply(z)
    logp_p, grad_p = target.log_density_with_grad(prop)
    if not (np.isfinite(logp_p) and np.all(np.isfinite(grad_p))):
        return _StepResult(x, logp_x, grad_x, False, True, prop, -np.inf)
    nu_p = prop + eps * (pre.m_inv @ grad_p)
    log_ratio = (
        logp_p
        - logp_x
        - pre.quad(x - nu_p) / (4.0 * eps)
        + pre.quad(prop - nu_x) / (4.0 * eps)
    )
    if log_u < log_ratio:
        return _StepResult(prop, logp_p, grad_p, True, False, prop, log_ratio)
    return _StepResult(x, logp_x, grad_x, False, False, prop, log_ratio)


def mala_step(state, target, config, rng):
    """Single transition using an externally supplied numpy Generator.

    Nonfinite proposal densities reject the move rather than aborting.
    To sample the plain target P, pass P itself; the kernel drift term is
    then implicitly zero.
    """
    state = np.asarray(state, dtype=np.float64)
    pre = _Precond(_as_spd_matrix(config.m, state.shape[0]))
    logp, grad = target.log_density_with_grad(state)
    z = rng.standard_normal(state.shape[0])
    log_u = np.log(rng.random())
    res = _step(state, logp, grad, target, config.epsilon, pre, z, log_u)
    return res.x, res.accepted


def run_chain(init, target, config, start_step=0):
    """Run a chain of config.n steps; deterministic given (seed, stream).

    ``states[0]`` is the first post-init state.  Restarting from
    ``states[k]`` with ``start_step = k + 1`` reproduces ``states[k+1:]``
    bitwise, because each step owns a fixed slice of the Philox stream.
    """
    x = np.asarray(init, dtype=np.float64).copy()
    dim = x.shape[0]
    pre = _Precond(_as_spd_matrix(config.m, dim))
    normals, log_us = _stream_randoms(config.seed, config.stream, config.n, dim, start_step)
    states = np.empty((config.n, dim))
    accept = np.zeros(config.n, dtype=bool)
    nonfinite = 0
    logp, grad = target.log_density_with_grad(x)
    eps = config.epsilon
    for i in range(config.n):
        res = _step(x, logp, grad, target, eps, pre, normals[i], log_us[i])
        x, logp, grad = res.x, res.logp, res.grad
        states[i] = x
        accept[i] = res.accepted
        nonfinite += res.nonfinite
    return ChainOutput(
        states=states,
        accept_flags=accept,
        accept_rate=float(accept.mean()),
        final_config=config,
        nonfinite_proposals=nonfinite,
    )


def _regularised(cov):
    """Ensure the blended proposal covariance admits a Cholesky factor."""
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        d = cov.shape[0]
        jitter = 1e-10 * np.trace(cov) / d
        if jitter <= 0:
            jitter = 1e-10
        return cov + jitter * np.eye(d)


def adaptive_warmup(init, target, schedule=None, *, seed=0, stream=()):
    """Epoch-based tuning of the step size and preconditioner.

    After each tuning epoch the step size is scaled by
    exp(rate - target_accept) and the proposal covariance M^{-1} is blended
    with the epoch sample covariance using the epoch's learning rate (the
    preconditioner itself is the inverse of the blend, consistent with the
    proposal using M^{-1}).  Returns the production epoch's output and its
    ChainConfig.
    """
    schedule = schedule or AdaptSchedule()
    x = np.asarray(init, dtype=np.float64)
    dim = x.shape[0]
    eps = schedule.epsilon0
    m = np.eye(dim) if schedule.m0 is None else _as_spd_matrix(schedule.m0, dim)
    m_inv = np.linalg.inv(m)
    out = None
    cfg = None
    for epoch, length in enumerate(schedule.epoch_lengths):
        if epoch > 0:
            alpha = schedule.learning_rates[epoch - 1]
            eps = eps * math.exp(out.accept_rate - schedule.target_accept)
            cov = np.cov(out.states, rowvar=False).reshape(dim, dim)
            m_inv = _regularised(alpha * m_inv + (1.0 - alpha) * cov)
            m = np.linalg.inv(m_inv)
            m = 0.5 * (m + m.T)
            x = out.states[-1]
        cfg = ChainConfig(epsilon=eps, m=m, n=length, seed=seed, stream=tuple(stream) + (epoch,))
        out = run_chain(x, target, cfg)
    return cfg, out


def random_window(states, n, rng):
    """A uniformly random contiguous window of length n from a chain."""
    total = states.shape[0]
    if n > total:
        raise ValueError(f"window length {n} exceeds chain length {total}")
    start = int(rng.integers(0, total - n + 1))
    return states[start : start + n]
