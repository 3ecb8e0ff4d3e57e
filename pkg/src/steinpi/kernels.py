"""Stein reproducing kernels with closed-form values, diagonals and gradients.

Two families are provided.  The Langevin kernel applies the Langevin Stein
operator to an inverse multi-quadric base kernel and controls weak
convergence; the KGM kernel of order s adds a normalised linear term and a
polynomial diffusion scaling, extending control to moments up to order s.
Both are parameterised by a mode location x* and a length-scale matrix
Sigma with Sigma^{-1} the negative log-density Hessian at x*.

All heavy evaluations (Gram matrices, diagonals over batches) are
vectorised; pure functions throughout, safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .targets import ModeInfo

__all__ = [
    "SteinKernel",
    "LangevinKernel",
    "KGMKernel",
    "ConstantKernel",
    "KernelDiagonal",
    "make_kernel",
    "AssumptionReport",
    "check_theorem_assumptions",
]


@dataclass(frozen=True)
class KernelDiagonal:
    """Diagonal value k_P(x) and its spatial gradient."""

    value: float
    grad: np.ndarray


class SteinKernel:
    """Common assembly of a Stein kernel from family-specific base pieces.

    The off-diagonal value combines the scaled base kernel c(x, y) with the
    target score s(.) = grad log p(.):

        k_P(x,y) = div_xy c + (grad_x c).s(y) + (grad_y c).s(x) + c s(x).s(y)

    Subclasses provide the base-kernel cross pieces and the closed-form
    diagonal coefficients; the diagonal path never calls the cross path, so
    the two can be used to validate one another.
    """

    family = "stein"
    order = 1  # diffusion scaling order s; 1 means no scaling

    def __init__(self, target, mode: ModeInfo, beta: float = 0.5):
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        self.target = target
        self.mode = mode
        self.beta = beta
        self.x_star = mode.x_star
        self.sigma_inv = mode.sigma_inv
        self.sigma_inv2 = mode.sigma_inv @ mode.sigma_inv
        self.tr_sigma_inv = float(np.trace(mode.sigma_inv))
        self.dim = mode.x_star.shape[0]

    # ------------------------------------------------------------------
    # family-specific pieces
    # ------------------------------------------------------------------

    def base_kappa(self, x, y):
        """Base kernel kappa with gradients: (value, grad_x, grad_y, div_xy)."""
        raise NotImplementedError

    def _kappa_cross(self, blocks):
        raise NotImplementedError

    def _diag_coeffs(self, delta, v, q, a1, a2):
        """Closed-form c0, c1, c2 and their gradients over a batch."""
        raise NotImplementedError

    # ------------------------------------------------------------------
    # shared assembly
    # ------------------------------------------------------------------

    def _blocks(self, x, y):
        si = self.sigma_inv
        si2 = self.sigma_inv2
        dx = x - self.x_star
        dy = y - self.x_star
        a1 = dx @ si
        a2 = dx @ si2
        b1 = dy @ si
        b2 = dy @ si2
        sx = self.target.grad_log_density(x)
        sy = self.target.grad_log_density(y) if y is not x else sx
        return {
            "dx": dx,
            "dy": dy,
            "a1": a1,
            "a2": a2,
            "b1": b1,
            "b2": b2,
            "ux": np.einsum("nd,nd->n", dx, a1),
            "uy": np.einsum("md,md->m", dy, b1),
            "qx": np.einsum("nd,nd->n", dx, a2),
            "qy": np.einsum("md,md->m", dy, b2),
            "p11": a1 @ dy.T,
            "p21": a2 @ dy.T,
            "sx": sx,
            "sy": sy,
            "sxsy": sx @ sy.T,
            "a1sy": a1 @ sy.T,
            "b1sx": sx @ b1.T,
            "a1sx": np.einsum("nd,nd->n", a1, sx),
            "b1sy": np.einsum("md,md->m", b1, sy),
        }

    def gram(self, x, y=None):
        """Cross Gram matrix [k_P(x_i, y_j)].

        With one argument the result is made bitwise symmetric by mirroring
        the upper triangle (row-major canonical entries).
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if y is None:
            k = self._gram_cross(x, x)
            lower = np.tril_indices(k.shape[0], -1)
            k[lower] = k.T[lower]
            return k
        return self._gram_cross(x, np.atleast_2d(np.asarray(y, dtype=np.float64)))

    def _gram_cross(self, x, y):
        blocks = self._blocks(x, y)
        s = self.order
        kappa, dxk_sy, dyk_sx, dysi_dxk, dxsi_dyk, divk = self._kappa_cross(blocks)
        if s == 1:
            # the six pieces are consumed here; accumulate in place
            out = kappa
            out *= blocks["sxsy"]
            out += divk
            out += dxk_sy
            out += dyk_sx
            return out
        vx = (1.0 + blocks["ux"])[:, None]
        vy = (1.0 + blocks["uy"])[None, :]
        pref = vx ** ((s - 1) / 2.0) * vy ** ((s - 1) / 2.0)
        c = pref * kappa
        cx_sy = pref * ((s - 1) * kappa * blocks["a1sy"] / vx + dxk_sy)
        cy_sx = pref * ((s - 1) * kappa * blocks["b1sx"] / vy + dyk_sx)
        div_c = pref * (
            (s - 1) ** 2 * kappa * blocks["p21"] / (vx * vy)
            + (s - 1) * dysi_dxk / vy
            + (s - 1) * dxsi_dyk / vx
            + divk
        )
        out = c
        out *= blocks["sxsy"]
        out += div_c
        out += cx_sy
        out += cy_sx
        return out

    def __call__(self, x, y):
        """Value k_P(x, y) for a single pair.

        The pair is put in lexicographic order first, so k(x, y) and
        k(y, x) run the identical float operations and agree bitwise.
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        for a, b in zip(x, y):
            if a < b:
                break
            if a > b:
                x, y = y, x
                break
        return float(self._gram_cross(x[None, :], y[None, :])[0, 0])

    def _diag_parts(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        delta = x - self.x_star
        a1 = delta @ self.sigma_inv
        a2 = delta @ self.sigma_inv2
        v = 1.0 + np.einsum("nd,nd->n", delta, a1)
        q = np.einsum("nd,nd->n", delta, a2)
        return x, delta, v, q, a1, a2

    def diag_values(self, x):
        """k_P(x) over a batch, via closed-form diagonal coefficients."""
        x, delta, v, q, a1, a2 = self._diag_parts(x)
        c0, c1, c2, _, _, _ = self._diag_coeffs(delta, v, q, a1, a2)
        score = self.target.grad_log_density(x)
        snorm2 = np.einsum("nd,nd->n", score, score)
        return c2 + 2.0 * np.einsum("nd,nd->n", c1, score) + c0 * snorm2

    def diag_grads(self, x):
        """Gradient of k_P(x) over a batch; needs the target Hessian."""
        x, delta, v, q, a1, a2 = self._diag_parts(x)
        c0, c1, c2, gc0, gc1, gc2 = self._diag_coeffs(delta, v, q, a1, a2)
        score = self.target.grad_log_density(x)
        hess = self.target.hessian_log_density(x)
        snorm2 = np.einsum("nd,nd->n", score, score)
        hs = np.einsum("nij,nj->ni", hess, score)
        hc1 = np.einsum("nij,nj->ni", hess, c1)
        gc1_s = np.einsum("nij,nj->ni", gc1, score)
        return gc2 + 2.0 * gc1_s + 2.0 * hc1 + gc0 * snorm2[:, None] + 2.0 * c0[:, None] * hs

    def diag(self, x):
        """KernelDiagonal at a single point."""
        x = np.asarray(x, dtype=np.float64)
        value = self.diag_values(x[None, :])[0]
        grad = self.diag_grads(x[None, :])[0]
        return KernelDiagonal(value=float(value), grad=grad)

    def c1_squared(self, box_halfwidth=None, grid_points=33):
        """Lower bound for inf_x k_P(x); exact for Langevin, numeric for KGM."""
        raise NotImplementedError


class LangevinKernel(SteinKernel):
    """Langevin Stein kernel over an inverse multi-quadric base kernel."""

    family = "langevin"
    order = 1

    def base_kappa(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        si = self.sigma_inv
        diff = x - y
        sid = si @ diff
        w = 1.0 + diff @ sid
        beta = self.beta
        value = w ** (-beta)
        grad_x = -2.0 * beta * w ** (-beta - 1.0) * sid
        grad_y = -grad_x
        div = (
            -4.0 * beta * (beta + 1.0) * w ** (-beta - 2.0) * (sid @ sid)
            + 2.0 * beta * self.tr_sigma_inv * w ** (-beta - 1.0)
        )
        return value, grad_x, grad_y, div

    def _imq_cross(self, blocks):
        # In-place arithmetic throughout: these matrices can reach 1e7
        # entries and fresh temporaries dominate the runtime otherwise.
        beta = self.beta
        w = -2.0 * blocks["p11"]
        w += blocks["ux"][:, None]
        w += blocks["uy"][None, :]
        w += 1.0  # 1 + ||x - y||^2_Sigma
        wb1 = w ** (-beta - 1.0)  # one transcendental; the rest by ratio
        kappa = wb1 * w
        dxk_sy = blocks["a1sy"] - blocks["b1sy"][None, :]
        dxk_sy *= wb1
        dxk_sy *= -2.0 * beta
        dyk_sx = blocks["a1sx"][:, None] - blocks["b1sx"]
        dyk_sx *= wb1
        dyk_sx *= 2.0 * beta
        dysi_dxk = blocks["p21"] - blocks["qy"][None, :]
        dysi_dxk *= wb1
        dysi_dxk *= -2.0 * beta
        dxsi_dyk = blocks["qx"][:, None] - blocks["p21"]
        dxsi_dyk *= wb1
        dxsi_dyk *= 2.0 * beta
        divk = -2.0 * blocks["p21"]
        divk += blocks["qx"][:, None]
        divk += blocks["qy"][None, :]  # (x - y)^T Sigma^-2 (x - y)
        divk *= wb1
        divk /= w
        divk *= -4.0 * beta * (beta + 1.0)
        wb1 *= 2.0 * beta * self.tr_sigma_inv  # wb1 retired; reuse as the trace term
        divk += wb1
        return kappa, dxk_sy, dyk_sx, dysi_dxk, dxsi_dyk, divk

    _kappa_cross = _imq_cross

    def _diag_coeffs(self, delta, v, q, a1, a2):
        n, d = delta.shape
        c0 = np.ones(n)
        c1 = np.zeros((n, d))
        c2 = np.full(n, 2.0 * self.beta * self.tr_sigma_inv)
        gc0 = np.zeros((n, d))
        gc1 = np.zeros((n, d, d))
        gc2 = np.zeros((n, d))
        return c0, c1, c2, gc0, gc1, gc2

    def c1_squared(self, box_halfwidth=None, grid_points=33):
        # k_P(x) = 2 beta tr(Sigma^-1) + ||score||^2, so the infimum is the
        # constant term, attained wherever the score vanishes.
        return 2.0 * self.beta * self.tr_sigma_inv


class KGMKernel(LangevinKernel):
    """KGM Stein kernel of order s (moment convergence control)."""

    family = "kgm"

    def __init__(self, target, mode: ModeInfo, s: int = 3, beta: float = 0.5):
        super().__init__(target, mode, beta)
        if int(s) != s or s < 1:
            raise ValueError("order s must be a positive integer")
        self.order = int(s)

    def base_kappa(self, x, y):
        imq_value, imq_gx, imq_gy, imq_div = super().base_kappa(x, y)
        si = self.sigma_inv
        si2 = self.sigma_inv2
        s = self.order
        dx = np.asarray(x, dtype=np.float64) - self.x_star
        dy = np.asarray(y, dtype=np.float64) - self.x_star
        sidx = si @ dx
        sidy = si @ dy
        vx = 1.0 + dx @ sidx
        vy = 1.0 + dy @ sidy
        num = 1.0 + dx @ sidy
        denom = vx ** (s / 2.0) * vy ** (s / 2.0)
        value = imq_value + num / denom
        grad_x = imq_gx + (sidy - s * num * sidx / vx) / denom
        grad_y = imq_gy + (sidx - s * num * sidy / vy) / denom
        div = imq_div + (
            self.tr_sigma_inv
            - s * (dx @ si2 @ dx) / vx
            - s * (dy @ si2 @ dy) / vy
            + s**2 * num * (dx @ si2 @ dy) / (vx * vy)
        ) / denom
        return value, grad_x, grad_y, div

    def _kappa_cross(self, blocks):
        kappa, dxk_sy, dyk_sx, dysi_dxk, dxsi_dyk, divk = self._imq_cross(blocks)
        s = self.order
        vx = (1.0 + blocks["ux"])[:, None]
        vy = (1.0 + blocks["uy"])[None, :]
        num = 1.0 + blocks["p11"]
        inv_denom = vx ** (-s / 2.0) * vy ** (-s / 2.0)
        scaled = num * inv_denom  # kappa_lin
        kappa += scaled
        dxk_sy += (blocks["b1sy"][None, :] - s * num * blocks["a1sy"] / vx) * inv_denom
        dyk_sx += (blocks["a1sx"][:, None] - s * num * blocks["b1sx"] / vy) * inv_denom
        dysi_dxk += (blocks["qy"][None, :] - s * num * blocks["p21"] / vx) * inv_denom
        dxsi_dyk += (blocks["qx"][:, None] - s * num * blocks["p21"] / vy) * inv_denom
        divk += (
            self.tr_sigma_inv
            - s * blocks["qx"][:, None] / vx
            - s * blocks["qy"][None, :] / vy
            + s**2 * num * blocks["p21"] / (vx * vy)
        ) * inv_denom
        return kappa, dxk_sy, dyk_sx, dysi_dxk, dxsi_dyk, divk

    def _diag_coeffs(self, delta, v, q, a1, a2):
        s = self.order
        beta = self.beta
        tr = self.tr_sigma_inv
        d = delta.shape[1]
        c0 = 1.0 + v ** (s - 1)
        c1 = (s - 1) * v[:, None] ** (s - 2) * a1
        c2 = ((s - 1) ** 2 * v ** (s - 1) - 1.0) * q / v**2 + tr * (1.0 + 2.0 * beta * v**s) / v
        gc0 = 2.0 * (s - 1) * v[:, None] ** (s - 2) * a1
        gc1 = 2.0 * (s - 1) * (s - 2) * v[:, None, None] ** (s - 3) * np.einsum(
            "ni,nj->nij", a1, a1
        ) + (s - 1) * v[:, None, None] ** (s - 2) * self.sigma_inv
        gc2 = (
            2.0 * (s - 1) ** 2 * (s - 3) * (v ** (s - 4) * q)[:, None] * a1
            + 2.0 * (s - 1) ** 2 * v[:, None] ** (s - 3) * a2
            + 4.0 * beta * tr * (s - 1) * v[:, None] ** (s - 2) * a1
            - 2.0 * v[:, None] ** (-2) * (a2 + tr * a1)
            + 4.0 * (v ** (-3) * q)[:, None] * a1
        )
        return c0, c1, c2, gc0, gc1, gc2

    def c1_squared(self, box_halfwidth=None, grid_points=129):
        """Numeric lower bound on a compact box around x*; advisory only.

        Minimum over a regular grid of the node value minus a first-order
        margin (cell radius times the local diagonal-gradient norm).  Not
        a proof: the bound is reported as checked numerically.
        """
        if box_halfwidth is None:
            box_halfwidth = 5.0
        d = self.dim
        if d > 3:
            raise ValueError("grid minoration supported only for d <= 3")
        if d == 3:
            grid_points = min(grid_points, 41)
        axes = [
            np.linspace(self.x_star[i] - box_halfwidth, self.x_star[i] + box_halfwidth, grid_points)
            for i in range(d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = self.diag_values(pts)
        grads = self.diag_grads(pts)
        cell = np.sqrt(d) * box_halfwidth / (grid_points - 1)
        lower = vals - cell * np.linalg.norm(grads, axis=1)
        return float(max(lower.min(), 0.0))


class ConstantKernel:
    """Degenerate kernel k(x, y) = value; a diagnostic and test double."""

    family = "constant"
    order = 1

    def __init__(self, value=1.0, dim=1):
        if value <= 0:
            raise ValueError("value must be positive")
        self.value = float(value)
        self.dim = dim

    def gram(self, x, y=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64))
        return np.full((x.shape[0], y.shape[0]), self.value)

    def __call__(self, x, y):
        return self.value

    def diag_values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.full(x.shape[0], self.value)

    def diag_grads(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.zeros_like(x)

    def diag(self, x):
        x = np.asarray(x, dtype=np.float64)
        return KernelDiagonal(value=self.value, grad=np.zeros_like(x))

    def c1_squared(self, box_halfwidth=None, grid_points=33):
        return self.value


def make_kernel(target, mode, family="langevin", s=3, beta=0.5):
    """Construct a Stein kernel by family name ('langevin' or 'kgm')."""
    family = family.lower()
    if family == "langevin":
        return LangevinKernel(target, mode, beta=beta)
    if family == "kgm":
        return KGMKernel(target, mode, s=s, beta=beta)
    raise ValueError(f"unknown kernel family {family!r}")


@dataclass
class AssumptionReport:
    """Numeric probe of the convergence-theorem assumptions; advisory only.

    The probes sample a shell of the given radius; nothing here is a proof.
    """

    family: str
    order: int
    in_theorem_scope: bool
    probe_radius: float
    probe_count: int
    c1_squared: float
    b1_candidate: float
    b2_candidate: float
    predicate_holds: bool
    predicate_text: str
    min_radius_for_b1: float | None = None
    notes: list = field(default_factory=list)

    def __str__(self):
        lines = [
            f"kernel family: {self.family} (order {self.order})",
            f"in theorem scope: {self.in_theorem_scope}",
            f"probe shell radius {self.probe_radius:g} with {self.probe_count} probes",
            f"C1^2 lower bound: {self.c1_squared:.6g}",
            f"b1 candidate (min eig of -hess log p on shell): {self.b1_candidate:.6g}",
            f"b2 candidate (max eig of differenced hess k_P on shell): {self.b2_candidate:.6g}",
            self.predicate_text,
        ]
        if self.min_radius_for_b1 is not None:
            lines.append(f"smallest probed radius with min eig >= b1: {self.min_radius_for_b1:.6g}")
        lines.extend(self.notes)
        return "\n".join(lines)


def _shell_points(center, radius, count, dim, rng):
    if dim == 1:
        signs = np.where(rng.random(count) < 0.5, -1.0, 1.0)
        return center + radius * signs[:, None]
    z = rng.standard_normal((count, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return center + radius * z


def _diag_hessian_fd(kernel, x, h=1e-5):
    """Central-difference Hessian of x -> k_P(x) from the analytic gradient."""
    d = x.shape[0]
    hess = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        gp = kernel.diag_grads((x + e)[None, :])[0]
        gm = kernel.diag_grads((x - e)[None, :])[0]
        hess[i] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def check_theorem_assumptions(
    kernel, probe_radius, probe_count=64, *, b1=None, seed=0, box_halfwidth=None
):
    """Numerically probe the strong-consistency assumptions on a shell.

    Reports the minimum eigenvalue of -hess log p (a curvature lower bound
    candidate b1), the maximum eigenvalue of the numerically differenced
    Hessian of the kernel diagonal (a candidate b2), a lower bound on
    inf k_P, and the predicate b2 < 2 b1 C1^2.  When ``b1`` is supplied,
    a geometric radius scan reports the smallest probed radius at which
    the curvature bound holds.  Sampling-based; advisory, not a proof.
    """
    if probe_radius <= 0:
        raise ValueError("probe_radius must be positive")
    rng = np.random.default_rng(seed)
    target = kernel.target
    dim = kernel.dim
    pts = _shell_points(kernel.x_star, probe_radius, probe_count, dim, rng)
    hesses = target.hessian_log_density(pts)
    b1_candidate = float(min(np.linalg.eigvalsh(-h).min() for h in hesses))
    b2_candidate = float(
        max(np.linalg.eigvalsh(_diag_hessian_fd(kernel, p)).max() for p in pts)
    )
    c1sq = kernel.c1_squared(box_halfwidth=box_halfwidth)
    bound = 2.0 * b1_candidate * c1sq
    holds = bool(b2_candidate < bound)
    text = f"predicate b2 < 2*b1*C1^2: {b2_candidate:.6g} < {bound:.6g}: {holds}"
    notes = []
    in_scope = not (kernel.family == "kgm" and kernel.order >= 2)
    if not in_scope:
        notes.append(
            f"kernel kgm with order {kernel.order} is outside the scope of the "
            "consistency theorem (orders >= 2 are not covered)"
        )
    min_radius = None
    if b1 is not None:
        radii = np.geomspace(probe_radius / 1e3, probe_radius * 1e3, 121)
        for r in radii:
            shell = _shell_points(kernel.x_star, r, probe_count, dim, rng)
            min_eig = min(np.linalg.eigvalsh(-h).min() for h in target.hessian_log_density(shell))
            if min_eig >= b1:
                min_radius = float(r)
                break
    return AssumptionReport(
        family=kernel.family,
        order=kernel.order,
        in_theorem_scope=in_scope,
        probe_radius=float(probe_radius),
        probe_count=int(probe_count),
        c1_squared=float(c1sq),
        b1_candidate=b1_candidate,
        b2_candidate=b2_candidate,
        predicate_holds=holds,
        predicate_text=text,
        min_radius_for_b1=min_radius,
        notes=notes,
    )
