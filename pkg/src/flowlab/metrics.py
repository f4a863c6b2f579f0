"""Path errors, exact optimal transport, Frechet distance, stability bounds.

Quadrature everywhere is left-endpoint Riemann on the Euler grid, matching
the sampler's discretization so that path errors and bounds share the same
discretization error characteristics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

__all__ = [
    "PointSet",
    "ErrorReport",
    "StabilityBoundInputs",
    "GronwallHypothesisError",
    "path_error",
    "wasserstein2_exact",
    "wasserstein2_gaussian_1d",
    "frechet_distance",
    "stability_bound",
    "verify_gronwall",
]

OT_SIZE_CAP = 4096


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PointSet:
    """Finite point cloud of shape ``(n, dim)`` with optional seed provenance."""

    points: np.ndarray
    seed: int = None

    def __post_init__(self):
        pts = _readonly(np.atleast_2d(self.points))
        if pts.ndim != 2 or pts.size == 0:
            raise ValueError("point set must be a non-empty (n, dim) array")
        if not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _points(obj):
    if isinstance(obj, PointSet):
        return obj.points
    return PointSet(obj).points


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """Left-Riemann path-error quadrature: value equals sqrt(sum(integrand) * dt)."""

    which: str
    value: float
    integrand: np.ndarray
    dt: float
    rule: str = "left_riemann"

    def __post_init__(self):
        integrand = _readonly(self.integrand)
        if (integrand < 0).any():
            raise ValueError("squared-error integrand must be non-negative")
        recomputed = float(np.sqrt(integrand.sum() * self.dt))
        if abs(recomputed - self.value) > 1e-12 * max(1.0, abs(self.value)):
            raise ValueError("error value inconsistent with its quadrature sum")
        object.__setattr__(self, "integrand", integrand)

    def csv_row(self, experiment_id):
        return f"{experiment_id},{self.which},{self.rule},{self.value!r}"


def path_error(trajectory, oracle, estimator, which="sem"):
    """L2 path norm of ``oracle - estimator`` along a recorded trajectory.

    Both fields are evaluated at the trajectory's stored states and times
    (left endpoints); the estimator never sees its own rollout.
    """
    if which not in ("obs", "sem"):
        raise ValueError("which must be 'obs' or 'sem'")
    K = trajectory.K
    if trajectory.times.shape != (K + 1,):
        raise ValueError("trajectory telemetry is incomplete")
    integrand = np.empty(K)
    for k in range(K):
        x, t = trajectory.states[k], trajectory.times[k]
        diff = oracle.velocity(x, t) - estimator.velocity(x, t)
        integrand[k] = float((diff**2).sum())
    value = float(np.sqrt(integrand.sum() * trajectory.dt))
    return ErrorReport(which, value, integrand, trajectory.dt)


def wasserstein2_exact(a, b):
    """Exact W2 between equal-size uniform empirical measures.

    Solves the minimum-cost perfect matching under squared Euclidean cost and
    returns ``sqrt(cost / n)``.  Sizes must match and stay at or below
    ``OT_SIZE_CAP``; subsample larger sets up front (and report it) instead.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[0] != pb.shape[0]:
        raise ValueError("point sets must have equal sizes")
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("point sets must share a dimension")
    n = pa.shape[0]
    if n > OT_SIZE_CAP:
        raise ValueError(f"size {n} exceeds the exact-assignment cap {OT_SIZE_CAP}")
    cost = cdist(pa, pb, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / n))


def wasserstein2_gaussian_1d(mu1, sigma1, mu2, sigma2):
    """Closed-form W2 between 1-D Gaussians: sqrt((mu1-mu2)^2 + (s1-s2)^2)."""
    if sigma1 < 0 or sigma2 < 0:
        raise ValueError("standard deviations must be non-negative")
    return float(np.hypot(mu1 - mu2, sigma1 - sigma2))


def _psd_sqrt(matrix, tol):
    vals, vecs = np.linalg.eigh(matrix)
    if vals.min() < -tol:
        raise ValueError(
            f"matrix has eigenvalue {vals.min():.3e} below the clamp tolerance -{tol}"
        )
    vals = np.clip(vals, 0.0, None)
    return vecs, vals


def frechet_distance(a, b, clamp_tol=1e-8):
    """Frechet distance between Gaussians fitted to two feature point sets.

    ``|m_A - m_B|^2 + Tr(C_A + C_B - 2 (C_A C_B)^{1/2})`` with the matrix
    square root taken through the symmetrized product
    ``C_A^{1/2} C_B C_A^{1/2}`` by eigendecomposition; eigenvalues above
    ``-clamp_tol`` are clamped to zero and anything lower is an error.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("feature sets must share a dimension")
    d = pa.shape[1]
    if d > 64:
        raise ValueError("feature dimension capped at 64")
    if min(pa.shape[0], pb.shape[0]) <= d:
        raise ValueError("need more points than dimensions to fit covariances")

    mean_a, mean_b = pa.mean(axis=0), pb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(pa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(pb, rowvar=False))

    vecs, vals = _psd_sqrt(cov_a, clamp_tol)
    root_a = (vecs * np.sqrt(vals)) @ vecs.T
    product = root_a @ cov_b @ root_a
    product = 0.5 * (product + product.T)
    cross_vals = np.linalg.eigvalsh(product)
    if cross_vals.min() < -clamp_tol:
        raise ValueError(
            f"covariance product eigenvalue {cross_vals.min():.3e} below clamp tolerance"
        )
    cross = 2.0 * np.sqrt(np.clip(cross_vals, 0.0, None)).sum()

    shift = mean_a - mean_b
    return float(shift @ shift + np.trace(cov_a) + np.trace(cov_b) - cross)


@dataclass(frozen=True, eq=False)
class StabilityBoundInputs:
    """Constants feeding the trajectory-divergence bound.

    ``lip_obs`` and ``lip_prior`` are the (time-constant) Lipschitz constants
    of the observation and relaxed-prior estimators; ``e_obs`` / ``e_sem``
    are path errors of the two branches against their oracles, and
    ``cond_gap`` is the conditioning mismatch entering the prior term.
    """

    lip_obs: float
    lip_prior: float
    cond_gap: float
    e_obs: float
    e_sem: float
    schedule: object

    def __post_init__(self):
        for name in ("lip_obs", "lip_prior", "cond_gap", "e_obs", "e_sem"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def stability_bound(inputs, t):
    """Divergence bound at time ``t`` (snapped to the schedule grid).

    Evaluates ``((1 - a_t) E_obs + a_t E_sem + gap * int L~ ) * exp(int
    ((1 - a) L + a L~))`` with left-Riemann integrals over the Euler grid and
    the piecewise-constant extension of the discrete gate.
    """
    sched = inputs.schedule
    idx = int(round(t / sched.dt))
    if not 0 <= idx <= sched.K or abs(t - idx * sched.dt) > 1e-9:
        raise ValueError("t must land on the schedule grid")
    alphas = sched.alphas[:idx]
    quad = float(alphas.sum() * sched.dt)                 # int_0^t alpha
    t_quad = idx * sched.dt                               # int_0^t 1
    alpha_t = sched.alpha_at(idx)
    bracket = (
        (1.0 - alpha_t) * inputs.e_obs
        + alpha_t * inputs.e_sem
        + inputs.cond_gap * inputs.lip_prior * t_quad
    )
    growth = inputs.lip_obs * (t_quad - quad) + inputs.lip_prior * quad
    return float(bracket * np.exp(growth))


class GronwallHypothesisError(ValueError):
    """The integral hypothesis u <= K + int kappa u failed, not the conclusion."""

    def __init__(self, index, excess):
        super().__init__(
            f"integral hypothesis violated at grid index {index} by {excess:.3e}"
        )
        self.index = index
        self.excess = excess


def verify_gronwall(u, kappa, k_const, times, quad_tol=None):
    """Check the integral-inequality implication on sampled functions.

    First verifies the hypothesis ``u(t) <= K + int_0^t kappa u`` at every
    grid point (raising ``GronwallHypothesisError`` where it fails), then
    returns whether ``u(t) <= K exp(int_0^t kappa)`` holds everywhere, both
    up to a quadrature tolerance.  The default tolerance is the grid step
    times the range of ``kappa * u``, an upper bound on the left-Riemann
    error of the hypothesis integral.
    """
    u = np.asarray(u, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    times = np.asarray(times, dtype=float)
    if not (u.shape == kappa.shape == times.shape) or u.ndim != 1 or u.size < 2:
        raise ValueError("u, kappa, times must be equal-length 1-D arrays")
    if (u < 0).any() or (kappa < 0).any():
        raise ValueError("u and kappa must be non-negative")
    if k_const <= 0:
        raise ValueError("K must be positive")
    dts = np.diff(times)
    if (dts <= 0).any():
        raise ValueError("times must be strictly increasing")

    integrand = kappa * u
    if quad_tol is None:
        quad_tol = float(dts.max() * (integrand.max() - integrand.min()) + 1e-12)

    partial_iu = np.concatenate([[0.0], np.cumsum(integrand[:-1] * dts)])
    excess = u - (k_const + partial_iu)
    worst = int(np.argmax(excess))
    if excess[worst] > quad_tol:
        raise GronwallHypothesisError(worst, float(excess[worst]))

    partial_k = np.concatenate([[0.0], np.cumsum(kappa[:-1] * dts)])
    return bool((u <= k_const * np.exp(partial_k) + quad_tol).all())
