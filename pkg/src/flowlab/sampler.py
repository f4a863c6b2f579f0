"""Euler integration of the dual-branch guided flow ODE.

Each step evaluates the observation branch and the (optionally relaxed)
prior branch on the same state, then blends them with the gate schedule
``alpha_k`` or, when per-coordinate visibility weights are attached, with the
visibility-gated interpolation.  Trajectories keep full per-step telemetry of
both branch velocities so that path errors and stability bounds can be
evaluated after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowfield import DEFAULT_TIME_EPS
from .relaxation import SmoothedField

__all__ = [
    "Schedule",
    "Trajectory",
    "BranchPair",
    "SamplerError",
    "alpha_schedule",
    "euler_step",
    "blend_step",
    "visibility_blend",
    "integrate",
    "batch_sample",
]

MODES = ("observation_only", "standard", "relaxflow")

# Slack when flooring rho * K, so that e.g. rho = 0.7, K = 10 lands on 7.
_FLOOR_SLACK = 1e-9


class SamplerError(RuntimeError):
    pass


def _cutoff_step(K, rho):
    return math.floor(rho * K + _FLOOR_SLACK)


def alpha_schedule(k, K, rho):
    """Linear-cutoff gate: ``1 - k/K`` while ``k <= floor(rho K)``, else 0."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0 <= k <= K:
        raise ValueError("step index must lie in [0, K]")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("cutoff fraction must lie in [0, 1]")
    if k > _cutoff_step(K, rho):
        return 0.0
    return min(max(1.0 - k / K, 0.0), 1.0)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Uniform Euler grid on ``[0, t_end]`` with the per-step gate ``alpha_k``.

    ``t_end`` defaults to ``1 - 1e-3`` because mixture-flow velocities toward
    near-deterministic targets diverge at t = 1.
    """

    K: int
    rho: float
    t_end: float = 1.0 - DEFAULT_TIME_EPS

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("cutoff fraction must lie in [0, 1]")
        if not 0.0 < self.t_end <= 1.0:
            raise ValueError("t_end must lie in (0, 1]")

    @property
    def dt(self):
        return self.t_end / self.K

    @property
    def times(self):
        return self.dt * np.arange(self.K + 1)

    @property
    def alphas(self):
        """Gate values for steps 0 .. K-1."""
        return np.array([alpha_schedule(k, self.K, self.rho) for k in range(self.K)])

    def alpha_at(self, k):
        return alpha_schedule(k, self.K, self.rho)


def _as_provider(obj):
    if hasattr(obj, "velocity"):
        return obj.velocity
    if callable(obj):
        return obj
    raise TypeError("velocity provider must expose .velocity(x, t) or be callable")


@dataclass(frozen=True, eq=False)
class BranchPair:
    """Observation and prior velocity providers plus the relaxation strength.

    ``sigma > 0`` wraps the prior in a ``SmoothedField`` with tap spacing
    ``relax_step``.  ``weights``, when given, are per-coordinate visibility
    weights in (0, 1] applied by relaxflow-mode integration.
    """

    observation: object
    prior: object
    sigma: float = 0.0
    relax_step: float = 1.0
    weights: np.ndarray = None

    def __post_init__(self):
        _as_provider(self.observation)
        _as_provider(self.prior)
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if ((w <= 0) | (w > 1)).any():
                raise ValueError("visibility weights must lie in (0, 1]")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def relaxed_prior(self):
        if self.sigma == 0:
            return self.prior
        return SmoothedField(self.prior, self.sigma, self.relax_step)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Eulerian rollout with per-step telemetry of both branch velocities.

    ``states[k + 1] == states[k] + dt * v_blend[k]`` exactly, so the rollout
    can be replayed bitwise from the stored velocities.
    """

    times: np.ndarray
    states: np.ndarray
    v_obs: np.ndarray
    v_prior: np.ndarray
    v_blend: np.ndarray
    alphas: np.ndarray
    dt: float
    mode: str

    def __post_init__(self):
        for name in ("times", "states", "v_obs", "v_prior", "v_blend", "alphas"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        K = self.states.shape[0] - 1
        if not (self.v_obs.shape[0] == self.v_prior.shape[0]
                == self.v_blend.shape[0] == self.alphas.shape[0] == K):
            raise ValueError("telemetry arrays must cover exactly K steps")

    @property
    def K(self):
        return self.states.shape[0] - 1

    def replay(self):
        """Recompute the states from the stored blended velocities."""
        states = np.empty_like(self.states)
        states[0] = self.states[0]
        for k in range(self.K):
            states[k + 1] = states[k] + self.dt * self.v_blend[k]
        return states

    def to_csv(self, path):
        """Columns: step, t, state, both branch velocities, alpha (blank on the last row)."""
        d = self.states.shape[1]
        cols = (
            ["step", "t"]
            + [f"x{i}" for i in range(d)]
            + [f"v_obs{i}" for i in range(d)]
            + [f"v_prior{i}" for i in range(d)]
            + ["alpha"]
        )
        lines = [",".join(cols)]
        for k in range(self.K + 1):
            row = [str(k), repr(float(self.times[k]))]
            row += [repr(float(v)) for v in self.states[k]]
            if k < self.K:
                row += [repr(float(v)) for v in self.v_obs[k]]
                row += [repr(float(v)) for v in self.v_prior[k]]
                row += [repr(float(self.alphas[k]))]
            else:
                row += [""] * (2 * d + 1)
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def euler_step(x, dt, v):
    """Single explicit Euler update ``x + dt * v``; inputs must be finite."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.isfinite(x).all() and np.isfinite(v).all() and np.isfinite(dt)):
        raise ValueError("euler_step requires finite inputs")
    return x + dt * v


def visibility_blend(v_obs, v_prior, m, alpha):
    """Visibility-gated velocity ``v_obs + (1 - m) * alpha * (v_prior - v_obs)``."""
    m = np.asarray(m, dtype=float)
    if ((m <= 0) | (m > 1)).any():
        raise ValueError("visibility weights must lie in (0, 1]")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    v_obs = np.asarray(v_obs, dtype=float)
    v_prior = np.asarray(v_prior, dtype=float)
    return v_obs + (1.0 - m) * alpha * (v_prior - v_obs)


def _blend(mode, v_obs, v_prior, alpha, weights):
    if mode == "observation_only":
        return v_obs
    if mode == "standard":
        return v_prior
    if weights is not None:
        return visibility_blend(v_obs, v_prior, weights, alpha)
    return (1.0 - alpha) * v_obs + alpha * v_prior


def _rollout(branches, schedule, x0, mode):
    """Shared Euler loop; ``x0`` may carry a leading batch axis."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    obs = _as_provider(branches.observation)
    # Standard mode reuses the raw prior field for both blend terms, which
    # collapses the blend to that single field; no relaxation is applied.
    prior = _as_provider(
        branches.prior if mode == "standard" else branches.relaxed_prior()
    )
    x = np.asarray(x0, dtype=float)
    if not np.isfinite(x).all():
        raise SamplerError("initial state is not finite")

    K, dt = schedule.K, schedule.dt
    times = schedule.times
    alphas = schedule.alphas
    states = np.empty((K + 1,) + x.shape)
    v_obs_hist = np.empty((K,) + x.shape)
    v_prior_hist = np.empty((K,) + x.shape)
    v_blend_hist = np.empty((K,) + x.shape)
    states[0] = x
    for k in range(K):
        # Both branches see the same state x_k.
        v_obs = obs(x, times[k])
        v_prior = prior(x, times[k])
        v = _blend(mode, v_obs, v_prior, alphas[k], branches.weights)
        x = x + dt * v
        if not np.isfinite(x).all():
            raise SamplerError(f"non-finite state encountered at step {k}")
        states[k + 1] = x
        v_obs_hist[k] = v_obs
        v_prior_hist[k] = v_prior
        v_blend_hist[k] = v
    return times, states, v_obs_hist, v_prior_hist, v_blend_hist, alphas


def blend_step(x, k, branches, schedule, mode="relaxflow"):
    """One gated Euler update from state ``x`` at step ``k``; returns the new state."""
    obs = _as_provider(branches.observation)
    prior = _as_provider(
        branches.prior if mode == "standard" else branches.relaxed_prior()
    )
    t_k = schedule.times[k]
    v_obs = obs(x, t_k)
    v_prior = prior(x, t_k)
    v = _blend(mode, v_obs, v_prior, schedule.alpha_at(k), branches.weights)
    return euler_step(x, schedule.dt, v)


def integrate(branches, schedule, x0, mode="relaxflow"):
    """Integrate one trajectory, recording both branch velocities at every step."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("integrate expects a single state vector")
    times, states, v_obs, v_prior, v_blend, alphas = _rollout(
        branches, schedule, x0, mode
    )
    return Trajectory(times, states, v_obs, v_prior, v_blend, alphas, schedule.dt, mode)


def batch_sample(branches, schedule, n, seed, dim, mode="relaxflow"):
    """Push ``n`` seeded standard-Gaussian initializations through the flow.

    Returns the final states, shape ``(n, dim)``; trajectories run in lockstep
    so results are independent of any batching or scheduling order.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, dim))
    _, states, *_ = _rollout(branches, schedule, x0, mode)
    return states[-1]
