"""Analytic velocity fields for straight-line flows over Gaussian mixtures.

The flow interpolates ``x_t = (1 - t) * x0 + t * x1`` between a standard
Gaussian source ``x0`` and an isotropic-Gaussian-mixture target ``x1``.  For
such targets the marginal velocity ``E[x1 - x0 | x_t = x]`` has a closed form,
so these fields act as exact stand-ins for learned velocity estimators.  The
module also provides band-limited sinusoidal perturbations that model
estimator error with a known spectral footprint.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianMixture",
    "AnalyticFlowField",
    "Lattice",
    "GridField",
    "BandNoise",
    "SinusoidField",
    "PerturbedField",
    "LinearField",
    "oracle_velocity",
    "monte_carlo_velocity",
    "marginal_std",
    "sample_mixture",
    "sample_on_grid",
    "inject_band_noise",
    "band_limited_field",
]

_WEIGHT_TOL = 1e-12

# Integration must stop short of t = 1: the conditional velocity toward a
# near-deterministic target diverges like 1 / (1 - t).
DEFAULT_TIME_EPS = 1e-3


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted mixture of isotropic Gaussians used as a flow target.

    Weights must be strictly positive and sum to one; stds strictly positive.
    JSON layout (``from_dict`` / ``to_dict``)::

        {"dimension": D, "components": [{"weight": w, "mean": [...], "std": s}, ...]}
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        m = _readonly(np.atleast_2d(self.means))
        s = _readonly(self.stds)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("mixture needs at least one component")
        if m.shape[0] != w.size or s.shape != w.shape:
            raise ValueError("weights, means, and stds must have matching component counts")
        if not (np.isfinite(w).all() and np.isfinite(m).all() and np.isfinite(s).all()):
            raise ValueError("mixture parameters must be finite")
        if (w <= 0).any():
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL}, got {w.sum()!r}")
        if (s <= 0).any():
            raise ValueError("stds must be strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def dimension(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    @classmethod
    def from_components(cls, components):
        """Build from an iterable of ``(weight, mean, std)`` triples."""
        weights, means, stds = zip(*components)
        return cls(np.asarray(weights), np.asarray(means, dtype=float), np.asarray(stds))

    @classmethod
    def from_dict(cls, spec):
        dim = int(spec["dimension"])
        comps = spec["components"]
        means = np.array([c["mean"] for c in comps], dtype=float)
        if means.shape != (len(comps), dim):
            raise ValueError("component means inconsistent with declared dimension")
        return cls(
            np.array([c["weight"] for c in comps], dtype=float),
            means,
            np.array([c["std"] for c in comps], dtype=float),
        )

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "components": [
                {"weight": float(w), "mean": [float(v) for v in mu], "std": float(s)}
                for w, mu, s in zip(self.weights, self.means, self.stds)
            ],
        }

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps(self.to_dict())


def _check_time(t):
    if not (0.0 <= t < 1.0):
        raise ValueError(f"flow time must lie in [0, 1), got {t}")


def oracle_velocity(mixture, x, t):
    """Closed-form marginal velocity of the straight-line flow at ``(x, t)``.

    The time-t marginal of component j is Gaussian with mean ``t * mu_j`` and
    isotropic variance ``s_j^2 = (1 - t)^2 + t^2 sigma_j^2``.  Conditioning on
    the interpolant gives the per-component velocity

        ``mu_j + (t sigma_j^2 - (1 - t)) / s_j^2 * (x - t mu_j)``

    and the marginal velocity is the responsibility-weighted sum.  ``x`` may
    carry leading batch axes; the trailing axis must equal the mixture
    dimension.
    """
    _check_time(t)
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (mixture.dimension,):
        raise ValueError(f"state must have trailing dimension {mixture.dimension}")
    if not np.isfinite(x).all():
        raise ValueError("state must be finite")

    a = 1.0 - t
    var = a * a + (t * t) * mixture.stds**2                     # (J,)
    diff = x[..., None, :] - t * mixture.means                  # (..., J, D)
    sq = np.einsum("...jd,...jd->...j", diff, diff)
    log_resp = (
        np.log(mixture.weights)
        - 0.5 * mixture.dimension * np.log(2.0 * np.pi * var)
        - sq / (2.0 * var)
    )
    log_resp -= log_resp.max(axis=-1, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=-1, keepdims=True)

    coef = (t * mixture.stds**2 - a) / var                      # (J,)
    comp_v = mixture.means + coef[:, None] * diff               # (..., J, D)
    return np.einsum("...j,...jd->...d", resp, comp_v)


def marginal_std(mixture, t):
    """Root-mean per-coordinate std of the time-t interpolant marginal."""
    _check_time(t)
    a = 1.0 - t
    var = a * a + (t * t) * mixture.stds**2
    mean_t = t * mixture.means
    mu = mixture.weights @ mean_t
    per_coord = mixture.weights @ (var[:, None] + mean_t**2) - mu**2
    return float(np.sqrt(per_coord.mean()))


def monte_carlo_velocity(mixture, x, t, n=1_000_000, bandwidth=None, seed=0,
                         min_effective=50.0):
    """Kernel-weighted Monte-Carlo estimate of the marginal velocity at ``(x, t)``.

    Draws ``n`` independent ``(x0, x1)`` pairs, weights each by a Gaussian
    kernel on the distance between its interpolant and ``x``, and returns the
    weighted mean of ``x1 - x0`` together with a per-component standard error.

    ``bandwidth`` defaults to 0.1 times the marginal std at time t, which
    balances kernel bias against variance around n = 10^6.  Raises
    ``RuntimeError`` when the effective sample size ``(sum w)^2 / sum w^2``
    falls below ``min_effective`` (no samples near ``x``).
    """
    _check_time(t)
    if n < 10_000:
        raise ValueError("need at least 10^4 samples for a usable estimate")
    x = np.asarray(x, dtype=float).reshape(mixture.dimension)
    if bandwidth is None:
        bandwidth = 0.1 * marginal_std(mixture, t)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")

    rng = np.random.default_rng(seed)
    comp = rng.choice(mixture.n_components, size=n, p=mixture.weights)
    x0 = rng.standard_normal((n, mixture.dimension))
    x1 = mixture.means[comp] + mixture.stds[comp, None] * rng.standard_normal(
        (n, mixture.dimension)
    )
    xt = (1.0 - t) * x0 + t * x1

    log_w = -((xt - x) ** 2).sum(axis=1) / (2.0 * bandwidth**2)
    w = np.exp(log_w - log_w.max())
    w_sum = w.sum()
    n_eff = w_sum**2 / (w**2).sum()
    if n_eff < min_effective:
        raise RuntimeError(
            f"effective sample weight {n_eff:.1f} below floor {min_effective}; "
            "no samples near the query point"
        )

    y = x1 - x0
    v_hat = (w[:, None] * y).sum(axis=0) / w_sum
    resid = y - v_hat
    stderr = np.sqrt((w[:, None] ** 2 * resid**2).sum(axis=0)) / w_sum
    return v_hat, stderr


def sample_mixture(mixture, n, seed):
    """Draw ``n`` points from the mixture, shape ``(n, dimension)``."""
    rng = np.random.default_rng(seed)
    comp = rng.choice(mixture.n_components, size=n, p=mixture.weights)
    z = rng.standard_normal((n, mixture.dimension))
    return mixture.means[comp] + mixture.stds[comp, None] * z


@dataclass(frozen=True, eq=False)
class LinearField:
    """Affine, time-independent velocity field ``v(x) = A x + b``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        a = _readonly(np.atleast_2d(self.matrix))
        b = _readonly(np.atleast_1d(self.offset))
        if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
            raise ValueError("matrix must be square and match the offset length")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "offset", b)

    @property
    def dimension(self):
        return self.offset.shape[0]

    def velocity(self, x, t=0.0):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset


_ROLES = ("observation", "semantic")


@dataclass(frozen=True, eq=False)
class AnalyticFlowField:
    """Exact mixture-flow velocity field tagged with its conditioning role."""

    target: GaussianMixture
    role: str = "observation"

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}")

    @property
    def dimension(self):
        return self.target.dimension

    def velocity(self, x, t):
        return oracle_velocity(self.target, x, t)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Regular sampling lattice: per-axis site counts, physical spacing, origin.

    Frequencies throughout the package are quoted in cycles per lattice unit
    (one unit = one site step), so the per-axis Nyquist frequency is 0.5.
    """

    extents: tuple
    spacing: tuple = 1.0
    origin: tuple = 0.0

    def __post_init__(self):
        ext = self.extents
        if np.isscalar(ext):
            ext = (ext,)
        ext = tuple(int(e) for e in ext)
        if any(e < 1 for e in ext):
            raise ValueError("lattice extents must be positive")
        d = len(ext)

        def _per_axis(v, name):
            if np.isscalar(v):
                v = (float(v),) * d
            v = tuple(float(x) for x in v)
            if len(v) != d:
                raise ValueError(f"{name} must be scalar or one value per axis")
            return v

        spacing = _per_axis(self.spacing, "spacing")
        if any(h <= 0 for h in spacing):
            raise ValueError("spacing must be positive")
        origin = _per_axis(self.origin, "origin")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def site_count(self):
        return int(np.prod(self.extents))

    nyquist = 0.5

    def axes(self):
        return [
            o + h * np.arange(n)
            for o, h, n in zip(self.origin, self.spacing, self.extents)
        ]

    def positions(self):
        """Site coordinates, shape ``extents + (dim,)``."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    def to_lattice_coords(self, x):
        x = np.asarray(x, dtype=float)
        return (x - np.asarray(self.origin)) / np.asarray(self.spacing)


_GRID_MAGIC = b"GRDFLD01"


@dataclass(frozen=True, eq=False)
class GridField:
    """Velocity samples on a regular lattice at a fixed flow time.

    ``values`` has shape ``lattice.extents + (C,)``, one velocity vector per
    site.  Instances are immutable; all operations return new fields.
    """

    lattice: Lattice
    t: float
    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        expected = tuple(self.lattice.extents)
        if vals.ndim != len(expected) + 1 or vals.shape[:-1] != expected:
            raise ValueError(
                f"values shape {vals.shape} does not match lattice extents {expected}"
            )
        if vals.shape[-1] < 1:
            raise ValueError("values need at least one velocity component")
        if not np.isfinite(vals).all():
            raise ValueError("grid values must be finite")
        if not (0.0 <= self.t <= 1.0):
            raise ValueError("time stamp must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def n_components(self):
        return self.values.shape[-1]

    def velocity(self, x, t=None):
        """Evaluate at exact lattice sites only (no interpolation)."""
        idx = self.lattice.to_lattice_coords(x)
        nearest = np.rint(idx)
        if not np.allclose(idx, nearest, atol=1e-9):
            raise ValueError("GridField evaluation requires exact lattice sites")
        nearest = nearest.astype(int)
        if (nearest < 0).any() or (nearest >= np.asarray(self.lattice.extents)).any():
            raise ValueError("lattice site out of bounds")
        return self.values[tuple(np.moveaxis(nearest, -1, 0))]

    # Binary layout (little-endian): magic "GRDFLD01", int32 dim, int32
    # components, int32 extents[dim], float64 spacing[dim], float64
    # origin[dim], float64 t, float64 values in C (row-major) order.
    def to_binary(self, path):
        d = self.lattice.dim
        with open(path, "wb") as fh:
            fh.write(_GRID_MAGIC)
            fh.write(struct.pack("<ii", d, self.n_components))
            fh.write(struct.pack(f"<{d}i", *self.lattice.extents))
            fh.write(struct.pack(f"<{d}d", *self.lattice.spacing))
            fh.write(struct.pack(f"<{d}d", *self.lattice.origin))
            fh.write(struct.pack("<d", self.t))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path):
        with open(path, "rb") as fh:
            if fh.read(8) != _GRID_MAGIC:
                raise ValueError("not a grid-field file")
            d, c = struct.unpack("<ii", fh.read(8))
            extents = struct.unpack(f"<{d}i", fh.read(4 * d))
            spacing = struct.unpack(f"<{d}d", fh.read(8 * d))
            origin = struct.unpack(f"<{d}d", fh.read(8 * d))
            (t,) = struct.unpack("<d", fh.read(8))
            count = int(np.prod(extents)) * c
            vals = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(extents + (c,))
        return cls(Lattice(extents, spacing, origin), t, vals)

    def to_csv(self, path):
        """Plain-text export for small fields: index columns then components."""
        d = self.lattice.dim
        header = [f"i{k}" for k in range(d)] + [f"v{k}" for k in range(self.n_components)]
        lines = ["# " + json.dumps({
            "extents": list(self.lattice.extents),
            "spacing": list(self.lattice.spacing),
            "origin": list(self.lattice.origin),
            "t": self.t,
        })]
        lines.append(",".join(header))
        flat = self.values.reshape(-1, self.n_components)
        for pos, row in zip(np.ndindex(*self.lattice.extents), flat):
            lines.append(",".join([str(i) for i in pos] + [repr(float(v)) for v in row]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            meta = json.loads(fh.readline().lstrip("# "))
            fh.readline()
            data = np.array(
                [[float(v) for v in line.split(",")] for line in fh if line.strip()]
            )
        extents = tuple(meta["extents"])
        d = len(extents)
        vals = data[:, d:].reshape(extents + (-1,))
        return cls(Lattice(extents, meta["spacing"], meta["origin"]), meta["t"], vals)


def sample_on_grid(field, lattice, t):
    """Evaluate a velocity field at every site of ``lattice`` into a GridField."""
    if t >= 1.0:
        raise ValueError("cannot sample at t >= 1")
    if any(e < 4 for e in lattice.extents):
        raise ValueError("lattice extents must be at least 4 per axis")
    values = field.velocity(lattice.positions(), t)
    return GridField(lattice, t, values)


def _draw_wave_bank(lattice, components, n_waves, f_low, f_high, seed):
    """Integer DFT-bin frequency vectors with radial frequency in (f_low, f_high].

    Frequencies sit on exact bins of ``lattice`` so that sampled waves carry
    all their energy in-band; axis bins stay strictly inside Nyquist.
    """
    rng = np.random.default_rng(seed)
    extents = np.asarray(lattice.extents)
    caps = np.maximum(extents // 2 - 1, 0)
    if f_high is None:
        f_high = float(np.sqrt(((caps / extents) ** 2).sum()))
    freqs = np.empty((components, n_waves, lattice.dim), dtype=int)
    for c in range(components):
        got = 0
        for _ in range(200_000):
            if got == n_waves:
                break
            cand = rng.integers(-caps, caps + 1)
            radial = float(np.sqrt(((cand / extents) ** 2).sum()))
            if f_low < radial <= f_high:
                freqs[c, got] = cand
                got += 1
        else:
            raise ValueError(
                f"no lattice frequency bins available in ({f_low}, {f_high}]"
            )
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(components, n_waves))
    return freqs, phases


@dataclass(frozen=True, eq=False)
class BandNoise:
    """Random-phase sinusoid bank on exact DFT bins of a verification lattice.

    Evaluates anywhere in space as the continuous extension of the lattice
    waves; the amplitude parameter equals the RMS value of the bank.
    """

    lattice: Lattice
    eta: float
    amplitude: float
    seed: int
    freqs: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs", _readonly(self.freqs, dtype=int))
        object.__setattr__(self, "phases", _readonly(self.phases))

    @property
    def n_waves(self):
        return self.freqs.shape[1]

    def __call__(self, x):
        u = self.lattice.to_lattice_coords(x)
        cycles = self.freqs / np.asarray(self.lattice.extents)      # (C, M, D)
        arg = 2.0 * np.pi * np.einsum("cmd,...d->...cm", cycles, u) + self.phases
        scale = self.amplitude * np.sqrt(2.0 / self.n_waves)
        return scale * np.sin(arg).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class SinusoidField:
    """Static synthetic velocity field built from a sinusoid bank."""

    waves: BandNoise

    @property
    def dimension(self):
        return self.waves.lattice.dim

    def velocity(self, x, t=0.0):
        return self.waves(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class PerturbedField:
    """Base velocity field plus band-limited sinusoidal noise above a cutoff.

    With zero amplitude the evaluation is bitwise identical to the base.
    """

    base: object
    noise: BandNoise

    def velocity(self, x, t):
        v = self.base.velocity(x, t)
        if self.noise.amplitude == 0.0:
            return v
        return v + self.noise(np.asarray(x, dtype=float))


def _field_dimension(f):
    dim = getattr(f, "dimension", None)
    if dim is None and hasattr(f, "lattice"):
        dim = f.lattice.dim
    if dim is None:
        raise ValueError("cannot infer state dimension of the field")
    return int(dim)


def inject_band_noise(field, eta, amplitude, seed, lattice=None, n_waves=8):
    """Attach high-frequency sinusoidal noise (radial frequency > ``eta``).

    ``lattice`` declares the verification lattice whose DFT certifies band
    membership; it defaults to 64 sites per axis with unit spacing.  ``eta``
    must lie below the lattice Nyquist frequency (0.5 cycles per unit).
    """
    dim = _field_dimension(field)
    if lattice is None:
        lattice = Lattice((64,) * dim)
    if lattice.dim != dim:
        raise ValueError("verification lattice dimension must match the field")
    if eta >= Lattice.nyquist:
        raise ValueError("cutoff must lie below the lattice Nyquist frequency (0.5)")
    if eta <= 0:
        raise ValueError("cutoff must be positive")
    freqs, phases = _draw_wave_bank(lattice, dim, n_waves, eta, None, seed)
    noise = BandNoise(lattice, eta, float(amplitude), seed, freqs, phases)
    return PerturbedField(field, noise)


def band_limited_field(lattice, max_eta, amplitude, seed, n_waves=6):
    """Synthetic velocity field with all spectral energy at or below ``max_eta``."""
    if not 0 < max_eta <= Lattice.nyquist:
        raise ValueError("max_eta must lie in (0, 0.5]")
    freqs, phases = _draw_wave_bank(lattice, lattice.dim, n_waves, 0.0, max_eta, seed)
    waves = BandNoise(lattice, max_eta, float(amplitude), seed, freqs, phases)
    return SinusoidField(waves)
