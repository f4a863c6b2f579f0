"""Minimal cross-attention with separable Gaussian blurring of pre-softmax logits.

The blur runs along the query index first and the key index second (the two
commute for separable kernels).  When the key sequence is a concatenation of
several prior sequences, the key-axis blur is applied within each prior's
segment only: tokens from different priors belong to different grids, and
keeping the segments separate is what makes N identical priors reproduce the
single-prior output exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .relaxation import _renorm_convolve, make_kernel

__all__ = [
    "TokenSequence",
    "LogitMatrix",
    "ToyVelocityHead",
    "HeadField",
    "cross_attention",
    "logits_of",
    "blur_logits",
    "relaxed_attention",
    "concat_priors",
    "toy_velocity_head",
]


def _readonly(a):
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Tokens of shape ``(n, d)`` with per-token origin tags and blur segments.

    ``segment_ids`` partition the sequence into contiguous blur segments; a
    sequence built directly is a single segment, while ``concat_priors``
    assigns one segment per concatenated prior.
    """

    tokens: np.ndarray
    origins: tuple
    segment_ids: tuple = None

    def __post_init__(self):
        tokens = _readonly(np.atleast_2d(self.tokens))
        if tokens.size == 0 or tokens.shape[1] < 1:
            raise ValueError("token sequence must be non-empty with dimension >= 1")
        if not np.isfinite(tokens).all():
            raise ValueError("tokens must be finite")
        origins = self.origins
        if isinstance(origins, str):
            origins = (origins,) * tokens.shape[0]
        origins = tuple(origins)
        if len(origins) != tokens.shape[0]:
            raise ValueError("need one origin tag per token")
        segments = self.segment_ids
        if segments is None:
            segments = (0,) * tokens.shape[0]
        segments = tuple(int(s) for s in segments)
        if len(segments) != tokens.shape[0]:
            raise ValueError("need one segment id per token")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "segment_ids", segments)

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def dim(self):
        return self.tokens.shape[1]

    @classmethod
    def observation(cls, tokens):
        return cls(tokens, "observation")

    @classmethod
    def prior(cls, tokens, index=0):
        return cls(tokens, f"prior{index}")

    @classmethod
    def from_csv(cls, path, origin="observation"):
        """One token per row, comma-separated components."""
        tokens = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(tokens, origin)

    def to_csv(self, path):
        with open(path, "w") as fh:
            for row in self.tokens:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    def segments(self):
        """Contiguous (start, stop) runs of equal segment id."""
        ids = self.segment_ids
        runs, start = [], 0
        for i in range(1, len(ids) + 1):
            if i == len(ids) or ids[i] != ids[start]:
                runs.append((start, i))
                start = i
        return runs


@dataclass(frozen=True, eq=False)
class LogitMatrix:
    """Pre-softmax attention scores, queries along rows and keys along columns."""

    entries: np.ndarray

    def __post_init__(self):
        entries = _readonly(np.atleast_2d(self.entries))
        if entries.ndim != 2:
            raise ValueError("logits must form a 2-D matrix")
        if not np.isfinite(entries).all():
            raise ValueError("logits must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self):
        return self.entries.shape


def logits_of(queries, keys):
    """Scaled dot-product scores ``q_i . k_j / sqrt(d)`` as a LogitMatrix."""
    if queries.dim != keys.dim:
        raise ValueError("query and key dimensions must match")
    scores = queries.tokens @ keys.tokens.T / np.sqrt(queries.dim)
    return LogitMatrix(scores)


def _softmax(rows):
    shifted = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention(queries, keys, values):
    """Standard softmax attention; output carries the query origins."""
    if len(keys) != len(values):
        raise ValueError("need one value per key")
    if not (queries.dim == keys.dim == values.dim):
        raise ValueError("queries, keys, and values must share one dimension")
    weights = _softmax(logits_of(queries, keys).entries)
    return TokenSequence(weights @ values.tokens, queries.origins, queries.segment_ids)


def _blur_array(entries, sigma, key_segments=None):
    """Separable logit blur: query axis first, then key axis per segment."""
    taps = make_kernel(sigma).taps
    out = _renorm_convolve(entries, taps, axis=entries.ndim - 2)
    if key_segments is None:
        key_segments = [(0, entries.shape[-1])]
    pieces = out.copy()
    for start, stop in key_segments:
        pieces[..., start:stop] = _renorm_convolve(
            out[..., start:stop], taps, axis=entries.ndim - 1
        )
    return pieces


def blur_logits(logits, sigma):
    """Blur a logit matrix along the query axis, then along the key axis.

    ``sigma = 0`` is the identity and returns the input object unchanged.
    Both 1-D convolutions use the unit-sum Gaussian kernel with renormalized
    edges, so a constant matrix passes through exactly.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return logits
    return LogitMatrix(_blur_array(logits.entries, sigma))


def relaxed_attention(queries, keys, values, sigma):
    """Cross-attention computed from blurred logits.

    The key-axis blur respects the key sequence's segments, i.e. it never
    crosses a prior boundary produced by ``concat_priors``.
    """
    if sigma == 0:
        return cross_attention(queries, keys, values)
    if len(keys) != len(values):
        raise ValueError("need one value per key")
    if not (queries.dim == keys.dim == values.dim):
        raise ValueError("queries, keys, and values must share one dimension")
    blurred = _blur_array(logits_of(queries, keys).entries, sigma, keys.segments())
    weights = _softmax(blurred)
    return TokenSequence(weights @ values.tokens, queries.origins, queries.segment_ids)


def concat_priors(priors):
    """Concatenate prior token sequences in order, one blur segment per prior."""
    priors = list(priors)
    if not priors:
        raise ValueError("need at least one prior sequence")
    if len({p.dim for p in priors}) != 1:
        raise ValueError("all priors must share one token dimension")
    if len(priors) == 1:
        return priors[0]
    tokens = np.concatenate([p.tokens for p in priors], axis=0)
    origins = tuple(tag for p in priors for tag in p.origins)
    segments = tuple(i for i, p in enumerate(priors) for _ in range(len(p)))
    return TokenSequence(tokens, origins, segments)


@dataclass(frozen=True, eq=False)
class ToyVelocityHead:
    """Fixed random-projection attention head from (state, time, cond) to a velocity.

    Construction, all drawn once from ``seed`` with standard-normal entries
    scaled by 1/sqrt(fan-in):

    * ``n_queries`` query tokens, each a linear map of the feature vector
      ``[x, t]``;
    * key and value projections applied to the conditioning tokens;
    * an output projection from the concatenated attended tokens back to
      state dimension.

    Logits are blurred exactly as in ``relaxed_attention`` (query axis
    globally, key axis per conditioning segment).
    """

    state_dim: int
    cond_dim: int
    model_dim: int = 16
    n_queries: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.state_dim, self.cond_dim, self.model_dim, self.n_queries) < 1:
            raise ValueError("head dimensions must be positive")
        rng = np.random.default_rng(self.seed)
        feat = self.state_dim + 1
        w_query = rng.standard_normal((self.n_queries, self.model_dim, feat)) / np.sqrt(feat)
        w_key = rng.standard_normal((self.model_dim, self.cond_dim)) / np.sqrt(self.cond_dim)
        w_value = rng.standard_normal((self.model_dim, self.cond_dim)) / np.sqrt(self.cond_dim)
        w_out = rng.standard_normal(
            (self.state_dim, self.n_queries * self.model_dim)
        ) / np.sqrt(self.n_queries * self.model_dim)
        for name, w in [("w_query", w_query), ("w_key", w_key),
                        ("w_value", w_value), ("w_out", w_out)]:
            w.setflags(write=False)
            object.__setattr__(self, name, w)

    def velocity(self, x, t, cond, sigma=0.0):
        """Attend over ``cond`` from the encoded state; batched over leading axes of x."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state must have trailing dimension {self.state_dim}")
        if cond.dim != self.cond_dim:
            raise ValueError(f"cond tokens must have dimension {self.cond_dim}")
        feat = np.concatenate([x, np.full(x.shape[:-1] + (1,), float(t))], axis=-1)
        q = np.einsum("qmf,...f->...qm", self.w_query, feat)
        k = cond.tokens @ self.w_key.T
        v = cond.tokens @ self.w_value.T
        logits = np.einsum("...qm,nm->...qn", q, k) / np.sqrt(self.model_dim)
        if sigma > 0:
            logits = _blur_array(logits, sigma, cond.segments())
        weights = _softmax(logits)
        attended = np.einsum("...qn,nm->...qm", weights, v)
        flat = attended.reshape(attended.shape[:-2] + (self.n_queries * self.model_dim,))
        return flat @ self.w_out.T


def toy_velocity_head(x, t, cond, sigma, seed=0, model_dim=16, n_queries=4):
    """Evaluate a seeded toy head in one call; see ``ToyVelocityHead``."""
    x = np.asarray(x, dtype=float)
    head = ToyVelocityHead(x.shape[-1], cond.dim, model_dim, n_queries, seed)
    return head.velocity(x, t, cond, sigma)


@dataclass(frozen=True, eq=False)
class HeadField:
    """Sampler-compatible provider: a toy head bound to cond tokens and a blur."""

    head: ToyVelocityHead
    cond: TokenSequence
    sigma: float = 0.0

    @property
    def dimension(self):
        return self.head.state_dim

    def velocity(self, x, t):
        return self.head.velocity(x, t, self.cond, self.sigma)
