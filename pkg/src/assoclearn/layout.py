"""Index bookkeeping for multivariate categorical responses.

A response with q categorical components, the l-th taking J_l levels, lives
on the product space of all level combinations.  Joint effects are indexed
by subsets of the responses; the overall (grand-mean) effect is the empty
subset, written ``()`` internally and rendered as {0} / ``[]`` in files.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

# The overall effect: empty subset of responses.
OVERALL: tuple[int, ...] = ()

Effect = tuple[int, ...]


@dataclass(frozen=True)
class ResponseLayout:
    """Immutable description of the response shape and effect index space.

    Attributes
    ----------
    J : tuple of int
        Category counts per response, each >= 2.
    d : int
        Maximum joint-effect order retained (0 <= d <= q).
    effects : tuple of Effect
        All effect index sets of order <= d, overall effect first, then by
        ascending order and lexicographically within an order.  Responses
        are 0-based internally.
    dims : tuple of int
        Parameter count per effect: prod(J_l - 1) over members, 1 for ().
    offsets : tuple of int
        Start row of each effect block in the stacked coefficient matrix.
    """

    J: tuple[int, ...]
    d: int
    effects: tuple[Effect, ...]
    dims: tuple[int, ...]
    offsets: tuple[int, ...]

    @property
    def q(self) -> int:
        return len(self.J)

    @property
    def card(self) -> int:
        """Total number of joint categories."""
        return math.prod(self.J)

    @property
    def total_dim(self) -> int:
        return self.offsets[-1] + self.dims[-1]

    @property
    def n_effects(self) -> int:
        return len(self.effects)

    def index_of(self, effect: Effect) -> int:
        try:
            return self._index[tuple(sorted(effect))]
        except KeyError:
            raise KeyError(f"effect {format_effect(effect)} not in layout") from None

    def dim_of(self, effect: Effect) -> int:
        return self.dims[self.index_of(effect)]

    def offset_of(self, effect: Effect) -> int:
        return self.offsets[self.index_of(effect)]

    def rows_of(self, effect: Effect) -> slice:
        i = self.index_of(effect)
        return slice(self.offsets[i], self.offsets[i] + self.dims[i])

    def level_sizes(self) -> list[int]:
        """Parameter counts L_s per effect order s = 0..d."""
        sizes = [0] * (self.d + 1)
        for k, dim in zip(self.effects, self.dims):
            sizes[len(k)] += dim
        return sizes

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.effects)})


def build_layout(J, d: int) -> ResponseLayout:
    """Enumerate the effect index space for responses ``J`` up to order ``d``.

    The enumeration is deterministic: overall effect first, then effects of
    ascending order, lexicographic within each order.

    >>> build_layout((2, 3), 2).effects
    ((), (0,), (1,), (0, 1))
    """
    J = tuple(int(j) for j in J)
    if len(J) < 1:
        raise ValueError("need at least one response")
    if any(j < 2 for j in J):
        raise ValueError(f"every response needs >= 2 categories, got J={J}")
    q = len(J)
    d = int(d)
    if d < 0 or d > q:
        raise ValueError(f"max order d must satisfy 0 <= d <= {q}, got {d}")

    effects: list[Effect] = [OVERALL]
    for s in range(1, d + 1):
        effects.extend(itertools.combinations(range(q), s))

    dims = [int(math.prod(J[l] - 1 for l in k)) if k else 1 for k in effects]
    offsets = [0] * len(effects)
    for i in range(1, len(effects)):
        offsets[i] = offsets[i - 1] + dims[i - 1]
    return ResponseLayout(J=J, d=d, effects=tuple(effects), dims=tuple(dims),
                          offsets=tuple(offsets))


def vec_J(array: np.ndarray, layout: ResponseLayout | None = None) -> np.ndarray:
    """Flatten a q-way array with the first response index varying fastest."""
    array = np.asarray(array)
    if layout is not None and array.shape != layout.J:
        raise ValueError(f"array shape {array.shape} does not match J={layout.J}")
    return np.ravel(array, order="F")


def inv_vec_J(v: np.ndarray, layout: ResponseLayout) -> np.ndarray:
    """Inverse of :func:`vec_J`: reshape a length-|J| vector to a q-way array."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != layout.card:
        raise ValueError(f"expected vector of length {layout.card}, got shape {v.shape}")
    return np.reshape(v, layout.J, order="F")


def joint_index(codes, layout: ResponseLayout) -> int:
    """Position in vec order of the joint category with 0-based ``codes``."""
    codes = tuple(int(c) for c in codes)
    if len(codes) != layout.q:
        raise ValueError(f"need {layout.q} category codes, got {len(codes)}")
    idx, stride = 0, 1
    for c, j in zip(codes, layout.J):
        if not 0 <= c < j:
            raise ValueError(f"category code {c} out of range for {j} levels")
        idx += c * stride
        stride *= j
    return idx


def joint_codes(index: int, layout: ResponseLayout) -> tuple[int, ...]:
    """0-based category codes of the joint category at vec position ``index``."""
    if not 0 <= index < layout.card:
        raise ValueError(f"index {index} out of range for |J|={layout.card}")
    codes = []
    for j in layout.J:
        codes.append(index % j)
        index //= j
    return tuple(codes)


def format_effect(effect: Effect) -> str:
    """Render an effect with 1-based response labels; the overall effect as {0}."""
    if not effect:
        return "{0}"
    return "{" + ",".join(str(l + 1) for l in sorted(effect)) + "}"


def effect_to_json(effect: Effect) -> list[int]:
    """1-based list encoding used in files; the overall effect is []."""
    return [l + 1 for l in sorted(effect)]


def effect_from_json(spec) -> Effect:
    labels = [int(l) for l in spec]
    if any(l < 1 for l in labels):
        raise ValueError(f"effect entries are 1-based, got {spec}")
    return tuple(sorted(l - 1 for l in labels))
