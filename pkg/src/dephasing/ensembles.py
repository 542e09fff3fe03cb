"""Initial-condition ensembles for phase-space averages.

Random numbers come from a counter-based Philox stream keyed by the seed:
trajectory ``i`` owns counter block ``i`` (four 64-bit words), so any index
range can be generated on its own and the result never depends on how the
work was split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox

from .maps import TWO_PI, wrap

KINDS = ("uniform-torus", "position-state", "explicit-list")
PLACEMENTS = ("random", "grid")
DEFAULT_Q = 0.8 * np.pi
DEFAULT_COUNT = 1000
_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class EnsembleSpec:
    """How initial conditions are drawn.

    ``placement="grid"`` puts momenta on the midpoint grid
    ``(i + 1/2) 2pi / count`` instead of drawing them; positions of a
    uniform-torus ensemble stay random either way.
    """

    kind: str = "uniform-torus"
    count: int = DEFAULT_COUNT
    seed: int = 0
    Q: float | None = None
    points: tuple | None = field(default=None, repr=False)
    placement: str = "random"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}; expected one of {PLACEMENTS}")
        if not 0 <= int(self.seed) <= _U64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.kind == "explicit-list":
            pts = np.asarray(self.points if self.points is not None else [], dtype=float)
            if pts.size == 0:
                raise ValueError("explicit-list ensemble has no points")
            pts = wrap(pts.reshape(-1, 2))
            object.__setattr__(self, "points", tuple(map(tuple, pts.tolist())))
            object.__setattr__(self, "count", len(self.points))
        if self.kind == "position-state":
            Q = DEFAULT_Q if self.Q is None else float(self.Q)
            object.__setattr__(self, "Q", wrap(Q))
        if int(self.count) < 1:
            raise ValueError("count must be >= 1")
        object.__setattr__(self, "count", int(self.count))

    @classmethod
    def uniform_torus(cls, count=DEFAULT_COUNT, seed=0, **kw):
        return cls("uniform-torus", count, seed, **kw)

    @classmethod
    def position_state(cls, Q=DEFAULT_Q, count=DEFAULT_COUNT, seed=0, **kw):
        return cls("position-state", count, seed, Q=Q, **kw)

    @classmethod
    def explicit(cls, points):
        return cls("explicit-list", points=points)


@dataclass(frozen=True)
class PairSpec:
    """Pairs (x', x'') with x'' = x' displaced by ``-p_minus`` in momentum."""

    base: EnsembleSpec
    p_minus: float

    def __post_init__(self):
        if not self.p_minus >= 0:
            raise ValueError(f"p_minus must be >= 0, got {self.p_minus!r}")


def uniform_blocks(seed: int, start: int, stop: int) -> np.ndarray:
    """Uniform [0, 1) doubles, four per index, shape ``(stop - start, 4)``."""
    n = stop - start
    if n <= 0:
        return np.empty((0, 4))
    raw = Philox(key=seed, counter=start).random_raw(4 * n)
    return ((raw >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(n, 4)


def sample(spec: EnsembleSpec, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Initial points with indices ``start..stop-1`` as an ``(n, 2)`` array of (q, p)."""
    stop = spec.count if stop is None else min(stop, spec.count)
    start = max(0, start)
    if spec.kind == "explicit-list":
        return np.array(spec.points[start:stop], dtype=float).reshape(-1, 2)

    u = uniform_blocks(spec.seed, start, stop)
    if spec.placement == "grid":
        p = (np.arange(start, stop) + 0.5) * (TWO_PI / spec.count)
    else:
        p = wrap(TWO_PI * u[:, 1])
    if spec.kind == "position-state":
        q = np.full(p.shape, spec.Q)
    else:
        q = wrap(TWO_PI * u[:, 0])
    return np.column_stack([q, p])


def sample_pairs(spec: PairSpec, start: int = 0, stop: int | None = None):
    """Return ``(primed, double_primed)``, each ``(n, 2)``; q is shared."""
    x1 = sample(spec.base, start, stop)
    x2 = x1.copy()
    x2[:, 1] = wrap(x1[:, 1] - spec.p_minus)
    return x1, x2
