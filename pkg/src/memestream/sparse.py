"""Sparse vectors over string dimension keys, plus the arithmetic the clustering core needs.

Weights are non-negative numbers. Integer weights stay integers through
add/sub so repeated incremental updates are exact; floats are tolerated for
generality and cleaned up near zero.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

# Entries whose magnitude falls below this after arithmetic are dropped.
ZERO_EPS = 1e-12
# A subtraction result below this signals removing something never added.
NEG_EPS = -1e-9


class ConsistencyError(RuntimeError):
    """Internal invariant broken (e.g. subtracting a vector that was never added)."""


class SparseVector:
    """Immutable map from dimension key to weight.

    Entries are key-sorted at construction so that iteration order (and with
    it every derived float computation) is independent of how the mapping was
    built.
    """

    __slots__ = ("entries", "_norm")

    def __init__(self, entries: Mapping[str, float] | Iterable[tuple[str, float]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self.entries = {k: w for k, w in sorted(items) if abs(w) > ZERO_EPS}
        self._norm = None

    def norm(self) -> float:
        if self._norm is None:
            self._norm = math.sqrt(sum(w * w for w in self.entries.values()))
        return self._norm

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SparseVector) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"SparseVector({self.entries!r})"


def dot(u: SparseVector, v: SparseVector) -> float:
    a, b = u.entries, v.entries
    if len(b) < len(a):
        a, b = b, a
    return sum(w * b[k] for k, w in a.items() if k in b)


def cosine(u: SparseVector, v: SparseVector) -> float:
    """Cosine similarity in [0, 1]; 0 when either vector is empty."""
    nu = u.norm()
    nv = v.norm()
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = dot(u, v) / (nu * nv)
    return 1.0 if c > 1.0 else c


def vec_add(u: SparseVector, v: SparseVector) -> SparseVector:
    out = dict(u.entries)
    for k, w in v.entries.items():
        out[k] = out.get(k, 0) + w
    return SparseVector(out)


def vec_sub(u: SparseVector, v: SparseVector) -> SparseVector:
    """Entrywise u - v; v must have been previously added into u."""
    out = dict(u.entries)
    for k, w in v.entries.items():
        r = out.get(k, 0) - w
        if r < NEG_EPS:
            raise ConsistencyError(f"subtraction drove dimension {k!r} to {r}")
        out[k] = r
    return SparseVector(out)
