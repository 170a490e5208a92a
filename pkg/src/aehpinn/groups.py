"""Containers for per-sample quantities split into residual/initial/boundary groups."""

from dataclasses import dataclass

import numpy as np

GROUPS = ("residual", "initial", "boundary")


@dataclass(frozen=True)
class GroupArrays:
    """Three 1-D arrays, one per sample group."""

    residual: np.ndarray
    initial: np.ndarray
    boundary: np.ndarray

    def __iter__(self):
        return iter((self.residual, self.initial, self.boundary))

    def items(self):
        return zip(GROUPS, self)

    @property
    def counts(self):
        return tuple(len(a) for a in self)

    def concat(self):
        """All groups stacked in residual, initial, boundary order."""
        return np.concatenate(list(self))

    @classmethod
    def split(cls, flat, counts):
        n_r, n_i, n_b = counts
        flat = np.asarray(flat)
        return cls(flat[:n_r], flat[n_r:n_r + n_i], flat[n_r + n_i:n_r + n_i + n_b])

    def map(self, fn):
        return type(self)(*(fn(a) for a in self))

    def equal(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self, other))


class AdaptiveWeights(GroupArrays):
    """Per-sample trainable penalty weights for the hard phase."""

    @classmethod
    def ones(cls, counts, dtype=np.float64):
        return cls(*(np.ones(n, dtype=dtype) for n in counts))
