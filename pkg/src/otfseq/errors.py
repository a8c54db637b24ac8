"""Exception types shared across the package."""

import numpy as np


class DimensionError(ValueError):
    """An input array does not have the shape the grid requires."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A pivot or a block vanished during a factorization or inversion.

    Attributes
    ----------
    step : int or None
        1-based elimination step (row index) where the zero pivot appeared.
    block : int or None
        1-based index of the transformed block ``S_t`` that failed, when the
        failure happened inside a block-circulant inversion.
    """

    def __init__(self, message, step=None, block=None):
        super().__init__(message)
        self.step = step
        self.block = block


class DenseSizeError(MemoryError):
    """A dense NM x NM materialization was refused by the size guard."""


class ProfileError(ValueError):
    """A delay profile violates its invariants or does not fit the grid."""
