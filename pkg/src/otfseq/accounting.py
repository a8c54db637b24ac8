"""Operation counting and the dense-allocation guard.

Kernels report complex multiplications through :func:`tally`.  Counting is
off unless a :func:`counting` context is active, so the hot paths pay one
context-variable lookup per kernel call and nothing else.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field

from .errors import DenseSizeError

#: Default ceiling on the side length K of any dense K x K materialization.
DENSE_LIMIT = 4096

_counter: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar(
    "otfseq_counter", default=None
)
_dense_forbidden: contextvars.ContextVar[int | None] = contextvars.ContextVar(
    "otfseq_dense_forbidden", default=None
)


@dataclass
class OpCounter:
    """Accumulated complex-multiply counts, split by label."""

    mults: int = 0
    by_label: dict[str, int] = field(default_factory=dict)

    def add(self, n, label="other"):
        n = int(n)
        self.mults += n
        self.by_label[label] = self.by_label.get(label, 0) + n


@contextlib.contextmanager
def counting():
    """Collect multiply counts for the enclosed block.

    Nested contexts each receive the counts of their own block only.
    """
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def tally(n, label="other"):
    counter = _counter.get()
    if counter is not None:
        counter.add(n, label)


def fft_mults(length, count=1):
    """Nominal radix-2 cost of ``count`` transforms of ``length`` points."""
    if length <= 1:
        return 0
    return int(count * (length // 2) * math.ceil(math.log2(length)))


@contextlib.contextmanager
def forbid_dense(min_size):
    """Make every dense K x K materialization with ``K >= min_size`` raise inside the block.

    Pass the frame length ``N*M`` to assert that nothing of effective-channel
    size is ever built while per-block M x M work stays allowed.
    """
    token = _dense_forbidden.set(int(min_size))
    try:
        yield
    finally:
        _dense_forbidden.reset(token)


def check_dense(size, limit=None, what="dense matrix"):
    """Refuse a ``size x size`` allocation when forbidden or above ``limit``."""
    forbidden = _dense_forbidden.get()
    if forbidden is not None and size >= forbidden:
        raise DenseSizeError(f"{what} of size {size}x{size} requested inside forbid_dense({forbidden})")
    limit = DENSE_LIMIT if limit is None else limit
    if size > limit:
        raise DenseSizeError(f"{what} of size {size}x{size} exceeds the dense limit {limit}")
