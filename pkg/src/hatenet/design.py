"""Bernoulli assignment with reproducible per-replication random streams.

Every random draw in the package comes from a generator built by
:func:`stream`, which derives a counter-based Philox generator from
``(master_seed, index)`` through ``SeedSequence`` spawn keys.  Streams for
different indices are independent, and a given index always reproduces the
same draws no matter which worker evaluates it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RNG_ID = f"numpy-{np.__version__}/Philox4x64/SeedSequence(seed,spawn_key=(index,))"


def stream(master_seed: int, index: int = 0) -> np.random.Generator:
    """Random stream ``index`` of ``master_seed``.

    Index 0 is reserved for building the fixed population; replication ``r``
    uses index ``r + 1``.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class Design:
    """Bernoulli trial treating each unit independently with probability ``r1``."""

    r1: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.r1 < 1.0:
            raise ValueError(f"treatment probability must lie in (0, 1), got {self.r1}")

    @property
    def r0(self) -> float:
        return 1.0 - self.r1


def draw_assignment(d: Design, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent Bernoulli(``r1``) indicators as a float 0/1 vector."""
    if n < 1:
        raise ValueError("need at least one unit")
    return (rng.random(n) < d.r1).astype(np.float64)


def validate_assignment(z, n: int | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if n is not None and z.shape[-1] != n:
        raise ValueError(f"assignment has length {z.shape[-1]}, expected {n}")
    if not np.all((z == 0.0) | (z == 1.0)):
        raise ValueError("assignment entries must be 0 or 1")
    return z
