"""Largest-remainder apportionment."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

# quotas are rounded before flooring so that e.g. 0.6 * 5 lands on 3, not 2
_QUOTA_DIGITS = 9


def largest_remainder(quotas: Sequence[float], total: int) -> np.ndarray:
    """Round non-negative ``quotas`` to integers summing to ``total``.

    Every entry is floored, then the leftover units go to the largest
    fractional parts. Equal remainders favour the lower index. If the
    floors already exceed ``total`` (quotas summing above it), units are
    taken back from the smallest remainders first.
    """
    q = np.round(np.asarray(quotas, dtype=float), _QUOTA_DIGITS)
    if q.ndim != 1:
        raise ValueError("quotas must be one-dimensional")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("quotas must be finite and non-negative")
    if total < 0:
        raise ValueError("total must be non-negative")
    base = np.floor(q).astype(np.int64)
    rem = q - base
    extra = int(total - base.sum())
    # stable sort on -rem keeps lower indices first among ties
    if extra > 0:
        order = np.argsort(-rem, kind="stable")
        for pos in range(extra):
            base[order[pos % len(order)]] += 1
    elif extra < 0:
        order = np.argsort(rem, kind="stable")
        pos = 0
        while extra < 0:
            idx = order[pos % len(order)]
            if base[idx] > 0:
                base[idx] -= 1
                extra += 1
            pos += 1
    return base


def round_half_up(x: float) -> int:
    return int(math.floor(round(x, _QUOTA_DIGITS) + 0.5))
