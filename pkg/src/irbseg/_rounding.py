from __future__ import annotations

import math
from collections.abc import Sequence


def largest_remainder(quotas: Sequence[float], total: int) -> list[int]:
    """Round non-negative quotas to integers summing to ``total``.

    Every entry gets the floor of its quota; leftover units go to the largest
    fractional parts. Equal remainders favour the earlier position, so callers
    control tie-breaking through the order they pass quotas in.
    """
    floors = [math.floor(q + 1e-9) for q in quotas]
    left = total - sum(floors)
    if left < 0 or left > len(quotas):
        raise ValueError(f"quotas {list(quotas)} are inconsistent with total {total}")
    remainders = [q - f for q, f in zip(quotas, floors)]
    # round to suppress float noise such as 0.49999999 vs 0.5
    order = sorted(range(len(quotas)), key=lambda i: (-round(remainders[i], 9), i))
    for i in order[:left]:
        floors[i] += 1
    return floors
