"""Small shared helpers."""

from __future__ import annotations

import math

__all__ = ["ceil_schedule", "fmt_float"]


def ceil_schedule(x: float) -> int:
    """Ceiling with a relative guard so closed-form integer powers stay exact.

    Schedules like T^(2/(d+2)) hit exact integers (1000^(2/3) = 100) that
    float exponentiation can miss by an ulp in either direction; values
    within 1e-9 relative of an integer round to it before the ceiling.
    """
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal form, used by every CSV writer."""
    return repr(float(x))
