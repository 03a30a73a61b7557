"""Input validation helpers.

Small ``check_*`` functions shared by the estimator classes and the
module-level operations. They raise :class:`~foresteyes.errors.ValidationError`
with messages naming the offending argument, so callers can surface them
unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_positive(name: str, value) -> None:
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")


def check_non_negative(name: str, value) -> None:
    if value < 0:
        raise ValidationError(f"{name} must be non-negative, got {value!r}")


def check_in_range(name: str, value, lo, hi) -> None:
    if not (lo <= value <= hi):
        raise ValidationError(f"{name} must lie in [{lo}, {hi}], got {value!r}")


def check_plane(name: str, arr: np.ndarray, dtype=None) -> np.ndarray:
    """Require a 2-D array; returns it as a contiguous ndarray."""
    arr = np.asarray(arr, dtype=dtype)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D plane, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_same_shape(name_a: str, a, name_b: str, b) -> None:
    sa = getattr(a, "shape", None) or (a.height, a.width)
    sb = getattr(b, "shape", None) or (b.height, b.width)
    if tuple(sa) != tuple(sb):
        raise ValidationError(
            f"{name_a} and {name_b} have mismatched dimensions: {sa} vs {sb}"
        )


def check_band_indices(stack, indices, distinct: bool = True) -> tuple[int, ...]:
    """Validate band indices against a stack; returns them as ints."""
    out = []
    for idx in indices:
        i = int(idx)
        if not 0 <= i < stack.n_bands:
            raise ValidationError(
                f"band index {i} out of range for stack with {stack.n_bands} bands"
            )
        out.append(i)
    if distinct and len(set(out)) != len(out):
        raise ValidationError(f"band indices must be distinct, got {tuple(out)}")
    return tuple(out)


def check_window(stack, window) -> tuple[int, int, int, int]:
    """Validate a (row, col, height, width) pixel window against a stack."""
    try:
        row, col, height, width = (int(v) for v in window)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"window must be (row, col, height, width): {exc}")
    if height < 1 or width < 1:
        raise ValidationError(f"window size must be >= 1, got {height}x{width}")
    if row < 0 or col < 0 or row + height > stack.height or col + width > stack.width:
        raise ValidationError(
            f"window {(row, col, height, width)} exceeds stack bounds "
            f"{stack.height}x{stack.width}"
        )
    return row, col, height, width
