"""Input validation helpers.

Every public entry point funnels array-like input through these so that
shape and finiteness errors are raised early with a readable message.
"""

import numpy as np


def check_points(data, name="points", min_points=1):
    """Coerce ``data`` to a float64 array of shape (N, 3) and validate it.

    Accepts anything ``np.asarray`` understands plus objects exposing a
    ``points`` attribute (e.g. PointCloud). Raises ValueError on wrong
    shape, non-finite values, or fewer than ``min_points`` rows.
    """
    if hasattr(data, "points"):
        data = data.points
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < min_points:
        raise ValueError(f"{name} needs at least {min_points} points, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def check_count(value, name, minimum=1, maximum=None):
    """Validate an integer count, returning it as a Python int."""
    count = int(value)
    if count != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if count < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {count}")
    if maximum is not None and count > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {count}")
    return count


def check_ratio(ratio):
    """Validate an upsampling ratio: an integer power of two, >= 2."""
    r = int(ratio)
    if r != ratio or r < 2 or (r & (r - 1)) != 0:
        raise ValueError(f"ratio must be a power of two >= 2, got {ratio!r}")
    return r


def check_index(index, size, name="index"):
    idx = int(index)
    if idx < 0 or idx >= size:
        raise ValueError(f"{name} {idx} out of range [0, {size})")
    return idx
