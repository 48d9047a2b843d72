import numpy as np
import pytest


def sphere_points(n, seed=0, radius=1.0):
    """n points uniform on a sphere surface (normalized Gaussians)."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v


def random_cloud(n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * rng.uniform(-1.0, 1.0, size=(n, 3))


@pytest.fixture
def sphere512():
    return sphere_points(512, seed=7)


def jittered_grid(side=8, spacing=0.1, jitter=0.01, seed=0):
    """Surface-like noisy grid in the z=0 plane."""
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(side), np.arange(side))
    pts = np.stack([xs.ravel() * spacing, ys.ravel() * spacing,
                    np.zeros(side * side)], axis=1)
    pts[:, :2] += rng.normal(0.0, jitter * spacing, size=(side * side, 2))
    return pts
