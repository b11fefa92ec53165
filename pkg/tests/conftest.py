import numpy as np
import pytest


def make_cloud(seed: int, n: int, clumps: int = 8, dims: int = 3) -> np.ndarray:
    """Random field-like cloud: Gaussian clumps (vertical-ish columns) over a
    box plus uniform background; generic coordinates, no exact ties."""
    rng = np.random.default_rng(seed)
    n_clump = int(n * 0.75)
    centers = rng.uniform(0.0, 4.0, size=(clumps, dims))
    centers[:, -1] *= 0.1
    which = rng.integers(0, clumps, size=n_clump)
    pts = centers[which] + rng.normal(0.0, 0.12, size=(n_clump, dims))
    pts[:, -1] = np.abs(pts[:, -1]) + rng.uniform(0.0, 1.2, size=n_clump)
    bg = rng.uniform(-0.5, 4.5, size=(n - n_clump, dims))
    bg[:, -1] *= 0.4
    cloud = np.concatenate([pts, bg], axis=0)
    return cloud[rng.permutation(n)]


def make_cloud_with_stems(seed: int, n_stems: int, per_stem: int,
                          extra: int = 0) -> np.ndarray:
    """Cloud with exactly coincident 2D projections (vertical stems), to
    exercise the infinite-density class and tie handling."""
    rng = np.random.default_rng(seed)
    parts = []
    for s in range(n_stems):
        base = rng.uniform(0.0, 3.0, size=2)
        z = np.linspace(0.0, 1.0, per_stem) + rng.uniform(0, 0.1)
        parts.append(np.column_stack([np.full(per_stem, base[0]),
                                      np.full(per_stem, base[1]), z]))
    if extra:
        parts.append(rng.uniform(0.0, 3.0, size=(extra, 3)) * [1.0, 1.0, 0.5])
    return np.concatenate(parts, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
