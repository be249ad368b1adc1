import numpy as np
import pytest

from strandlang.hair import ScalpManifold, Strand, UVCoord


@pytest.fixture(scope="session")
def scalp():
    return ScalpManifold()


def make_strand(kind="wavy", L=64, seed=0, scale=1.0, root=(0.0, 0.0, 0.09)):
    """Synthetic single strands for unit tests (no scalp bookkeeping)."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, L)
    root = np.asarray(root, dtype=np.float64)
    if kind == "straight":
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        pts = root + 0.2 * scale * t[:, None] * direction
    elif kind == "wavy":
        amp = 0.01 * (1.0 + rng.random())
        freq = 2.0 + 3.0 * rng.random()
        pts = root + np.stack(
            [
                amp * np.sin(2 * np.pi * freq * t),
                0.05 * t,
                -0.18 * scale * t,
            ],
            axis=1,
        )
        pts[:, 0] -= pts[0, 0]
    elif kind == "curly":
        rho = 0.006 * (1.0 + rng.random())
        freq = 4.0 + 4.0 * rng.random()
        phase = 2 * np.pi * freq * t
        pts = root + np.stack(
            [
                rho * (np.cos(phase) - 1.0),
                rho * np.sin(phase),
                -0.2 * scale * t,
            ],
            axis=1,
        )
    else:
        raise ValueError(kind)
    return Strand(points=pts, root_uv=UVCoord(0.1, 0.4))


@pytest.fixture
def wavy_strand():
    return make_strand("wavy", seed=3)
