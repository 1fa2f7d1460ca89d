import numpy as np
import pytest

from pointcloth.body import HumanoidConfig, build_humanoid


@pytest.fixture(scope="session")
def humanoid():
    return build_humanoid()


@pytest.fixture(scope="session")
def small_humanoid():
    return build_humanoid(HumanoidConfig(resolution=0.5))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random rotation via QR; determinant forced to +1."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
