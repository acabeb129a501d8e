import numpy as np
import pytest

from kdvlab.fields import TWO_PI, Field


def smooth_field(m_max, h3_norm, decay=1.0, seed=0):
    """Random field with exponentially decaying modes, rescaled in H^3."""
    rng = np.random.default_rng(seed)
    k = np.arange(1, m_max + 1)
    c = rng.standard_normal((m_max, 2)) * np.exp(-decay * k)[:, None]
    nrm = np.sqrt(np.sum((TWO_PI * k) ** 6 * (c[:, 0] ** 2 + c[:, 1] ** 2)))
    return Field(c * (h3_norm / nrm))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
