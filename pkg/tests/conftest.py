import numpy as np
import pytest

from misbayes.rng import RngStream


@pytest.fixture
def stream():
    return RngStream(20240917)


def ks_two_sample(a, b) -> float:
    from scipy import stats

    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)
