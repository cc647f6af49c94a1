import numpy as np
import pytest
from scipy import stats

from bipnet.model_core import ViewSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_raw(rng):
    """Two small views driven by one shared latent column, plus a noisy outcome."""
    n = 30
    u = rng.standard_normal(n)
    X1 = np.outer(u, rng.uniform(0.5, 1.0, 6)) + rng.standard_normal((n, 6))
    X2 = np.outer(u, rng.uniform(0.5, 1.0, 5)) + rng.standard_normal((n, 5))
    y = 1.5 + u + 0.5 * rng.standard_normal(n)
    return ViewSet(views=[X1, X2], outcome=y)


@pytest.fixture
def tiny_raw_with_covariates(tiny_raw, rng):
    tiny_raw.covariates = rng.standard_normal((tiny_raw.n, 2))
    tiny_raw.covariate_names = ["age", "sex"]
    return tiny_raw


def dense_mvn_logpdf(x, U, tau, sigma2):
    """log N(x; 0, sigma2 (U diag(tau) U' + I)) evaluated with a dense covariance."""
    cov = sigma2 * (U @ np.diag(tau) @ U.T + np.eye(U.shape[0]))
    return stats.multivariate_normal(mean=np.zeros(U.shape[0]), cov=cov).logpdf(x)


@pytest.fixture
def mvn_oracle():
    return dense_mvn_logpdf
