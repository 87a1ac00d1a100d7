import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hemppcat.model import Dataset, ModelParams


def random_params(rng, d, k, J, L, v_range=(0.3, 2.0)):
    F = rng.standard_normal((J, d, k))
    mu = rng.standard_normal((J, d))
    v = rng.uniform(*v_range, size=L)
    pi = rng.dirichlet(np.ones(J) * 2)
    return ModelParams(F, mu, v, pi)


def random_dataset(rng, n, d, L, labels=None):
    groups = np.concatenate([np.arange(L), rng.integers(0, L, size=n - L)])
    return Dataset(rng.standard_normal((n, d)) * 2.0, groups, labels, n_groups=L)


def dense_cov(params, g, j):
    d = params.F.shape[1]
    return params.F[j] @ params.F[j].T + params.v[g] * np.eye(d)


def dense_logpdf(y, g, j, params):
    """Log-density from the full d x d covariance, no Woodbury shortcut."""
    return multivariate_normal(params.mu[j], dense_cov(params, g, j)).logpdf(y)


def dense_log_pdf_matrix(dataset, params):
    n, J = dataset.n, len(params.pi)
    out = np.empty((n, J))
    for i in range(n):
        for j in range(J):
            out[i, j] = dense_logpdf(dataset.samples[i], dataset.groups[i], j, params)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    ok = report.passed and _ACCEPTANCE.get(number, (title, True))[1]
    _ACCEPTANCE[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}")
