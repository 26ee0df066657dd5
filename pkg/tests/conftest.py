import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_frame(rng, m, k):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return q[:, :k]


def angle_grid_probs(logpdf, n_bins, n_sub=2000):
    """Bin probabilities of an angular log-density on [-pi, pi) by midpoint quadrature."""
    t = np.linspace(-np.pi, np.pi, n_bins * n_sub, endpoint=False) + np.pi / (n_bins * n_sub)
    lw = logpdf(t)
    w = np.exp(lw - lw.max())
    p = w.reshape(n_bins, n_sub).sum(axis=1)
    return p / p.sum()


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail=""):
    """Record and print one acceptance line; the terminal summary repeats them all."""
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
