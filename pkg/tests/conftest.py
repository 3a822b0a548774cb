import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from garchssm import (  # noqa: E402
    GarchParams,
    McmcConfig,
    PriorSpec,
    build_random_walk_plus_noise,
    correlation_from_factor,
    run_chains_parallel,
    simulate,
)

# Four-series design used by the recovery, coverage and residual checks.
TRUE_ALPHA0 = (1.0, 1.0, 2.0, 2.0)
TRUE_ALPHA1 = (0.1, 0.3, 0.1, 0.2)
TRUE_BETA1 = (0.8, 0.6, 0.4, 0.7)
TRUE_W = 0.1
RECOVERY_SEED = 2026


def four_series_truth(seed=RECOVERY_SEED, T=1000):
    g = GarchParams.garch11(TRUE_ALPHA0, TRUE_ALPHA1, TRUE_BETA1)
    U = np.triu(np.random.default_rng(5).normal(size=(4, 4)))
    np.fill_diagonal(U, 1.0)
    _, R = correlation_from_factor(U)
    spec = build_random_walk_plus_noise(4, c0=1.0)
    data, truth = simulate(spec, g, R, TRUE_W * np.eye(4), T, seed=seed, theta0=0.0)
    return data, truth, g, R


@pytest.fixture(scope="session")
def recovery_fit():
    """Recovery run on the four-series design: burn-in 5000, thin 10, 2 chains, 1000 kept draws."""
    data, truth, g, R = four_series_truth()
    spec = build_random_walk_plus_noise(4)
    cfg = McmcConfig(n_chains=2, burn_in=5000, thin=10, n_keep=1000, seed=RECOVERY_SEED)
    draws = run_chains_parallel(data, spec, PriorSpec(), cfg)
    return {"data": data, "truth": truth, "garch": g, "R": R, "spec": spec, "draws": draws}


# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
