import numpy as np
import pytest

from fasm.cohort import SimSpec, SurvivalDataset

# Filled by the acceptance module, echoed at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def biased_spec(seed, n=5000):
    """Cohort with a group effect on the hazard and heavier censoring in the
    minority group, so a fairness-unaware model ranks across groups unevenly."""
    return SimSpec(
        n=n,
        group_proportions={"W": 0.8, "B": 0.2},
        true_beta={"x1": 0.8, "x2": -0.5, "group=W": -0.3},
        baseline_shape=1.2,
        baseline_scale=150.0,
        censor_rate={"W": 0.004, "B": 0.012},
        horizon=120.0,
        seed=seed,
    )


def dataset(time, event, x=None, group=None, names=None):
    time = np.asarray(time, dtype=float)
    n = len(time)
    if x is None:
        x = np.zeros((n, 1))
    x = np.asarray(x, dtype=float).reshape(n, -1)
    names = names or tuple(f"x{k + 1}" for k in range(x.shape[1]))
    group = ["A"] * n if group is None else list(group)
    return SurvivalDataset(x, time, event, group, tuple(names))


@pytest.fixture
def six_subject():
    """Six events at times 1..6 with a non-monotone covariate (finite MLE)."""
    return dataset(range(1, 7), [1] * 6, [2.1, 0.4, 1.3, 1.7, 0.8, 0.1])
