import io
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cfpanel.panel import load_panel, panel_from_arrays

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def panel_csv(rows) -> str:
    lines = ["unit,year,outcome,value"]
    lines += [",".join(str(c) for c in r) for r in rows]
    return "\n".join(lines) + "\n"


def load_rows(rows):
    return load_panel(io.StringIO(panel_csv(rows)))


@pytest.fixture
def tiny_rows():
    return [
        ("A", 2000, "y", 1.0),
        ("A", 2001, "y", 2.0),
        ("A", 2002, "y", 3.0),
        ("B", 2000, "y", 4.0),
        ("B", 2001, "y", 5.0),
        ("B", 2002, "y", 6.0),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ranked_first_panel(n_units=37, n_years=33, first_year=1990, t0=21, seed=7):
    """Donors are noisy copies of a common trend; the treated unit tracks the
    trend closely before treatment and jumps by 5 afterwards, so its post/pre
    RMSPE ratio is the largest of all units under any estimator."""
    r = np.random.default_rng(seed)
    trend = np.linspace(0.0, 2.0, n_years)
    Y = 10.0 + trend[None, :] + r.normal(0, 0.05, size=(n_units, n_years))
    Y[0] = 10.0 + trend + r.normal(0, 0.01, size=n_years)
    Y[0, t0:] += 5.0
    units = [f"u{i:02d}" for i in range(n_units)]
    years = list(range(first_year, first_year + n_years))
    return panel_from_arrays(units, years, ["y"], Y)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
