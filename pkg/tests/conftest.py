import numpy as np
import pytest

from tnstruct.builders import layered_ertn, randomize


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_mera8(rng):
    return randomize(layered_ertn(8), rng)


def fd_directional(f, x, d, h=1e-5):
    """Central difference of ``f`` at ``x`` along ``d``."""
    return (f(x + h * d) - f(x - h * d)) / (2 * h)


ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""
    def record(key: str, ok: bool | None, detail: str):
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        ACCEPTANCE[key] = f"criterion {key}: {verdict} ({detail})"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split("-")[0]), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
