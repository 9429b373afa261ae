import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: dict = {}


class _Verdict:
    def __init__(self, number: int, detail: str):
        self.number, self.detail = number, detail

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        _VERDICTS[self.number] = ("PASS" if exc_type is None else "FAIL", self.detail)
        return False


@pytest.fixture
def verdict():
    """``with verdict(n, detail): <asserts>`` records PASS/FAIL for acceptance criterion n."""
    return _Verdict


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
