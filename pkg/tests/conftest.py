import pytest
from hypothesis import settings

from contactrefine.object_model import analytic_grid, box_sdf, sphere_sdf
from contactrefine.pipeline import ContactRefiner
from contactrefine.synthetic import BUILTIN_SCENARIOS, generate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sphere_grid():
    return analytic_grid(sphere_sdf(0.1), [-0.13] * 3, [0.13] * 3, 0.002, 0.010)


@pytest.fixture(scope="session")
def box_grid():
    return analytic_grid(box_sdf((0.1, 0.1, 0.1)), [-0.07] * 3, [0.07] * 3, 0.002, 0.010)


class _Cache:
    """Generated sequences and their refined frames, built once per session."""

    def __init__(self):
        self._seq = {}
        self._runs = {}

    def sequence(self, name):
        if name not in self._seq:
            self._seq[name] = generate(BUILTIN_SCENARIOS[name])
        return self._seq[name]

    def refined(self, name):
        if name not in self._runs:
            seq = self.sequence(name)
            refiner = ContactRefiner(skeleton=seq.skeleton).fit(seq.grid)
            self._runs[name] = refiner.transform(seq.records)
        return self._runs[name]


@pytest.fixture(scope="session")
def synth():
    return _Cache()


# --- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
