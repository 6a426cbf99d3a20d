import pytest

from fsbs import params as P
from fsbs import scheme
from fsbs.gaussian import RandomSource


def seed(label: str) -> bytes:
    return label.encode().ljust(32, b".")[:32]


@pytest.fixture(scope="session")
def toy_keys():
    params, pk, sk = scheme.setup(P.preset("toy-T0"), RandomSource(seed("toy-keys")))
    return params, pk, sk


@pytest.fixture(scope="session")
def depth3_keys():
    base = P.derive(n=2, ell=3, q=257, k=16, kappa=4, sigma=25)
    return scheme.setup(base, RandomSource(seed("depth3")))


@pytest.fixture
def rng(request):
    return RandomSource(seed(request.node.name))


# Acceptance criteria record (ok, detail) here; the summary hook prints one line each.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
_ACCEPTANCE_RAN: set[int] = set()


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        _ACCEPTANCE_RAN.add(int(report.nodeid.split("test_criterion_")[1][:2]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RAN:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif n in _ACCEPTANCE_RAN:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (errored before a result was recorded)")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: not run")
