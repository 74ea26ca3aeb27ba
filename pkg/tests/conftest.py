import contextlib
import os
import random
import time

import pytest
from hypothesis import HealthCheck, settings

from medledger.crypto import TOY
from medledger.crypto.pre import keygen

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def toy_keys():
    """Every TOY key pair, indexed by secret."""
    return {a: keygen(TOY, sk=a) for a in range(1, TOY.q)}


@pytest.fixture(scope="session")
def fixture_chain_20():
    from medledger.scenario import build_fixture_chain

    return build_fixture_chain(20, seed=11)


@pytest.fixture(scope="session")
def fixture_chain_100():
    from medledger.scenario import build_fixture_chain

    return build_fixture_chain(100, seed=7)


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion(n, title, limit_s=None):`` records one PASS/FAIL line."""

    @contextlib.contextmanager
    def run(n, title, limit_s=None):
        start = time.perf_counter()
        ok, note = False, ""
        try:
            yield
            elapsed = time.perf_counter() - start
            ok = limit_s is None or elapsed < limit_s
            if not ok:
                note = f" over the {limit_s:g} s limit"
        except BaseException as exc:
            note = f" {type(exc).__name__}"
            raise
        finally:
            elapsed = time.perf_counter() - start
            line = f"C{n:02d} {'PASS' if ok else 'FAIL'} {title} ({elapsed:.1f} s{note})"
            request.config.stash[ACCEPTANCE].append(line)
            print(line)
        assert ok, line

    return run
