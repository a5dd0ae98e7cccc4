import logging
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from comet.envs import make_env  # noqa: E402
from comet.intervene import refine_model  # noqa: E402
from comet.pipeline import extract_world_model  # noqa: E402
from comet.trace import RandomPolicy, sample  # noqa: E402

# Shared runs. Seeds are fixed so every session sees the same traces.
PONG_SEED, PONG_STEPS = 7, 5000
FREEWAY_SEED, FREEWAY_STEPS = 7, 1000
HELDOUT_SEED = 99


def _trace(env, seed, steps):
    return sample(make_env(env), RandomPolicy(seed), steps, seed)


class Runs:
    """Lazily computed end-to-end artefacts, shared by all tests in a session."""

    def __init__(self):
        self._cache = {}
        self.seconds = {}

    def _get(self, key, fn):
        if key not in self._cache:
            import time

            t0 = time.perf_counter()
            self._cache[key] = fn()
            self.seconds[key] = time.perf_counter() - t0
        return self._cache[key]

    def trace(self, env):
        seed, steps = (PONG_SEED, PONG_STEPS) if env == "minipong" else (FREEWAY_SEED, FREEWAY_STEPS)
        return self._get(("trace", env), lambda: _trace(env, seed, steps))

    def heldout(self, env, steps=1000):
        return self._get(("heldout", env, steps), lambda: _trace(env, HELDOUT_SEED, steps))

    def model(self, env):
        return self._get(("model", env), lambda: extract_world_model(self.trace(env)))

    def refined(self, env):
        def run():
            return refine_model(make_env(env), self.model(env), self.trace(env))

        return self._get(("refined", env), run)


_RUNS = Runs()


@pytest.fixture(scope="session")
def runs():
    return _RUNS


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="comet")
    yield


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
