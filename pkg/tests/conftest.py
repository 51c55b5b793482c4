from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evolproc import DiscreteSpace, HypothesisConstants, OperatorFamily

settings.register_profile(
    "fixed",
    derandomize=True,
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.differing_executors],
)
settings.load_profile("fixed")

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one criterion's outcome; a test that raises before recording counts as failed."""
    state: dict = {}

    def record(cid: int, passed: bool, detail: str) -> None:
        state["cid"] = cid
        ACCEPTANCE[cid] = (bool(passed), detail)

    yield record


def pytest_runtest_makereport(item, call):
    cid = getattr(item.function, "criterion", None)
    if cid is not None and call.when == "call" and call.excinfo is not None:
        prev = ACCEPTANCE.get(cid)
        ACCEPTANCE[cid] = (False, prev[1] if prev else f"raised {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_spd(rng: np.random.Generator, d: int, lo: float = 0.5, hi: float = 4.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (q * rng.uniform(lo, hi, d)) @ q.T


def random_sectorial(rng: np.random.Generator, d: int) -> np.ndarray:
    """Diagonalizable with real spectrum in [1, 5] and a mildly non-normal basis."""
    s = np.eye(d) + 0.3 * rng.standard_normal((d, d))
    return s @ np.diag(rng.uniform(1.0, 5.0, d)) @ np.linalg.inv(s)


def const_family(m, space: DiscreteSpace | None = None, eps: float = 0.0) -> OperatorFamily:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    space = space or DiscreteSpace.euclidean(m.shape[0])
    return OperatorFamily(space, lambda t: m, eps, HypothesisConstants(phi=3 * math.pi / 4), name="const")


def scalar_family(a, eps: float = 0.0) -> OperatorFamily:
    """``A(t) = a(t)`` on the real line."""
    return OperatorFamily(DiscreteSpace.euclidean(1), lambda t: np.array([[float(a(t))]]), eps,
                          HypothesisConstants(), name="scalar")
