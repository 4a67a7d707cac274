from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import settings

from chronos.scenarios import build_model, preset

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class _Recorder:
    def __call__(self, number: int, ok: bool, detail: str) -> None:
        prev = _ACCEPTANCE.get(number)
        # A criterion with several parts fails if any part fails.
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        _ACCEPTANCE[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"


@pytest.fixture
def criterion():
    return _Recorder()


@functools.lru_cache(maxsize=None)
def preset_model(name: str):
    return build_model(preset(name))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
