from __future__ import annotations

import numpy as np
import pytest

from platoon_vdn.config import ScenarioConfig


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def oracle_sinr(own, k, channels, powers_w, active, gains_to_rx, noise_w):
    """Term-by-term re-summation of the SINR definition, in plain Python floats."""
    theta = [1.0 if (active[i] and channels[i] == k) else 0.0 for i in range(len(channels))]
    num = theta[own] * float(powers_w[own]) * float(gains_to_rx[own])
    den = float(noise_w)
    for i in range(len(channels)):
        if i == own:
            continue
        den = den + theta[i] * float(powers_w[i]) * float(gains_to_rx[i])
    return num / den


def oracle_slot(gains, channels, powers_w, active, noise_w, n_sub, tail_only=False):
    """Independent per-platoon rate: min over followers of log2(1 + SINR)."""
    import math

    n, _, m = gains.shape
    rates = []
    for p in range(n):
        if not active[p]:
            rates.append(0.0)
            continue
        sinrs = [
            oracle_sinr(p, channels[p], channels, powers_w, active, gains[:, p, j], noise_w)
            for j in range(m)
        ]
        worst = sinrs[-1] if tail_only else min(sinrs)
        rates.append(math.log2(1.0 + worst))
    return rates


# acceptance reporting --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})")
