import re

import numpy as np
import pytest

from wavedit.prng import Prng, sample_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERION_PATTERN = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call" and outcome != "error":
                continue
            name = getattr(report, "location", ("", "", ""))[2]
            match = _CRITERION_PATTERN.match(name.split("[")[0])
            if match and "test_acceptance" in report.nodeid:
                num = int(match.group(1))
                label = match.group(2).replace("_", " ")
                status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
                prev = lines.get(num)
                if prev and prev[0] == "FAIL":
                    continue
                if prev and status == "PASS" and prev[0] == "SKIP":
                    continue
                lines[num] = (status, label)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num in sorted(lines):
            status, label = lines[num]
            terminalreporter.write_line(f"CRITERION {num:2d}: {status} - {label}")


def seeded_grid(shape, seed=0, scale=1.0, offset=0.0):
    return scale * sample_gaussian(Prng(seed), shape) + offset


def band_max_diff(a, b):
    """Largest per-band Linf difference between two subband stacks."""
    return max(
        float(np.max(np.abs(a.band(k) - b.band(k)))) if a.band(k).size else 0.0
        for k in a.keys()
    )
