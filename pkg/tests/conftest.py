import numpy as np
import pytest

from hurdlecmp import cmp
from hurdlecmp.models import RegressionData


def simulate_gate_counts(m, seed, gate_prob, log_rate, nu):
    """x ~ N(0,1); Bernoulli gate times a zero-truncated CMP count."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(m)
    gate = rng.random(m) < gate_prob(x)
    y = np.zeros(m, dtype=np.int64)
    if gate.any():
        y[gate] = cmp.sample_batch(log_rate(x[gate]), nu, rng, zero_truncated=True)
    return RegressionData(y, np.column_stack([np.ones(m), x]))


@pytest.fixture
def small_config():
    from hurdlecmp.mcmc import ChainConfig

    return ChainConfig(n_iter=12_000, burn_in=3_000, thin=3, seed=101)


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, title: str, checks: dict) -> bool:
    """Store one summary line; ``checks`` maps a label to ``(passed, detail)``."""
    ok = all(passed for passed, _ in checks.values())
    parts = "; ".join(f"{label}: {'ok' if passed else 'FAIL'} ({detail})" for label, (passed, detail) in checks.items())
    line = f"criterion {number} {'PASS' if ok else 'FAIL'} - {title} - {parts}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
