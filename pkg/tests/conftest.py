import itertools

import numpy as np
import pytest

from coolwalk.env import validate_alpha

# Ellipticity 0.2 rather than 0.3: the atom p=0.8 violates p <= 1-c at c=0.3.
REF_ATOMS = [(0.8, 0.7), (0.3, 0.3)]
REF_C = 0.2


@pytest.fixture(scope="session")
def ref_dist():
    return validate_alpha(REF_ATOMS, REF_C)


def enumerate_paths(step_probs, n):
    """Brute-force law of an n-step nearest-neighbour walk.

    ``step_probs(t, x)`` is the up-probability of step ``t`` taken from ``x``.
    """
    law = {}
    for steps in itertools.product((1, -1), repeat=n):
        x, p = 0, 1.0
        for t, e in enumerate(steps):
            w = step_probs(t, x)
            p *= w if e == 1 else 1.0 - w
            x += e
        law[x] = law.get(x, 0.0) + p
    return law


def pmf_close(pmf, law, tol):
    sites = set(int(s) for s in pmf.sites) | set(law)
    return max(abs(pmf.mass(x) - law.get(x, 0.0)) for x in sites) <= tol


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line[1])
