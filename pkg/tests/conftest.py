import numpy as np
from hypothesis import strategies as st


@st.composite
def tall_matrices(draw, max_rows=50, max_cols=8):
    """Moderately conditioned random tall matrices (classical GS needs that)."""
    k = draw(st.integers(1, max_cols))
    r = draw(st.integers(k + 2, max(k + 2, max_rows)))
    seed = draw(st.integers(0, 2**32 - 1))
    a = np.random.default_rng(seed).standard_normal((r, k))
    return a


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
