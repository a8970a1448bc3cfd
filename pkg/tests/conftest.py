import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, secs, detail in ACCEPTANCE_RESULTS:
        line = f"criterion {num:>2} [{status}] {secs:8.1f}s  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def numerical_gradient(f, arrays, wrt, h_scale=3e-4):
    """Central-difference gradient of scalar f w.r.t. arrays[wrt].

    `f` maps a list of float64 numpy arrays to a python float. Uses the
    five-point central stencil (O(h^4) truncation) so the oracle is
    accurate enough for the 1e-6 double-precision tolerance. Kept
    deliberately independent of the autodiff engine: plain numpy, four
    evaluations per element.
    """
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    target = arrays[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        h = h_scale * max(1.0, abs(flat[i]))
        orig = flat[i]
        vals = []
        for step in (-2 * h, -h, h, 2 * h):
            flat[i] = orig + step
            vals.append(f(arrays))
        flat[i] = orig
        fm2, fm1, fp1, fp2 = vals
        # paired differences first: identical evaluations cancel exactly
        gflat[i] = (8 * (fp1 - fm1) - (fp2 - fm2)) / (12 * h)
    return grad


def max_rel_err(g_ad, g_fd):
    """Spec metric: max over elements of |ad - fd| / (|fd| + 1e-8)."""
    g_ad = np.asarray(g_ad, dtype=np.float64)
    g_fd = np.asarray(g_fd, dtype=np.float64)
    return float(np.max(np.abs(g_ad - g_fd) / (np.abs(g_fd) + 1e-8)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
