import numpy as np
import pytest

from graspformer.gradcheck import check_gradients
from graspformer.model import init_params, tiny_config, toy_config
from graspformer.tensor import Tensor, precision


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture(scope="session")
def tiny():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_params(tiny):
    return init_params(tiny, seed=3)


def leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, dtype=np.float64)


def assert_fd(fn, inputs: dict, tol=1e-4, probes=10, seed=0):
    """Finite-difference check of ``sum(fn(**inputs) * fixed weights)`` in float64."""
    out = fn(**inputs)
    weights = np.random.default_rng(seed + 99).standard_normal(out.shape)
    results = check_gradients(lambda: (fn(**inputs) * weights).sum(), inputs, probes=probes, seed=seed)
    worst = max(results, key=lambda r: r.rel_error)
    assert worst.rel_error <= tol, worst
    return results


@pytest.fixture(scope="session")
def toy():
    return toy_config()


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    import contextlib

    log = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextlib.contextmanager
    def record(number: int, title: str):
        detail: dict = {}
        try:
            yield detail
        except BaseException as exc:
            line = f"FAIL criterion {number}: {title} ({exc.__class__.__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
            log.append(line)
            print(line)
            raise
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"PASS criterion {number}: {title}" + (f" [{extra}]" if extra else "")
        log.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
