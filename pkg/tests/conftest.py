import numpy as np
import pytest

from irkcond.assembly import assemble
from irkcond.diffusion import builtin_field, element_averages
from irkcond.mesh import generate_uniform


@pytest.fixture(scope="session")
def square8():
    mesh = generate_uniform(2, 8)
    field = builtin_field("identity", 2)
    av = element_averages(field, mesh)
    return mesh, field, av, assemble(mesh, av)


@pytest.fixture(scope="session")
def line10():
    mesh = generate_uniform(1, 10)
    field = builtin_field("identity", 1)
    av = element_averages(field, mesh)
    return mesh, field, av, assemble(mesh, av)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(ok, detail)`` parts of a numbered acceptance criterion."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        entry = store.setdefault(number, {"title": title, "parts": []})
        entry["parts"].append((bool(ok), detail))
        print(f"criterion {number} [{title}] {'PASS' if ok else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        entry = store[number]
        ok = all(p[0] for p in entry["parts"])
        details = "; ".join(d for _, d in entry["parts"])
        terminalreporter.write_line(f"criterion {number} ({entry['title']}): {'PASS' if ok else 'FAIL'} | {details}")
