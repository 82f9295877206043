import numpy as np
import pytest

from phaseswap.nn import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def check_grads(build, inputs: dict) -> dict:
    """Compare autodiff and numeric gradients of ``build(**tensors).sum()``-style scalars.

    ``build`` receives a dict of Tensors (all requiring grad) and returns a
    scalar Tensor. Returns the relative error per input name.
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in inputs.items()}
    build(tensors).backward()
    errors = {}
    for name, t in tensors.items():
        def f():
            return float(build({k: Tensor(v.data) for k, v in tensors.items()}).data)

        numeric = numeric_grad(f, tensors[name].data)
        errors[name] = relative_error(t.grad, numeric)
    return errors


# -- acceptance summary ----------------------------------------------------------

_criteria: list = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    if call.when == "call" or failed:
        number, title = marker.args
        _criteria.append((number, title, "FAIL" if failed else "PASS", item.name))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    status: dict = {}
    for number, title, outcome, _ in _criteria:
        prev = status.get(number, ("PASS", title))[0]
        status[number] = ("FAIL" if "FAIL" in (prev, outcome) else "PASS", title)
    for number in sorted(status):
        outcome, title = status[number]
        terminalreporter.write_line(f"criterion {number:>2} {outcome}: {title}")
