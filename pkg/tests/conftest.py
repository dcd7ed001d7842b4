import numpy as np
import pytest

from pgnniv import tensor as T


def numerical_grad(f, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` around ``x`` with step ``rel_step * max(1, |x_i|)``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        h = rel_step * max(1.0, abs(x[idx]))
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def gradcheck(build, inputs: list[np.ndarray], rtol: float = 1e-5, atol: float = 1e-8) -> None:
    """Compare autodiff gradients of ``build(*tensors) -> scalar`` with central differences."""
    params = [T.parameter(x) for x in inputs]
    build(*params).backward()
    for i, p in enumerate(params):

        def f(xi, i=i):
            args = [T.constant(x) for x in inputs]
            args[i] = T.constant(xi)
            return build(*args).item()

        expected = numerical_grad(f, inputs[i])
        np.testing.assert_allclose(p.grad, expected, rtol=rtol, atol=atol, err_msg=f"input {i}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param_gradcheck(params, loss, rtol: float = 1e-5, atol: float = 1e-8) -> None:
    """Gradcheck for tensors owned by a model: perturb ``p.data`` in place and re-run ``loss()``."""
    T.zero_grad(params)
    loss().backward()
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, analytic):

        def f(x, p=p):
            saved = p.data.copy()
            p.data[...] = x
            try:
                return loss().item()
            finally:
                p.data[...] = saved

        np.testing.assert_allclose(g, numerical_grad(f, p.data.copy()), rtol=rtol, atol=atol, err_msg=p.name)


_verdicts: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
        _verdicts.append((props["criterion"], status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for title, status, detail in sorted(_verdicts):
        terminalreporter.write_line(f"{status}  criterion {title}: {detail}")
