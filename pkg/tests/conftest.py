import math

import pytest

from ota_fedavg.privacy import phi
from ota_fedavg.system_model import DeviceProfile, SystemParams


def make_params(**overrides) -> SystemParams:
    base = dict(
        n_devices=3,
        model_dim=4,
        noise_std=1.0,
        epsilon=20.0 * phi(1e-5),  # privacy cap of exactly 10 at sigma = 1
        delta=1e-5,
        sum_power=30.0,
        total_rounds=20,
        grad_bound=1.0,
        smoothness=1.0,
        strong_convexity=0.5,
        learning_rate=1.0,
        initial_gap=1.0,
    )
    base.update(overrides)
    return SystemParams(**base)


@pytest.fixture
def ref_devices():
    return [DeviceProfile(1, 0.1), DeviceProfile(2, 0.5), DeviceProfile(3, 1.0)]


@pytest.fixture
def ref_params():
    return make_params()


def rel_close(a, b, rtol):
    return math.isclose(a, b, rel_tol=rtol, abs_tol=0.0)


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------

_GATE_LINES: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _GATE_LINES.append((props["criterion"], status, str(props.get("detail", ""))))


def pytest_terminal_summary(terminalreporter):
    if not _GATE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(_GATE_LINES, key=lambda t: int(t[0].split()[0])):
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
