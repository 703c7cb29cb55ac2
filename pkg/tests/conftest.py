import pytest


ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for marker in ("acceptance",):
        if marker in report.keywords:
            name = report.nodeid.split("::")[-1]
            ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{ACCEPTANCE_RESULTS[name]}  {name}")


@pytest.fixture(scope="session")
def certs(tmp_path_factory):
    from fogllm.certs import bootstrap

    return bootstrap(tmp_path_factory.mktemp("certs"), hostnames=["localhost"], ips=["127.0.0.1"])
