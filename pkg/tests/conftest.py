"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


class CriterionLog:
    def record(self, number: int, part: str, passed: bool, detail: str):
        _RESULTS.setdefault(number, []).append((part, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {number} [{part}]: {detail}")


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        parts = _RESULTS[number]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {d}{'' if p else ' [not met]'}" for name, p, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
