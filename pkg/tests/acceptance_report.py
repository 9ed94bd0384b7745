"""Collects one pass/fail line per acceptance criterion.

The lines are printed immediately by the acceptance tests and repeated in the
terminal summary (see conftest.pytest_terminal_summary) so they are visible
even with output capture on.
"""

LINES: list[str] = []


def criterion(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    assert passed, line
