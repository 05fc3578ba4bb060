from __future__ import annotations

import pytest

from payloadmine.fingerprint import BitFingerprint

WIDTH = 4096


def fp(bits, width: int = WIDTH) -> BitFingerprint:
    return BitFingerprint.from_bits(bits, width)


def app_text(app_id: str, classes: dict[str, list[list[str]]]) -> str:
    """IR document from {class_path: [method instruction lines]}; one method per list."""
    lines = [f"APP {app_id}"]
    k = 0
    for cls, methods in classes.items():
        lines.append(f"CLASS {cls}")
        for body in methods:
            lines.append(f"METHOD m{k} ()V")
            lines.extend(f"I {ins}" for ins in body)
            lines.append("END")
            k += 1
    return "\n".join(lines) + "\n"


@pytest.fixture
def make_fp():
    return fp


# acceptance criteria report one line each; the lines are repeated at the end
# of the run so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
