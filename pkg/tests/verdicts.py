"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}: {detail}"
    print(line)
    LINES.append(line)
    return line
