"""Collects one status line per acceptance criterion for the terminal summary."""

LINES = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    return ok
