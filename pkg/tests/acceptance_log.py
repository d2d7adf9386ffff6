"""Collects one pass/fail line per acceptance criterion for the session summary."""

RESULTS: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    RESULTS.append((criterion, ok, detail))
    return ok
