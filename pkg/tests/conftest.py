"""Shared acceptance registry: each acceptance test records one line and
the terminal summary prints them in criterion order."""

ACCEPTANCE = {}


def record(number: int, title: str, ok: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
                                    + (f"  [{detail}]" if detail else ""))
