from acceptance_log import RESULTS


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        title, ok, detail, seconds, bound = RESULTS[num]
        terminalreporter.write_line(
            f"criterion {num:2d} {'PASS' if ok else 'FAIL'}: {title} [{detail}] "
            f"{seconds:.2f}s (bound {bound:g}s)")
    missing = [n for n in range(1, 13) if n not in RESULTS]
    if missing:
        terminalreporter.write_line(f"criteria not run: {', '.join(map(str, missing))}")
