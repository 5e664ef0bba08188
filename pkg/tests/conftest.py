def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines at the end of every run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call":
                lines += [x for x in rep.capstdout.splitlines() if x.startswith("[criterion ")]
    if lines and not any(x.startswith("[criterion 7]") for x in lines):
        lines.append("[criterion 7] NOT RUN extended tier; set KBCV2_FB15K237_DIR and run pytest -m extended")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
