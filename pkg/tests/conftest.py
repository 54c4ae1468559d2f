"""Shared fixtures: a small processed synthetic case reused across test
modules, and a per-criterion pass/fail printout for the acceptance suite."""

from __future__ import annotations

import pytest

from meningrade.pipeline import process_case
from meningrade.synth import SynthParams, generate_case

_acceptance_reports: list[tuple[str, str]] = []


@pytest.fixture(scope="session")
def small_case(tmp_path_factory):
    """A 4096-px single-node case with 4 clustered mitoses, one sheeting
    region, one nucleoli object (two features present, so the grade hinges on
    the mitotic count), small-cell patches, a brain strip, and a paired Ki-67
    slide. Processed once per test session."""
    root = tmp_path_factory.mktemp("small_case")
    params = SynthParams(
        case_id="small",
        seed=11,
        node_px=4096,
        mitoses=4,
        sheeting_regions=1,
        nucleoli=1,
        small_cell_patches=2,
        brain_strip=True,
        with_ki67=True,
    )
    manifest = generate_case(root / "src", params)
    out = root / "cases" / "small"
    process_case(manifest, root / "src" / "bindings.json", out, workers=1)
    return {
        "root": root,
        "manifest": manifest,
        "bindings": root / "src" / "bindings.json",
        "case_dir": out,
        "params": params,
    }


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    _acceptance_reports.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_reports:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}")
