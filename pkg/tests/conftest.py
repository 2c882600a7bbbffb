"""Shared helpers: in-process CLI calls, experiment workspaces and the acceptance report.

Experiment workspaces are temporary by default.  Setting ``CLODS_EXPERIMENT_CACHE`` to a
directory keeps them there under a key derived from the package source, and stages are
re-run with ``--resume`` so an unchanged package skips finished work.
"""
import hashlib
import os
from pathlib import Path

import pytest

from clods.cli import main

SRC = Path(__file__).resolve().parents[1] / "src" / "clods"
REPORT = []


def cli(*argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    assert code == 0, f"clods {' '.join(map(str, argv))} exited with {code}"


def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    h.update((Path(__file__).parent / "experiments.py").read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Returns a function name -> directory for one experiment."""
    cache = os.environ.get("CLODS_EXPERIMENT_CACHE")
    base = Path(cache) / source_digest() if cache else tmp_path_factory.mktemp("experiments")

    def get(name):
        d = base / name
        d.mkdir(parents=True, exist_ok=True)
        return d
    return get


@pytest.fixture(scope="session")
def flag_seq(workspace):
    import experiments
    return experiments.flag_sequence(workspace("flag_sequence"))


@pytest.fixture(scope="session")
def fold(workspace):
    import experiments
    return experiments.fold_ablation(workspace("fold"))


@pytest.fixture(scope="session")
def family(workspace):
    import experiments
    return experiments.flag_family_study(workspace("flag_family"))


def report(cid, ok, detail):
    line = f"{cid} {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append((cid, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda item: (len(item[0]), item[0])
    for _, line in sorted(REPORT, key=order):
        terminalreporter.write_line(line)
