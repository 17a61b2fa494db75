from __future__ import annotations

import contextlib
import io
import os
from dataclasses import dataclass

import pytest

from abss import cli


@dataclass
class CliResult:
    code: int
    stdout: str
    stderr: str


def invoke(args: list[str], env: dict[str, str] | None = None) -> CliResult:
    """Run the CLI in-process, capturing streams and the exit code."""
    out, err = io.StringIO(), io.StringIO()
    saved = {}
    env = env or {}
    for key, value in env.items():
        saved[key] = os.environ.get(key)
        os.environ[key] = value
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            try:
                code = cli.main(args)
            except SystemExit as exc:  # argparse errors
                code = exc.code if isinstance(exc.code, int) else 2
    finally:
        for key, value in saved.items():
            if value is None:
                os.environ.pop(key, None)
            else:
                os.environ[key] = value
    return CliResult(code=code, stdout=out.getvalue(), stderr=err.getvalue())


@pytest.fixture(scope="session")
def fixture_suite(tmp_path_factory):
    """The frozen synthetic fixture suite, generated once per session."""
    from abss.synth import generate_fixture_suite

    dest = tmp_path_factory.mktemp("fixtures")
    manifests = generate_fixture_suite(dest)
    return dest, manifests
