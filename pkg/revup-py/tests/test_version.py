# from https://github.com/python-poetry/poetry/issues/144#issuecomment-877835259
import re
from pathlib import Path

import toml  # type: ignore[import-untyped]

import revup

PACKAGE_ROOT = Path(__file__).resolve().parents[1]


def test_versions_are_in_sync():
    """The pyproject.toml version matches `revup.__version__`."""
    pyproject = toml.loads((PACKAGE_ROOT / "pyproject.toml").read_text())
    assert revup.__version__ == pyproject["tool"]["poetry"]["version"]


def test_changelog_lists_current_version():
    changelog = (PACKAGE_ROOT / "CHANGELOG.md").read_text()
    latest = re.search(r"^## \[?(\d+\.\d+\.\d+)", changelog, re.MULTILINE)
    assert latest is not None
    assert latest.group(1) == revup.__version__
