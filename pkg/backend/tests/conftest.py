from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest


def _ensure_backend_on_syspath() -> None:
    """
    Ensure the backend/ directory is importable as a top-level package root.

    This allows test modules to import:
      - common.*
      - stages.*
      - services.*
      - schemas.*
      - routes.*
    when running `pytest` from the repo root.
    """
    this_file = Path(__file__).resolve()
    backend_dir = this_file.parents[1]  # .../backend
    repo_root = backend_dir.parent

    b = str(backend_dir)
    r = str(repo_root)

    # Put backend/ first so "common" resolves to backend/common, etc.
    if b not in sys.path:
        sys.path.insert(0, b)

    if r not in sys.path:
        sys.path.append(r)


def _acceptance_enabled(config: pytest.Config) -> bool:
    """
    Acceptance experiments run when either:
      - RUN_ACCEPTANCE_TESTS=1 is set, OR
      - pytest is run with --acceptance
    """
    env_flag = os.getenv("RUN_ACCEPTANCE_TESTS", "").strip()
    if env_flag == "1":
        return True
    return bool(getattr(config.option, "acceptance", False))


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--acceptance",
        action="store_true",
        default=False,
        help="Enable tests marked with @pytest.mark.acceptance (minutes of CPU).",
    )


def pytest_configure(config: pytest.Config) -> None:
    # Ensure marker is known even if pytest.ini changes
    config.addinivalue_line("markers", "acceptance: long-running end-to-end experiments (skipped by default)")


def pytest_runtest_setup(item: pytest.Item) -> None:
    """
    Auto-skip any test marked acceptance unless acceptance mode is enabled.
    """
    if item.get_closest_marker("acceptance") is None:
        return

    if not _acceptance_enabled(item.config):
        pytest.skip("Skipped acceptance experiment (set RUN_ACCEPTANCE_TESTS=1 or run `pytest --acceptance` to enable).")


_ensure_backend_on_syspath()

FIXTURES_DIR = Path(__file__).resolve().parents[1] / "common" / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)


@pytest.fixture
def experiment_cfg(tmp_path):
    """The committed 4-corner experiment, writing into a per-test directory."""
    from schemas.experiment import apply_overrides, load_experiment

    return apply_overrides(load_experiment(FIXTURES_DIR / "experiment.json"), out=str(tmp_path / "out"))
