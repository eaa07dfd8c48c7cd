from __future__ import annotations

import json
from pathlib import Path

import pytest

from splab.runner import main

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_PATH = Path(__file__).resolve().parent / "golden" / "dynamics.json"


def run_preset(preset: str, out_dir: Path) -> Path:
    rc = main(
        ["train", str(REPO_ROOT / "configs" / preset), "--output-dir", str(out_dir), "--quiet"]
    )
    assert rc == 0, f"training run for {preset} failed"
    return out_dir


def read_metrics(run_dir: Path) -> list[dict]:
    return [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]


@pytest.fixture(scope="session")
def standard_run(tmp_path_factory) -> Path:
    """The pinned-seed standard experiment (rq3_standard preset)."""
    return run_preset("rq3_standard.cfg", tmp_path_factory.mktemp("rq3_standard") / "run")


@pytest.fixture(scope="session")
def frozen_run(tmp_path_factory) -> Path:
    """The pinned-seed frozen-proposer experiment (rq3_frozen preset)."""
    return run_preset("rq3_frozen.cfg", tmp_path_factory.mktemp("rq3_frozen") / "run")


@pytest.fixture(scope="session")
def golden() -> dict:
    return json.loads(GOLDEN_PATH.read_text())
