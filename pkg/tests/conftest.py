import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import os

import pytest
import torch
from hypothesis import settings

from ccreid.config import TrainConfig
from ccreid.synth import GenConfig, generate_dataset

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """6 identities (3 train, 3 test), 3 outfits, 4 samples each: 72 samples."""
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(GenConfig(seed=3, num_identities=6, outfits_per_identity=3, samples_per_outfit=4), root)
    return root


@pytest.fixture
def tiny_cfg(tiny_root):
    return TrainConfig(seed=0, data_root=str(tiny_root), steps=12, teacher_steps=12, P=3, K=2,
                       channels=8, head_channels=8, embed_dim=8)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(pytestconfig):
    """Records one pass/fail summary line per acceptance criterion."""
    lines = pytestconfig.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
