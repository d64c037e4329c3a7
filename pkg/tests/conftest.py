import re

import numpy as np
import pytest
import torch

from trashaug import synthetic
from trashaug.dataset import DatasetManifest, ManifestEntry
from trashaug.images import save_image


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_manifest(tmp_path, n, *, class_label="bag", provenance="real", size=16,
                  split="train", seed=0, prefix=None):
    """Write n random toy images and a manifest over them."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    prefix = prefix or f"{provenance}_{class_label}"
    entries = []
    for i in range(n):
        arr = synthetic.blob_image(size, (0.8, 0.1, 0.1), rng)
        name = f"{prefix}_{i:04d}"
        save_image(arr, tmp_path / f"{name}.png")
        entries.append(
            ManifestEntry(
                image_id=name,
                path=f"{name}.png",
                class_label=class_label,
                provenance=provenance,
                split=split,
            )
        )
    return DatasetManifest(tmp_path, entries)


@pytest.fixture
def toy_corpus_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return synthetic.write_corpus(root, n_per_class=24, size=16, seed=7)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per acceptance criterion that ran."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = re.search(r"test_criterion_(\d+)", getattr(report, "nodeid", ""))
            if match is None:
                continue
            number = int(match.group(1))
            if outcome == "passed":
                results.setdefault(number, "PASS")
            else:
                results[number] = "FAIL"
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(f"criterion {number:>2}: {results[number]}")
