import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def quantized(a):
    """Round to the 8-bit grid the decoder produces."""
    return np.rint(np.asarray(a) * 255.0) / 255.0


def metric_fixtures():
    """Named (saliency, mask) pairs: perfect, inverted, constant-0.5 and 8x8 mixed cases."""
    r = np.random.Generator(np.random.PCG64(7))
    gt_rect = np.zeros((8, 8))
    gt_rect[2:6, 2:7] = 1
    gt_blob = np.zeros((8, 8))
    gt_blob[1:4, 1:3] = 1
    gt_blob[4:7, 3:7] = 1
    gt_blob[5, 1] = 1

    mixed_rect = quantized(np.where(gt_rect > 0, r.uniform(0.4, 1.0, (8, 8)), r.uniform(0.0, 0.6, (8, 8))))
    mixed_blob = quantized(np.where(gt_blob > 0, r.uniform(0.3, 1.0, (8, 8)), r.uniform(0.0, 0.5, (8, 8))))
    noise = quantized(r.uniform(0, 1, (8, 8)))
    return {
        "perfect": (gt_rect.copy(), gt_rect),
        "inverted": (1.0 - gt_rect, gt_rect),
        "constant_half": (np.full((8, 8), 0.5), gt_rect),
        "mixed_rect": (mixed_rect, gt_rect),
        "mixed_blob": (mixed_blob, gt_blob),
        "noise_rect": (noise, gt_rect),
    }


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
