import sys

import numpy as np
import pytest

from fullflow import kernels
from fullflow.costvolume import CostVolume, EdgeWeights
from fullflow.model import LabelSpace


@pytest.fixture(params=sorted(kernels.available()))
def backend(request):
    """Each available kernel backend in turn (compiled core and numpy fallback)."""
    return request.param


def random_instance(rng, h, w, radius, unary_scale=1.0):
    """Random unaries in [0, unary_scale) and edge weights in (0, 1]."""
    labels = LabelSpace(radius)
    vals = rng.uniform(0, unary_scale, (h * w, labels.size)).astype(np.float32)
    cost = CostVolume(w, h, labels, vals)
    weights = EdgeWeights(rng.uniform(0.05, 1.0, (h, max(w - 1, 0))),
                          rng.uniform(0.05, 1.0, (max(h - 1, 0), w)))
    return cost, weights


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran in this session."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
