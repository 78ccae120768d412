"""Both kernel backends must agree bit for bit."""
import os
import subprocess
import sys

import numpy as np
import pytest

from partgroup import _accel, kernels
from partgroup.edges import edge_normals
from partgroup.metrics import disk_offsets

pytestmark = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not installed")
NB, NP = kernels.numba_impl, kernels.numpy_impl


def _grids(rng, n, side=40):
    for _ in range(n):
        h, w = (int(v) for v in rng.integers(1, side, 2))
        yield h, w


def test_scan_and_group_agree():
    rng = np.random.default_rng(51)
    for h, w in _grids(rng, 60):
        fg = rng.random((h, w)) < 0.7
        edge = rng.random((h, w)) < 0.2
        a = NB.scan_lines(fg, edge)
        b = NP.scan_lines(fg, edge)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        n = int(a[2] + a[3])
        np.testing.assert_array_equal(NB.group_lines(a[0], a[1], n), NP.group_lines(b[0], b[1], n))


def test_nms_agrees():
    rng = np.random.default_rng(52)
    for h, w in _grids(rng, 30):
        g = (rng.random((h, w)) * (rng.random((h, w)) < 0.5)).astype(np.float32)
        nx, ny = edge_normals(g)
        np.testing.assert_array_equal(NB.nms_suppress(g, nx, ny), NP.nms_suppress(g, nx, ny))


def test_greedy_match_agrees():
    rng = np.random.default_rng(53)
    for h, w in _grids(rng, 40, side=30):
        pred = rng.random((h, w)) < 0.2
        gt = rng.random((h, w)) < 0.2
        offs = disk_offsets(float(rng.uniform(0.5, 3)))
        assert NB.greedy_match(pred, gt, *offs) == NP.greedy_match(pred, gt, *offs)


def test_env_flag_selects_numpy():
    code = "from partgroup import _accel; print(_accel.backend_name())"
    env = dict(os.environ, PARTGROUP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["PARTGROUP_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numba"


def test_backends_registered():
    assert set(kernels.BACKENDS) == {"numpy", "numba"}
    assert _accel.backend_name() in kernels.BACKENDS
