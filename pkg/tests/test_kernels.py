"""The compiled and pure-Python kernels agree."""
import numpy as np
import pytest

from conftest import random_specs
from lossnet import kernels
from lossnet.model import NetworkSpec, hunt_network, hunt_policy
from lossnet.sim import DAR, FullyConnected, HistogramRequest, HoldingTimeDist, run_experiment

pytestmark = pytest.mark.skipif("cython" not in kernels.available(), reason="compiled extension not built")


def test_kdr_nd_parity():
    for spec in random_specs(10, seed=71):
        a, wa = kernels.kdr_nd(spec.kappa, spec.A, spec.int_capacities(), backend="cython")
        b, wb = kernels.kdr_nd(spec.kappa, spec.A, spec.int_capacities(), backend="python")
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)
        assert wa < 1e-9 and wb < 1e-9


def test_kdr_1d_parity():
    loads = np.array([3.0, 1.5, 0.7])
    sizes = np.array([1, 2, 3])
    a = kernels.kdr_1d(loads, sizes, 40, backend="cython")
    b = kernels.kdr_1d(loads, sizes, 40, backend="python")
    np.testing.assert_allclose(a, b, rtol=1e-13)


@pytest.mark.parametrize(
    "target, kw",
    [
        (NetworkSpec.build([3.0, 2.0], [[1, 1], [0, 1]], [6, 3]), {}),
        (NetworkSpec.build([3.0, 2.0], [[1, 1], [0, 1]], [6, 3]), {"holding": HoldingTimeDist.hyperexponential(scv=3.0)}),
        (hunt_network([4.0, 4.0, 3.0], 2).scaled(5), {"policy": hunt_policy(4, 4), "histogram": HistogramRequest("class", 2)}),
        (FullyConnected(4, 5, 4.0), {"routing": DAR(1), "histogram": HistogramRequest("alternative")}),
    ],
)
def test_simulation_parity(target, kw):
    a = run_experiment(target, seed=81, horizon=60.0, replications=2, backend="cython", **kw)
    b = run_experiment(target, seed=81, horizon=60.0, replications=2, backend="python", **kw)
    np.testing.assert_array_equal(a.offered, b.offered)
    np.testing.assert_array_equal(a.accepted, b.accepted)
    np.testing.assert_allclose(a.mean_occupancy, b.mean_occupancy, rtol=1e-12)
    for ha, hb in zip(a.hist, b.hist):
        np.testing.assert_allclose(ha, hb, rtol=1e-12)


def test_backend_selection():
    assert kernels.BACKEND in kernels.available()
    with pytest.raises(ValueError):
        kernels.get("fortran")
