import json

import numpy as np
import pytest

from lossnet.errors import InvalidHorizon, PreconditionError
from lossnet.exact import acceptance_controlled, acceptance_exact
from lossnet.model import NetworkSpec, Reservation
from lossnet.sim import (
    DAR,
    LBA,
    FullyConnected,
    HistogramRequest,
    HoldingTimeDist,
    Star,
    dar_route,
    lba_route,
    occupancy_histogram,
    run_experiment,
    run_replication,
)

MM22 = NetworkSpec.build([2.0], [[1]], [2])


def test_erlang_link_within_interval():
    st = run_experiment(MM22, seed=3, horizon=2000.0, replications=20)
    assert abs(st.P[0] - 0.6) <= 4 * st.P_halfwidth[0]
    assert st.replications == 20 and len(st.seeds) == 20
    assert np.all(st.offered >= st.accepted)


def test_reproducible_and_independent_of_workers():
    a = run_experiment(MM22, seed=7, horizon=200.0, replications=4)
    b = run_experiment(MM22, seed=7, horizon=200.0, replications=4)
    c = run_experiment(MM22, seed=7, horizon=200.0, replications=4, workers=2)
    np.testing.assert_array_equal(a.P_reps, b.P_reps)
    np.testing.assert_array_equal(a.P_reps, c.P_reps)
    d = run_experiment(MM22, seed=8, horizon=200.0, replications=4)
    assert not np.array_equal(a.P_reps, d.P_reps)


def test_replication_seed_is_spawned_child():
    st = run_experiment(MM22, seed=5, horizon=100.0, replications=3)
    one = run_replication(MM22, seed=np.random.SeedSequence(5, spawn_key=(2,)), horizon=100.0)
    assert one.P[0] == pytest.approx(st.P_reps[2, 0])
    assert st.seeds[2] == {"entropy": 5, "spawn_key": [2]}


def test_reservation_against_exact_solve():
    spec = NetworkSpec.build([3.0, 3.0], [[1, 1]], [6])
    pol = Reservation((0, 2))
    ref = acceptance_controlled(spec, pol).P
    st = run_experiment(spec, pol, seed=11, horizon=2000.0, replications=20)
    assert np.all(np.abs(st.P - ref) <= 4 * st.P_halfwidth)


@pytest.mark.parametrize("holding", [HoldingTimeDist.deterministic(), HoldingTimeDist.hyperexponential(scv=4.0)])
def test_insensitivity_single_link(holding):
    spec = NetworkSpec.build([3.0, 1.0], [[1, 2]], [6])
    ref = acceptance_exact(spec).P
    st = run_experiment(spec, holding=holding, seed=21, horizon=2000.0, replications=20)
    assert np.all(np.abs(st.P - ref) <= 4 * st.P_halfwidth)


def test_holding_moments():
    rng = np.random.default_rng(0)
    h = HoldingTimeDist.hyperexponential(scv=4.0)
    assert h.squared_cv == pytest.approx(4.0)
    x = h.sample(2.0, 200_000, rng)
    assert x.mean() == pytest.approx(0.5, rel=0.02)
    assert x.var() / x.mean() ** 2 == pytest.approx(4.0, rel=0.05)
    assert HoldingTimeDist.deterministic().squared_cv == 0.0
    with pytest.raises(PreconditionError):
        HoldingTimeDist.hyperexponential(scv=0.5).phase_p


def test_invalid_times():
    with pytest.raises(InvalidHorizon):
        run_experiment(MM22, seed=1, horizon=5.0, warmup=10.0)
    with pytest.raises(PreconditionError):
        run_experiment(MM22, seed=None)
    with pytest.raises(PreconditionError):
        run_replication(MM22, seed=1, horizon=50.0, initial_state=[3])


def test_littles_law_in_simulation():
    spec = NetworkSpec.build([3.0, 2.0], [[1, 1], [0, 1]], [6, 3])
    st = run_experiment(spec, seed=31, horizon=1000.0, replications=20)
    assert np.all(st.littles_law_gap(spec.kappa) <= 3.0)


def test_fully_connected_indexing():
    t = FullyConnected(5, 10, 4.0)
    assert t.K == 10
    assert sorted(t.link(u, v) for u, v in t.pairs) == list(range(10))
    assert t.link(3, 1) == t.link(1, 3)
    assert t.transit_nodes(0, 4) == [1, 2, 3]
    assert len(t.routes()[0]) == 4


def test_star_rates():
    t = Star(4, 10, {1: 6.0, 2: 3.0})
    spec = t.network()
    assert spec.R == 4 + 6
    # offered load per link from each size equals the profile entry
    per_link = spec.A @ spec.nu
    np.testing.assert_allclose(per_link, [9.0] * 4)


def test_dar_and_lba_decisions():
    t = FullyConnected(4, 3)
    free = np.full(t.K, 3)
    table = {(0, 1): 2}
    rng = np.random.default_rng(0)
    assert dar_route(t, free, (0, 1), table, 1, rng).kind == "direct"
    free[t.link(0, 1)] = 0
    assert dar_route(t, free, (0, 1), table, 1, rng) == dar_route(t, free, (0, 1), table, 1, rng)
    assert dar_route(t, free, (0, 1), table, 1, rng).via == 2
    free[t.link(0, 2)] = 1  # below the reservation level
    assert dar_route(t, free, (0, 1), table, 1, rng).kind == "reject"
    assert table[(0, 1)] in (2, 3)

    occ = np.zeros(t.K, dtype=int)
    occ[t.link(0, 1)] = 3
    occ[t.link(0, 2)] = 2
    d = lba_route(t, occ, (0, 1), 0)
    assert d.kind == "via" and d.via == 3
    occ[t.link(1, 3)] = 3
    assert lba_route(t, occ, (0, 1), 0).via == 2
    assert lba_route(t, occ, (0, 1), 1).kind == "reject"


@pytest.mark.parametrize("routing", [DAR(1), LBA(1)])
def test_alternative_routing_runs(routing):
    t = FullyConnected(5, 10, 9.0)
    st = run_experiment(t, routing=routing, seed=41, horizon=100.0, replications=3)
    assert np.all(st.accepted_alt >= 0) and st.accepted_alt.sum() > 0
    assert np.all((st.P > 0) & (st.P <= 1))


def test_histogram_outputs():
    st = run_experiment(MM22, seed=51, horizon=500.0, replications=3, histogram=HistogramRequest("class", 0))
    h = occupancy_histogram(st)
    assert h.weight.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(h.weight, [0.2, 0.4, 0.4], atol=0.03)
    assert h.mode in (1.0, 2.0)
    lines = h.to_csv().splitlines()
    assert lines[0] == "bin_lo,bin_hi,weight" and len(lines) == 4
    h2 = occupancy_histogram(st, bin_width=2)
    assert h2.bin_width == 2 and len(h2.weight) == 2


def test_stats_json():
    st = run_experiment(MM22, seed=61, horizon=100.0, replications=2)
    d = json.loads(st.to_json())
    assert {"P", "P_halfwidth", "seeds", "generator", "backend"} <= set(d)
