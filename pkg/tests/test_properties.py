import json

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lossnet.approx import kelly_simple, lp_bound_general, objective, reduced_load
from lossnet.exact import acceptance_exact, aggregate, erlang_b, kdr, product_form
from lossnet.fluid import FluidModel
from lossnet.model import NetworkSpec, Uncontrolled, load_document, network_document, spec_to_dict

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def specs(draw, J_max=3, R_max=3, C_max=6, A_max=2):
    J = draw(st.integers(1, J_max))
    R = draw(st.integers(1, R_max))
    C = draw(st.lists(st.integers(1, C_max), min_size=J, max_size=J))
    A = [[draw(st.integers(0, min(A_max, C[j]))) for _ in range(R)] for j in range(J)]
    for r in range(R):
        if all(A[j][r] == 0 for j in range(J)):
            A[0][r] = 1
    nu = draw(st.lists(st.floats(0.05, 6.0), min_size=R, max_size=R))
    return NetworkSpec.build(nu, A, C)


@SETTINGS
@given(st.floats(0.01, 200.0), st.integers(0, 150))
def test_erlang_b_bounds_and_monotone(k, C):
    b = erlang_b(k, C)
    assert 0.0 <= b <= 1.0
    assert erlang_b(k, C + 1) <= b
    assert erlang_b(k * 1.1, C) >= b


@SETTINGS
@given(specs())
def test_kdr_equals_aggregated_product_form(spec):
    grid = kdr(spec).grid()
    assert abs(grid.sum() - 1.0) < 1e-12
    assert np.max(np.abs(grid - aggregate(spec, product_form(spec)))) < 1e-10


@SETTINGS
@given(specs())
def test_acceptance_in_unit_interval_and_littles_law(spec):
    rep = acceptance_exact(spec)
    assert np.all((rep.P >= 0) & (rep.P <= 1))
    assert np.allclose(rep.mean_occupancy, spec.kappa * rep.P, atol=1e-10)
    np.testing.assert_allclose(acceptance_exact(spec, method="kdr").P, rep.P, atol=1e-12)


@SETTINGS
@given(specs(), st.integers(2, 5))
def test_kelly_invariant_under_scaling(spec, N):
    a, b = kelly_simple(spec), kelly_simple(spec.scaled(N))
    np.testing.assert_allclose(a.P, b.P, atol=1e-7)


@SETTINGS
@given(specs(J_max=1, R_max=3, C_max=12))
def test_reduced_load_exact_for_one_resource(spec):
    np.testing.assert_allclose(reduced_load(spec).P, acceptance_exact(spec).P, atol=1e-9)


@SETTINGS
@given(specs(), st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3))
def test_lp_dominates_uncontrolled_value(spec, w):
    w = np.array(w[: spec.R])
    lp = lp_bound_general(spec, w)
    assert lp.objective >= objective(spec, acceptance_exact(spec).P, w) - 1e-8
    assert np.all(spec.A @ (spec.kappa * lp.P) <= spec.C + 1e-9)


@SETTINGS
@given(specs())
def test_document_round_trip(spec):
    doc = json.loads(json.dumps(network_document(spec)))
    spec2, pol = load_document(doc)
    assert spec_to_dict(spec2) == spec_to_dict(spec) and pol == Uncontrolled()


@SETTINGS
@given(specs(), st.floats(0.0, 1.0))
def test_interior_points_accept_every_class(spec, t):
    model = FluidModel(spec, Uncontrolled())
    # a point strictly inside the feasible region
    x = t * 0.5 * np.min(spec.C[:, None] / np.maximum(spec.A, 1), axis=0) / spec.R
    P, act, _ = model.acceptance(x)
    assert act == () and np.all(P == 1.0)
