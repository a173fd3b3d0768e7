import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperflock import flow, graph as gr, manifold as mf
from hyperflock.analysis import tangent_basis
from hyperflock.errors import InvalidParameter, NotOnSurface, NotSPD, TransversalityViolated

import oracles

S1, S2 = mf.sphere(2), mf.sphere(3)
E1 = np.eye(3)


# -- disagreement ------------------------------------------------------------


def test_disagreement_examples():
    g = gr.complete(2)
    assert flow.disagreement(g, np.array([[1.0, 0, 0], [1.0, 0, 0]])) == 0.0
    assert flow.disagreement(g, np.array([E1[0], -E1[0]])) == pytest.approx(2.0)
    assert flow.disagreement(gr.ring(4), oracles.splay_circle(4)) == pytest.approx(4.0)


@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
@settings(max_examples=30, deadline=None)
def test_disagreement_matches_double_sum(seed, n):
    rng = np.random.default_rng(seed)
    g = gr.complete(n)
    x = mf.sample_points(S2, rng, n)
    assert flow.disagreement(g, x) == pytest.approx(oracles.disagreement(g.adjacency, x), rel=1e-12)


def test_disagreement_batched():
    rng = np.random.default_rng(0)
    g = gr.ring(5)
    xs = mf.sample_points(S2, rng, 15).reshape(3, 5, 3)
    v = flow.disagreement(g, xs)
    assert v.shape == (3,)
    assert np.allclose(v, [flow.disagreement(g, x) for x in xs])


# -- fields ------------------------------------------------------------------


def test_gradient_field_examples():
    g = gr.complete(2)
    cons = np.array([[0.6, 0.8, 0.0]] * 2)
    assert np.all(flow.gradient_field(S2, g, cons) == 0)
    assert np.allclose(flow.gradient_field(S2, g, np.array([E1[0], -E1[0]])), 0, atol=1e-15)
    v = flow.gradient_field(S2, g, np.array([E1[0], E1[1]]))
    assert np.allclose(v[0], [0, 1, 0])


def test_zhu_field_consensus_zero():
    x = np.array([[0.6, 0.8, 0.0]] * 3)
    assert np.all(flow.zhu_field(S2, gr.complete(3), x) == 0)


def test_zhu_equals_gradient_on_unit_sphere():
    rng = np.random.default_rng(1)
    g = gr.complete(5)
    for _ in range(100):
        x = mf.sample_points(S2, rng, 5)
        assert np.max(np.abs(flow.zhu_field(S2, g, x) - flow.gradient_field(S2, g, x))) <= 1e-12


@pytest.mark.parametrize("field", ["gradient", "zhu"])
def test_fields_are_tangent(field):
    ell = mf.ellipsoid(np.diag([4.0, 1.0, 1.0]))
    rng = np.random.default_rng(2)
    g = gr.complete(2)
    for _ in range(50):
        x = mf.sample_points(ell, rng, 2)
        v = flow.FIELDS[field](ell, g, x)
        n = mf.gauss_map(ell, x)
        assert np.max(np.abs(np.sum(v * n, axis=1))) <= 1e-10


def test_zhu_transversality_guard():
    # on the tube circle (R + r cos p, 0, r sin p) the normal is (cos p, 0, sin p),
    # so <x, n> = R cos p + r vanishes at cos p = -r / R
    t = mf.torus(2.0, 0.5)
    cp = -0.25
    p0 = np.array([2.0 + 0.5 * cp, 0.0, 0.5 * np.sqrt(1 - cp**2)])
    assert abs(t.c(p0)) <= 1e-12
    x = np.array([p0, -p0])
    with pytest.raises(TransversalityViolated):
        flow.zhu_field(t, gr.complete(2), x)


@pytest.mark.parametrize("surface", [S2, mf.ellipsoid(np.diag([4.0, 1.0, 2.0])), mf.quartic(3)], ids=str)
def test_gradient_field_is_minus_gradient_of_V(surface):
    rng = np.random.default_rng(3)
    g = gr.ring(4)
    for _ in range(5):
        x = mf.sample_points(surface, rng, 4)
        bases = tangent_basis(surface, x)
        B = np.zeros((12, 8))
        for i in range(4):
            B[3 * i : 3 * i + 3, 2 * i : 2 * i + 2] = bases[i]
        fd = oracles.fd_gradient_on_surface(
            lambda y: oracles.disagreement(g.adjacency, y),
            lambda y: mf.retract(surface, y, tol=1e-14),
            x,
            B,
            step=1e-5,
        )
        field = B.T @ flow.gradient_field(surface, g, x).ravel()
        assert np.linalg.norm(field + fd) <= 1e-4 * np.linalg.norm(fd)


def test_is_equilibrium_examples():
    g = gr.complete(2)
    assert flow.is_equilibrium(S2, g, np.array([[0.0, 0, 1]] * 2))
    assert flow.is_equilibrium(S2, g, np.array([E1[0], -E1[0]]))
    assert not flow.is_equilibrium(S2, g, np.array([E1[0], E1[1]]))
    assert flow.field_norm(S2, g, np.array([E1[0], E1[1]])) == pytest.approx(1.0)


# -- integration -------------------------------------------------------------


def test_consensus_is_stationary():
    x0 = np.array([[0.0, 0.6, 0.8]] * 3)
    tr = flow.integrate(S2, gr.complete(3), x0, flow.FlowParams(t_end=1.0, stop_early=False))
    assert np.all(tr.states == x0)


def test_generic_start_reaches_consensus():
    rng = np.random.default_rng(4)
    x0 = mf.sample_points(S2, rng, 3)
    tr = flow.integrate(S2, gr.complete(3), x0, flow.FlowParams(t_end=50.0, stop_early=False))
    assert tr.disagreement[-1] <= 1e-8
    assert np.all(np.diff(tr.disagreement) <= 1e-9)
    assert tr.max_v_increase <= 1e-9
    assert tr.max_surface_residual <= 1e-12


def test_splay_circle_is_stationary():
    x0 = oracles.splay_circle(10)
    g = gr.ring(10)
    assert flow.field_norm(S1, g, x0) <= 1e-12
    tr = flow.integrate(S1, g, x0, flow.FlowParams(t_end=10.0, stop_early=False))
    assert abs(tr.disagreement[-1] - tr.disagreement[0]) <= 1e-6
    assert not tr.converged


@pytest.mark.parametrize("field", ["gradient", "zhu"])
def test_surface_invariance_every_sample(field):
    ell = mf.ellipsoid(np.diag([3.0, 1.0, 2.0]))
    x0 = mf.sample_points(ell, np.random.default_rng(5), 4)
    tr = flow.integrate(ell, gr.path(4), x0, flow.FlowParams(dt=0.01, t_end=5.0, stop_early=False), field)
    assert np.max(np.abs(ell.c(tr.states))) <= 1e-12
    assert tr.max_surface_residual <= 1e-12
    if field == "gradient":
        assert np.all(np.diff(tr.disagreement) <= 1e-9)


def test_record_every_and_times():
    x0 = mf.sample_points(S2, np.random.default_rng(6), 3)
    p = flow.FlowParams(dt=0.1, t_end=1.0, record_every=3, stop_early=False)
    tr = flow.integrate(S2, gr.path(3), x0, p)
    assert np.allclose(tr.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert tr.states.shape == (5, 3, 3)


def test_stacked_integration_matches_single_runs():
    rng = np.random.default_rng(7)
    g = gr.ring(4)
    xs = mf.sample_points(S2, rng, 8).reshape(2, 4, 3)
    p = flow.FlowParams(dt=0.05, t_end=2.0, stop_early=False)
    stacked = flow.integrate(S2, g, xs, p)
    for k in range(2):
        single = flow.integrate(S2, g, xs[k], p)
        assert np.allclose(stacked.states[:, k], single.states, atol=1e-14)


def test_batch_matches_single_runs():
    rng = np.random.default_rng(8)
    g = gr.complete(4)
    xs = mf.sample_points(S2, rng, 12).reshape(3, 4, 3)
    p = flow.FlowParams(dt=0.01, t_end=50.0)
    res = flow.integrate_batch(S2, g, xs, p)
    for k in range(3):
        tr = flow.integrate(S2, g, xs[k], p)
        assert res.t_final[k] == pytest.approx(tr.times[-1])
        assert res.stop_reason[k] == tr.stop_reason
        assert np.allclose(res.final_states[k], tr.final_state, atol=1e-13)
    assert res.converged.all()


def test_integrate_rejects_off_surface_start():
    with pytest.raises(NotOnSurface):
        flow.integrate(S2, gr.complete(2), np.array([[1.1, 0, 0], [1.0, 0, 0]]))


def test_integrate_rejects_disconnected_graph():
    g = gr.from_edge_list([(0, 1), (2, 3)])
    x0 = np.array([E1[0]] * 4)
    with pytest.raises(InvalidParameter):
        flow.integrate(S2, g, x0)


@pytest.mark.parametrize("kwargs", [{"dt": 0}, {"t_end": -1}, {"record_every": 0}, {"retract_tol": 1e-6}])
def test_flow_params_validation(kwargs):
    with pytest.raises(InvalidParameter):
        flow.FlowParams(**kwargs)


def test_csv_layout():
    x0 = mf.sample_points(S2, np.random.default_rng(9), 2)
    tr = flow.integrate(S2, gr.complete(2), x0, flow.FlowParams(dt=0.5, t_end=1.0, stop_early=False))
    buf = io.StringIO()
    flow.write_trajectory_csv(tr, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,agent,coord0,coord1,coord2,V"
    assert len(lines) == 1 + 3 * 2
    row = lines[1].split(",")
    assert float(row[2]) == x0[0, 0]  # round-trips exactly


# -- ellipsoid pullback ------------------------------------------------------


def test_pullback_examples():
    y = np.array([[0.3, -0.4, 0.5]])
    assert np.array_equal(flow.cholesky_pullback(np.eye(3), y / np.linalg.norm(y)), y / np.linalg.norm(y))
    A = np.diag([4.0, 1.0])
    assert np.allclose(flow.cholesky_pullback(A, np.array([0.5, 0.0])), [1.0, 0.0])


def test_pullback_errors():
    with pytest.raises(NotSPD):
        flow.cholesky_pullback(np.diag([1.0, -2.0]), np.array([1.0, 0.0]))
    with pytest.raises(NotOnSurface):
        flow.cholesky_pullback(np.eye(2), np.array([2.0, 0.0]))


def test_pullback_trajectories_coincide():
    A = np.diag([4.0, 1.0, 1.0])
    ell = mf.ellipsoid(A)
    g = gr.complete(5)
    y0 = mf.sample_points(ell, np.random.default_rng(10), 5)
    p = flow.FlowParams(dt=1e-3, t_end=2.0, record_every=50, stop_early=False)
    ty = flow.integrate(ell, g, y0, p, "zhu")
    tz = flow.integrate(S2, g, flow.cholesky_pullback(A, y0, level=2.0), p, "gradient")
    mapped = flow.cholesky_pullback(A, ty.states, level=2.0)
    assert np.max(np.linalg.norm(mapped - tz.states, axis=-1)) <= 1e-5
