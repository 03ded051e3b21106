import numpy as np
import pytest

from nodgames import autodiff as ad
from nodgames.costs import (
    CollisionPenalty,
    ControlEffort,
    CostModel,
    Gaussian,
    Linear,
    LineCtx,
    PlayerCosts,
    ShapedCost,
    Softplus,
    Square,
    TrackCtx,
    arc_gap,
    arc_length,
    heading_error,
    lateral,
    lateral_diff,
    speed,
)
from nodgames.track import make_track, straight_track
from util import finite_difference_gradient, finite_difference_jacobian


def _fd_quad_check(term, x, ctx_builder, u=None, atol=1e-5):
    """Term gradient/Hessian must match finite differences of its value."""
    ctx = ctx_builder(x)
    h, g = term.quad(x, u, ctx)

    def val(v):
        return float(ad.value_of(term.value(v, u, ctx_builder(v))))

    g_fd = finite_difference_gradient(val, x)
    np.testing.assert_allclose(np.asarray(ad.value_of(g)), g_fd, atol=atol)

    def grad_at(v):
        c = ctx_builder(v)
        _, gv = term.quad(v, u, c)
        return np.asarray(ad.value_of(gv))

    h_fd = finite_difference_jacobian(grad_at, x)
    np.testing.assert_allclose(np.asarray(ad.value_of(h)), h_fd, atol=atol)


def test_profiles_scalar_derivatives():
    for profile in (Square(), Linear(), Softplus(kappa=0.7), Gaussian(sigma=1.3)):
        for w in (-1.5, -0.1, 0.0, 0.4, 2.0):
            h = 1e-6
            df_fd = (float(ad.value_of(profile.f(w + h)))
                     - float(ad.value_of(profile.f(w - h)))) / (2 * h)
            d2f_fd = (float(ad.value_of(profile.df(w + h)))
                      - float(ad.value_of(profile.df(w - h)))) / (2 * h)
            assert float(ad.value_of(profile.df(w))) == pytest.approx(df_fd, abs=1e-6)
            assert float(ad.value_of(profile.d2f(w))) == pytest.approx(d2f_fd, abs=1e-6)


def test_line_ctx_features():
    x = np.array([10.0, 3.0, 6.0, 4.0])  # two cars: (s, v) each
    ctx = LineCtx(x, num_cars=2)
    v, g = arc_gap(0, 1, offset=1.0).eval(ctx)
    assert v == pytest.approx(3.0)
    np.testing.assert_array_equal(g, [1.0, 0.0, -1.0, 0.0])
    v, g = speed(1, target=5.0).eval(ctx)
    assert v == pytest.approx(-1.0)
    np.testing.assert_array_equal(g, [0.0, 0.0, 0.0, 1.0])


def test_track_ctx_features_on_straight():
    track = straight_track()
    x = np.array([3.0, 0.4, 0.05, 9.0])
    ctx = TrackCtx(x, track, num_cars=1)
    v, _ = arc_length(0).eval(ctx)
    assert float(ad.value_of(v)) == pytest.approx(3.0)
    v, _ = lateral(0).eval(ctx)
    assert float(ad.value_of(v)) == pytest.approx(0.4)
    v, _ = heading_error(0).eval(ctx)
    assert float(ad.value_of(v)) == pytest.approx(0.05)
    assert ctx.halfwidth(0) == pytest.approx(6.0)


def test_closed_track_arc_gap_is_seam_free():
    track = make_track("oval")
    length = track.length
    # rival just before the seam, ego just after: true gap is small
    pe = track.point_at(0.8)
    pr = track.point_at(length - 0.7)
    x = np.array([pe[0], pe[1], track.heading_at(0.8), 10.0,
                  pr[0], pr[1], track.heading_at(length - 0.7), 10.0])
    ctx = TrackCtx(x, track, num_cars=2)
    gap, _ = arc_gap(0, 1).eval(ctx)
    assert float(ad.value_of(gap)) == pytest.approx(1.5, abs=0.05)


def test_shaped_cost_quadraticization_line():
    terms = [
        ShapedCost(arc_gap(0, 1, offset=2.0), Softplus(kappa=0.8), gain=3.0),
        ShapedCost(speed(0, target=5.0), Square(), gain=0.5),
        ShapedCost(arc_gap(1, 0), Gaussian(sigma=2.0), gain=4.0),
        ShapedCost(arc_length(0), Linear(), gain=-1.0),
    ]
    x = np.array([4.0, 3.5, 2.5, 4.5])
    for term in terms:
        _fd_quad_check(term, x, lambda v: LineCtx(v, 2))


def test_shaped_cost_quadraticization_track():
    track = make_track("chicane")
    x = np.array([30.0, 1.0, 0.1, 8.0, 25.0, -2.0, -0.05, 9.0])
    terms = [
        ShapedCost(lateral(0), Square(), gain=1.5),
        ShapedCost(lateral_diff(0, 1), Gaussian(sigma=1.0), gain=2.0),
        ShapedCost(heading_error(1), Square(), gain=0.7),
        ShapedCost(arc_gap(1, 0, offset=-3.0), Softplus(kappa=1.0), gain=2.5),
    ]
    for term in terms:
        # fixed segment assignment: perturbations stay within one segment
        _fd_quad_check(term, x, lambda v: TrackCtx(v, track, 2), atol=2e-5)


def test_control_effort():
    term = ControlEffort([0.5, 2.0])
    u = np.array([1.0, -0.5])
    assert float(term.value(None, u, None)) == pytest.approx(0.5 + 0.5)
    h, g = term.quad(None, u, None)
    np.testing.assert_allclose(h, np.diag([1.0, 4.0]))
    np.testing.assert_allclose(g, [1.0, -2.0])
    with pytest.raises(ValueError):
        ControlEffort([-1.0])


def test_collision_penalty_matches_finite_differences():
    track = straight_track()
    term = CollisionPenalty(0, 1, radius=4.0, kappa=0.6, gain=5.0)
    # overlapping and separated configurations
    for x in (np.array([10.0, 0.5, 0.0, 8.0, 11.5, -0.5, 0.0, 8.0]),
              np.array([10.0, 0.5, 0.0, 8.0, 20.0, 2.0, 0.0, 8.0])):
        _fd_quad_check(term, x, lambda v: TrackCtx(v, track, 2))
    # far apart the penalty is negligible
    far = TrackCtx(np.array([0.0, 0.0, 0.0, 1.0, 100.0, 0.0, 0.0, 1.0]), track, 2)
    assert float(ad.value_of(term.value(far.x, None, far))) < 1e-10


def _toy_model():
    residual = (
        ShapedCost(speed(0, target=5.0), Square(), gain=0.5),
        ControlEffort([0.1]),
    )
    basis = (
        ("ahead", ShapedCost(arc_gap(1, 0), Softplus(kappa=1.0), gain=2.0)),
        ("close", ShapedCost(arc_gap(0, 1), Gaussian(sigma=2.0), gain=1.0)),
    )
    rival = PlayerCosts(residual=(ControlEffort([0.1]),),
                        basis=(("lead", ShapedCost(arc_gap(0, 1), Softplus(), gain=1.0)),))
    return CostModel(players=(PlayerCosts(residual, basis), rival),
                     ctx_builder=lambda x: LineCtx(x, 2))


def test_stage_cost_opinion_weighting():
    model = _toy_model()
    x = np.array([3.0, 4.0, 5.0, 4.0])
    u = np.array([0.5])
    ctx = model.make_ctx(x)
    c0 = float(ad.value_of(model.stage_cost(0, x, u, np.zeros(2), ctx)))
    c1 = float(ad.value_of(model.stage_cost(0, x, u, np.array([1.0, 0.0]), ctx)))
    basis_val = float(ad.value_of(model.players[0].basis[0][1].value(x, u, ctx)))
    assert c1 - c0 == pytest.approx(basis_val, rel=1e-12)
    with pytest.raises(ValueError):
        model.stage_cost(0, x, u, np.zeros(3), ctx)


def test_basis_costs_must_be_nonnegative():
    with pytest.raises(ValueError):
        PlayerCosts(residual=(), basis=(
            ("bad", ShapedCost(arc_length(0), Linear(), gain=1.0)),))
    with pytest.raises(ValueError):
        PlayerCosts(residual=(), basis=(
            ("neg", ShapedCost(speed(0), Square(), gain=-1.0)),))
    with pytest.raises(ValueError):
        PlayerCosts(residual=(), basis=(
            ("a", ControlEffort([1.0])), ("a", ControlEffort([2.0]))))


def test_quadraticize_matches_finite_differences():
    model = _toy_model()
    x = np.array([3.0, 4.5, 4.0, 4.2])
    u = np.array([0.7])
    z = np.array([0.8, 0.3])

    q_mat, q_vec, r_mat, r_vec = model.quadraticize(
        0, x, u, z, model.make_ctx(x))

    def cost_x(v):
        return float(ad.value_of(model.stage_cost(0, v, u, z, model.make_ctx(v))))

    def cost_u(v):
        return float(ad.value_of(model.stage_cost(0, x, v, z, model.make_ctx(x))))

    np.testing.assert_allclose(q_vec, finite_difference_gradient(cost_x, x), atol=1e-5)
    np.testing.assert_allclose(r_vec, finite_difference_gradient(cost_u, u), atol=1e-5)

    def grad_x(v):
        q = model.quadraticize(0, v, u, z, model.make_ctx(v))[1]
        return np.asarray(ad.value_of(q))

    np.testing.assert_allclose(q_mat, finite_difference_jacobian(grad_x, x), atol=1e-5)
    np.testing.assert_allclose(r_mat, np.array([[0.2]]))


def test_quadraticize_terminal_skips_control_terms():
    model = _toy_model()
    x = np.array([3.0, 4.5, 4.0, 4.2])
    u = np.array([0.7])
    _, _, r_mat, r_vec = model.quadraticize(
        0, x, u, np.zeros(2), model.make_ctx(x), terminal=True)
    assert np.all(np.asarray(ad.value_of(r_mat)) == 0)
    assert np.all(np.asarray(ad.value_of(r_vec)) == 0)


def test_taped_quadraticize_matches_plain():
    model = _toy_model()
    x = np.array([3.0, 4.5, 4.0, 4.2])
    u = np.array([0.7])
    z = np.array([0.8, 0.3])
    plain = model.quadraticize(0, x, u, z, model.make_ctx(x))
    xt, ut, zt = ad.leaf(x), ad.leaf(u), ad.leaf(z)
    taped = model.quadraticize(0, xt, ut, zt, model.make_ctx(xt))
    for p, t in zip(plain, taped):
        np.testing.assert_allclose(np.asarray(ad.value_of(t)),
                                   np.asarray(ad.value_of(p)), rtol=1e-12)


def test_taped_stage_cost_gradient_wrt_opinion():
    model = _toy_model()
    x = np.array([3.0, 4.5, 4.0, 4.2])
    u = np.array([0.7])
    z = np.array([0.8, 0.3])
    leaf = ad.leaf(z)
    out = model.stage_cost(0, x, u, leaf, model.make_ctx(x))
    ad.backward(out)
    g_fd = finite_difference_gradient(
        lambda v: float(ad.value_of(model.stage_cost(0, x, u, v, model.make_ctx(x)))), z)
    np.testing.assert_allclose(np.asarray(leaf.grad), g_fd, atol=1e-6)
