import numpy as np
import pytest

from nodgames.track import (
    ArcUnwrapper,
    Track,
    chicane_track,
    load_track,
    make_track,
    oval_track,
    save_track,
    straight_track,
)


def test_straight_track_projection():
    track = straight_track(length=200.0, halfwidth=6.0)
    s, e = track.project((3.0, 0.4))
    assert s == pytest.approx(3.0, abs=1e-12)
    assert e == pytest.approx(0.4, abs=1e-12)


def test_centerline_has_zero_offset():
    track = make_track("chicane")
    for s_query in np.linspace(1.0, track.length - 1.0, 25):
        p = track.point_at(s_query)
        s, e = track.project(p)
        assert abs(e) < 1e-9
        assert abs(s - s_query) < 1e-6


def test_boundary_offset_roundtrip():
    track = oval_track()
    for s_query in np.linspace(0.0, track.length, 17, endpoint=False):
        w = track.halfwidth_at(s_query)
        p = track.point_at(s_query, e=w)
        _, e = track.project(p)
        # polyline discretization bounds the roundtrip error on curves
        assert e == pytest.approx(w, abs=1e-2)


def test_closed_track_wraps_arc_length():
    track = oval_track()
    # a point just behind the seam projects near length, just after near 0
    p_before = track.point_at(track.length - 0.5)
    p_after = track.point_at(0.5)
    s_b, _ = track.project(p_before)
    s_a, _ = track.project(p_after)
    assert track.length - 1.0 < s_b < track.length
    assert 0.0 <= s_a < 1.0


def test_frame_gradients_are_tangent_and_normal():
    track = make_track("chicane")
    seg = track.nearest_segment((70.0, 5.0))
    _, _, t, n = track.frame(70.0, 5.0, seg)
    np.testing.assert_allclose(np.dot(t, n), 0.0, atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(t), 1.0)
    np.testing.assert_allclose(np.linalg.norm(n), 1.0)
    # left normal: tangent rotated +90 degrees
    np.testing.assert_allclose(n, [-t[1], t[0]])


def test_validation_errors():
    with pytest.raises(ValueError):
        Track(np.array([0.0, 1.0, 1.0]), np.zeros((3, 2)), np.ones(3), False)
    with pytest.raises(ValueError):
        Track(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [1.0, 0.0]]),
              np.array([1.0, 0.0]), False)
    with pytest.raises(ValueError):
        make_track("figure-eight")


def test_arc_unwrapper_monotone_across_seam():
    track = oval_track()
    unwrapper = ArcUnwrapper(track, s0=track.length - 2.0)
    totals = [unwrapper.update(track.wrap(track.length - 2.0 + ds))
              for ds in np.linspace(0.0, 6.0, 13)]
    assert np.all(np.diff(totals) > 0)
    assert totals[-1] == pytest.approx(track.length + 4.0, abs=1e-9)


def test_heading_at_matches_tangent():
    track = straight_track()
    assert track.heading_at(10.0) == pytest.approx(0.0)
    oval = oval_track()
    # at the rightmost point of the oval the tangent points up (+y)
    assert oval.heading_at(0.0) == pytest.approx(np.pi / 2, abs=0.1)


def test_csv_roundtrip(tmp_path):
    track = make_track("oval", radius_x=40.0, radius_y=30.0)
    path = tmp_path / "track.csv"
    save_track(track, path)
    again = load_track(path)
    assert again.closed
    np.testing.assert_array_equal(again.s, track.s)
    np.testing.assert_array_equal(again.xy, track.xy)
    np.testing.assert_array_equal(again.halfwidth, track.halfwidth)


def test_chicane_shifts_laterally():
    track = chicane_track(offset=18.0)
    assert track.xy[0, 1] == pytest.approx(0.0)
    assert track.xy[-1, 1] == pytest.approx(18.0)
    assert not track.closed
