"""Frame container and cube grid."""
import math

import numpy as np
import pytest

from skysift.core import (COL_DOPPLER, COL_SNR, FRAME_DT, POINT_DIM,
                          SIGNAL_COLS, SIGNAL_DIM, CubeGrid, Frame, RawPoint)


def _point(x, y, z, v=0.0, snr=10.0, scr=5.0, noise=-90.0, span=-60.0,
           repeat=-70.0):
    return np.array([x, y, z, v, snr, scr, noise, span, repeat])


class TestFrame:
    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            Frame(0, 0.0, np.zeros((3, 7)))

    def test_empty_frame_has_shape(self):
        f = Frame(0, 0.0, np.zeros((0,)))
        assert f.points.shape == (0, POINT_DIM)
        assert f.n_points == 0
        assert f.positions().shape == (0, 3)

    def test_positions_and_signals_split(self):
        pts = np.stack([_point(1, 2, 3, 4), _point(5, 6, 7, 8)])
        f = Frame(3, 3 * FRAME_DT, pts)
        assert np.array_equal(f.positions(), pts[:, :3])
        assert np.array_equal(f.signals(), pts[:, SIGNAL_COLS])
        assert f.signals().shape == (2, SIGNAL_DIM)

    def test_signal_vector_excludes_position_and_doppler(self):
        p = RawPoint(1.0, 2.0, 3.0, 9.5, 10.0, 5.0, -90.0, -60.0, -70.0)
        sig = p.signal_vector()
        assert sig.tolist() == [10.0, 5.0, -90.0, -60.0, -70.0]
        assert len(sig) == SIGNAL_DIM

    def test_raw_point_array_round_trip(self):
        p = RawPoint(1, 2, 3, 4, 5, 6, 7, 8, 9)
        arr = p.as_array()
        assert arr[COL_DOPPLER] == 4
        assert arr[COL_SNR] == 5
        assert RawPoint.from_array(arr) == p


class TestCubeGrid:
    def test_rejects_bad_edges(self):
        with pytest.raises(ValueError, match="edge must be positive"):
            CubeGrid(edge_m=0.0)
        with pytest.raises(ValueError, match="extent must be positive"):
            CubeGrid(edge_m=40.0, extent=(100.0, -1.0, 100.0))

    def test_origin_cube(self):
        g = CubeGrid(edge_m=40.0, origin=(0.0, 0.0, 0.0))
        assert g.cube_index(5.0, 5.0, 5.0) == (0, 0, 0)

    def test_boundary_point_goes_to_higher_cube(self):
        g = CubeGrid(edge_m=40.0, origin=(0.0, 0.0, 0.0))
        assert g.cube_index(40.0, 0.0, 0.0) == (1, 0, 0)

    def test_negative_origin(self):
        g = CubeGrid(edge_m=40.0, origin=(0.0, 0.0, -40.0))
        assert g.cube_index(79.9, 41.0, -5.0) == (1, 1, 0)

    def test_outside_volume_is_none(self):
        g = CubeGrid(edge_m=40.0, origin=(0.0, 0.0, 0.0),
                     extent=(80.0, 80.0, 80.0))
        assert g.cube_index(-0.1, 5.0, 5.0) is None
        assert g.cube_index(80.0, 5.0, 5.0) is None

    def test_shape_is_ceil_of_extent(self):
        g = CubeGrid(edge_m=40.0, extent=(1000.0, 1000.0, 390.0))
        assert g.shape == (25, 25, 10)
        assert g.n_cubes == 25 * 25 * 10

    def test_vectorised_lookup_matches_scalar(self):
        # oracle: plain floor division per point, no numpy
        g = CubeGrid(edge_m=40.0, origin=(-60.0, 20.0, -40.0),
                     extent=(500.0, 480.0, 200.0))
        rng = np.random.default_rng(11)
        pts = rng.uniform(-120.0, 560.0, size=(400, 3))
        ids, inside = g.cube_indices(pts)
        for k, (x, y, z) in enumerate(pts):
            trip = []
            ok = True
            for v, o, e in ((x, -60.0, 500.0), (y, 20.0, 480.0),
                            (z, -40.0, 200.0)):
                c = math.floor((v - o) / 40.0)
                trip.append(c)
                ok = ok and 0 <= v - o < e
            assert inside[k] == ok
            if ok:
                assert tuple(ids[k]) == tuple(trip)
                assert g.cube_index(x, y, z) == tuple(trip)
            else:
                assert g.cube_index(x, y, z) is None

    def test_cube_center(self):
        g = CubeGrid(edge_m=40.0, origin=(-20.0, 0.0, 0.0))
        assert np.allclose(g.cube_center((0, 0, 0)), [0.0, 20.0, 20.0])
        assert np.allclose(g.cube_center((2, 1, 0)), [80.0, 60.0, 20.0])

    def test_dict_round_trip(self):
        g = CubeGrid(edge_m=25.0, origin=(1.0, 2.0, 3.0),
                     extent=(100.0, 200.0, 50.0))
        g2 = CubeGrid.from_dict(g.to_dict())
        assert g2 == g
        assert g2.shape == g.shape
