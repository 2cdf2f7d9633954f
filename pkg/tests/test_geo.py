"""Geometry and frame tests: ENU round trips, angles, error metrics."""

import numpy as np
import pytest

from rangeloc import geo


REF = geo.geodetic_to_ecef(50.0, 6.0, 100.0)  # mid-latitude near-surface point
EQUATOR = geo.geodetic_to_ecef(0.0, 0.0, 0.0)


def up_at(ref):
    return np.asarray(ref) / np.linalg.norm(ref)


class TestEnuFrames:
    def test_identity_point_maps_to_origin(self):
        assert np.allclose(geo.ecef_to_enu(REF, REF), 0.0, atol=1e-12)

    def test_point_along_normal_is_pure_up(self):
        p = REF + up_at(REF)
        assert np.allclose(geo.ecef_to_enu(p, REF), [0.0, 0.0, 1.0], atol=1e-9)

    def test_origin_enu_maps_to_ref(self):
        assert np.allclose(geo.enu_to_ecef([0.0, 0.0, 0.0], REF), REF, atol=1e-9)

    def test_east_axis_at_equator(self):
        # At (lat 0, lon 0) the east direction is +y in ECEF.
        p = geo.enu_to_ecef([1.0, 0.0, 0.0], EQUATOR)
        assert np.allclose(p, EQUATOR + np.array([0.0, 1.0, 0.0]), atol=1e-9)

    def test_round_trip_1000_seeded_samples(self):
        rng = np.random.default_rng(12345)
        for _ in range(1000):
            ref = geo.geodetic_to_ecef(
                rng.uniform(-89, 89), rng.uniform(-180, 180), rng.uniform(0, 5000)
            )
            p = ref + rng.uniform(-1e5, 1e5, size=3)
            back = geo.enu_to_ecef(geo.ecef_to_enu(p, ref), ref)
            assert np.linalg.norm(back - p) < 1e-9

    def test_rotation_is_orthonormal(self):
        rot = geo.enu_rotation(REF)
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)

    def test_degenerate_frame_at_earth_center(self):
        with pytest.raises(geo.DegenerateFrameError):
            geo.ecef_to_enu([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])


class TestElevationAzimuth:
    def test_zenith(self):
        sat = REF + 2.0e7 * up_at(REF)
        el, az = geo.elevation_azimuth(sat, REF)
        assert el == pytest.approx(90.0, abs=1e-9)
        assert az == 0.0

    def test_due_north_in_tangent_plane(self):
        sat = geo.enu_to_ecef([0.0, 1000.0, 0.0], REF)
        el, az = geo.elevation_azimuth(sat, REF)
        assert el == pytest.approx(0.0, abs=1e-9)
        # azimuth 0 modulo the 360 wrap
        assert min(az, 360.0 - az) == pytest.approx(0.0, abs=1e-9)

    def test_against_trigonometric_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            enu = rng.uniform(-1e6, 1e6, size=3)
            if np.linalg.norm(enu) < 1.0:
                continue
            sat = geo.enu_to_ecef(enu, REF)
            el, az = geo.elevation_azimuth(sat, REF)
            e, n, u = enu
            el_ref = np.degrees(np.arctan2(u, np.hypot(e, n)))
            az_ref = np.degrees(np.arctan2(e, n)) % 360.0
            assert el == pytest.approx(el_ref, abs=1e-9)
            assert az == pytest.approx(az_ref, abs=1e-9)

    def test_rotation_consistency_about_normal(self):
        # Rotating the satellite about the local normal shifts azimuth by the
        # rotation angle and leaves elevation unchanged.
        enu = np.array([3000.0, 4000.0, 5000.0])
        sat = geo.enu_to_ecef(enu, REF)
        el0, az0 = geo.elevation_azimuth(sat, REF)
        for angle in (30.0, 123.4, 270.0):
            a = np.radians(angle)
            # clockwise-from-north rotation in the tangent plane
            e2 = enu[0] * np.cos(a) + enu[1] * np.sin(a)
            n2 = -enu[0] * np.sin(a) + enu[1] * np.cos(a)
            sat2 = geo.enu_to_ecef([e2, n2, enu[2]], REF)
            el, az = geo.elevation_azimuth(sat2, REF)
            assert el == pytest.approx(el0, abs=1e-9)
            assert az == pytest.approx((az0 + angle) % 360.0, abs=1e-9)

    def test_coincident_points_raise(self):
        with pytest.raises(geo.DegenerateGeometryError):
            geo.elevation_azimuth(REF, REF)


class TestHorizontalError:
    def test_zero_at_truth(self):
        assert geo.horizontal_error(REF, REF) == 0.0

    def test_pythagorean_3_4_5(self):
        est = geo.enu_to_ecef([3.0, 4.0, 0.0], REF)
        assert geo.horizontal_error(est, REF) == pytest.approx(5.0, abs=1e-9)

    def test_vertical_displacement_excluded(self):
        est = geo.enu_to_ecef([0.0, 0.0, 10.0], REF)
        assert geo.horizontal_error(est, REF) == pytest.approx(0.0, abs=1e-9)

    def test_invariant_to_up_component(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            enu = rng.uniform(-100, 100, size=3)
            est = geo.enu_to_ecef(enu, REF)
            lifted = geo.enu_to_ecef(enu + [0.0, 0.0, rng.uniform(-50, 50)], REF)
            assert geo.horizontal_error(lifted, REF) == pytest.approx(
                geo.horizontal_error(est, REF), abs=1e-9
            )
