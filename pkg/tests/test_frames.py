# -*- coding: utf-8 -*-
import logging

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from navfilter.errors import FrameMismatchError
from navfilter.frames import (FrameId, FramedVector, TitanConstants, Transform, dcm_to_quat,
                              dcm_to_rotvec, euler_to_dcm, heading_of, is_orthonormal,
                              orthonormalize, quat_multiply, quat_normalize, quat_rotate,
                              quat_to_dcm, quat_to_rotvec, r3, r3_derivative, rotvec_to_dcm,
                              rotvec_to_quat, skew, vee)


def _scipy_quat(q):
    """scalar-first → scipy 的 scalar-last"""
    return np.r_[q[1:], q[0]]


@pytest.fixture
def random_quats():
    return Rotation.random(50, random_state=7).as_quat()[:, [3, 0, 1, 2]]


class Test_skew:
    def test_cross_product(self, rng):
        a, b = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))

    def test_vee_inverse(self, rng):
        a = rng.normal(size=3)
        np.testing.assert_allclose(vee(skew(a)), a)


class Test_quaternion:
    def test_dcm_matches_scipy(self, random_quats):
        for q in random_quats:
            expected = Rotation.from_quat(_scipy_quat(q)).as_matrix()
            np.testing.assert_allclose(quat_to_dcm(q), expected, atol=1e-12)

    def test_rotate_matches_dcm(self, random_quats, rng):
        v = rng.normal(size=3)
        for q in random_quats:
            np.testing.assert_allclose(quat_rotate(q, v), quat_to_dcm(q) @ v, atol=1e-12)

    def test_multiply_composes(self, random_quats):
        p, q = random_quats[0], random_quats[1]
        np.testing.assert_allclose(quat_to_dcm(quat_multiply(p, q)),
                                   quat_to_dcm(p) @ quat_to_dcm(q), atol=1e-12)

    def test_dcm_to_quat_positive_scalar(self, random_quats):
        for q in random_quats:
            back = dcm_to_quat(quat_to_dcm(q))
            assert back[0] >= 0.0
            np.testing.assert_allclose(back, q if q[0] >= 0 else -q, atol=1e-10)

    def test_normalize_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger='navfilter.frames'):
            q = quat_normalize([2.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0])
        assert any('四元數範數偏差' in r.getMessage() for r in caplog.records)

    def test_normalize_zero_raises(self):
        with pytest.raises(ValueError):
            quat_normalize([0.0, 0.0, 0.0, 0.0])


class Test_rotvec:
    @pytest.mark.parametrize("phi", [
        [0.0, 0.0, 0.0],
        [1e-14, 0.0, 0.0],
        [0.1, -0.2, 0.3],
        [0.0, 0.0, np.pi - 1e-6],
        [2.0, 1.0, -0.5],
    ])
    def test_matches_scipy(self, phi):
        expected = Rotation.from_rotvec(phi).as_matrix()
        np.testing.assert_allclose(rotvec_to_dcm(phi), expected, atol=1e-12)

    def test_roundtrip_small_angle(self):
        phi = np.array([3e-7, -1e-7, 2e-7])
        np.testing.assert_allclose(quat_to_rotvec(rotvec_to_quat(phi)), phi, rtol=1e-9)
        np.testing.assert_allclose(dcm_to_rotvec(rotvec_to_dcm(phi)), phi, rtol=1e-6)


class Test_dcm:
    def test_r3_quarter_turn(self):
        np.testing.assert_allclose(r3(np.pi / 2) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)

    def test_r3_derivative(self):
        gamma, h = 0.7, 1e-6
        numeric = (r3(gamma + h) - r3(gamma - h)) / (2 * h)
        np.testing.assert_allclose(r3_derivative(gamma), numeric, atol=1e-9)
        np.testing.assert_allclose(r3_derivative(gamma), skew([0, 0, 1]) @ r3(gamma), atol=1e-15)

    @pytest.mark.parametrize("roll, pitch, yaw", [
        (0.0, 0.0, 0.0),
        (0.1, -0.2, 2.5),
        (-0.4, 0.3, -1.2),
    ])
    def test_euler_matches_scipy(self, roll, pitch, yaw):
        expected = Rotation.from_euler('ZYX', [yaw, pitch, roll]).as_matrix()
        np.testing.assert_allclose(euler_to_dcm(roll, pitch, yaw), expected, atol=1e-12)

    @pytest.mark.parametrize("yaw", [0.0, 0.5, -2.0, 3.0])
    def test_heading_of(self, yaw):
        assert heading_of(euler_to_dcm(0.05, -0.03, yaw)) == pytest.approx(yaw, abs=1e-12)

    def test_orthonormalize(self, rng):
        d = rotvec_to_dcm([0.3, 0.1, -0.2]) + 1e-4 * rng.normal(size=(3, 3))
        assert not is_orthonormal(d)
        assert is_orthonormal(orthonormalize(d))


class Test_Transform:
    def test_compose(self):
        a = Transform(FrameId.BODY, FrameId.TOF, r3(0.3))
        b = Transform(FrameId.TOF, FrameId.TOF1, r3(-0.1))
        c = b @ a
        assert (c.src, c.dst) == (FrameId.BODY, FrameId.TOF1)
        np.testing.assert_allclose(c.dcm, r3(0.2), atol=1e-15)

    def test_compose_mismatch(self):
        a = Transform(FrameId.BODY, FrameId.TOF, np.eye(3))
        b = Transform(FrameId.NED, FrameId.TCTF, np.eye(3))
        with pytest.raises(FrameMismatchError):
            b @ a

    def test_apply_wrong_frame(self):
        t = Transform(FrameId.IMU_A, FrameId.BODY, np.eye(3))
        with pytest.raises(FrameMismatchError):
            t @ FramedVector(FrameId.IMU_B, [1.0, 0.0, 0.0])

    def test_inverse(self):
        t = Transform(FrameId.BODY, FrameId.NAVCAM, r3(0.4))
        vec = FramedVector(FrameId.BODY, [1.0, 2.0, 3.0])
        back = t.inverse() @ (t @ vec)
        assert back.frame is FrameId.BODY
        np.testing.assert_allclose(back.xyz, vec.xyz)


class Test_TitanConstants:
    def test_static_specific_force_points_up(self):
        f = TitanConstants().static_specific_force()
        assert f[2] < 0
        assert np.linalg.norm(f) == pytest.approx(1.352, rel=1e-3)

    def test_no_spin(self):
        c = TitanConstants(omega=0.0)
        np.testing.assert_array_equal(c.centripetal, np.zeros(3))

    @pytest.mark.parametrize("kwargs", [
        {'omega': -1e-6},
        {'r0_tof': [0.0, 0.0, -6.4e6]},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TitanConstants(**kwargs)

    def test_with_overrides(self):
        c = TitanConstants().with_overrides(latitude=0.0)
        assert c.omega_ned[2] == 0.0
