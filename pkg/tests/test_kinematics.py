import numpy as np
import pytest
from hypothesis import given, strategies as st

from aerialplan.kinematics import (FIXED, DHRow, DHTable, HomogeneousTransform, IKOptions,
                                   RENORMALIZE_EVERY, chain_world_to_ee, dh_transform,
                                   forward_kinematics, frame_origins_batch, frames,
                                   inverse_kinematics, matrix_to_rpy, default_arm, pose_error,
                                   rpy_matrix, wrap_angle)

from conftest import JOINT_LOWER, JOINT_UPPER, dh_oracle, rot_z, trans

angles = st.floats(-np.pi, np.pi, allow_nan=False)
lengths = st.floats(-2.0, 2.0, allow_nan=False)


def random_transform(rng):
    return HomogeneousTransform.from_xyz_rpy(rng.uniform(-2, 2, 3),
                                             rng.uniform([-np.pi, -1.5, -np.pi], [np.pi, 1.5, np.pi]))


def random_q(rng, n=None):
    return rng.uniform(JOINT_LOWER, JOINT_UPPER, size=None if n is None else (n, 3))


class TestTransform:
    @given(angles, st.floats(-1.5, 1.5), angles, lengths, lengths, lengths)
    def test_rotation_orthonormal_and_inverse(self, r, p, y, x1, x2, x3):
        t = HomogeneousTransform.from_xyz_rpy((x1, x2, x3), (r, p, y))
        rot = t.rotation
        assert np.allclose(rot.T @ rot, np.eye(3), atol=1e-9)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose((t @ t.inverse()).matrix, np.eye(4), atol=1e-9)

    def test_long_chain_stays_orthonormal(self):
        rng = np.random.default_rng(3)
        steps = [random_transform(rng) for _ in range(10)]
        t = HomogeneousTransform.identity()
        for i in range(20 * RENORMALIZE_EVERY + 7):
            t = t @ steps[i % 10]
        rot = t.rotation
        assert np.allclose(rot.T @ rot, np.eye(3), atol=1e-9)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            HomogeneousTransform(np.eye(3))

    @given(angles, st.floats(-1.5, 1.5), angles)
    def test_rpy_round_trip(self, r, p, y):
        back = matrix_to_rpy(rpy_matrix(r, p, y))
        assert np.allclose(wrap_angle(back - [r, p, y]), 0.0, atol=1e-9)

    def test_rpy_is_zyx(self):
        r, p, y = 0.3, -0.2, 1.1
        expected = rot_z(y)[:3, :3] @ np.array(
            [[np.cos(p), 0, np.sin(p)], [0, 1, 0], [-np.sin(p), 0, np.cos(p)]]) @ np.array(
            [[1, 0, 0], [0, np.cos(r), -np.sin(r)], [0, np.sin(r), np.cos(r)]])
        assert np.allclose(rpy_matrix(r, p, y), expected, atol=1e-12)

    def test_wrap_angle(self):
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)
        assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


class TestDH:
    def test_identity_row(self):
        assert np.allclose(dh_transform(DHRow(), 0.0).matrix, np.eye(4), atol=1e-15)

    def test_pure_translation_row(self):
        m = dh_transform(DHRow(a=1.0), 0.0).matrix
        assert np.allclose(m, trans(1, 0, 0), atol=1e-15)

    def test_first_arm_row_matches_oracle(self):
        row = default_arm().rows[0]
        expected = dh_oracle(np.pi / 2, 0.0, 3 * np.pi / 2, 0.1365)
        assert np.allclose(dh_transform(row, 0.0).matrix, expected, atol=1e-12)

    def test_arm_table_values(self):
        t = default_arm()
        assert len(t.rows) == 4
        assert t.actuated_count == 3
        assert [r.a for r in t.rows] == [0.1365, 0.0725, 0.0, 0.0]
        assert [r.d for r in t.rows] == [0.0, 0.0, 0.0, 0.4]
        assert t.rows[0].theta == pytest.approx(np.pi / 2)
        assert t.rows[2].theta == pytest.approx(3 * np.pi / 2)
        assert t.rows[0].alpha == pytest.approx(3 * np.pi / 2)
        assert t.rows[2].alpha == pytest.approx(3 * np.pi / 2)
        assert t.rows[3].kind == FIXED

    def test_fixed_row_ignores_joint_value(self):
        row = DHRow(theta=0.2, d=0.3, alpha=0.1, a=0.5, kind=FIXED)
        assert np.array_equal(dh_transform(row, 1.0).matrix, dh_transform(row, 0.0).matrix)

    def test_prismatic_row(self):
        row = DHRow(kind="prismatic")
        assert np.allclose(dh_transform(row, 0.7).matrix, trans(0, 0, 0.7))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DHRow(kind="spherical")

    def test_limit_length_checked(self):
        with pytest.raises(ValueError):
            DHTable(default_arm().rows, lower=(0.0, 0.0))


class TestForwardKinematics:
    def test_zero_config_matches_product_oracle(self):
        expected = (dh_oracle(np.pi / 2, 0, 3 * np.pi / 2, 0.1365) @ dh_oracle(0, 0, 0, 0.0725)
                    @ dh_oracle(3 * np.pi / 2, 0, 3 * np.pi / 2, 0) @ dh_oracle(0, 0.4, 0, 0))
        got = forward_kinematics(default_arm(), np.zeros(3)).matrix
        assert np.allclose(got, expected, atol=1e-12)

    def test_single_row_half_turn(self):
        t = DHTable((DHRow(),))
        m = forward_kinematics(t, [np.pi]).matrix
        assert np.allclose(m, rot_z(np.pi), atol=1e-12)

    @given(st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3))
    def test_compositional_oracle(self, q):
        table = default_arm()
        rows = table.rows
        expected = np.eye(4)
        for row, qi in zip(rows, list(q) + [0.0]):
            expected = expected @ dh_oracle(row.theta + (qi if row.kind != FIXED else 0.0),
                                            row.d, row.alpha, row.a)
        assert np.allclose(forward_kinematics(table, q).matrix, expected, atol=1e-12)
        assert np.allclose(frames(table, q)[-1], expected, atol=1e-12)
        assert np.allclose(frame_origins_batch(table, np.array([q]))[0, -1], expected[:3, 3],
                           atol=1e-12)

    def test_wrong_joint_count(self):
        with pytest.raises(ValueError):
            forward_kinematics(default_arm(), [0.0, 0.0])

    def test_chain_identity_base(self):
        q = [0.1, -0.2, 0.9]
        got = chain_world_to_ee(HomogeneousTransform(), HomogeneousTransform(), default_arm(), q)
        assert np.allclose(got.matrix, forward_kinematics(default_arm(), q).matrix, atol=1e-15)

    def test_chain_translation_equivariance(self):
        q = [0.1, -0.2, 0.9]
        base = HomogeneousTransform.from_parts(translation=(0, 0, 1))
        a = chain_world_to_ee(base, HomogeneousTransform(), default_arm(), q).translation
        b = forward_kinematics(default_arm(), q).translation
        assert np.allclose(a - b, [0, 0, 1], atol=1e-12)

    def test_chain_random_triple_product_and_associativity(self):
        rng = np.random.default_rng(11)
        table = default_arm()
        for _ in range(50):
            a, b = random_transform(rng), random_transform(rng)
            q = random_q(rng)
            fk = forward_kinematics(table, q)
            got = chain_world_to_ee(a, b, table, q).matrix
            assert np.allclose(got, a.matrix @ b.matrix @ fk.matrix, atol=1e-12)
            assert np.allclose(got, (a @ (b @ fk)).matrix, atol=1e-9)

    def test_stretched_arm_geometry(self):
        # q = 0 stretches the arm: the tool sits at the summed link lengths
        p = forward_kinematics(default_arm(), np.zeros(3)).translation
        assert np.linalg.norm(p) == pytest.approx(0.1365 + 0.0725 + 0.4, abs=1e-12)


class TestPoseError:
    def test_same_pose(self):
        t = HomogeneousTransform.from_xyz_rpy((1, 2, 3), (0.1, 0.2, 0.3))
        assert pose_error(t, t) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_translation_345(self):
        b = HomogeneousTransform.from_parts(translation=(3, 4, 0))
        assert pose_error(HomogeneousTransform(), b) == pytest.approx((5.0, 0.0))

    def test_quarter_turn(self):
        b = HomogeneousTransform(rot_z(np.pi / 2))
        assert pose_error(HomogeneousTransform(), b) == pytest.approx((0.0, np.pi / 2))


class TestInverseKinematics:
    def test_fixed_point(self, arm):
        q0 = np.array([0.2, -0.4, 1.0])
        q, res = inverse_kinematics(arm, forward_kinematics(arm, q0), q0)
        assert np.array_equal(q, q0)
        assert res == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_small_offset_round_trip(self, arm):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q0 = random_q(rng)
            q1 = np.clip(q0 + rng.normal(0, 0.05, 3), JOINT_LOWER, JOINT_UPPER)
            target = forward_kinematics(arm, q1)
            q, res = inverse_kinematics(arm, target, q0)
            err = pose_error(forward_kinematics(arm, q), target)
            assert err[0] <= 1e-6 and err[1] <= 1e-6
            assert res == pytest.approx(err)

    def test_unreachable_target(self, arm):
        target = HomogeneousTransform.from_parts(translation=(2.0, 0.0, 0.0))
        q, res = inverse_kinematics(arm, target, np.array([0.0, 0.0, 0.5]))
        assert np.all(np.isfinite(q))
        assert res[0] > 2.0 - arm.reach - 1e-9
        assert arm.within_limits(q)

    def test_respects_limits(self, arm):
        target = forward_kinematics(default_arm(), [0.0, 0.0, -0.5])
        q, res = inverse_kinematics(arm, target, np.array([0.0, 0.0, 0.5]))
        assert arm.within_limits(q)
        assert res[0] > 0

    def test_position_only_weighting_reaches_position(self, arm):
        target = forward_kinematics(arm, [0.3, -0.4, 1.1])
        tilted = HomogeneousTransform.from_parts(rpy_matrix(0.0, 0.1, 0.0) @ target.rotation,
                                                 target.translation)
        q, res = inverse_kinematics(arm, tilted, np.array([0.3, -0.4, 1.1]),
                                    IKOptions(rotation_weight=0.0))
        assert res[0] < 1e-9
        assert res[1] > 1e-3

    def test_continuity_along_path(self, arm):
        # a continuous 1 mm-step target path gives small consecutive joint steps
        q = np.array([0.0, -0.6, 1.2])
        start = forward_kinematics(arm, q)
        prev = q
        for k in range(1, 200):
            target = HomogeneousTransform.from_parts(start.rotation,
                                                     start.translation + [0.0, 0.0, 0.001 * k])
            sol, _ = inverse_kinematics(arm, target, prev, IKOptions(rotation_weight=0.0))
            assert np.max(np.abs(sol - prev)) <= 0.05
            prev = sol
