"""Hand model tests.

Kinematics checks run against a separate pose-composition oracle built on
scipy rotations, so agreement is between two independent formulations.
"""

import logging

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cabledex.cable import (
    CableLayout,
    CableSpec,
    ContactSet,
    SimParams,
    init_cable,
    step,
)
from cabledex.errors import ConfigError, StructureError
from cabledex.hand import (
    FINGER_NAMES,
    JOINT_COUNT,
    JOINTS_PER_FINGER,
    MIRROR,
    MotorState,
    clamp_to_limits,
    default_hand_config,
    finger_capsules,
    fingertip_positions,
    forward_kinematics,
    integrate_plant,
    mirror_joints,
    pid_step,
    settle_time,
)


def oracle_chain(config, q):
    """Joint frames via scipy rotation objects, composed pose by pose."""
    links, tips = [], []
    for fi, finger in enumerate(config.fingers):
        R = Rotation.from_matrix(config.base_pose[:3, :3])
        p = config.base_pose[:3, 3] + R.apply(np.asarray(finger.knuckle))
        for j in range(JOINTS_PER_FINGER):
            angle = q[fi * JOINTS_PER_FINGER + j]
            R = R * Rotation.from_rotvec(angle * np.asarray(finger.axes[j]))
            links.append((R.as_matrix(), p.copy()))
            p = p + R.apply(np.asarray(finger.link_offsets[j]))
        tips.append(p)
    return links, tips


@pytest.fixture(scope="module")
def cfg():
    return default_hand_config()


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------


class TestForwardKinematics:
    def test_zero_pose_matches_oracle(self, cfg):
        q = np.zeros(JOINT_COUNT)
        links, tips = forward_kinematics(cfg, q)
        o_links, o_tips = oracle_chain(cfg, q)
        for (rot, pos), pose in zip(o_links, links):
            assert np.abs(pose[:3, :3] - rot).max() < 1e-12
            assert np.abs(pose[:3, 3] - pos).max() < 1e-12
        for tip, o_tip in zip(tips, o_tips):
            assert np.abs(tip[:3, 3] - o_tip).max() < 1e-12

    def test_bent_pose_matches_oracle(self, cfg):
        rng = np.random.default_rng(7)
        for _ in range(5):
            q = rng.uniform(-1.0, 1.0, JOINT_COUNT)
            links, tips = forward_kinematics(cfg, q)
            o_links, o_tips = oracle_chain(cfg, q)
            for (rot, pos), pose in zip(o_links, links):
                assert np.abs(pose[:3, :3] - rot).max() < 1e-12
                assert np.abs(pose[:3, 3] - pos).max() < 1e-12
            for tip, o_tip in zip(tips, o_tips):
                assert np.abs(tip[:3, 3] - o_tip).max() < 1e-12

    def test_zero_pose_tips_hang_under_knuckles(self, cfg):
        tips = fingertip_positions(cfg, np.zeros(JOINT_COUNT))
        for finger, tip in zip(cfg.fingers, tips):
            knuckle_world = cfg.base_pose[:3, 3] + np.asarray(finger.knuckle)
            assert abs(tip[0] - knuckle_world[0]) < 1e-12
            assert abs(tip[1] - knuckle_world[1]) < 1e-12
            assert tip[2] < knuckle_world[2]

    def test_zero_pose_fingertip_clearance(self, cfg):
        tips = fingertip_positions(cfg, np.zeros(JOINT_COUNT))
        lowest = min(t[2] for t in tips) - cfg.fingertip_radius
        assert abs(lowest - (-0.009)) < 1e-9

    def test_middle_finger_moves_alone(self, cfg):
        q = np.zeros(JOINT_COUNT)
        q[10:15] = [0.3, 0.8, 0.5, 0.2, 0.4]
        tips0 = fingertip_positions(cfg, np.zeros(JOINT_COUNT))
        tips1 = fingertip_positions(cfg, q)
        assert np.abs(tips1[2] - tips0[2]).max() > 0.01
        for i in (0, 1, 3, 4):
            assert np.abs(tips1[i] - tips0[i]).max() == 0.0

    def test_rejects_wrong_length(self, cfg):
        with pytest.raises(ConfigError):
            forward_kinematics(cfg, np.zeros(24))


# ---------------------------------------------------------------------------
# mirror symmetry
# ---------------------------------------------------------------------------


class TestMirror:
    def test_zeros_are_a_fixed_point(self, cfg):
        assert np.abs(mirror_joints(cfg, np.zeros(JOINT_COUNT))).max() == 0.0

    def test_involution(self, cfg):
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.uniform(-1.2, 1.2, JOINT_COUNT)
            back = mirror_joints(cfg, mirror_joints(cfg, q))
            assert np.abs(back - q).max() == 0.0

    def test_fingertips_mirror_exactly(self, cfg):
        rng = np.random.default_rng(11)
        q = clamp_to_limits(cfg, rng.uniform(-1.0, 1.0, JOINT_COUNT))
        tips = fingertip_positions(cfg, q)
        tips_m = fingertip_positions(cfg, mirror_joints(cfg, q))
        for i in range(5):
            assert np.abs(tips_m[4 - i] - MIRROR @ tips[i]).max() < 1e-12

    def test_mirrored_pose_stays_inside_limits(self, cfg):
        rng = np.random.default_rng(5)
        lim = cfg.joint_limits()
        for _ in range(20):
            q = clamp_to_limits(cfg, rng.uniform(-2.0, 2.0, JOINT_COUNT))
            mq = mirror_joints(cfg, q)
            assert (mq >= lim[:, 0] - 1e-12).all()
            assert (mq <= lim[:, 1] + 1e-12).all()

    def test_capsule_sets_mirror(self, cfg):
        """Whole contact geometry maps onto itself under reflection."""
        rng = np.random.default_rng(13)
        q = clamp_to_limits(cfg, rng.uniform(-0.8, 0.8, JOINT_COUNT))
        caps = finger_capsules(cfg, q)
        caps_m = finger_capsules(cfg, mirror_joints(cfg, q))

        def key(c):
            a, b = np.asarray(c.a), np.asarray(c.b)
            lo, hi = (a, b) if tuple(a) <= tuple(b) else (b, a)
            return np.concatenate([lo, hi, [c.radius]])

        mirrored = sorted(
            (key(c) for c in (_reflect(c) for c in caps)), key=tuple
        )
        direct = sorted((key(c) for c in caps_m), key=tuple)
        for m, d in zip(mirrored, direct):
            assert np.abs(m - d).max() < 1e-9

    def test_asymmetric_structure_rejected(self, cfg):
        from dataclasses import replace

        bad_finger = replace(
            cfg.fingers[4],
            axes=tuple(
                (0.0, 0.0, 1.0) if j == 1 else a
                for j, a in enumerate(cfg.fingers[4].axes)
            ),
        )
        bad = replace(cfg, fingers=cfg.fingers[:4] + (bad_finger,))
        with pytest.raises(StructureError):
            mirror_joints(bad, np.zeros(JOINT_COUNT))


def _reflect(cap):
    from dataclasses import replace

    return replace(
        cap,
        a=tuple(MIRROR @ np.asarray(cap.a)),
        b=tuple(MIRROR @ np.asarray(cap.b)),
        surface_velocity=tuple(MIRROR @ np.asarray(cap.surface_velocity)),
    )


# ---------------------------------------------------------------------------
# limits
# ---------------------------------------------------------------------------


class TestLimits:
    def test_clamp_is_idempotent(self, cfg):
        rng = np.random.default_rng(17)
        for _ in range(20):
            q = rng.uniform(-4.0, 4.0, JOINT_COUNT)
            once = clamp_to_limits(cfg, q)
            twice = clamp_to_limits(cfg, once)
            assert np.abs(twice - once).max() == 0.0

    def test_interior_point_unchanged(self, cfg):
        lim = cfg.joint_limits()
        mid = lim.mean(axis=1)
        assert np.abs(clamp_to_limits(cfg, mid) - mid).max() == 0.0

    def test_mirrored_fingers_have_mirrored_limits(self, cfg):
        for fa, fb in ((0, 4), (1, 3)):
            la = np.array(cfg.fingers[fa].limits)
            lb = np.array(cfg.fingers[fb].limits)
            assert np.abs(lb[:, 0] + la[:, 1]).max() < 1e-12
            assert np.abs(lb[:, 1] + la[:, 0]).max() < 1e-12


# ---------------------------------------------------------------------------
# capsules
# ---------------------------------------------------------------------------


class TestFingerCapsules:
    def test_count_and_radii(self, cfg):
        caps = finger_capsules(cfg, np.zeros(JOINT_COUNT))
        assert len(caps) == 21
        rollers = [c for c in caps if c.radius == cfg.fingertip_radius]
        assert len(rollers) == 5
        for c in rollers:
            assert c.radius > max(f.phalanx_radius for f in cfg.fingers)
            assert c.compliance == cfg.fingertip_compliance

    def test_static_pose_zero_velocity(self, cfg):
        q = np.full(JOINT_COUNT, 0.3)
        caps = finger_capsules(cfg, q, q_prev=q)
        for c in caps:
            assert np.abs(np.asarray(c.surface_velocity)).max() == 0.0

    def test_velocity_matches_finite_difference(self, cfg):
        dt = 1.0 / 30.0
        q0 = np.zeros(JOINT_COUNT)
        q1 = q0.copy()
        q1[5:10] = [0.1, 0.2, 0.1, 0.05, 0.3]
        caps0 = finger_capsules(cfg, q0)
        caps1 = finger_capsules(cfg, q1, q_prev=q0, dt=dt)
        for c0, c1 in zip(caps0, caps1):
            c_old = 0.5 * (np.asarray(c0.a) + np.asarray(c0.b))
            c_new = 0.5 * (np.asarray(c1.a) + np.asarray(c1.b))
            expect = (c_new - c_old) / dt
            assert np.abs(np.asarray(c1.surface_velocity) - expect).max() < 1e-12

    def test_only_moving_finger_has_velocity(self, cfg):
        q0 = np.zeros(JOINT_COUNT)
        q1 = q0.copy()
        q1[21] = 0.4  # thumb_right J2
        caps = finger_capsules(cfg, q1, q_prev=q0)
        moving = caps[1 + 4 * 4 : 1 + 4 * 5]
        still = caps[: 1 + 4 * 4]
        assert max(np.linalg.norm(c.surface_velocity) for c in moving) > 0.01
        assert max(np.linalg.norm(c.surface_velocity) for c in still) == 0.0

    def test_roller_spin_moves_surface(self, cfg):
        """The fingertip roll joint must produce real capsule motion."""
        q0 = np.zeros(JOINT_COUNT)
        q1 = q0.copy()
        q1[9] = 0.3  # index_left J5
        caps = finger_capsules(cfg, q1, q_prev=q0)
        roller = caps[1 + 4 * 1 + 3]
        assert np.linalg.norm(roller.surface_velocity) > 0.01


# ---------------------------------------------------------------------------
# actuation
# ---------------------------------------------------------------------------


class TestPID:
    def test_at_target_commands_nothing(self, cfg):
        m = MotorState.at_pose(np.full(JOINT_COUNT, 0.2))
        cmd, m2 = pid_step(m, cfg, 1.0 / 30.0)
        assert np.abs(cmd).max() == 0.0
        assert np.abs(m2.integral_error).max() == 0.0

    def test_record_low_commands_vanish_under_drag(self, cfg):
        """Free-drive: target chases actual, so dragging meets no torque."""
        rng = np.random.default_rng(23)
        m = MotorState.at_pose(np.zeros(JOINT_COUNT), mode="record_low")
        for _ in range(50):
            m.actual[:] = clamp_to_limits(
                cfg, m.actual + rng.uniform(-0.05, 0.05, JOINT_COUNT)
            )
            cmd, m = pid_step(m, cfg, 1.0 / 30.0)
            assert np.abs(cmd).max() < 1e-12

    def test_step_response_settles(self, cfg, caplog):
        with caplog.at_level(logging.INFO, logger="cabledex.hand"):
            ticks, trace = settle_time(cfg, joint=7, target_angle=0.5)
        assert ticks < 60
        assert abs(trace[-1] - 0.5) < 0.01
        assert any("settles in" in r.message for r in caplog.records)

    def test_step_response_deterministic(self, cfg):
        t1 = settle_time(cfg, joint=12, target_angle=0.4)[1]
        t2 = settle_time(cfg, joint=12, target_angle=0.4)[1]
        assert np.array_equal(t1, t2)

    def test_speed_bound_respected(self, cfg):
        dt = 1.0 / 30.0
        m = MotorState.at_pose(np.zeros(JOINT_COUNT))
        m.target[:] = clamp_to_limits(cfg, np.full(JOINT_COUNT, 1.5))
        bound = cfg.speed_bound()
        for _ in range(100):
            cmd, m = pid_step(m, cfg, dt)
            assert np.abs(cmd).max() <= bound + 1e-12
            before = m.actual.copy()
            m = integrate_plant(cfg, m, cmd, dt)
            assert np.abs(m.actual - before).max() <= bound * dt + 1e-12

    def test_locked_finger_holds_within_tolerance(self, cfg):
        """locked_high snaps back from a disturbance and then stays put."""
        dt = 1.0 / 30.0
        hold = clamp_to_limits(cfg, np.full(JOINT_COUNT, 0.5))
        m = MotorState.at_pose(hold, mode="locked_high")
        m.actual[3] += 0.02  # disturbance on one thumb joint
        drift = 0.0
        for k in range(60):
            cmd, m = pid_step(m, cfg, dt)
            m = integrate_plant(cfg, m, cmd, dt)
            if k >= 5:
                drift = max(drift, np.abs(m.actual - hold).max())
        assert drift < 1e-3

    def test_integral_bounded_by_anti_windup(self, cfg):
        dt = 1.0 / 30.0
        m = MotorState.at_pose(np.zeros(JOINT_COUNT))
        m.target[:] = 1.5  # large persistent error, actual pinned
        for _ in range(400):
            cmd, m = pid_step(m, cfg, dt)
        assert np.abs(m.integral_error).max() <= cfg.anti_windup + 1e-12

    def test_mode_validation(self):
        with pytest.raises(ConfigError):
            MotorState.at_pose(np.zeros(JOINT_COUNT), mode="rigid")

    def test_plant_respects_limits(self, cfg):
        dt = 1.0 / 30.0
        m = MotorState.at_pose(np.zeros(JOINT_COUNT))
        lim = cfg.joint_limits()
        m = integrate_plant(cfg, m, np.full(JOINT_COUNT, 100.0), dt)
        assert (m.actual <= lim[:, 1] + 1e-12).all()


# ---------------------------------------------------------------------------
# hand against the rod: mirrored scenes evolve as mirror images
# ---------------------------------------------------------------------------


class TestHandOnCable:
    def test_mirrored_contact_geometry_is_fair(self):
        """A pose and its mirror produce capsule sets whose closest
        approach to a centered cable is identical."""
        cfg = default_hand_config()
        rng = np.random.default_rng(31)
        q = clamp_to_limits(cfg, rng.uniform(-0.6, 0.6, JOINT_COUNT))
        spec = CableSpec(label="A", diameter=0.012)
        state = init_cable(
            spec, CableLayout(origin=(-spec.length / 2.0, 0.0, spec.radius))
        )
        pts = state.positions

        def min_dist(caps):
            d = np.inf
            for c in caps:
                a, b = np.asarray(c.a), np.asarray(c.b)
                ab = b - a
                denom = float(ab @ ab)
                for p in pts:
                    t = 0.0 if denom < 1e-18 else np.clip((p - a) @ ab / denom, 0, 1)
                    d = min(d, float(np.linalg.norm(p - (a + t * ab))) - c.radius)
            return d

        d_orig = min_dist(finger_capsules(cfg, q))
        d_mirr = min_dist(finger_capsules(cfg, mirror_joints(cfg, q)))
        assert abs(d_orig - d_mirr) < 1e-9

    def test_index_row_presses_cable_gently(self):
        """Curl the index row onto a cable in the pinch channel; the rod
        must stay finite and nearly inextensible under the press."""
        cfg = default_hand_config()
        spec = CableSpec(label="A", diameter=0.012)
        state = init_cable(
            spec, CableLayout(origin=(-spec.length / 2.0, 0.0, spec.radius))
        )
        params = SimParams()
        contacts = ContactSet.table()

        q = np.zeros(JOINT_COUNT)
        dt = params.tick_dt
        # positive flexion closes left fingers, negative closes right ones
        curl = {6: 0.19, 11: 0.19, 16: -0.19}
        prev_q = q.copy()
        for k in range(90):
            q = q.copy()
            for j, tgt in curl.items():
                d = np.clip(tgt - q[j], -0.004, 0.004)
                q[j] += d
            caps = finger_capsules(cfg, q, q_prev=prev_q, dt=dt)
            state = step(state, spec, params, ContactSet(contacts.halfspaces, caps))
            prev_q = q.copy()
            assert np.isfinite(state.positions).all()
        rest = spec.segment_length
        seg = np.diff(state.positions, axis=0)
        stretch = np.abs(np.linalg.norm(seg, axis=1) - rest) / rest
        assert stretch.max() < 0.01
