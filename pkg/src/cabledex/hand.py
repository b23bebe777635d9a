"""Five-finger dual-thumb hand: kinematics, joint limits, PID actuation.

The hand hangs over the table with all finger chains pointing straight down
at the zero pose. Finger order everywhere (files, messages, joint vectors) is
thumb_left, index_left, middle, index_right, thumb_right, five joints each,
proximal to distal:

    J1  yaw about the vertical knuckle axis (stroke along the cable)
    J2  flexion at the knuckle
    J3  flexion, middle phalanx
    J4  flexion, distal phalanx
    J5  fingertip roll; the tip is a crosswise roller capsule

The right half of the hand is generated from the left half by reflection
about the Y-Z plane, which is what makes mirror_joints exact rather than
approximate. The middle finger sits on the mirror plane itself.

Actuation is position-mode PID over a kinematic velocity plant: commands are
clamped to the torque-derived speed bound, and per-finger stiffness modes
scale the gains (free-drive recording, ordinary replay, locked hold).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from .cable import Capsule
from .errors import ConfigError, StructureError
from .transforms import rotation_about

log = logging.getLogger(__name__)

FINGER_NAMES = ("thumb_left", "index_left", "middle", "index_right", "thumb_right")
JOINTS_PER_FINGER = 5
JOINT_COUNT = 25

MIRROR = np.diag([-1.0, 1.0, 1.0])  # reflection about the Y-Z plane

STIFFNESS_MODES = ("record_low", "locked_high", "replay_normal")
MODE_GAIN_SCALE = {"record_low": 0.05, "locked_high": 10.0, "replay_normal": 1.0}


@dataclass(frozen=True)
class FingerConfig:
    """One finger chain: knuckle placement plus per-joint geometry.

    link_offsets[j] is the translation, in the rotated frame of joint j, from
    joint j to joint j+1 (the last one reaches the roller axis center).
    """

    name: str
    knuckle: tuple[float, float, float]
    axes: tuple[tuple[float, float, float], ...]
    limits: tuple[tuple[float, float], ...]
    link_offsets: tuple[tuple[float, float, float], ...]
    phalanx_radius: float = 0.008
    roller_half_width: float = 0.011

    def __post_init__(self):
        if len(self.axes) != JOINTS_PER_FINGER or len(self.limits) != JOINTS_PER_FINGER:
            raise ConfigError(f"finger {self.name} needs {JOINTS_PER_FINGER} joints")
        if len(self.link_offsets) != JOINTS_PER_FINGER:
            raise ConfigError(f"finger {self.name} needs one link offset per joint")
        for ax in self.axes:
            if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
                raise ConfigError(f"finger {self.name} has a non-unit joint axis")
        for lo, hi in self.limits:
            if lo >= hi:
                raise ConfigError(f"finger {self.name} has an empty limit interval")


@dataclass(frozen=True)
class PIDGains:
    kp: float = 20.0
    ki: float = 0.5
    kd: float = 0.2


@dataclass(frozen=True)
class HandConfig:
    fingers: tuple[FingerConfig, ...]
    base_pose: np.ndarray  # 4x4 world transform of the hand frame
    fingertip_radius: float = 0.012
    fingertip_compliance: float = 0.5
    palm_a: tuple[float, float, float] = (-0.05, 0.0, 0.0)
    palm_b: tuple[float, float, float] = (0.05, 0.0, 0.0)
    palm_radius: float = 0.025
    gains: PIDGains = PIDGains()
    max_torque: float = 1.0  # N m, per joint
    motor_viscosity: float = 1.0  # N m s/rad: torque / viscosity = speed bound
    anti_windup: float = 0.2  # rad s bound on the integral term

    def __post_init__(self):
        names = tuple(f.name for f in self.fingers)
        if names != FINGER_NAMES:
            raise ConfigError(f"finger order must be {FINGER_NAMES}, got {names}")
        if self.fingertip_radius <= max(f.phalanx_radius for f in self.fingers):
            raise ConfigError("fingertip radius must exceed every phalanx radius")
        if self.base_pose.shape != (4, 4):
            raise ConfigError("base_pose must be a 4x4 transform")

    def joint_limits(self) -> np.ndarray:
        """(25, 2) limit table in joint-vector order."""
        return np.array([lim for f in self.fingers for lim in f.limits])

    def speed_bound(self) -> float:
        return self.max_torque / self.motor_viscosity


def _mirror_finger(finger: FingerConfig, name: str) -> FingerConfig:
    """Reflect a finger about the Y-Z plane.

    Axes map to M a with the rotation angle negated, so limits [lo, hi]
    become [-hi, -lo].
    """
    return FingerConfig(
        name=name,
        knuckle=tuple(MIRROR @ np.asarray(finger.knuckle)),
        axes=tuple(tuple(MIRROR @ np.asarray(a)) for a in finger.axes),
        limits=tuple((-hi, -lo) for lo, hi in finger.limits),
        link_offsets=tuple(tuple(MIRROR @ np.asarray(o)) for o in finger.link_offsets),
        phalanx_radius=finger.phalanx_radius,
        roller_half_width=finger.roller_half_width,
    )


def _left_finger(name: str, knuckle, close_sign: float) -> FingerConfig:
    """A left-half finger whose positive flexion closes toward close_sign * Y."""
    flex_axis = (close_sign, 0.0, 0.0)
    return FingerConfig(
        name=name,
        knuckle=knuckle,
        axes=((0.0, 0.0, 1.0), flex_axis, flex_axis, flex_axis, (0.0, 1.0, 0.0)),
        limits=((-1.2, 1.2), (-0.4, 1.9), (-0.4, 1.9), (-0.4, 1.9), (-1.57, 1.57)),
        link_offsets=(
            (0.0, 0.0, 0.0),  # J1 and J2 share the knuckle
            (0.0, 0.0, -0.05),  # proximal
            (0.0, 0.0, -0.035),  # middle
            (0.0, 0.0, -0.03),  # distal
            (0.0, 0.0, -0.015),  # to the roller axis center
        ),
    )


def default_hand_config(
    base_xy: tuple[float, float] = (0.0, 0.0),
    clearance: float = -0.009,
) -> HandConfig:
    """Hand with the left half authored and the right half mirrored.

    The base height is solved so the lowest fingertip surface sits
    ``clearance`` above the table at the zero pose. The default is
    negative: fingertip pads may press past the surface plane, so a
    fully extended finger can slip its roller axis beneath the center
    of a cable resting on the table. Without that, no pinch can get
    support under the cable and lifting it off the table is impossible.
    """
    thumb_left = _left_finger("thumb_left", (-0.05, -0.035, 0.0), +1.0)
    index_left = _left_finger("index_left", (-0.05, 0.035, 0.0), -1.0)
    middle = _left_finger("middle", (0.0, 0.035, 0.0), -1.0)
    fingers = (
        thumb_left,
        index_left,
        middle,
        _mirror_finger(index_left, "index_right"),
        _mirror_finger(thumb_left, "thumb_right"),
    )
    probe = HandConfig(fingers=fingers, base_pose=np.eye(4))
    _, tips = forward_kinematics(probe, np.zeros(JOINT_COUNT))
    lowest = min(t[2, 3] for t in tips) - probe.fingertip_radius
    base = np.eye(4)
    base[0, 3], base[1, 3] = base_xy
    base[2, 3] = clearance - lowest
    return replace(probe, base_pose=base)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def clamp_to_limits(config: HandConfig, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (JOINT_COUNT,):
        raise ConfigError(f"joint vector must have {JOINT_COUNT} entries")
    lim = config.joint_limits()
    return np.clip(q, lim[:, 0], lim[:, 1])


def forward_kinematics(
    config: HandConfig, q: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """World poses of all 25 joint frames plus the 5 roller-center frames."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (JOINT_COUNT,):
        raise ConfigError(f"joint vector must have {JOINT_COUNT} entries")
    link_poses: list[np.ndarray] = []
    tip_poses: list[np.ndarray] = []
    for fi, finger in enumerate(config.fingers):
        T = config.base_pose.copy()
        T[:3, 3] = T[:3, 3] + T[:3, :3] @ np.asarray(finger.knuckle)
        for j in range(JOINTS_PER_FINGER):
            angle = q[fi * JOINTS_PER_FINGER + j]
            R = rotation_about(np.asarray(finger.axes[j]), angle)
            T = T.copy()
            T[:3, :3] = T[:3, :3] @ R
            link_poses.append(T)
            step = T[:3, :3] @ np.asarray(finger.link_offsets[j])
            T = T.copy()
            T[:3, 3] = T[:3, 3] + step
        tip_poses.append(T)
    return link_poses, tip_poses


def fingertip_positions(config: HandConfig, q: np.ndarray) -> np.ndarray:
    _, tips = forward_kinematics(config, q)
    return np.array([t[:3, 3] for t in tips])


def mirror_permutation(config: HandConfig) -> tuple[np.ndarray, np.ndarray]:
    """Index map and signs such that mirrored_q = signs * q[perm].

    Finger blocks swap left for right; per-joint signs follow from the axis
    relation a_right = M a_left (negate) or a_right = -M a_left (keep). The
    middle finger maps onto itself, flipping joints whose axes lie in the
    mirror plane. M squared is the identity, so one sign serves both
    directions of each pair.
    """
    pairs = ((0, 4), (1, 3), (2, 2))
    perm = np.empty(JOINT_COUNT, dtype=np.int64)
    signs = np.empty(JOINT_COUNT)
    for fa, fb in pairs:
        fa_cfg, fb_cfg = config.fingers[fa], config.fingers[fb]
        s = np.empty(JOINTS_PER_FINGER)
        for j in range(JOINTS_PER_FINGER):
            mirrored = MIRROR @ np.asarray(fa_cfg.axes[j])
            target = np.asarray(fb_cfg.axes[j])
            if np.allclose(mirrored, target, atol=1e-9):
                s[j] = -1.0
            elif np.allclose(mirrored, -target, atol=1e-9):
                s[j] = 1.0
            else:
                raise StructureError(
                    f"fingers {fa_cfg.name} and {fb_cfg.name} are not mirror "
                    f"images at joint {j + 1}"
                )
        a = np.arange(fa * JOINTS_PER_FINGER, (fa + 1) * JOINTS_PER_FINGER)
        b = np.arange(fb * JOINTS_PER_FINGER, (fb + 1) * JOINTS_PER_FINGER)
        perm[b] = a
        signs[b] = s
        if fa != fb:
            perm[a] = b
            signs[a] = s
    return perm, signs


def mirror_joints(config: HandConfig, q: np.ndarray) -> np.ndarray:
    """Map a pose to its Y-Z-plane mirror image."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (JOINT_COUNT,):
        raise ConfigError(f"joint vector must have {JOINT_COUNT} entries")
    perm, signs = mirror_permutation(config)
    return signs * q[perm]


def finger_capsules(
    config: HandConfig,
    q: np.ndarray,
    q_prev: np.ndarray | None = None,
    dt: float = 1.0 / 30.0,
) -> tuple[Capsule, ...]:
    """Contact capsules for the palm and all phalanges at pose q.

    Surface velocities are finite differences of the capsule centers between
    q_prev and q over dt; with q_prev omitted (or equal) they are zero.
    Declaration order is fixed: palm, then per finger proximal, middle,
    distal, roller.
    """
    ends_now = _capsule_endpoints(config, q)
    if q_prev is None:
        ends_prev = ends_now
    else:
        ends_prev = _capsule_endpoints(config, q_prev)
    capsules = []
    for (a, b, r, compliance), (pa, pb, _, _) in zip(ends_now, ends_prev):
        center_v = ((a + b) - (pa + pb)) * (0.5 / dt)
        capsules.append(
            Capsule(
                a=tuple(a),
                b=tuple(b),
                radius=r,
                surface_velocity=tuple(center_v),
                compliance=compliance,
            )
        )
    return tuple(capsules)


def _capsule_endpoints(config: HandConfig, q):
    base = config.base_pose
    out = [
        (
            base[:3, 3] + base[:3, :3] @ np.asarray(config.palm_a),
            base[:3, 3] + base[:3, :3] @ np.asarray(config.palm_b),
            config.palm_radius,
            0.0,
        )
    ]
    link_poses, tip_poses = forward_kinematics(config, q)
    for fi, finger in enumerate(config.fingers):
        joints = link_poses[fi * JOINTS_PER_FINGER : (fi + 1) * JOINTS_PER_FINGER]
        # phalanx segments span joint origins J2-J3, J3-J4, J4-J5
        chain = [j[:3, 3] for j in joints[1:]]
        for a, b in zip(chain[:-1], chain[1:]):
            out.append((a, b, finger.phalanx_radius, 0.0))
        tip = tip_poses[fi]
        w = tip[:3, :3] @ np.array([finger.roller_half_width, 0.0, 0.0])
        out.append(
            (
                tip[:3, 3] - w,
                tip[:3, 3] + w,
                config.fingertip_radius,
                config.fingertip_compliance,
            )
        )
    return out


# ---------------------------------------------------------------------------
# actuation
# ---------------------------------------------------------------------------


@dataclass
class MotorState:
    """Controller state for all 25 motors; modes are per finger."""

    actual: np.ndarray
    target: np.ndarray
    stiffness_mode: tuple[str, str, str, str, str]
    integral_error: np.ndarray
    prev_error: np.ndarray

    @staticmethod
    def at_pose(q: np.ndarray, mode: str = "replay_normal") -> "MotorState":
        q = np.asarray(q, dtype=np.float64)
        if mode not in STIFFNESS_MODES:
            raise ConfigError(f"unknown stiffness mode {mode!r}")
        return MotorState(
            actual=q.copy(),
            target=q.copy(),
            stiffness_mode=(mode,) * 5,
            integral_error=np.zeros(JOINT_COUNT),
            prev_error=np.zeros(JOINT_COUNT),
        )

    def with_mode(self, finger_index: int, mode: str) -> "MotorState":
        if mode not in STIFFNESS_MODES:
            raise ConfigError(f"unknown stiffness mode {mode!r}")
        modes = list(self.stiffness_mode)
        modes[finger_index] = mode
        return MotorState(
            actual=self.actual.copy(),
            target=self.target.copy(),
            stiffness_mode=tuple(modes),
            integral_error=self.integral_error.copy(),
            prev_error=self.prev_error.copy(),
        )


def pid_step(
    motor: MotorState, config: HandConfig, dt: float
) -> tuple[np.ndarray, MotorState]:
    """One 30 Hz control tick: joint velocity commands plus updated state.

    Fingers in record_low first copy actual into target, so the error (and
    any command) vanishes and the finger can be dragged freely. Commands are
    clamped to the torque-derived speed bound and to the no-overshoot rate
    |error|/dt.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    target = motor.target.copy()
    for fi, mode in enumerate(motor.stiffness_mode):
        if mode == "record_low":
            s = slice(fi * JOINTS_PER_FINGER, (fi + 1) * JOINTS_PER_FINGER)
            target[s] = motor.actual[s]
    error = target - motor.actual
    integral = np.clip(
        motor.integral_error + error * dt, -config.anti_windup, config.anti_windup
    )
    derivative = (error - motor.prev_error) / dt
    scale = np.repeat(
        [MODE_GAIN_SCALE[m] for m in motor.stiffness_mode], JOINTS_PER_FINGER
    )
    g = config.gains
    torque = scale * (g.kp * error + g.ki * integral + g.kd * derivative)
    torque = np.clip(torque, -config.max_torque, config.max_torque)
    command = torque / config.motor_viscosity
    # no overshoot within a tick
    rate_cap = np.abs(error) / dt
    command = np.clip(command, -rate_cap, rate_cap)
    return command, MotorState(
        actual=motor.actual.copy(),
        target=target,
        stiffness_mode=motor.stiffness_mode,
        integral_error=integral,
        prev_error=error,
    )


def integrate_plant(
    config: HandConfig, motor: MotorState, command: np.ndarray, dt: float
) -> MotorState:
    """Kinematic plant: joints move at the commanded velocity, inside limits."""
    q = clamp_to_limits(config, motor.actual + command * dt)
    return MotorState(
        actual=q,
        target=motor.target.copy(),
        stiffness_mode=motor.stiffness_mode,
        integral_error=motor.integral_error.copy(),
        prev_error=motor.prev_error.copy(),
    )


def settle_time(
    config: HandConfig,
    joint: int,
    target_angle: float,
    dt: float = 1.0 / 30.0,
    tolerance: float = 0.02,
    max_ticks: int = 300,
) -> tuple[int, np.ndarray]:
    """Simulated step response of one joint from zero.

    Returns the tick at which the joint first stays within tolerance times
    the step size of the target, plus the whole trace.
    """
    motor = MotorState.at_pose(np.zeros(JOINT_COUNT))
    motor.target[joint] = target_angle
    band = abs(target_angle) * tolerance
    trace = np.empty(max_ticks)
    settled_at = max_ticks
    for k in range(max_ticks):
        command, motor = pid_step(motor, config, dt)
        motor = integrate_plant(config, motor, command, dt)
        trace[k] = motor.actual[joint]
        if abs(motor.actual[joint] - target_angle) > band:
            settled_at = max_ticks
        elif settled_at > k:
            settled_at = k
    log.info("joint %d step to %.3f rad settles in %d ticks", joint, target_angle, settled_at)
    return settled_at, trace
