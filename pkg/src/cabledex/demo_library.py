"""Builtin demonstration library, synthesized deterministically.

Each builtin demo is authored as joint-space keyframes and recorded through
the ordinary free-drive pipeline against the builtin scene, so the shipped
files are genuine recordings, not hand-written trajectories. Fingertip
placements come from a small planar solver so grips land at controlled
squeeze depths instead of guessed angles.

Every demo opens with a one-tick snap to its working pose: replay starts
from the first frame's actual angles, so the snap never has to be tracked.
After the snap, no joint target moves faster than the replay controller
can follow, which keeps replayed motion faithful to the recording.

Joint rows are finger-major: thumb_left 0-4, index_left 5-9, middle 10-14,
index_right 15-19, thumb_right 20-24; within a finger J1 yaw, J2-J4
flexion, J5 roll. Left fingers close with positive flexion, right fingers
with negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .demos import DemoTrajectory, DragInput, dumps_demo, load_demo, record_session
from .errors import ConfigError
from .hand import JOINT_COUNT, default_hand_config, finger_capsules
from .scene import SceneConfig, default_scene

LIBRARY_CREATED = "2026-08-20T12:00:00+00:00"

# chain geometry shared with the hand defaults (link offsets + roller drop)
_L1, _L2, _L3 = 0.05, 0.035, 0.045
_KNUCKLE_Y = 0.035
_BASE_Z = float(default_hand_config().base_pose[2, 3])

# finger base rows and closing signs
_FINGERS = {
    "thumb_left": (0, +1.0),
    "index_left": (5, +1.0),
    "middle": (10, +1.0),
    "index_right": (15, -1.0),
    "thumb_right": (20, -1.0),
}

# targets may not outrun the replay controller: its speed bound is about
# 0.033 rad per tick and its ramp lag grows roughly linearly with speed,
# so budgeting each joint to this rate keeps replayed angles inside the
# recording tolerance with margin to spare while fitting the session caps
_V_CAP = 0.018


def _travel(a: dict, b: dict, floor: int = 10) -> int:
    """Ticks needed from pose a to pose b without exceeding the rate cap."""
    dmax = 0.0
    for j, v in b.items():
        dmax = max(dmax, abs(v - a.get(j, 0.0)))
    return max(floor, int(np.ceil(dmax / _V_CAP)))


@dataclass(frozen=True)
class _Key:
    """By `tick`, the listed joints reach the listed absolute angles."""

    tick: int
    pose: dict[int, float]


def _drags_from_keys(keys, ticks: int) -> list[DragInput]:
    """Piecewise-linear joint paths, emitted as per-tick drag deltas."""
    tracks: dict[int, list[tuple[int, float]]] = {}
    for key in sorted(keys, key=lambda k: k.tick):
        if not 0 <= key.tick < ticks:
            raise ConfigError(f"keyframe tick {key.tick} outside session")
        for joint, angle in key.pose.items():
            tracks.setdefault(joint, [(-1, 0.0)]).append((key.tick, float(angle)))
    drags: list[DragInput] = []
    for joint, points in tracks.items():
        for (t0, a0), (t1, a1) in zip(points, points[1:]):
            if t1 <= t0:
                raise ConfigError(f"keyframes out of order for joint {joint}")
            step = (a1 - a0) / (t1 - t0)
            for t in range(t0 + 1, t1 + 1):
                if abs(step) > 0.0:
                    drags.append(DragInput(tick=t, joint=joint, delta=step))
    return drags


def _flexion_for(y_close: float, z: float, curl: float = 0.0, near=None):
    """Solve (J2, J3, J4) putting the roller center at a planar target.

    y_close is distance moved from the knuckle toward the pinch channel,
    z the world height of the roller center; curl = J4 - J3 shapes the
    finger. Newton iteration on the two-link-plus-curl chain. `near`
    seeds the solve with a neighbouring solution so swept targets stay on
    one elbow branch instead of snapping to whichever scores best.
    """
    drop = _BASE_Z - z
    target = np.array([y_close, drop])  # (reach, drop) from the knuckle
    if near is None and curl == 0.0 and np.hypot(y_close, drop) >= 0.9985 * (
        _L1 + _L2 + _L3
    ):
        # workspace-boundary grip: a straight chain pointing at the target
        return float(np.arctan2(y_close, drop)), 0.0, 0.0

    def fk(th):
        t2, t3 = th
        t4 = t3 + curl
        reach = _L1 * np.sin(t2) + _L2 * np.sin(t2 + t3) + _L3 * np.sin(t2 + t3 + t4)
        fall = _L1 * np.cos(t2) + _L2 * np.cos(t2 + t3) + _L3 * np.cos(t2 + t3 + t4)
        return np.array([reach, fall])

    def solve_from(th):
        th = np.array(th, dtype=np.float64)
        for _ in range(120):
            err = fk(th) - target
            if np.abs(err).max() < 1e-9:
                return th
            jac = np.empty((2, 2))
            for c in range(2):
                probe = th.copy()
                probe[c] += 1e-7
                jac[:, c] = (fk(probe) - fk(th)) / 1e-7
            step = np.linalg.solve(jac + 1e-9 * np.eye(2), err)
            np.clip(step, -0.5, 0.5, out=step)
            th = th - step
        return None

    def legal(t2, t3):
        t4 = t3 + curl
        return all(-0.4 + 1e-9 < a < 1.9 - 1e-9 for a in (t2, t3, t4))

    if near is not None:
        th = solve_from(near)
        if th is not None and legal(float(th[0]), float(th[1])):
            t2, t3 = float(th[0]), float(th[1])
            return t2, t3, t3 + curl

    # the planar chain has mirror-image elbow branches; only solutions
    # inside the joint limits are usable, and of those the flattest wins
    best = None
    for init in ((0.3, 0.3), (0.5, -0.2), (0.15, -0.35), (0.9, 0.5), (1.3, 1.0)):
        th = solve_from(init)
        if th is None:
            continue
        t2, t3 = float(th[0]), float(th[1])
        if not legal(t2, t3):
            continue
        score = abs(t2 - 0.3) + abs(t3)
        if best is None or score < best[0]:
            best = (score, t2, t3, t3 + curl)
    if best is None:
        raise ConfigError(
            f"no flexion solution for y_close={y_close}, z={z}, curl={curl}"
        )
    return best[1], best[2], best[3]


def _grip(finger: str, width: float, z: float, curl: float = 0.0, yaw: float = 0.0,
          roll: float = 0.0, near=None) -> dict[int, float]:
    """Joint targets putting `finger`'s roller center `width` from the
    channel midline at height `z`."""
    base, sign = _FINGERS[finger]
    t2, t3, t4 = _flexion_for(_KNUCKLE_Y - width, z, curl, near=near)
    return {
        base: sign * yaw,
        base + 1: sign * t2,
        base + 2: sign * t3,
        base + 3: sign * t4,
        base + 4: sign * roll,
    }


def _merge(*dicts) -> dict[int, float]:
    out: dict[int, float] = {}
    for d in dicts:
        out.update(d)
    return out


def _tilt_back(finger: str) -> dict[int, float]:
    """Knuckle tilted away from the channel, chain straight. Waypoint so a
    curl route rises on the outside instead of sweeping the cable line."""
    base, sign = _FINGERS[finger]
    return {base: 0.0, base + 1: sign * -0.35, base + 2: 0.0,
            base + 3: 0.0, base + 4: 0.0}


def _open_flat(finger: str) -> dict[int, float]:
    base, _ = _FINGERS[finger]
    return {base + j: 0.0 for j in range(5)}


# bar-grip presets (width, z, curl): the rollers pinch the resting cable
# with a slight interference so friction carries it. The table grip height
# is right at the chain's reach limit, where the elbow branches meet;
# gripping with a small curl already on the inward elbow branch keeps every
# later height change on that one smooth branch instead of crossing the
# fold.
_TABLE_GRIP_W, _TABLE_GRIP_Z = 0.0145, 0.005
_GRIP_CURL = 0.3
_ELBOW_IN = (0.0, 0.25)  # solver seed that lands on the inward branch


def _tic_grip(side: str, width: float, z: float, curl: float = 0.0,
              yaw: float = 0.0, roll: float = 0.0, near=None) -> dict[int, float]:
    thumb = "thumb_left" if side == "left" else "thumb_right"
    index = "index_left" if side == "left" else "index_right"
    yaw_t, yaw_i = yaw, -yaw  # opposite yaws translate the pinch along X
    return _merge(
        _grip(thumb, width, z, curl, yaw_t, roll, near=near),
        _grip(index, width, z, curl, yaw_i, -roll, near=near),
    )


def _grip_branch(side: str, pose: dict[int, float]) -> tuple[float, float]:
    """Recover (t2, t3) of a TIC grip pose, for seeding the next solve."""
    base, sign = _FINGERS["thumb_left" if side == "left" else "thumb_right"]
    return (sign * pose[base + 1], sign * pose[base + 2])


def _ramp_keys(side: str, t0: int, p0, p1, n: int, near0=None,
               yaw: float = 0.0, yaw1: float | None = None,
               min_step: int = 4):
    """Keys sweeping a TIC grip from p0 to p1, p = (width, z, curl),
    with the pair yaw riding along from `yaw` to `yaw1` when given.

    The sweep is linear in task space; each interval gets however many
    ticks its own joint motion needs at the rate cap, so steep stretches
    of the solution branch slow down instead of breaking tracking.
    Returns (keys, t_end)."""
    if yaw1 is None:
        yaw1 = yaw
    poses = []
    near = near0
    for k in range(1, n + 1):
        s = k / n
        pose = _tic_grip(
            side,
            p0[0] + s * (p1[0] - p0[0]),
            p0[1] + s * (p1[1] - p0[1]),
            curl=p0[2] + s * (p1[2] - p0[2]),
            yaw=yaw + s * (yaw1 - yaw), near=near,
        )
        near = _grip_branch(side, pose)
        poses.append(pose)
    keys = []
    t = t0
    prev = _tic_grip(side, *p0, yaw=yaw, near=near0)
    for pose in poses:
        t += _travel(prev, pose, floor=min_step)
        keys.append(_Key(t, pose))
        prev = pose
    return keys, t


# opposite yaws on a thumb-index pair slide the pinch point along the
# channel: the whole legal yaw band solves at table height on both sides,
# and the roller-center x it maps to does not change with height, so a
# stroke planned at the grab height lands on the same stretch of cable
# the carry poses hover over. The grab yaw is the inward end of the band
# (mirrored on the right); a full swing to the opposite end moves the
# pinch just over three centimeters.
_GRAB_YAW = {"left": 0.9, "right": -0.9}
# wide pair for crossing cable height: the slot swallows the cable with
# over a centimeter of slack per side, so descents and releases happen
# astride the cable without moving it. The chain can only hold this
# width near the table, which fixes the staging below.
_APPROACH_W = 0.028
_APPROACH_Z = _TABLE_GRIP_Z + 0.004
# heights: carry is the tallest the closed-width pair can hold across its
# whole yaw band, with the bar bottoms a few millimeters above the
# resting cable, so return swings at carry height never touch it. The
# mid height is the tallest the wide pair can hold; open-ups and
# close-downs pass through (wide, mid) so the slot is already far wider
# than the cable whenever the bars cross its height.
_CARRY_Z = 0.025
_MID_Z = 0.015

# middle-finger crook poses, (reach past the knuckle, height, curl).
# Shut, the fingertip roller bar parks lengthwise over the channel a
# whisker above the resting cable, threading the cable underneath it:
# a low tunnel that lets the cable slide lengthwise freely but keeps it
# from riding up or wandering off the channel line while the pin pairs
# drag it. The other poses stage the shut approach from the far side so
# the bar never sweeps the channel low.
_CROOK_OPEN = (0.057, 0.018, 0.65)
_CROOK_PASS1 = (0.052, 0.024, 1.00)
_CROOK_PASS2 = (0.040, 0.025, 1.10)
_CROOK_SHUT = (0.030, 0.022, 1.10)
_CROOK_SEED = (0.47, -0.24)  # keeps every crook solve on one branch

_CFG = default_hand_config()
_FINGER_ROW = {name: i for i, name in enumerate(
    ("thumb_left", "index_left", "middle", "index_right", "thumb_right"))}


def _roller_center(finger: str, pose: dict[int, float]) -> np.ndarray:
    q = np.zeros(JOINT_COUNT)
    for j, a in pose.items():
        q[j] = a
    caps = finger_capsules(_CFG, q)
    cap = caps[1 + _FINGER_ROW[finger] * 4 + 3]
    return 0.5 * (np.asarray(cap.a) + np.asarray(cap.b))


def _middle_up() -> dict[int, float]:
    return _open_flat("middle")


def _crook_pose(p, near=None) -> dict[int, float]:
    reach, z, curl = p
    return _grip("middle", _KNUCKLE_Y - reach, z, curl, near=near)


_CROOK_CACHE: dict[str, dict[int, float]] = {}


def _crook_poses() -> dict[str, dict[int, float]]:
    """The four crook poses, solved once and branch-chained so every demo
    that re-states one lands on identical angles."""
    if not _CROOK_CACHE:
        near = _CROOK_SEED
        for name, p in (("open", _CROOK_OPEN), ("pass1", _CROOK_PASS1),
                        ("pass2", _CROOK_PASS2), ("shut", _CROOK_SHUT)):
            pose = _crook_pose(p, near=near)
            near = (pose[11], pose[12])
            _CROOK_CACHE[name] = pose
    return _CROOK_CACHE


def _crook_walk(t0: int, names) -> tuple[list[_Key], int]:
    """Keys stepping the middle finger through the named crook poses."""
    crook = _crook_poses()
    keys: list[_Key] = []
    t = t0
    prev = crook[names[0]]
    for nm in names[1:]:
        t += _travel(prev, crook[nm], floor=4)
        keys.append(_Key(t, crook[nm]))
        prev = crook[nm]
    return keys, t


def _crook_reach_route(t0: int) -> tuple[list[_Key], int]:
    """Middle finger from flat to the shut crook without sweeping the
    channel low: tilt back, curl up high, drop on the far side, then sweep
    the bar in above the resting cable. Returns (keys, t_end)."""
    base, _ = _FINGERS["middle"]
    tilt = _tilt_back("middle")
    high = {base: 0.0, base + 1: -0.35, base + 2: 0.9, base + 3: 0.9,
            base + 4: 0.0}
    crook = _crook_poses()
    keys: list[_Key] = []
    t = t0 + _travel(_middle_up(), tilt, floor=6)
    keys.append(_Key(t, tilt))
    t += _travel(tilt, high, floor=6)
    keys.append(_Key(t, high))
    t += _travel(high, crook["open"], floor=6)
    keys.append(_Key(t, crook["open"]))
    walk, t = _crook_walk(t, ("open", "pass1", "pass2", "shut"))
    return keys + walk, t


# ---------------------------------------------------------------------------
# builders
#
# The four pulling-loop primitives chain pose-to-pose: each one's final
# pose is the next one's opening snap, so a sequencer can replay them
# back-to-back: pre-grasp -> precision-grasp -> vmf-hook -> pull, then
# back to precision-grasp for the next stroke, and pull ends on the same
# staging pose pre-grasp ends on, so every seam is exact. The crook
# shuts once during pre-grasp and never moves again: the resting cable
# threads beneath its bar, which keeps it on the channel line while the
# roller pairs work it. Each cycle the left pair pinches the trailing
# side at the inward end of its yaw band, the right pair pinches just
# downstream of the crook, and both drag a full band together, sliding
# the held stretch of cable along the table. Then both release astride
# the cable, rise, and swing back at carry height, touching nothing.
# The left grab spot empties partway through a long run as the trailing
# tip ratchets past it; the right pair alone keeps feeding until the
# tip crosses the guard line.
# ---------------------------------------------------------------------------


def _zeros_pose() -> dict[int, float]:
    return {j: 0.0 for j in range(JOINT_COUNT)}


def _station(side: str) -> dict[int, float]:
    """Closed-width pair at carry height over its grab spot: the staging
    pose every cycle starts and ends on, bars clear above the cable."""
    return _tic_grip(side, _TABLE_GRIP_W, _CARRY_Z, curl=_GRIP_CURL,
                     yaw=_GRAB_YAW[side], near=_ELBOW_IN)


def _stand_route(side: str, t0: int) -> tuple[list[_Key], int]:
    """TIC from flat to its station without sweeping the channel: tilt
    the knuckles back, form the pair at carry height pointing straight
    in, then swing to the grab yaw. Returns (keys, t_end)."""
    thumb = "thumb_left" if side == "left" else "thumb_right"
    index = "index_left" if side == "left" else "index_right"
    flat = _merge(_open_flat(thumb), _open_flat(index))
    tilt = _merge(_tilt_back(thumb), _tilt_back(index))
    mid = _tic_grip(side, _TABLE_GRIP_W, _CARRY_Z, curl=_GRIP_CURL,
                    near=_ELBOW_IN)
    station = _station(side)
    keys: list[_Key] = []
    t = t0 + _travel(flat, tilt, floor=6)
    keys.append(_Key(t, tilt))
    t += _travel(tilt, mid, floor=6)
    keys.append(_Key(t, mid))
    t += _travel(mid, station, floor=6)
    keys.append(_Key(t, station))
    return keys, t


def _build_pre_grasp(scene: SceneConfig) -> DemoTrajectory:
    """Stage every finger for the pulling loop: both TICs form their
    roller pairs at carry height over their grab spots, and the middle
    finger folds shut over the cable line so the cable threads under its
    bar. Every transit is routed high so the staging itself leaves the
    cable where it lies."""
    l_keys, t_l = _stand_route("left", 0)
    r_keys, t_r = _stand_route("right", 0)
    crook_keys, t_crook = _crook_reach_route(0)
    keys = l_keys + r_keys + crook_keys
    end = max(t_l, t_r, t_crook) + 10
    keys.append(_Key(end, _merge(_station("left"), _station("right"),
                                 _crook_poses()["shut"])))
    return record_session(
        scene, "Pre-grasp", end + 1,
        drags=_drags_from_keys(keys, end + 1), created=LIBRARY_CREATED,
    )


_GRAB_P = (_TABLE_GRIP_W, _TABLE_GRIP_Z, _GRIP_CURL)
_WIDE_P = (_APPROACH_W, _APPROACH_Z, _GRIP_CURL)
_MID_P = (_APPROACH_W, _MID_Z, _GRIP_CURL)
_CARRY_P = (_TABLE_GRIP_W, _CARRY_Z, _GRIP_CURL)


def _grab_pose(side: str) -> dict[int, float]:
    return _tic_grip(side, *_GRAB_P, yaw=_GRAB_YAW[side], near=_ELBOW_IN)


def _close_down_keys(side: str, t0: int, start) -> tuple[list[_Key], int]:
    """Open wide while dropping to the mid height, descend astride the
    cable, then close to the slight-interference pinch on it."""
    g = _GRAB_YAW[side]
    keys: list[_Key] = []
    down, t = _ramp_keys(side, t0, _CARRY_P, _MID_P, n=2,
                         near0=_grip_branch(side, start), yaw=g)
    keys += down
    desc, t = _ramp_keys(side, t, _MID_P, _WIDE_P, n=1,
                         near0=_grip_branch(side, down[-1].pose), yaw=g)
    keys += desc
    close, t = _ramp_keys(side, t + 2, _WIDE_P, _GRAB_P, n=2,
                          near0=_grip_branch(side, desc[-1].pose), yaw=g)
    keys += close
    return keys, t


def _build_precision_grasp(scene: SceneConfig) -> DemoTrajectory:
    """The left pair opens wide, descends astride the trailing side, and
    closes to a slight-interference pinch on the cable where it lies.

    Opens at the pre-grasp end pose. Once the trailing tip has ratcheted
    past the grab spot on a later cycle the pair closes on air and the
    strokes that follow simply feed from the right."""
    start = _merge(_station("left"), _station("right"),
                   _crook_poses()["shut"])
    keys = [_Key(0, start)]
    grasp, t1 = _close_down_keys("left", 4, start)
    keys += grasp
    end = t1 + 10
    keys.append(_Key(end, grasp[-1].pose))
    return record_session(
        scene, "Precision grasp", end + 1,
        drags=_drags_from_keys(keys, end + 1), created=LIBRARY_CREATED,
    )


def _build_vmf_hook(scene: SceneConfig) -> DemoTrajectory:
    """The right pair descends just downstream of the crook and closes
    on the cable there, so the coming drag stroke pulls the cable
    through the crook's tunnel from as far upstream as the pair can
    reach. The left pair holds its pinch throughout."""
    crook = _crook_poses()
    l_hold = _grab_pose("left")
    start = _merge(l_hold, _station("right"), crook["shut"])
    keys = [_Key(0, start)]
    grasp, t1 = _close_down_keys("right", 4, start)
    keys += grasp
    end = t1 + 10
    keys.append(_Key(end, _merge(l_hold, grasp[-1].pose, crook["shut"])))
    return record_session(
        scene, "VMF hooking", end + 1,
        drags=_drags_from_keys(keys, end + 1), created=LIBRARY_CREATED,
    )


def _build_pull(scene: SceneConfig) -> DemoTrajectory:
    """One ratchet stroke, all along the table. Both pairs drag their
    pinches a full yaw band together, the left feeding the trailing side
    in while the right pulls the cable on through the crook's tunnel.
    Then both release astride the cable, rise clear, and swing back at
    carry height. Ends on the staging pose pre-grasp ends on, which is
    the next cycle's grasp start."""
    crook = _crook_poses()
    start = _merge(_grab_pose("left"), _grab_pose("right"), crook["shut"])
    keys = [_Key(0, start)]
    t_end = 0
    # mirrored sides move in lockstep: same intervals, disjoint joints
    for side in ("left", "right"):
        g = _GRAB_YAW[side]
        drag, t1 = _ramp_keys(side, 4, _GRAB_P, _GRAB_P, n=6,
                              near0=_grip_branch(side, start),
                              yaw=g, yaw1=-g)
        keys += drag
        keys.append(_Key(t1 + 4, drag[-1].pose))
        rel, t2 = _ramp_keys(side, t1 + 4, _GRAB_P, _WIDE_P, n=2,
                             near0=_grip_branch(side, drag[-1].pose), yaw=-g)
        keys += rel
        rise, t3 = _ramp_keys(side, t2, _WIDE_P, _MID_P, n=1,
                              near0=_grip_branch(side, rel[-1].pose), yaw=-g)
        keys += rise
        lift, t4 = _ramp_keys(side, t3, _MID_P, _CARRY_P, n=2,
                              near0=_grip_branch(side, rise[-1].pose), yaw=-g)
        keys += lift
        back, t5 = _ramp_keys(side, t4, _CARRY_P, _CARRY_P, n=6,
                              near0=_grip_branch(side, lift[-1].pose),
                              yaw=-g, yaw1=g)
        keys += back
        t_end = max(t_end, t5)
    end = t_end + 8
    keys.append(_Key(end, _merge(_station("left"), _station("right"),
                                 crook["shut"])))
    return record_session(
        scene, "Pulling", end + 1,
        drags=_drags_from_keys(keys, end + 1), created=LIBRARY_CREATED,
    )


_BUILDERS = {
    "pre-grasp": _build_pre_grasp,
    "precision-grasp": _build_precision_grasp,
    "vmf-hook": _build_vmf_hook,
    "pull": _build_pull,
}


def builtin_demo_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def synthesize_demo(name: str, scene: SceneConfig | None = None) -> DemoTrajectory:
    """Re-record one builtin demo from its keyframes; deterministic."""
    if name not in _BUILDERS:
        known = ", ".join(sorted(_BUILDERS))
        raise ConfigError(f"unknown builtin demo {name!r} (one of {known})")
    return _BUILDERS[name](scene if scene is not None else default_scene())


def builtin_demo(name: str) -> DemoTrajectory:
    """Load one shipped builtin demo file."""
    if name not in _BUILDERS:
        known = ", ".join(sorted(_BUILDERS))
        raise ConfigError(f"unknown builtin demo {name!r} (one of {known})")
    ref = resources.files("cabledex.data") / "demos" / f"{name}.demo"
    with resources.as_file(ref) as path:
        return load_demo(path)


def write_library(out_dir) -> tuple[str, ...]:
    """Synthesize every builtin demo into out_dir; returns the names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = default_scene()
    for name, build in sorted(_BUILDERS.items()):
        (out / f"{name}.demo").write_bytes(dumps_demo(build(scene)))
    return builtin_demo_names()
