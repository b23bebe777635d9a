"""Kinesthetic demonstration pipeline: record, persist, compensate, replay.

Recording runs the hand in free-drive stiffness: operator drag events move
the joints directly while the motor targets shadow the actuals, so a
recorded trajectory is a pure kinesthetic trace. Locked fingers hold their
frozen targets at high stiffness instead. Trajectories persist to a binary
file with a text header and a trailing content digest, and replay drives
the same PID plant frame by frame against the cable dynamics.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cable import CABLE_DIAMETERS
from .errors import ConfigError, FormatError, IntegrityError, UnsupportedVersionError
from .hand import (
    FINGER_NAMES,
    JOINT_COUNT,
    JOINTS_PER_FINGER,
    MIRROR,
    HandConfig,
    clamp_to_limits,
    default_hand_config,
    finger_capsules,
    mirror_permutation,
)
from .scene import SceneConfig, scene_digest
from .simulation import Simulator, Snapshot
from .taxonomy import builtin_catalog, catalog_by_name
from .transforms import segment_segment_distance

DEMO_FORMAT_VERSION = 1
DEMO_MAGIC = "cable-demo"
RECORD_RATE = 30.0

MAX_COMPENSATION = 0.3  # radians, safety bound on any single offset

# 1-based joint rows: thumbs J2+J3, index fingers J1+J3, proximal to distal
DEFAULT_COMPENSATION_JOINTS = (2, 3, 6, 8, 16, 18, 22, 23)

# frame flag bits
FLAG_DRAG_CLAMPED = 0x01

_JOINT_ORDER = " ".join(f"{name}*{JOINTS_PER_FINGER}" for name in FINGER_NAMES)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemoMeta:
    """Provenance of one demonstration."""

    primitive: str
    cable: str
    scene_hash: str
    created: str  # ISO 8601
    format_version: int = DEMO_FORMAT_VERSION
    compensation: str | None = None  # digest of the applied map, if any

    def __post_init__(self):
        if self.primitive not in catalog_by_name(builtin_catalog()):
            raise ConfigError(f"unknown task name {self.primitive!r}")
        if self.cable not in CABLE_DIAMETERS:
            known = ", ".join(sorted(CABLE_DIAMETERS))
            raise ConfigError(f"unknown cable label {self.cable!r} (one of {known})")
        if self.format_version != DEMO_FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"demo format v{self.format_version} is not supported "
                f"(this reader handles v{DEMO_FORMAT_VERSION})"
            )
        if not self.created or "\n" in self.created:
            raise ConfigError("created must be a single-line timestamp")


@dataclass(frozen=True)
class Frame:
    """One 30 Hz sample: commanded and measured pose plus cable keypoints."""

    tick: int
    time: float
    target: np.ndarray
    actual: np.ndarray
    keypoints: np.ndarray | None
    flags: int = 0

    def __post_init__(self):
        for name in ("target", "actual"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (JOINT_COUNT,):
                raise ConfigError(f"frame {name} must have {JOINT_COUNT} entries")
            object.__setattr__(self, name, v)
        if self.keypoints is not None:
            k = np.asarray(self.keypoints, dtype=np.float64)
            if k.ndim != 2 or k.shape[1] != 3:
                raise ConfigError("frame keypoints must be an (n, 3) array")
            object.__setattr__(self, "keypoints", k)


@dataclass(frozen=True)
class DemoTrajectory:
    """An immutable sequence of frames at a fixed sample rate."""

    meta: DemoMeta
    frames: tuple[Frame, ...]
    rate: float = RECORD_RATE

    def __post_init__(self):
        if self.rate <= 0.0:
            raise ConfigError("sample rate must be positive")
        if not self.frames:
            raise ConfigError("trajectory needs at least one frame")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.tick != prev.tick + 1:
                raise ConfigError(
                    f"ticks must increase by 1 (got {prev.tick} then {cur.tick})"
                )
        counts = {0 if f.keypoints is None else len(f.keypoints) for f in self.frames}
        if len(counts) != 1:
            raise ConfigError("all frames must carry the same keypoint count")
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def keypoint_count(self) -> int:
        k = self.frames[0].keypoints
        return 0 if k is None else len(k)

    @property
    def duration(self) -> float:
        return (len(self.frames) - 1) / self.rate

    def targets(self) -> np.ndarray:
        return np.stack([f.target for f in self.frames])

    def actuals(self) -> np.ndarray:
        return np.stack([f.actual for f in self.frames])

    def keypoint_track(self) -> np.ndarray | None:
        if self.keypoint_count == 0:
            return None
        return np.stack([f.keypoints for f in self.frames])


@dataclass(frozen=True)
class CompensationMap:
    """Static target-angle offsets for weak joints, 1-based indexing."""

    offsets: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for idx, v in sorted(self.offsets.items()):
            idx, v = int(idx), float(v) + 0.0  # adding 0.0 folds -0.0 into +0.0
            if not 1 <= idx <= JOINT_COUNT:
                raise ConfigError(
                    f"compensation joint {idx} out of range 1..{JOINT_COUNT}"
                )
            if abs(v) > MAX_COMPENSATION:
                raise ConfigError(
                    f"compensation offset {v:+.3f} rad at joint {idx} exceeds "
                    f"the {MAX_COMPENSATION} rad safety bound"
                )
            clean[idx] = v
        object.__setattr__(self, "offsets", clean)

    @staticmethod
    def default() -> "CompensationMap":
        return CompensationMap({j: 0.0 for j in DEFAULT_COMPENSATION_JOINTS})

    def as_vector(self) -> np.ndarray:
        vec = np.zeros(JOINT_COUNT)
        for idx, v in self.offsets.items():
            vec[idx - 1] = v
        return vec

    def digest(self) -> str:
        body = "\n".join(f"{i}:{v!r}" for i, v in self.offsets.items())
        return hashlib.sha256(body.encode("ascii")).hexdigest()

    def mirrored(self, config: HandConfig | None = None) -> "CompensationMap":
        """The map that has the same effect on the mirror-image hand."""
        config = config if config is not None else default_hand_config()
        perm, signs = mirror_permutation(config)
        out = {}
        for idx, v in self.offsets.items():
            k = int(perm[idx - 1])  # perm is an involution
            out[k + 1] = float(signs[k]) * v
        return CompensationMap(out)


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DragInput:
    """Operator push on one joint at one tick; joint is a 0-based row."""

    tick: int
    joint: int
    delta: float


@dataclass(frozen=True)
class LockCommand:
    """Freeze or release one finger at one tick."""

    tick: int
    finger: str
    locked: bool


def record_session(
    scene: SceneConfig,
    primitive: str,
    ticks: int,
    drags: Sequence[DragInput] = (),
    locks: Sequence[LockCommand] = (),
    created: str | None = None,
) -> DemoTrajectory:
    """Run the hand in free-drive for `ticks` control cycles and record.

    Drag and lock streams are serialized onto tick boundaries: everything
    stamped for tick t is applied before tick t steps. Drags that run into
    a joint limit are clamped and flag the frame; the session continues.
    """
    if ticks <= 0:
        raise ConfigError("recording needs at least one tick")
    meta = DemoMeta(
        primitive=primitive,
        cable=scene.cable.label,
        scene_hash=scene_digest(scene),
        created=created
        if created is not None
        else datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    sim = Simulator(scene, mode="recording")
    for name in FINGER_NAMES:
        sim.set_finger_mode(name, "record_low")
    drags_at: dict[int, list[DragInput]] = {}
    for d in drags:
        drags_at.setdefault(d.tick, []).append(d)
    locks_at: dict[int, list[LockCommand]] = {}
    for c in locks:
        locks_at.setdefault(c.tick, []).append(c)

    frames = []
    for t in range(ticks):
        for cmd in locks_at.get(t, ()):
            sim.set_finger_mode(
                cmd.finger, "locked_high" if cmd.locked else "record_low"
            )
        clamped = False
        for d in drags_at.get(t, ()):
            clamped |= sim.drag_joint(d.joint, d.delta)
        snap = sim.step_tick(flags=("drag_clamped",) if clamped else ())
        frames.append(
            Frame(
                tick=snap.tick,
                time=snap.tick / RECORD_RATE,
                target=snap.target,
                actual=snap.actual,
                keypoints=snap.keypoints,
                flags=FLAG_DRAG_CLAMPED if clamped else 0,
            )
        )
    return DemoTrajectory(meta=meta, frames=tuple(frames))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _frame_struct(keypoint_count: int) -> struct.Struct:
    return struct.Struct(
        f"<Id{JOINT_COUNT}d{JOINT_COUNT}d{3 * keypoint_count}dB"
    )


def _header_text(traj: DemoTrajectory) -> str:
    m = traj.meta
    lines = [
        f"{DEMO_MAGIC} v{m.format_version}",
        f'primitive "{m.primitive}"',
        f"cable {m.cable}",
        f"scene {m.scene_hash}",
        f"created {m.created}",
        f"rate {float(traj.rate)!r}",
        f"frames {len(traj.frames)}",
        f"keypoints {traj.keypoint_count}",
        f"compensation {m.compensation if m.compensation is not None else '-'}",
        f"joints {_JOINT_ORDER}",
        "end-header",
    ]
    return "\n".join(lines) + "\n"


def dumps_demo(traj: DemoTrajectory) -> bytes:
    """Encode to header text, little-endian frames, trailing sha256."""
    kp = traj.keypoint_count
    rec = _frame_struct(kp)
    blob = bytearray(_header_text(traj).encode("ascii"))
    for f in traj.frames:
        vals = [f.tick, f.time]
        vals += f.target.tolist()
        vals += f.actual.tolist()
        if kp:
            vals += f.keypoints.reshape(-1).tolist()
        vals.append(f.flags)
        blob += rec.pack(*vals)
    return bytes(blob) + hashlib.sha256(bytes(blob)).digest()


def _parse_header(data: bytes) -> tuple[dict, int]:
    marker = b"end-header\n"
    pos = data.find(marker)
    if pos < 0:
        raise FormatError("missing end-header line")
    head_end = pos + len(marker)
    try:
        lines = data[:head_end].decode("ascii").splitlines()
    except UnicodeDecodeError as e:
        raise FormatError(f"header is not ASCII: {e}") from None
    magic, _, version_token = lines[0].partition(" ")
    if magic != DEMO_MAGIC or not version_token.startswith("v"):
        raise FormatError(f"not a demo file (first line {lines[0]!r})")
    try:
        version = int(version_token[1:])
    except ValueError:
        raise FormatError(f"bad version token {version_token!r}") from None
    if version != DEMO_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"demo format v{version} is not supported "
            f"(this reader handles v{DEMO_FORMAT_VERSION})"
        )
    fields: dict[str, str] = {}
    for line in lines[1:-1]:
        key, _, value = line.partition(" ")
        if not key or not value:
            raise FormatError(f"malformed header line {line!r}")
        fields[key] = value
    required = (
        "primitive", "cable", "scene", "created",
        "rate", "frames", "keypoints", "compensation", "joints",
    )
    missing = [k for k in required if k not in fields]
    if missing:
        raise FormatError(f"header missing fields: {', '.join(missing)}")
    if fields["joints"] != _JOINT_ORDER:
        raise FormatError(
            f"joint order contract mismatch: file says {fields['joints']!r}, "
            f"this reader expects {_JOINT_ORDER!r}"
        )
    prim = fields["primitive"]
    if len(prim) < 2 or prim[0] != '"' or prim[-1] != '"':
        raise FormatError(f"primitive name must be quoted, got {prim!r}")
    fields["primitive"] = prim[1:-1]
    fields["version"] = str(version)
    return fields, head_end


def loads_demo(data: bytes) -> DemoTrajectory:
    fields, head_end = _parse_header(data)
    try:
        count = int(fields["frames"])
        kp = int(fields["keypoints"])
        rate = float(fields["rate"])
    except ValueError as e:
        raise FormatError(f"bad numeric header field: {e}") from None
    if count < 1 or kp < 0:
        raise FormatError("frame and keypoint counts must be sane")
    rec = _frame_struct(kp)
    expected = head_end + count * rec.size + 32
    if len(data) < expected:
        raise IntegrityError(
            f"file truncated: expected {expected} bytes, have {len(data)}",
            byte_offset=len(data),
        )
    if len(data) > expected:
        raise IntegrityError(
            f"{len(data) - expected} unexpected bytes after the digest",
            byte_offset=expected,
        )
    digest = hashlib.sha256(data[: expected - 32]).digest()
    if digest != data[expected - 32 :]:
        raise IntegrityError(
            "content digest mismatch", byte_offset=expected - 32
        )
    frames = []
    offset = head_end
    for _ in range(count):
        vals = rec.unpack_from(data, offset)
        target = np.array(vals[2 : 2 + JOINT_COUNT])
        actual = np.array(vals[2 + JOINT_COUNT : 2 + 2 * JOINT_COUNT])
        kps = None
        if kp:
            kps = np.array(vals[2 + 2 * JOINT_COUNT : -1]).reshape(kp, 3)
        frames.append(
            Frame(
                tick=vals[0],
                time=vals[1],
                target=target,
                actual=actual,
                keypoints=kps,
                flags=vals[-1],
            )
        )
        offset += rec.size
    meta = DemoMeta(
        primitive=fields["primitive"],
        cable=fields["cable"],
        scene_hash=fields["scene"],
        created=fields["created"],
        format_version=int(fields["version"]),
        compensation=None if fields["compensation"] == "-" else fields["compensation"],
    )
    return DemoTrajectory(meta=meta, frames=tuple(frames), rate=rate)


def save_demo(traj: DemoTrajectory, path) -> None:
    Path(path).write_bytes(dumps_demo(traj))


def load_demo(path) -> DemoTrajectory:
    return loads_demo(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# compensation
# ---------------------------------------------------------------------------


def apply_compensation(
    traj: DemoTrajectory,
    comp: CompensationMap,
    config: HandConfig | None = None,
) -> DemoTrajectory:
    """Shift listed target angles, clamp to limits, leave actuals alone."""
    if not comp.offsets:
        return traj
    config = config if config is not None else default_hand_config()
    vec = comp.as_vector()
    frames = tuple(
        replace(f, target=clamp_to_limits(config, f.target + vec))
        for f in traj.frames
    )
    meta = replace(traj.meta, compensation=comp.digest())
    return DemoTrajectory(meta=meta, frames=frames, rate=traj.rate)


def calibrate_compensation(
    config: HandConfig | None = None,
    pose: np.ndarray | None = None,
    cylinder_radius: float = 0.006,
    contact_gap: float = 0.0005,
    step: float = 0.002,
) -> CompensationMap:
    """Calibrate offsets against a reference cylinder in the pinch channel.

    For each default compensation joint, proximal to distal, the offset
    grows in the direction that closes the gap between that finger and a
    cylinder lying along X through the hand center, until the finger is
    within `contact_gap` of touching or the safety bound is reached.
    Joints whose motion cannot close the gap keep a zero offset.
    """
    config = config if config is not None else default_hand_config()
    q = (
        np.zeros(JOINT_COUNT)
        if pose is None
        else clamp_to_limits(config, np.asarray(pose, dtype=np.float64))
    )
    center = config.base_pose[:3, 3]
    cyl_a = np.array([center[0] - 0.06, center[1], cylinder_radius])
    cyl_b = np.array([center[0] + 0.06, center[1], cylinder_radius])

    def gap(pose_now: np.ndarray, finger_index: int) -> float:
        caps = finger_capsules(config, pose_now)
        lo, hi = 1 + 4 * finger_index, 1 + 4 * (finger_index + 1)
        return min(
            segment_segment_distance(np.asarray(c.a), np.asarray(c.b), cyl_a, cyl_b)
            - c.radius
            - cylinder_radius
            for c in caps[lo:hi]
        )

    offsets = {}
    for idx in DEFAULT_COMPENSATION_JOINTS:
        j = idx - 1
        fi = j // JOINTS_PER_FINGER
        base = gap(q, fi)
        direction = 0.0
        for sign in (+1.0, -1.0):
            probe = q.copy()
            probe[j] += sign * step
            if gap(clamp_to_limits(config, probe), fi) < base - 1e-9:
                direction = sign
                break
        total = 0.0
        while direction and total < MAX_COMPENSATION and gap(q, fi) > contact_gap:
            probe = q.copy()
            probe[j] += direction * step
            probe = clamp_to_limits(config, probe)
            if abs(probe[j] - q[j]) < 1e-12:
                break  # pinned at a joint limit
            q = probe
            total = min(total + step, MAX_COMPENSATION)
        offsets[idx] = direction * total
    return CompensationMap(offsets)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayTrace:
    """Everything the evaluation layer needs from one replay run."""

    meta: DemoMeta
    cable: str
    snapshots: tuple[Snapshot, ...]

    def actuals(self) -> np.ndarray:
        return np.stack([s.actual for s in self.snapshots])

    def keypoint_track(self) -> np.ndarray:
        return np.stack([s.keypoints for s in self.snapshots])


def replay(
    traj: DemoTrajectory,
    scene: SceneConfig,
    comp: CompensationMap | None = None,
    cable: str | None = None,
    cable_state=None,
) -> ReplayTrace:
    """Drive the recorded targets through the PID plant and cable physics.

    The run is deterministic for a given scene and initial cable state.
    A solver failure from the dynamics propagates with its tick index.
    """
    if abs(traj.rate - RECORD_RATE) > 1e-9:
        raise ConfigError(
            f"replay runs at {RECORD_RATE:g} Hz; resample the trajectory first"
        )
    if comp is not None:
        traj = apply_compensation(traj, comp, scene.hand)
    sim = Simulator(
        scene,
        cable_state=cable_state,
        start_pose=traj.frames[0].actual,
        mode="replaying",
    )
    label = scene.cable.label
    if cable is not None:
        sim.swap_cable(cable)
        label = cable
    snaps = []
    for f in traj.frames:
        sim.set_targets(f.target)
        snaps.append(sim.step_tick())
    return ReplayTrace(meta=traj.meta, cable=label, snapshots=tuple(snaps))


# ---------------------------------------------------------------------------
# resampling and mirroring
# ---------------------------------------------------------------------------


def resample(traj: DemoTrajectory, new_rate: float) -> DemoTrajectory:
    """Linear interpolation onto a new fixed rate; same rate is identity."""
    if new_rate <= 0.0:
        raise ConfigError("resample rate must be positive")
    if abs(new_rate - traj.rate) < 1e-12:
        return traj
    old_t = np.array([f.time for f in traj.frames])
    count = int(np.floor((old_t[-1] - old_t[0]) * new_rate + 1e-9)) + 1
    new_t = old_t[0] + np.arange(count) / new_rate
    targets = traj.targets()
    actuals = traj.actuals()
    kp_track = traj.keypoint_track()

    def interp_columns(table: np.ndarray) -> np.ndarray:
        flat = table.reshape(len(old_t), -1)
        out = np.empty((count, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(new_t, old_t, flat[:, c])
        return out.reshape((count,) + table.shape[1:])

    new_targets = interp_columns(targets)
    new_actuals = interp_columns(actuals)
    new_kps = None if kp_track is None else interp_columns(kp_track)
    # flags stick to the nearest preceding source frame
    src = np.clip(np.searchsorted(old_t, new_t + 1e-12, side="right") - 1, 0, None)
    base_tick = traj.frames[0].tick
    frames = tuple(
        Frame(
            tick=base_tick + i,
            time=float(new_t[i]),
            target=new_targets[i],
            actual=new_actuals[i],
            keypoints=None if new_kps is None else new_kps[i],
            flags=traj.frames[int(src[i])].flags,
        )
        for i in range(count)
    )
    return DemoTrajectory(meta=traj.meta, frames=frames, rate=float(new_rate))


def mirror_trajectory(
    traj: DemoTrajectory, config: HandConfig | None = None
) -> DemoTrajectory:
    """Reflect a trajectory about the hand's Y-Z symmetry plane."""
    config = config if config is not None else default_hand_config()
    perm, signs = mirror_permutation(config)
    flip = np.diag(MIRROR)
    frames = tuple(
        replace(
            f,
            target=signs * f.target[perm],
            actual=signs * f.actual[perm],
            keypoints=None if f.keypoints is None else f.keypoints * flip,
        )
        for f in traj.frames
    )
    return DemoTrajectory(meta=traj.meta, frames=frames, rate=traj.rate)
