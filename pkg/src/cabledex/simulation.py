"""Fixed-rate simulation loop coupling the hand to the cable.

One control tick at 30 Hz: apply operator inputs, run the joint PID, move
the kinematic plant, derive finger capsules with finite-difference surface
velocities, advance the rod through its physics substeps, and emit an
immutable Snapshot. The coupling is one-way: fingers push the cable, the
cable never back-drives a joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cable import CableSpec, CableState, ContactSet, keypoints, step
from .errors import ConfigError, SolverFailure
from .hand import (
    JOINT_COUNT,
    JOINTS_PER_FINGER,
    FINGER_NAMES,
    MotorState,
    clamp_to_limits,
    finger_capsules,
    integrate_plant,
    pid_step,
)
from .scene import SceneConfig, capsule_names

SNAPSHOT_VERSION = 1

MODES = ("idle", "recording", "replaying", "fsm_running", "evaluating")


@dataclass(frozen=True)
class Snapshot:
    """One tick's observable state; immutable once emitted."""

    version: int
    tick: int
    mode: str
    actual: np.ndarray
    target: np.ndarray
    keypoints: np.ndarray
    capsules: tuple
    fsm_state: str | None
    flags: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "tick": self.tick,
            "mode": self.mode,
            "actual": [float(v) for v in self.actual],
            "target": [float(v) for v in self.target],
            "keypoints": [[float(c) for c in p] for p in self.keypoints],
            "capsules": [
                {
                    "name": name,
                    "a": [float(c) for c in a],
                    "b": [float(c) for c in b],
                    "radius": float(r),
                }
                for name, a, b, r in self.capsules
            ],
            "fsm_state": self.fsm_state,
            "flags": list(self.flags),
        }


class Simulator:
    """Owns the mutable scene state and advances it tick by tick."""

    def __init__(
        self,
        scene: SceneConfig,
        cable_state: CableState | None = None,
        start_pose: np.ndarray | None = None,
        mode: str = "idle",
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        self.scene = scene
        self.cable_spec: CableSpec = scene.cable
        self.cable: CableState = (
            cable_state.copy() if cable_state is not None else scene.initial_cable_state()
        )
        q0 = (
            np.zeros(JOINT_COUNT)
            if start_pose is None
            else clamp_to_limits(scene.hand, start_pose)
        )
        self.motor = MotorState.at_pose(q0)
        self.prev_q = q0.copy()
        self.tick = 0
        self.mode = mode
        self.fsm_state: str | None = None
        self._capsule_names = capsule_names(scene.hand)
        self._static = scene.static_contacts()

    # -- operator inputs (applied at tick boundaries by the caller) --------

    def drag_joint(self, index: int, delta: float) -> bool:
        """Kinesthetic push on one joint; returns True if limits clamped it."""
        if not 0 <= index < JOINT_COUNT:
            raise ConfigError(f"joint index {index} out of range")
        raw = self.motor.actual.copy()
        raw[index] += delta
        clamped = clamp_to_limits(self.scene.hand, raw)
        hit = bool(abs(clamped[index] - raw[index]) > 1e-12)
        self.motor.actual[:] = clamped
        return hit

    def set_finger_mode(self, finger: str, mode: str) -> None:
        if finger not in FINGER_NAMES:
            raise ConfigError(f"unknown finger {finger!r}")
        fi = FINGER_NAMES.index(finger)
        self.motor = self.motor.with_mode(fi, mode)
        if mode == "locked_high":
            # freeze the hold target at the current pose
            s = slice(fi * JOINTS_PER_FINGER, (fi + 1) * JOINTS_PER_FINGER)
            self.motor.target[s] = self.motor.actual[s]

    def set_targets(self, q: np.ndarray) -> None:
        self.motor.target[:] = clamp_to_limits(self.scene.hand, q)

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        self.mode = mode

    def swap_cable(self, label: str) -> None:
        """Replace the cable material in place, keeping the current shape."""
        self.cable_spec = self.scene.cable_for_label(label)

    def replace_cable_state(self, state: CableState) -> None:
        if state.positions.shape != self.cable.positions.shape:
            raise ConfigError("replacement cable state has the wrong particle count")
        self.cable = state.copy()

    # -- the tick ----------------------------------------------------------

    def step_tick(self, flags: tuple[str, ...] = ()) -> Snapshot:
        dt = self.scene.params.tick_dt
        command, self.motor = pid_step(self.motor, self.scene.hand, dt)
        self.motor = integrate_plant(self.scene.hand, self.motor, command, dt)
        caps = finger_capsules(
            self.scene.hand, self.motor.actual, q_prev=self.prev_q, dt=dt
        )
        contacts = ContactSet(
            halfspaces=self._static.halfspaces,
            capsules=self._static.capsules + caps,
        )
        try:
            self.cable = step(self.cable, self.cable_spec, self.scene.params, contacts)
        except SolverFailure as e:
            raise SolverFailure(
                f"{e} at tick {self.tick}", particle_index=e.particle_index
            ) from e
        self.prev_q = self.motor.actual.copy()
        snap = self._snapshot(caps, flags)
        self.tick += 1
        return snap

    def _snapshot(self, caps, flags) -> Snapshot:
        cap_rows = tuple(
            (name, tuple(c.a), tuple(c.b), c.radius)
            for name, c in zip(self._capsule_names, caps)
        )
        return Snapshot(
            version=SNAPSHOT_VERSION,
            tick=self.tick,
            mode=self.mode,
            actual=self.motor.actual.copy(),
            target=self.motor.target.copy(),
            keypoints=keypoints(self.cable, self.scene.keypoint_count),
            capsules=cap_rows,
            fsm_state=self.fsm_state,
            flags=tuple(flags),
        )

    def run(self, ticks: int) -> list[Snapshot]:
        if ticks < 0:
            raise ConfigError("tick count must be non-negative")
        return [self.step_tick() for _ in range(ticks)]
