"""Scene assembly: hand, table, cable and rigid props from a YAML file.

A scene file is versioned, human-editable and digested; the digest ties
recorded demonstrations to the exact scene they were captured in. The
builtin scene places the hand palm-down over a table with a cable lying
across the pinch channel, plus a side tube for insertion work.

Cable materials: the six labels share one geometry table (label fixes the
diameter) while bend/stretch response, density and friction are per-label
calibration values carried here, so swapping the cable label inside a scene
changes the physics consistently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace
import hashlib
import math

import numpy as np
import yaml

from .cable import (
    CABLE_DIAMETERS,
    CableLayout,
    CableSpec,
    Capsule,
    ContactSet,
    Halfspace,
    SimParams,
    init_cable,
)
from .errors import ConfigError, FormatError, UnsupportedVersionError
from .hand import (
    HandConfig,
    JOINT_COUNT,
    default_hand_config,
    finger_capsules,
    fingertip_positions,
)

SCENE_FORMAT_VERSION = 1

# label -> (bend_twist_compliance, stretch_compliance, linear_density, friction)
# A, B, C share one material; D and F are stiff cores, E is thin and floppy
DEFAULT_MATERIALS = {
    "A": (900.0, 0.0, 0.06, 0.9),
    "B": (900.0, 0.0, 0.05, 0.9),
    "C": (900.0, 0.0, 0.07, 0.9),
    "D": (90.0, 0.0, 0.09, 0.9),
    "E": (1800.0, 0.0, 0.03, 0.9),
    "F": (300.0, 0.0, 0.07, 0.9),
}


@dataclass(frozen=True)
class Tube:
    """Open-topped channel built from two parallel wall capsules.

    The bore runs along axis from the entrance point; bore is the clear
    width between the wall surfaces.
    """

    entrance: tuple[float, float, float]
    axis: tuple[float, float, float]
    length: float
    bore: float = 0.024
    wall_radius: float = 0.01

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.axis))
        if abs(n - 1.0) > 1e-9:
            raise ConfigError("tube axis must be a unit vector")
        if self.length <= 0.0 or self.bore <= 0.0 or self.wall_radius <= 0.0:
            raise ConfigError("tube dimensions must be positive")

    def capsules(self) -> tuple[Capsule, Capsule]:
        a = np.asarray(self.entrance)
        ax = np.asarray(self.axis)
        up = np.array([0.0, 0.0, 1.0])
        side = np.cross(ax, up)
        n = np.linalg.norm(side)
        if n < 1e-9:
            raise ConfigError("tube axis may not be vertical")
        side = side / n
        off = side * (0.5 * self.bore + self.wall_radius)
        b = a + ax * self.length
        return (
            Capsule(a=tuple(a + off), b=tuple(b + off), radius=self.wall_radius),
            Capsule(a=tuple(a - off), b=tuple(b - off), radius=self.wall_radius),
        )

    def insertion_depth(self, point) -> float:
        """How far along the bore a point sits; negative outside the mouth."""
        p = np.asarray(point) - np.asarray(self.entrance)
        ax = np.asarray(self.axis)
        depth = float(p @ ax)
        lateral = p - depth * ax
        if np.linalg.norm(lateral[:2]) > 0.5 * self.bore:
            return min(depth, 0.0)
        return min(depth, self.length)


@dataclass(frozen=True)
class SceneConfig:
    name: str
    hand: HandConfig
    cable: CableSpec
    layout: CableLayout
    params: SimParams
    table_height: float = 0.0
    init_region: tuple[tuple[float, float], tuple[float, float]] = (
        (-0.08, -0.008),
        (0.08, 0.072),
    )
    tubes: tuple[Tube, ...] = ()
    keypoint_count: int = 8
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))
    source_digest: str = ""
    format_version: int = SCENE_FORMAT_VERSION

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.init_region
        if x0 >= x1 or y0 >= y1:
            raise ConfigError("init_region must have positive extent")
        if x1 - x0 < self.cable.diameter:
            raise ConfigError("init_region narrower than the cable diameter")
        if self.keypoint_count < 2:
            raise ConfigError("keypoint_count must be at least 2")

    def static_contacts(self) -> ContactSet:
        caps = []
        for t in self.tubes:
            caps.extend(t.capsules())
        return ContactSet(
            halfspaces=(Halfspace((0.0, 0.0, 1.0), self.table_height),),
            capsules=tuple(caps),
        )

    def cable_for_label(self, label: str) -> CableSpec:
        """The scene's cable re-specified with another label's material."""
        if label not in CABLE_DIAMETERS:
            known = ", ".join(sorted(CABLE_DIAMETERS))
            raise ConfigError(f"unknown cable label {label!r} (one of {known})")
        bend, stretch, density, friction = self.materials[label]
        return CableSpec(
            label=label,
            diameter=CABLE_DIAMETERS[label],
            length=self.cable.length,
            linear_density=density,
            stretch_compliance=stretch,
            bend_twist_compliance=bend,
            surface_friction=friction,
            segment_count=self.cable.segment_count,
        )

    def initial_cable_state(self):
        return init_cable(self.cable, self.layout, floor_z=self.table_height)


def validate_scene(scene: SceneConfig) -> None:
    """Raise if the hand's zero pose sinks into the table.

    Fingertip pads are allowed a centimetre of press so extended
    fingers can work at and just under table level; anything deeper is
    a bad mount.
    """
    caps = finger_capsules(scene.hand, np.zeros(JOINT_COUNT))
    names = capsule_names(scene.hand)
    for cap, name in zip(caps, names):
        low = min(cap.a[2], cap.b[2]) - cap.radius
        if low <= scene.table_height - 0.012:
            raise ConfigError(
                f"hand capsule {name} intersects the table at the initial pose"
            )


def capsule_names(hand: HandConfig) -> tuple[str, ...]:
    parts = ("proximal", "middle", "distal", "roller")
    names = ["palm"]
    for f in hand.fingers:
        names.extend(f"{f.name}/{p}" for p in parts)
    return tuple(names)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def default_scene() -> SceneConfig:
    """The builtin tabletop scene used by demos and evaluation."""
    scene = SceneConfig(
        name="fig10-default",
        hand=default_hand_config(),
        cable=_cable_from_materials("A", 0.5, 40, DEFAULT_MATERIALS),
        layout=CableLayout(origin=(-0.25, 0.0, 0.006), heading=0.0),
        params=SimParams(),
        # mouth sits past the furthest randomized cable tip so no trial can
        # start with the cable already inside the bore
        tubes=(Tube(entrance=(0.34, 0.0, 0.01), axis=(1.0, 0.0, 0.0), length=0.08),),
    )
    validate_scene(scene)
    return scene


def mirror_scene(scene: SceneConfig) -> SceneConfig:
    """Reflect a scene about the Y-Z plane through the world origin.

    The hand is left-right symmetric by construction, so its mirror is
    itself with the base x negated. Cable particle i maps onto particle i
    of the mirrored layout.
    """
    base = scene.hand.base_pose.copy()
    base[0, 3] = -base[0, 3]
    (x0, y0), (x1, y1) = scene.init_region
    mirrored = dc_replace(
        scene,
        name=scene.name + "-mirrored",
        hand=dc_replace(scene.hand, base_pose=base),
        layout=CableLayout(
            kind=scene.layout.kind,
            origin=(
                -scene.layout.origin[0],
                scene.layout.origin[1],
                scene.layout.origin[2],
            ),
            heading=math.pi - scene.layout.heading,
            arc_angle=-scene.layout.arc_angle,
        ),
        init_region=((-x1, y0), (-x0, y1)),
        tubes=tuple(
            Tube(
                entrance=(-t.entrance[0], t.entrance[1], t.entrance[2]),
                axis=(-t.axis[0], t.axis[1], t.axis[2]),
                length=t.length,
                bore=t.bore,
                wall_radius=t.wall_radius,
            )
            for t in scene.tubes
        ),
        source_digest="",
    )
    validate_scene(mirrored)
    return mirrored


def _cable_from_materials(label, length, segment_count, materials) -> CableSpec:
    if label not in CABLE_DIAMETERS:
        known = ", ".join(sorted(CABLE_DIAMETERS))
        raise ConfigError(f"unknown cable label {label!r} (one of {known})")
    if label not in materials:
        raise ConfigError(f"no material row for cable {label}")
    bend, stretch, density, friction = materials[label]
    return CableSpec(
        label=label,
        diameter=CABLE_DIAMETERS[label],
        length=length,
        linear_density=density,
        stretch_compliance=stretch,
        bend_twist_compliance=bend,
        surface_friction=friction,
        segment_count=segment_count,
    )


def _hand_clearance(hand: HandConfig) -> float:
    """Zero-pose gap between the lowest fingertip surface and z=0."""
    tips = fingertip_positions(hand, np.zeros(JOINT_COUNT))
    return round(float(min(t[2] for t in tips)) - hand.fingertip_radius, 9)


def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "format_version": scene.format_version,
        "name": scene.name,
        "hand": {
            "base_xy": [
                float(scene.hand.base_pose[0, 3]),
                float(scene.hand.base_pose[1, 3]),
            ],
            "clearance": _hand_clearance(scene.hand),
        },
        "table": {"height": scene.table_height},
        "cable": {
            "label": scene.cable.label,
            "length": scene.cable.length,
            "segment_count": scene.cable.segment_count,
            "layout": {
                "kind": scene.layout.kind,
                "origin": list(scene.layout.origin),
                "heading": scene.layout.heading,
                "arc_angle": scene.layout.arc_angle,
            },
        },
        "materials": {
            label: {
                "bend_twist_compliance": row[0],
                "stretch_compliance": row[1],
                "linear_density": row[2],
                "surface_friction": row[3],
            }
            for label, row in sorted(scene.materials.items())
        },
        "sim": {
            "dt": scene.params.dt,
            "substeps": scene.params.substeps,
            "solver_iterations": scene.params.solver_iterations,
            "linear_damping": scene.params.linear_damping,
        },
        "init_region": {
            "min": list(scene.init_region[0]),
            "max": list(scene.init_region[1]),
        },
        "tubes": [
            {
                "entrance": list(t.entrance),
                "axis": list(t.axis),
                "length": t.length,
                "bore": t.bore,
                "wall_radius": t.wall_radius,
            }
            for t in scene.tubes
        ],
        "keypoint_count": scene.keypoint_count,
    }


def dumps_scene(scene: SceneConfig) -> str:
    return yaml.safe_dump(scene_to_dict(scene), sort_keys=False)


def scene_from_dict(data: dict, digest: str = "") -> SceneConfig:
    if not isinstance(data, dict):
        raise FormatError("scene file must contain a mapping")
    version = _need(data, "format_version", int)
    if version != SCENE_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"scene version {version} not supported (expected {SCENE_FORMAT_VERSION})"
        )
    name = _need(data, "name", str)
    hand_d = _need(data, "hand", dict)
    hand = default_hand_config(
        base_xy=tuple(_need(hand_d, "base_xy", list)),
        clearance=float(hand_d.get("clearance", -0.001)),
    )
    table_d = data.get("table", {"height": 0.0})
    cable_d = _need(data, "cable", dict)
    layout_d = _need(cable_d, "layout", dict)
    materials = dict(DEFAULT_MATERIALS)
    for label, row in _need(data, "materials", dict).items():
        materials[label] = (
            float(row["bend_twist_compliance"]),
            float(row["stretch_compliance"]),
            float(row["linear_density"]),
            float(row["surface_friction"]),
        )
    sim_d = data.get("sim", {})
    params = SimParams(
        dt=float(sim_d.get("dt", 1.0 / 240.0)),
        substeps=int(sim_d.get("substeps", 8)),
        solver_iterations=int(sim_d.get("solver_iterations", 20)),
        linear_damping=float(sim_d.get("linear_damping", 5.0)),
    )
    region_d = _need(data, "init_region", dict)
    tubes = tuple(
        Tube(
            entrance=tuple(t["entrance"]),
            axis=tuple(t["axis"]),
            length=float(t["length"]),
            bore=float(t.get("bore", 0.024)),
            wall_radius=float(t.get("wall_radius", 0.01)),
        )
        for t in data.get("tubes", [])
    )
    try:
        scene = SceneConfig(
            name=name,
            hand=hand,
            cable=_cable_from_materials(
                _need(cable_d, "label", str),
                float(_need(cable_d, "length", (int, float))),
                int(_need(cable_d, "segment_count", int)),
                materials,
            ),
            layout=CableLayout(
                kind=layout_d.get("kind", "straight_line"),
                origin=tuple(_need(layout_d, "origin", list)),
                heading=float(layout_d.get("heading", 0.0)),
                arc_angle=float(layout_d.get("arc_angle", math.pi)),
            ),
            params=params,
            table_height=float(table_d.get("height", 0.0)),
            init_region=(
                tuple(_need(region_d, "min", list)),
                tuple(_need(region_d, "max", list)),
            ),
            tubes=tubes,
            keypoint_count=int(data.get("keypoint_count", 8)),
            materials=materials,
            source_digest=digest,
        )
    except ConfigError:
        raise
    validate_scene(scene)
    return scene


def _need(data: dict, key: str, kind):
    if key not in data:
        raise FormatError(f"scene field {key!r} is required")
    value = data[key]
    if not isinstance(value, kind):
        raise FormatError(f"scene field {key!r} has the wrong type")
    return value


def load_scene(path) -> SceneConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise FormatError(f"scene file does not parse: {e}") from e
    return scene_from_dict(data, digest=digest)


def save_scene(scene: SceneConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_scene(scene))


def scene_digest(scene: SceneConfig) -> str:
    """Digest of the scene's canonical serialized form."""
    if scene.source_digest:
        return scene.source_digest
    return hashlib.sha256(dumps_scene(scene).encode("utf-8")).hexdigest()
