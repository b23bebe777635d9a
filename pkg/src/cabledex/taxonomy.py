"""Task classification for cable manipulation.

A task record answers six questions: is the hold prehensile, is there
relative motion between hand and cable, does the action happen in-hand,
does the cable rest on external support, which finger group does the work,
and what goal configuration is pursued. The built-in catalog covers 22
common tasks; a versioned text format round-trips it bit-exactly.

Finger-group vocabulary:

    TIC                   thumb-index combination, one side of the hand
    VMF                   virtual middle finger (middle finger at minimum,
                          possibly with neighbors acting as one unit)
    VMF_plus_Palm         VMF pressing the cable against the palm
    TIC_plus_VMF          one TIC working with a VMF
    TIC_plus_VMF_or_Palm  one TIC, with VMF-against-palm as optional backup
    two_TIC               both thumb-index combinations at once
    unknown               no known single-hand finger assignment

Goal kinds: per-axis position/orientation control, whole pose of a local
part, overall shape, hand-cable relative placement, and topology (crossings
for knotting or untangling).
"""

from __future__ import annotations

from dataclasses import dataclass
import re

from .errors import ConfigError, FormatError, UnsupportedVersionError

YES, NO, EITHER = "yes", "no", "either"

FINGER_GROUPS = (
    "TIC",
    "VMF",
    "VMF_plus_Palm",
    "TIC_plus_VMF",
    "TIC_plus_VMF_or_Palm",
    "two_TIC",
    "unknown",
)

GOAL_KINDS = (
    "position_X",
    "position_Y",
    "position_Z",
    "orientation_X",
    "orientation_Y",
    "orientation_Z",
    "pose",
    "shape",
    "hand_cable",
    "topology",
)

HORIZONS = ("primitive", "long_horizon")

CATALOG_MAGIC = "cable-task-catalog"
CATALOG_VERSION = 1


@dataclass(frozen=True)
class CriteriaVector:
    """The four binary-ish criteria; support may be 'either'."""

    prehensile: str
    motion: str
    in_hand: str
    support: str

    def __post_init__(self):
        for field in ("prehensile", "motion", "in_hand"):
            if getattr(self, field) not in (YES, NO):
                raise ConfigError(f"{field} must be yes or no")
        if self.support not in (YES, NO, EITHER):
            raise ConfigError("support must be yes, no or either")


@dataclass(frozen=True)
class TaskRecord:
    name: str
    criteria: CriteriaVector
    fingers: str
    goals: frozenset[str]
    horizon: str

    def __post_init__(self):
        if not self.name:
            raise ConfigError("task name must be non-empty")
        if self.fingers not in FINGER_GROUPS:
            raise ConfigError(f"unknown finger group {self.fingers!r}")
        bad = set(self.goals) - set(GOAL_KINDS)
        if bad:
            raise ConfigError(f"unknown goal kinds {sorted(bad)}")
        if self.horizon not in HORIZONS:
            raise ConfigError(f"unknown horizon {self.horizon!r}")


@dataclass(frozen=True)
class Finding:
    severity: str  # "violation" | "advisory"
    message: str


def _rec(name, prehensile, motion, in_hand, support, fingers, goals, horizon):
    return TaskRecord(
        name=name,
        criteria=CriteriaVector(prehensile, motion, in_hand, support),
        fingers=fingers,
        goals=frozenset(goals),
        horizon=horizon,
    )


# generic "position"/"orientation" goals expand to the full axis triple
_POSITION = ("position_X", "position_Y", "position_Z")
_ORIENTATION = ("orientation_X", "orientation_Y", "orientation_Z")

_CATALOG = (
    _rec("Pre-grasp", NO, YES, YES, YES, "TIC", ("hand_cable",), "primitive"),
    _rec("Precision grasp", YES, NO, YES, NO, "TIC", ("hand_cable", "position_Z"), "primitive"),
    _rec("Parallel grasp", YES, NO, YES, NO, "TIC_plus_VMF_or_Palm", ("hand_cable", "position_Z"), "primitive"),
    _rec("Precision to power", YES, YES, YES, NO, "TIC_plus_VMF", ("hand_cable",), "primitive"),
    _rec("VMF hooking", NO, NO, YES, NO, "TIC_plus_VMF", ("hand_cable",), "primitive"),
    _rec("Pulling", YES, YES, YES, NO, "TIC_plus_VMF_or_Palm", ("position_X",), "primitive"),
    _rec("Following", YES, YES, NO, NO, "TIC", ("position_X",), "primitive"),
    _rec("Position control", YES, NO, YES, EITHER, "TIC", _POSITION, "primitive"),
    _rec("Orientation control", YES, NO, YES, EITHER, "TIC_plus_VMF", _ORIENTATION, "primitive"),
    _rec("2D shape control", YES, NO, YES, YES, "TIC", ("shape",), "primitive"),
    _rec("3D shape control", YES, NO, YES, NO, "two_TIC", ("shape",), "primitive"),
    _rec("Straighten", YES, YES, YES, YES, "TIC_plus_VMF_or_Palm", ("shape",), "primitive"),
    _rec("U-shape bending", NO, YES, YES, YES, "TIC_plus_VMF", ("shape",), "primitive"),
    _rec("Overhand knotting", YES, YES, YES, EITHER, "unknown", ("topology",), "long_horizon"),
    _rec("Waving", YES, NO, NO, NO, "TIC", _POSITION, "primitive"),
    _rec("Direction flipping", YES, YES, YES, NO, "TIC_plus_VMF", _ORIENTATION, "primitive"),
    _rec("Coiling", YES, YES, YES, YES, "TIC_plus_VMF", ("topology",), "long_horizon"),
    _rec("In-hand peg-in-hole", YES, YES, YES, NO, "two_TIC", ("pose",), "primitive"),
    _rec("In-hand pose control", YES, NO, YES, NO, "two_TIC", ("pose",), "primitive"),
    _rec("Routing by insertion", YES, NO, YES, NO, "two_TIC", ("pose",), "primitive"),
    _rec("Fasten (a safety belt)", YES, YES, YES, YES, "TIC_plus_VMF_or_Palm", ("pose",), "long_horizon"),
    _rec("Untangling", YES, YES, YES, YES, "unknown", ("topology",), "long_horizon"),
)


def builtin_catalog() -> tuple[TaskRecord, ...]:
    return _CATALOG


def catalog_by_name(catalog) -> dict[str, TaskRecord]:
    return {r.name: r for r in catalog}


# ---------------------------------------------------------------------------
# query
# ---------------------------------------------------------------------------


def query(
    catalog,
    prehensile: str | None = None,
    motion: str | None = None,
    in_hand: str | None = None,
    support: str | None = None,
    fingers: str | None = None,
    goal: str | None = None,
) -> tuple[TaskRecord, ...]:
    """Records matching every given filter field exactly.

    A record whose support is 'either' matches both yes and no support
    filters. A goal filter matches records whose goal set contains it.
    """
    for label, value, domain in (
        ("prehensile", prehensile, (YES, NO)),
        ("motion", motion, (YES, NO)),
        ("in_hand", in_hand, (YES, NO)),
        ("support", support, (YES, NO, EITHER)),
        ("fingers", fingers, FINGER_GROUPS),
        ("goal", goal, GOAL_KINDS),
    ):
        if value is not None and value not in domain:
            raise ConfigError(f"bad {label} filter {value!r} (one of {', '.join(domain)})")

    out = []
    for r in catalog:
        if prehensile is not None and r.criteria.prehensile != prehensile:
            continue
        if motion is not None and r.criteria.motion != motion:
            continue
        if in_hand is not None and r.criteria.in_hand != in_hand:
            continue
        if support is not None:
            # a record marked either satisfies yes and no filters alike
            if r.criteria.support != EITHER and r.criteria.support != support:
                continue
        if fingers is not None and r.fingers != fingers:
            continue
        if goal is not None and goal not in r.goals:
            continue
        out.append(r)
    return tuple(out)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate(record: TaskRecord) -> tuple[Finding, ...]:
    """Structural findings for one record; empty means fully ok.

    Violations make the record unusable; advisories flag records that are
    well-formed but cannot be executed.
    """
    findings = []
    if not record.goals:
        findings.append(Finding("violation", "goal configuration required"))
    if "topology" in record.goals and record.horizon != "long_horizon":
        findings.append(
            Finding("violation", "topology goals require a long-horizon task")
        )
    if record.fingers == "unknown":
        findings.append(Finding("advisory", "not executable: fingers unknown"))
    return tuple(findings)


def violations(findings) -> tuple[Finding, ...]:
    return tuple(f for f in findings if f.severity == "violation")


def validate_fsm(fsm, catalog) -> tuple[Finding, ...]:
    """Check that every non-terminal state binds to an executable primitive.

    fsm must expose primitive_bindings() -> {state name: primitive name}
    covering the non-terminal states.
    """
    names = catalog_by_name(catalog)
    findings = []
    for state, primitive in fsm.primitive_bindings().items():
        record = names.get(primitive)
        if record is None:
            findings.append(
                Finding("violation", f"state {state}: unknown primitive {primitive!r}")
            )
            continue
        if record.horizon != "primitive":
            findings.append(
                Finding(
                    "violation",
                    f"state {state}: {primitive} is long-horizon, not a primitive",
                )
            )
        if record.fingers == "unknown":
            findings.append(
                Finding(
                    "violation",
                    f"state {state}: {primitive} is not executable (fingers unknown)",
                )
            )
    return tuple(findings)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def dumps_catalog(catalog) -> str:
    """Canonical text form: header, then one block per record."""
    lines = [f"{CATALOG_MAGIC} v{CATALOG_VERSION}", ""]
    for r in catalog:
        goals = " ".join(g for g in GOAL_KINDS if g in r.goals)
        lines.extend(
            [
                f'task "{r.name}"',
                f"  prehensile {r.criteria.prehensile}",
                f"  motion {r.criteria.motion}",
                f"  in_hand {r.criteria.in_hand}",
                f"  support {r.criteria.support}",
                f"  fingers {r.fingers}",
                f"  goals {goals}",
                f"  horizon {r.horizon}",
                "end",
                "",
            ]
        )
    return "\n".join(lines)


_TASK_RE = re.compile(r'^task "(.+)"$')


def parse_catalog(text: str) -> tuple[TaskRecord, ...]:
    lines = text.split("\n")
    if not lines or not lines[0].startswith(CATALOG_MAGIC):
        raise FormatError("not a task catalog file")
    m = re.fullmatch(rf"{CATALOG_MAGIC} v(\d+)", lines[0].strip())
    if not m:
        raise FormatError("malformed catalog header")
    version = int(m.group(1))
    if version != CATALOG_VERSION:
        raise UnsupportedVersionError(
            f"catalog version {version} not supported (expected {CATALOG_VERSION})"
        )

    records = []
    block: dict[str, str] = {}
    name = None
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        m = _TASK_RE.match(line)
        if m:
            if name is not None:
                raise FormatError(f"line {ln}: task block not closed")
            name, block = m.group(1), {}
            continue
        if line == "end":
            if name is None:
                raise FormatError(f"line {ln}: end outside a task block")
            records.append(_record_from_block(name, block, ln))
            name = None
            continue
        if name is None:
            raise FormatError(f"line {ln}: unexpected content outside a task block")
        key, _, value = line.partition(" ")
        if not value:
            raise FormatError(f"line {ln}: field {key!r} needs a value")
        block[key] = value.strip()
    if name is not None:
        raise FormatError("unterminated task block at end of file")
    return tuple(records)


def _record_from_block(name, block, ln) -> TaskRecord:
    required = {"prehensile", "motion", "in_hand", "support", "fingers", "goals", "horizon"}
    missing = required - set(block)
    if missing:
        raise FormatError(f"line {ln}: task {name!r} missing {sorted(missing)}")
    extra = set(block) - required
    if extra:
        raise FormatError(f"line {ln}: task {name!r} has unknown fields {sorted(extra)}")
    try:
        return _rec(
            name,
            block["prehensile"],
            block["motion"],
            block["in_hand"],
            block["support"],
            block["fingers"],
            tuple(block["goals"].split()),
            block["horizon"],
        )
    except ConfigError as e:
        raise FormatError(f"line {ln}: task {name!r}: {e}") from e


def load_catalog(path) -> tuple[TaskRecord, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_catalog(fh.read())


def save_catalog(catalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_catalog(catalog))
