"""Task catalog, query and validation tests."""

from dataclasses import dataclass
from importlib import resources
import itertools

import pytest

from cabledex.errors import ConfigError, FormatError, UnsupportedVersionError
from cabledex.taxonomy import (
    CriteriaVector,
    TaskRecord,
    builtin_catalog,
    catalog_by_name,
    dumps_catalog,
    parse_catalog,
    query,
    validate,
    validate_fsm,
    violations,
)

CATALOG = builtin_catalog()
BY_NAME = catalog_by_name(CATALOG)


@dataclass
class StubFSM:
    bindings: dict

    def primitive_bindings(self):
        return self.bindings


class TestCatalog:
    def test_size(self):
        assert len(CATALOG) == 22

    def test_names_unique(self):
        assert len(BY_NAME) == 22

    def test_first_record_contents(self):
        r = BY_NAME["Pre-grasp"]
        assert r.criteria == CriteriaVector("no", "yes", "yes", "yes")
        assert r.fingers == "TIC"
        assert r.goals == frozenset({"hand_cable"})

    def test_unknown_fingers_rows(self):
        unknown = {r.name for r in CATALOG if r.fingers == "unknown"}
        assert unknown == {"Overhand knotting", "Untangling"}

    def test_grasp_rows_pair_placement_with_lift(self):
        for name in ("Precision grasp", "Parallel grasp"):
            assert BY_NAME[name].goals == frozenset({"hand_cable", "position_Z"})

    def test_topology_rows_are_long_horizon(self):
        for r in CATALOG:
            if "topology" in r.goals:
                assert r.horizon == "long_horizon"


class TestQuery:
    def test_non_prehensile_rows(self):
        names = {r.name for r in query(CATALOG, prehensile="no")}
        assert names == {"Pre-grasp", "VMF hooking", "U-shape bending"}

    def test_dual_tic_rows(self):
        names = {r.name for r in query(CATALOG, fingers="two_TIC")}
        assert names == {
            "3D shape control",
            "In-hand peg-in-hole",
            "In-hand pose control",
            "Routing by insertion",
        }

    def test_empty_filter_returns_all(self):
        assert query(CATALOG) == CATALOG

    def test_either_support_matches_both_filters(self):
        for value in ("yes", "no"):
            names = {r.name for r in query(CATALOG, support=value)}
            assert "Position control" in names
            assert "Orientation control" in names

    def test_goal_filter_uses_membership(self):
        names = {r.name for r in query(CATALOG, goal="position_Z")}
        assert {"Precision grasp", "Parallel grasp"} <= names

    def test_bad_filter_value_rejected(self):
        with pytest.raises(ConfigError):
            query(CATALOG, prehensile="maybe")
        with pytest.raises(ConfigError):
            query(CATALOG, fingers="three_TIC")

    def test_monotone_under_filter_refinement(self):
        """Adding any filter field never enlarges the result set."""
        fields = {
            "prehensile": "yes",
            "motion": "yes",
            "in_hand": "yes",
            "support": "no",
            "fingers": "TIC_plus_VMF",
            "goal": "hand_cable",
        }
        for r in range(1, len(fields) + 1):
            for combo in itertools.combinations(fields, r):
                full = query(CATALOG, **{k: fields[k] for k in combo})
                for drop in combo:
                    wider = query(
                        CATALOG, **{k: fields[k] for k in combo if k != drop}
                    )
                    assert set(full) <= set(wider)


class TestValidate:
    def test_builtin_rows_have_no_violations(self):
        for r in CATALOG:
            assert violations(validate(r)) == ()

    def test_empty_goals_flagged(self):
        r = TaskRecord(
            name="x",
            criteria=CriteriaVector("yes", "no", "yes", "no"),
            fingers="TIC",
            goals=frozenset(),
            horizon="primitive",
        )
        msgs = [f.message for f in violations(validate(r))]
        assert msgs == ["goal configuration required"]

    def test_unknown_fingers_is_an_advisory(self):
        findings = validate(BY_NAME["Overhand knotting"])
        assert violations(findings) == ()
        assert any(
            f.severity == "advisory" and "not executable" in f.message
            for f in findings
        )

    def test_topology_primitive_flagged(self):
        r = TaskRecord(
            name="x",
            criteria=CriteriaVector("yes", "yes", "yes", "yes"),
            fingers="TIC",
            goals=frozenset({"topology"}),
            horizon="primitive",
        )
        assert len(violations(validate(r))) == 1

    def test_constructor_rejects_bad_domains(self):
        with pytest.raises(ConfigError):
            CriteriaVector("yes", "yes", "yes", "sometimes")
        with pytest.raises(ConfigError):
            TaskRecord(
                name="x",
                criteria=CriteriaVector("yes", "no", "yes", "no"),
                fingers="fist",
                goals=frozenset({"pose"}),
                horizon="primitive",
            )


class TestValidateFSM:
    def test_states_bound_to_primitives_pass(self):
        fsm = StubFSM(
            {
                "PreGrasp": "Pre-grasp",
                "PrecisionGrasp": "Precision grasp",
                "VMFHook": "VMF hooking",
                "Pull": "Pulling",
            }
        )
        assert validate_fsm(fsm, CATALOG) == ()

    def test_long_horizon_binding_rejected(self):
        fsm = StubFSM({"Knot": "Overhand knotting"})
        msgs = [f.message for f in validate_fsm(fsm, CATALOG)]
        assert any("not a primitive" in m for m in msgs)
        assert any("fingers unknown" in m for m in msgs)

    def test_unlisted_name_rejected_naming_the_state(self):
        fsm = StubFSM({"Mystery": "Cable levitation"})
        msgs = [f.message for f in validate_fsm(fsm, CATALOG)]
        assert len(msgs) == 1
        assert "Mystery" in msgs[0] and "Cable levitation" in msgs[0]


class TestTextFormat:
    def test_shipped_file_is_canonical(self):
        text = (
            resources.files("cabledex").joinpath("data/catalog.txt").read_text()
        )
        assert text == dumps_catalog(CATALOG)

    def test_round_trip_objects_and_bytes(self):
        text = dumps_catalog(CATALOG)
        parsed = parse_catalog(text)
        assert parsed == CATALOG
        assert dumps_catalog(parsed) == text

    def test_unsupported_version(self):
        text = dumps_catalog(CATALOG).replace("v1", "v2", 1)
        with pytest.raises(UnsupportedVersionError):
            parse_catalog(text)

    def test_missing_field_reports_line(self):
        text = dumps_catalog(CATALOG[:1]).replace("  motion yes\n", "")
        with pytest.raises(FormatError, match="missing"):
            parse_catalog(text)

    def test_stray_content_rejected(self):
        text = dumps_catalog(CATALOG[:1]) + "loose words\n"
        with pytest.raises(FormatError):
            parse_catalog(text)

    def test_wrong_magic_rejected(self):
        with pytest.raises(FormatError):
            parse_catalog("grocery list v1\n")
