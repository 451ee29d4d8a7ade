"""The intersection-with-crosswalk toy theory, built directly from Python objects.

Ego approaches an intersection with a stop line while a pedestrian occupies
the crosswalk. The same theory ships as JSON documents in ``rulebp/data``.
"""

from .evaluator import EngineConfig
from .model import (
    DEFAULT_ORDER,
    TRUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    Feature,
    FeatureValue,
    LayerSchema,
    Op,
    Rule,
    Scene,
    Theory,
    Value,
)

MANEUVER_SCHEMA = LayerSchema.build("maneuver", {
    "Ego.Approaching": "symbol",
    "Ego.Speed": "number",
    "Ego.At": "symbol",
    "Road.SpeedLimit": "number",
    "Crosswalk.Obstructed": "boolean",
    "Road.HasStopLine": "boolean",
})

PARAMETER_SCHEMA = LayerSchema.build("parameter", {
    "Maneuver.Decelerate-To-Halt": "boolean",
    "Maneuver.Track-Speed": "boolean",
    "Stop.AtEndOfLane": "boolean",
    "Stop.AtStopLine": "boolean",
    "Target.Speed": "symbol",
})

OUTPUT_SCHEMA = LayerSchema.build("output", {
    "Ego.Speed": "any",
    "Ego.StopAt": "symbol",
})

SCENE_S = Scene(MANEUVER_SCHEMA, {
    "Ego.Approaching": "Intersection",
    "Ego.Speed": 35,
    "Ego.At": None,
    "Road.SpeedLimit": 50,
    "Crosswalk.Obstructed": True,
    "Road.HasStopLine": True,
})

B1 = Behaviour.of("Track-Speed", {"Target.Speed": "Road.SpeedLimit"})
B2 = Behaviour.of("Decelerate-To-Halt", {"Stop.AtEndOfLane": True})
B3 = Behaviour.of("Decelerate-To-Halt", {"Stop.AtStopLine": True})
B4 = Behaviour.of("Track-Speed", {"Ego.Speed": "Target.Speed"})
B5 = Behaviour.of("Decelerate-To-Halt", {"Ego.StopAt": "EndOfLane"})
B6 = Behaviour.of("Decelerate-To-Halt", {"Ego.StopAt": "StopLine"})


def eq(feature: str, value) -> FeatureValue:
    return FeatureValue(Feature.parse(feature), Op.EQ, Value.of(value))


def _rule(rid, constraints, behaviour):
    return Rule(rid, Antecedent(constraints), behaviour)


MANEUVER_RULES = (
    _rule("m1", [TRUE], B1),
    _rule("m2", [eq("Ego.Approaching", "Intersection"), eq("Crosswalk.Obstructed", True)], B2),
    _rule("m3", [eq("Ego.At", "Intersection"), eq("Crosswalk.Obstructed", True)], B2),
    _rule("m4", [eq("Ego.Approaching", "Intersection"), eq("Road.HasStopLine", True)], B3),
    _rule("m5", [eq("Ego.At", "Intersection"), eq("Road.HasStopLine", True)], B3),
)

PARAMETER_RULES = (
    _rule("p1", [eq("Maneuver.Track-Speed", True)], B4),
    _rule("p2", [
        eq("Maneuver.Decelerate-To-Halt", True),
        eq("Stop.AtEndOfLane", True),
        FeatureValue(Feature.parse("Stop.AtStopLine"), Op.EQ, UNDEFINED),
    ], B5),
    _rule("p3", [eq("Maneuver.Decelerate-To-Halt", True), eq("Stop.AtStopLine", True)], B6),
)

MANEUVER_THEORY = Theory("maneuver", MANEUVER_SCHEMA, PARAMETER_SCHEMA, MANEUVER_RULES)
PARAMETER_THEORY = Theory("parameter", PARAMETER_SCHEMA, OUTPUT_SCHEMA, PARAMETER_RULES)


def worked_example_config() -> EngineConfig:
    return EngineConfig(MANEUVER_THEORY, PARAMETER_THEORY, DEFAULT_ORDER)
