"""Exception hierarchy.

Every engine error carries a short machine-readable ``kind`` that the CLI and
the service put into their JSON error bodies.
"""


class RuleEngineError(Exception):
    kind = "engine-error"

    def __init__(self, message, *, trace=None):
        super().__init__(message)
        self.trace = trace

    def to_json(self):
        return {"kind": self.kind, "detail": str(self)}


class InputError(RuleEngineError):
    """Bad input data (as opposed to an engine failure on valid data)."""

    kind = "input-error"


class UnknownFeatureError(InputError):
    kind = "unknown-feature"


class SchemaError(InputError):
    kind = "schema-error"


class SceneValidationError(InputError):
    kind = "invalid-scene"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NoBehaviourError(RuleEngineError):
    """The maneuver layer fired no rule."""

    kind = "no-behaviour"


class EmptyResolutionError(RuleEngineError):
    """The parameter layer fired no rule, so there is nothing to resolve."""

    kind = "no-behaviour-resolved"


class MixedManeuverError(RuleEngineError):
    kind = "mixed-maneuver"


class ParameterConflictError(RuleEngineError):
    kind = "parameter-conflict"
