"""Domain types of the two-layer rule theory.

Values, features, schemas and scenes, constraints and antecedents, maneuvers,
behaviours, rules, theories and the conservativeness order. Everything here is
immutable once built.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import SceneValidationError, SchemaError, UnknownFeatureError

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*\Z")


class ValueKind(str, Enum):
    BOOLEAN = "boolean"
    NUMBER = "number"
    SYMBOL = "symbol"
    UNDEFINED = "undefined"


class FeatureKind(str, Enum):
    BOOLEAN = "boolean"
    NUMBER = "number"
    SYMBOL = "symbol"
    ANY = "any"


@dataclass(frozen=True, slots=True)
class Value:
    """Tagged scalar. ``Value.boolean(True)`` and ``Value.number(1)`` are distinct."""

    kind: ValueKind
    data: object = None

    @staticmethod
    def boolean(b: bool) -> Value:
        return TRUE_VALUE if b else FALSE_VALUE

    @staticmethod
    def number(x) -> Value:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise TypeError(f"not a number: {x!r}")
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"numbers must be finite, got {x!r}")
        return Value(ValueKind.NUMBER, x + 0.0)

    @staticmethod
    def symbol(s: str) -> Value:
        if not isinstance(s, str) or not s:
            raise ValueError(f"symbols are non-empty strings, got {s!r}")
        return Value(ValueKind.SYMBOL, s)

    @staticmethod
    def of(x) -> Value:
        """Coerce a plain Python value: bool, int/float, str, or None for undefined."""
        if isinstance(x, Value):
            return x
        if x is None:
            return UNDEFINED
        if isinstance(x, bool):
            return Value.boolean(x)
        if isinstance(x, (int, float)):
            return Value.number(x)
        if isinstance(x, str):
            return Value.symbol(x)
        raise TypeError(f"cannot convert {x!r} to a Value")

    @property
    def is_undefined(self) -> bool:
        return self.kind is ValueKind.UNDEFINED

    def to_python(self):
        if self.kind is ValueKind.NUMBER and self.data.is_integer():
            return int(self.data)
        return self.data

    def conforms(self, kind: FeatureKind) -> bool:
        if self.kind is ValueKind.UNDEFINED or kind is FeatureKind.ANY:
            return True
        return self.kind.value == kind.value

    def sort_key(self):
        return (self.kind.value, str(self.data))

    def __str__(self):
        if self.kind is ValueKind.UNDEFINED:
            return "undefined"
        if self.kind is ValueKind.BOOLEAN:
            return "true" if self.data else "false"
        if self.kind is ValueKind.NUMBER:
            return format_number(self.data)
        return self.data

    def __repr__(self):
        return f"Value({self})"


def format_number(x: float) -> str:
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


TRUE_VALUE = Value(ValueKind.BOOLEAN, True)
FALSE_VALUE = Value(ValueKind.BOOLEAN, False)
UNDEFINED = Value(ValueKind.UNDEFINED, None)


@dataclass(frozen=True, slots=True)
class Feature:
    object: str
    attribute: str

    def __post_init__(self):
        for part in (self.object, self.attribute):
            if not isinstance(part, str) or not IDENT_RE.match(part):
                raise ValueError(f"invalid identifier {part!r} in feature")

    @staticmethod
    def parse(text: str) -> Feature:
        obj, sep, attr = text.partition(".")
        if not sep:
            raise ValueError(f"feature must look like Object.Attribute, got {text!r}")
        return Feature(obj, attr)

    @staticmethod
    def of(x) -> Feature:
        return x if isinstance(x, Feature) else Feature.parse(x)

    def __str__(self):
        return f"{self.object}.{self.attribute}"

    def __repr__(self):
        return f"Feature({self})"


@dataclass(frozen=True, slots=True)
class Property:
    feature: Feature
    value: Value

    def __str__(self):
        return f"{self.feature} := {self.value}"


@dataclass(frozen=True)
class LayerSchema:
    """Declared features of one layer and the value kind each accepts.

    Feature order is the declaration order and is kept for serialization.
    """

    layer_id: str
    declared: tuple[tuple[Feature, FeatureKind], ...]
    _kinds: Mapping[Feature, FeatureKind] = field(
        init=False, repr=False, compare=False, hash=False
    )

    def __post_init__(self):
        if not self.declared:
            raise SchemaError(f"schema {self.layer_id!r} declares no features")
        kinds = {}
        for feat, kind in self.declared:
            if feat in kinds:
                raise SchemaError(f"duplicate feature {feat} in schema {self.layer_id!r}")
            kinds[feat] = FeatureKind(kind)
        object.__setattr__(self, "_kinds", MappingProxyType(kinds))

    @staticmethod
    def build(layer_id: str, kinds: Mapping) -> LayerSchema:
        """``LayerSchema.build("maneuver", {"Ego.Speed": "number", ...})``."""
        return LayerSchema(
            layer_id,
            tuple((Feature.of(f), FeatureKind(k)) for f, k in kinds.items()),
        )

    @property
    def features(self) -> tuple[Feature, ...]:
        return tuple(self._kinds)

    def kind_of(self, feature: Feature) -> FeatureKind:
        try:
            return self._kinds[feature]
        except KeyError:
            raise UnknownFeatureError(
                f"unknown feature {feature} for {self.layer_id} schema"
            ) from None

    def __contains__(self, feature) -> bool:
        return feature in self._kinds

    def __len__(self):
        return len(self._kinds)

    def check_property(self, feature: Feature, value: Value) -> None:
        kind = self.kind_of(feature)
        if not value.conforms(kind):
            raise SchemaError(
                f"feature {feature} expects {kind.value}, got {value.kind.value} {value}"
            )


@dataclass(frozen=True)
class Violation:
    feature: Feature
    message: str

    def __str__(self):
        return self.message


def validate_scene(scene: Scene, schema: LayerSchema) -> list[Violation]:
    """Check totality and kinds of ``scene`` against ``schema``; empty list means ok."""
    violations = []
    assignment = scene.assignment
    for feat in schema.features:
        if feat not in assignment:
            violations.append(Violation(feat, f"missing feature {feat}"))
    for feat, value in assignment.items():
        if feat not in schema:
            violations.append(Violation(feat, f"unknown feature {feat}"))
        elif not value.conforms(schema.kind_of(feat)):
            kind = schema.kind_of(feat)
            violations.append(
                Violation(feat, f"feature {feat} expects {kind.value}, got {value.kind.value}")
            )
    return violations


class Scene:
    """Total assignment of values to the features of a schema."""

    __slots__ = ("schema", "assignment", "_hash")

    def __init__(self, schema: LayerSchema, assignment: Mapping, *, check: bool = True):
        data = {Feature.of(f): Value.of(v) for f, v in assignment.items()}
        self.schema = schema
        self.assignment = MappingProxyType(data)
        self._hash = None
        if check:
            violations = validate_scene(self, schema)
            if violations:
                raise SceneValidationError(violations)

    @classmethod
    def _trusted(cls, schema, data: dict) -> Scene:
        scene = cls.__new__(cls)
        scene.schema = schema
        scene.assignment = MappingProxyType(data)
        scene._hash = None
        return scene

    def __getitem__(self, feature) -> Value:
        return self.assignment[feature]

    def items(self):
        return self.assignment.items()

    def properties(self) -> list[Property]:
        return [Property(f, v) for f, v in self.assignment.items()]

    def to_python(self) -> dict:
        return {str(f): v.to_python() for f, v in self.assignment.items()}

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return dict(self.assignment) == dict(other.assignment)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.assignment.items()))
        return self._hash

    def __repr__(self):
        inner = ", ".join(f"{f}={v}" for f, v in self.assignment.items())
        return f"Scene({inner})"


def complete_scene(partial: Mapping, schema: LayerSchema) -> Scene:
    """Fill every feature missing from ``partial`` with undefined."""
    given = {Feature.of(f): Value.of(v) for f, v in partial.items()}
    for feat in given:
        if feat not in schema:
            raise UnknownFeatureError(f"unknown feature {feat} for {schema.layer_id} schema")
    data = {feat: given.get(feat, UNDEFINED) for feat in schema.features}
    return Scene(schema, data)


class Op(str, Enum):
    EQ = "="
    LE = "<="
    GE = ">="


class TrueConstraint:
    """The trivial constraint. Use the ``TRUE`` singleton."""

    __slots__ = ()

    def features(self) -> tuple[Feature, ...]:
        return ()

    def __str__(self):
        return "TRUE"

    def __repr__(self):
        return "TRUE"

    def __eq__(self, other):
        return isinstance(other, TrueConstraint)

    def __hash__(self):
        return hash("TrueConstraint")

    def __reduce__(self):
        return (TrueConstraint, ())


TRUE = TrueConstraint()


@dataclass(frozen=True, slots=True)
class FeatureValue:
    lhs: Feature
    op: Op
    rhs: Value

    def __post_init__(self):
        if self.rhs.is_undefined and self.op is not Op.EQ:
            raise ValueError("only '=' may compare against undefined")

    def features(self):
        return (self.lhs,)

    def __str__(self):
        return f"{self.lhs} {self.op.value} {literal_text(self.rhs)}"


@dataclass(frozen=True, slots=True)
class FeatureFeature:
    lhs: Feature
    op: Op
    rhs: Feature

    def features(self):
        return (self.lhs, self.rhs)

    def __str__(self):
        return f"{self.lhs} {self.op.value} {self.rhs}"


Constraint = TrueConstraint | FeatureValue | FeatureFeature


def literal_text(v: Value) -> str:
    if v.kind is ValueKind.SYMBOL:
        escaped = v.data.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return str(v)


class Antecedent:
    """Conjunction of constraints with set semantics (order kept for display)."""

    __slots__ = ("constraints", "key")

    def __init__(self, constraints: Iterable[Constraint]):
        ordered = tuple(dict.fromkeys(constraints))
        if not ordered:
            raise ValueError("an antecedent needs at least one constraint")
        self.constraints = ordered
        self.key = frozenset(ordered)

    def conjoin(self, c: Constraint) -> Antecedent:
        return Antecedent(self.constraints + (c,))

    def features(self) -> set[Feature]:
        return {f for c in self.constraints for f in c.features()}

    def __contains__(self, c):
        return c in self.key

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def __eq__(self, other):
        if not isinstance(other, Antecedent):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return "Antecedent(" + " AND ".join(map(str, self.constraints)) + ")"


MOST_GENERAL = Antecedent([TRUE])


class Maneuver(str, Enum):
    EMERGENCY_STOP = "Emergency-Stop"
    STOP = "Stop"
    YIELD = "Yield"
    DECELERATE_TO_HALT = "Decelerate-To-Halt"
    PASS_OBSTACLE = "Pass-Obstacle"
    FOLLOW_LEADER = "Follow-Leader"
    TRACK_SPEED = "Track-Speed"

    @property
    def feature(self) -> Feature:
        """The parameter-layer feature that flags this maneuver as chosen."""
        return Feature("Maneuver", self.value)

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ConservativenessOrder:
    """Total order on maneuvers, most conservative first."""

    ordering: tuple[Maneuver, ...] = tuple(Maneuver)
    _rank: Mapping[Maneuver, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        ordering = tuple(Maneuver(m) for m in self.ordering)
        if sorted(ordering) != sorted(Maneuver) or len(set(ordering)) != len(Maneuver):
            raise ValueError("order must list every maneuver exactly once")
        object.__setattr__(self, "ordering", ordering)
        object.__setattr__(self, "_rank", {m: i for i, m in enumerate(ordering)})

    def rank(self, m: Maneuver) -> int:
        return self._rank[m]

    def more_conservative(self, a: Maneuver, b: Maneuver) -> bool:
        """``a ≻ b``."""
        return self._rank[a] < self._rank[b]


DEFAULT_ORDER = ConservativenessOrder()


@dataclass(frozen=True)
class Behaviour:
    maneuver: Maneuver
    params: frozenset[Property] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "maneuver", Maneuver(self.maneuver))
        params = frozenset(self.params)
        seen = set()
        for p in params:
            if p.feature in seen:
                raise ValueError(f"behaviour assigns {p.feature} more than once")
            seen.add(p.feature)
        object.__setattr__(self, "params", params)

    @staticmethod
    def of(maneuver, params: Mapping | None = None) -> Behaviour:
        params = params or {}
        return Behaviour(
            Maneuver(maneuver),
            frozenset(Property(Feature.of(f), Value.of(v)) for f, v in params.items()),
        )

    @property
    def param_map(self) -> dict[Feature, Value]:
        return {p.feature: p.value for p in self.params}

    def sorted_params(self) -> list[Property]:
        return sorted(self.params, key=lambda p: str(p.feature))

    def sort_key(self, order: ConservativenessOrder = DEFAULT_ORDER):
        return (
            order.rank(self.maneuver),
            tuple((str(p.feature), p.value.sort_key()) for p in self.sorted_params()),
        )

    def to_python(self) -> dict:
        return {
            "maneuver": self.maneuver.value,
            "params": {str(p.feature): p.value.to_python() for p in self.sorted_params()},
        }

    def __str__(self):
        inner = ", ".join(str(p) for p in self.sorted_params())
        return f"({self.maneuver}, {{{inner}}})"


@dataclass(frozen=True)
class Rule:
    id: str
    antecedent: Antecedent
    consequent: Behaviour

    @property
    def key(self):
        """Identity used for novelty checks: rule ids do not matter."""
        return (self.antecedent.key, self.consequent)

    def __str__(self):
        cond = " AND ".join(map(str, self.antecedent))
        return f"{self.id}: IF {cond} THEN {self.consequent}"


class Theory:
    """Rules of one layer. Rule order is kept only for reproducible output."""

    def __init__(self, layer_id: str, schema: LayerSchema, output_schema: LayerSchema,
                 rules: Iterable[Rule] = ()):
        self.layer_id = layer_id
        self.schema = schema
        self.output_schema = output_schema
        self.rules = tuple(rules)
        ids = set()
        for r in self.rules:
            if r.id in ids:
                raise SchemaError(f"duplicate rule id {r.id!r} in {layer_id} theory")
            ids.add(r.id)
            for feat in r.antecedent.features():
                if feat not in schema:
                    raise SchemaError(
                        f"rule {r.id!r} references {feat}, not in the {schema.layer_id} schema"
                    )
            for p in r.consequent.params:
                if p.feature not in output_schema:
                    raise SchemaError(
                        f"rule {r.id!r} sets {p.feature}, not in the "
                        f"{output_schema.layer_id} schema"
                    )
                output_schema.check_property(p.feature, p.value)

    def with_rules(self, rules: Iterable[Rule]) -> Theory:
        return Theory(self.layer_id, self.schema, self.output_schema, rules)

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __eq__(self, other):
        if not isinstance(other, Theory):
            return NotImplemented
        return (
            self.layer_id == other.layer_id
            and self.schema == other.schema
            and self.output_schema == other.output_schema
            and set(self.rules) == set(other.rules)
        )

    __hash__ = None

    def __repr__(self):
        return f"Theory({self.layer_id!r}, {len(self.rules)} rules)"
