"""Hypothesis strategies for schemas, scenes, constraints, behaviours and theories."""

from __future__ import annotations

from hypothesis import strategies as st

from rulebp.model import (
    TRUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    Feature,
    FeatureFeature,
    FeatureKind,
    FeatureValue,
    LayerSchema,
    Maneuver,
    Op,
    Property,
    Rule,
    Scene,
    Theory,
    Value,
)

SYMBOLS = ("Intersection", "Lane", "StopLine", "Junction")
NUMBERS = (0, 5, 10, 35, 50, 2.5, -5)

MAN_KINDS = {
    "Ego.Speed": FeatureKind.NUMBER,
    "Road.SpeedLimit": FeatureKind.NUMBER,
    "Ego.Approaching": FeatureKind.SYMBOL,
    "Ego.At": FeatureKind.SYMBOL,
    "Crosswalk.Obstructed": FeatureKind.BOOLEAN,
    "Road.HasStopLine": FeatureKind.BOOLEAN,
    "Lead.Gap": FeatureKind.ANY,
}
MAN_SCHEMA = LayerSchema.build("maneuver", {k: v.value for k, v in MAN_KINDS.items()})

PAR_PARAMS = {"Stop.AtStopLine": "boolean", "Stop.AtEndOfLane": "boolean",
              "Target.Speed": "any"}
PAR_SCHEMA = LayerSchema.build(
    "parameter",
    {**{str(m.feature): "boolean" for m in Maneuver}, **PAR_PARAMS},
)
OUT_SCHEMA = LayerSchema.build("output", {"Ego.StopAt": "symbol", "Ego.Speed": "any"})

defined_values = st.one_of(
    st.booleans().map(Value.boolean),
    st.sampled_from(NUMBERS).map(Value.number),
    st.sampled_from(SYMBOLS).map(Value.symbol),
)
values = st.one_of(st.just(UNDEFINED), defined_values)
ops = st.sampled_from(list(Op))


def value_of_kind(kind: FeatureKind, undefined: bool = True):
    if kind is FeatureKind.BOOLEAN:
        base = st.booleans().map(Value.boolean)
    elif kind is FeatureKind.NUMBER:
        base = st.sampled_from(NUMBERS).map(Value.number)
    elif kind is FeatureKind.SYMBOL:
        base = st.sampled_from(SYMBOLS).map(Value.symbol)
    else:
        base = defined_values
    return st.one_of(st.just(UNDEFINED), base) if undefined else base


def scenes(schema: LayerSchema = MAN_SCHEMA):
    return st.fixed_dictionaries(
        {f: value_of_kind(schema.kind_of(f)) for f in schema.features}
    ).map(lambda d: Scene(schema, d))


def constraints(schema: LayerSchema = MAN_SCHEMA, feature_feature: bool = True):
    feats = st.sampled_from(schema.features)

    @st.composite
    def fv(draw):
        op = draw(ops)
        rhs = draw(values if op is Op.EQ else defined_values)
        return FeatureValue(draw(feats), op, rhs)

    options = [st.just(TRUE), fv()]
    if feature_feature:
        options.append(st.builds(FeatureFeature, feats, ops, feats))
    return st.one_of(*options)


def antecedents(schema: LayerSchema = MAN_SCHEMA, max_size: int = 3):
    return st.lists(constraints(schema), min_size=1, max_size=max_size).map(Antecedent)


def behaviours(out_schema: LayerSchema, maneuvers=tuple(Maneuver), max_params: int = 2):
    @st.composite
    def build(draw):
        m = draw(st.sampled_from(maneuvers))
        feats = draw(st.lists(st.sampled_from(out_schema.features), unique=True,
                              max_size=max_params))
        params = frozenset(
            Property(f, draw(value_of_kind(out_schema.kind_of(f), undefined=False)))
            for f in feats
        )
        return Behaviour(m, params)

    return build()


def man_behaviours(maneuvers=tuple(Maneuver)):
    out = LayerSchema.build("parameter", PAR_PARAMS)
    return behaviours(out, maneuvers)


def theories(layer: str, schema: LayerSchema, out_schema: LayerSchema, max_rules: int = 6,
             behaviour_strategy=None):
    beh = behaviours(out_schema) if behaviour_strategy is None else behaviour_strategy

    @st.composite
    def build(draw):
        n = draw(st.integers(0, max_rules))
        prefix = layer[0]
        rules = [Rule(f"{prefix}{i}", draw(antecedents(schema)), draw(beh)) for i in range(n)]
        return Theory(layer, schema, out_schema, rules)

    return build()


def maneuver_theories(max_rules: int = 6):
    return theories("maneuver", MAN_SCHEMA, PAR_SCHEMA, max_rules, man_behaviours())


def parameter_theories(max_rules: int = 6):
    return theories("parameter", PAR_SCHEMA, OUT_SCHEMA, max_rules)


def feature(name: str) -> Feature:
    return Feature.parse(name)


def routing_parameter_theories(max_extra: int = 3):
    """Parameter theories with one flag-guarded rule per maneuver, so inference
    usually ends in a behaviour, plus a few random rules."""

    @st.composite
    def build(draw):
        rules = []
        for i, m in enumerate(Maneuver):
            guard = [FeatureValue(m.feature, Op.EQ, Value.boolean(True))]
            guard += draw(st.lists(constraints(PAR_SCHEMA, False), max_size=1))
            rules.append(Rule(f"p{i}", Antecedent(guard), draw(behaviours(OUT_SCHEMA, (m,), 1))))
        extra = draw(st.lists(st.tuples(antecedents(PAR_SCHEMA), behaviours(OUT_SCHEMA)),
                              max_size=max_extra))
        rules += [Rule(f"px{j}", a, b) for j, (a, b) in enumerate(extra)]
        return Theory("parameter", PAR_SCHEMA, OUT_SCHEMA, rules)

    return build()


def defaulted_maneuver_theories(max_rules: int = 6):
    """Maneuver theories that always contain a most-general Track-Speed rule."""
    default = Rule("m_default", Antecedent([TRUE]), Behaviour.of("Track-Speed"))
    return maneuver_theories(max_rules).map(lambda t: t.with_rules(list(t.rules) + [default]))
