"""Rule evaluation, the two resolution functions and the composed driving policy.

The naive functions (:func:`apply_rule`, :func:`apply_theory`) evaluate every
rule independently and serve as the reference semantics. :class:`CompiledTheory`
evaluates each distinct constraint once per scene and shares the result across
rules; :func:`infer` uses it unless ``naive=True``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    EmptyResolutionError,
    MixedManeuverError,
    NoBehaviourError,
    ParameterConflictError,
    RuleEngineError,
    SchemaError,
    UnknownFeatureError,
)
from .model import (
    DEFAULT_ORDER,
    TRUE_VALUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    ConservativenessOrder,
    FeatureValue,
    LayerSchema,
    Op,
    Rule,
    Scene,
    Theory,
    TrueConstraint,
    Value,
    ValueKind,
)

NUMBER = ValueKind.NUMBER


def compare(op: Op, a: Value, b: Value) -> bool:
    if op is Op.EQ:
        return a == b
    # order operators are false on anything but two numbers, undefined included
    if a.kind is not NUMBER or b.kind is not NUMBER:
        return False
    return a.data <= b.data if op is Op.LE else a.data >= b.data


def _lookup(scene: Scene, feature):
    try:
        return scene.assignment[feature]
    except KeyError:
        raise UnknownFeatureError(f"scene has no feature {feature}") from None


def eval_constraint(c, scene: Scene) -> bool:
    if isinstance(c, TrueConstraint):
        return True
    lhs = _lookup(scene, c.lhs)
    rhs = c.rhs if isinstance(c, FeatureValue) else _lookup(scene, c.rhs)
    return compare(c.op, lhs, rhs)


def eval_antecedent(a: Antecedent, scene: Scene) -> bool:
    # evaluate every conjunct so unknown features always surface as errors
    results = [eval_constraint(c, scene) for c in a]
    return all(results)


def apply_rule(r: Rule, scene: Scene) -> Behaviour | None:
    return r.consequent if eval_antecedent(r.antecedent, scene) else None


def fired_flags(t: Theory, scene: Scene) -> dict[str, bool]:
    return {r.id: eval_antecedent(r.antecedent, scene) for r in t.rules}


def apply_theory(t: Theory, scene: Scene) -> frozenset[Behaviour]:
    out = (apply_rule(r, scene) for r in t.rules)
    return frozenset(b for b in out if b is not None)


def _compile(c):
    if isinstance(c, TrueConstraint):
        return lambda a: True
    lhs, op = c.lhs, c.op
    if isinstance(c, FeatureValue):
        rhs = c.rhs
        if op is Op.EQ:
            return lambda a: a[lhs] == rhs
        if rhs.kind is not NUMBER:
            return lambda a: False
        x = rhs.data
        if op is Op.LE:
            return lambda a: (v := a[lhs]).kind is NUMBER and v.data <= x
        return lambda a: (v := a[lhs]).kind is NUMBER and v.data >= x
    rhs = c.rhs
    return lambda a: compare(op, a[lhs], a[rhs])


class CompiledTheory:
    """Evaluation index over a theory.

    Distinct constraints are compiled to closures and evaluated once per scene;
    each rule then reads the shared results.
    """

    def __init__(self, theory: Theory):
        self.theory = theory
        index: dict = {}
        self._rule_slots = []
        for r in theory.rules:
            slots = []
            for c in r.antecedent:
                if c not in index:
                    index[c] = len(index)
                slots.append(index[c])
            self._rule_slots.append((r, tuple(slots)))
        self._predicates = [_compile(c) for c in index]

    def fire(self, scene: Scene) -> list[bool]:
        a = scene.assignment
        try:
            truth = [p(a) for p in self._predicates]
        except KeyError as exc:
            raise UnknownFeatureError(f"scene has no feature {exc.args[0]}") from None
        return [all(truth[i] for i in slots) for _, slots in self._rule_slots]

    def fired_flags(self, scene: Scene) -> dict[str, bool]:
        return {r.id: f for (r, _), f in zip(self._rule_slots, self.fire(scene))}

    def apply(self, scene: Scene) -> frozenset[Behaviour]:
        flags = self.fire(scene)
        return frozenset(r.consequent for (r, _), f in zip(self._rule_slots, flags) if f)


def resolve_maneuver(bs: Iterable[Behaviour],
                     order: ConservativenessOrder = DEFAULT_ORDER) -> frozenset[Behaviour]:
    """Keep the behaviours whose maneuver is the most conservative one present."""
    bs = frozenset(bs)
    if not bs:
        return bs
    top = min((b.maneuver for b in bs), key=order.rank)
    return frozenset(b for b in bs if b.maneuver is top)


def transform_man(scene: Scene) -> Scene:
    return scene


def merge_parameters(bs: Iterable[Behaviour]) -> dict:
    """Union of parameter properties. A defined value wins over undefined;
    two different defined values for one feature are a conflict."""
    merged: dict = {}
    for b in sorted(bs, key=Behaviour.sort_key):
        for p in b.params:
            old = merged.get(p.feature)
            if old is None or old.is_undefined:
                merged[p.feature] = p.value
            elif not p.value.is_undefined and old != p.value:
                raise ParameterConflictError(
                    f"conflicting values for {p.feature}: {old} and {p.value}"
                )
    return merged


def _single_maneuver(bs: frozenset[Behaviour]):
    maneuvers = {b.maneuver for b in bs}
    if len(maneuvers) > 1:
        names = ", ".join(sorted(m.value for m in maneuvers))
        raise MixedManeuverError(f"behaviours disagree on the maneuver: {names}")
    return maneuvers.pop()


def transform_par(resolved: Iterable[Behaviour], par_schema: LayerSchema) -> Scene:
    """Turn the resolved maneuver-layer output into a total parameter-layer scene."""
    resolved = frozenset(resolved)
    if not resolved:
        raise NoBehaviourError("nothing to transform: no resolved behaviour")
    h = _single_maneuver(resolved)
    params = merge_parameters(resolved)
    flag = h.feature
    if flag not in par_schema:
        raise SchemaError(f"parameter schema lacks the maneuver feature {flag}")
    old = params.get(flag)
    if old is not None and not old.is_undefined and old != TRUE_VALUE:
        raise ParameterConflictError(f"parameter {flag} contradicts the chosen maneuver")
    params[flag] = TRUE_VALUE
    data = {}
    for feat in par_schema.features:
        data[feat] = params.pop(feat, UNDEFINED)
    if params:
        missing = ", ".join(sorted(map(str, params)))
        raise SchemaError(f"parameter schema lacks {missing}")
    for feat, value in data.items():
        par_schema.check_property(feat, value)
    return Scene._trusted(par_schema, data)


def resolve_par(bs: Iterable[Behaviour]) -> Behaviour:
    """Single behaviour whose parameter is the union of all parameters."""
    bs = frozenset(bs)
    if not bs:
        raise EmptyResolutionError("no behaviour resolved by the parameter layer")
    h = _single_maneuver(bs)
    merged = merge_parameters(bs)
    return Behaviour.of(h, merged)


@dataclass(frozen=True)
class LayerTrace:
    layer: str
    input: Scene
    fired: dict[str, bool]
    output: frozenset[Behaviour]
    resolved: frozenset[Behaviour] | Behaviour | None = None
    transformed: Scene | None = None

    def fired_ids(self) -> list[str]:
        return [rid for rid, f in self.fired.items() if f]


@dataclass(frozen=True)
class InferenceTrace:
    layers: tuple[LayerTrace, ...] = ()

    def layer(self, name: str) -> LayerTrace | None:
        for lt in self.layers:
            if lt.layer == name:
                return lt
        return None


@dataclass(frozen=True)
class EngineConfig:
    maneuver_theory: Theory
    parameter_theory: Theory
    order: ConservativenessOrder = DEFAULT_ORDER
    _compiled: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        man, par = self.maneuver_theory, self.parameter_theory
        if man.output_schema != par.schema:
            raise SchemaError(
                "the maneuver theory's output schema must be the parameter layer's input schema"
            )
        for r in man.rules:
            flag = r.consequent.maneuver.feature
            if flag not in par.schema:
                raise SchemaError(
                    f"rule {r.id!r} yields {r.consequent.maneuver} but the parameter "
                    f"schema has no {flag} feature"
                )
        object.__setattr__(self, "_compiled", (CompiledTheory(man), CompiledTheory(par)))

    @property
    def maneuver_schema(self) -> LayerSchema:
        return self.maneuver_theory.schema

    @property
    def parameter_schema(self) -> LayerSchema:
        return self.parameter_theory.schema

    def replace(self, **changes) -> EngineConfig:
        fields = dict(
            maneuver_theory=self.maneuver_theory,
            parameter_theory=self.parameter_theory,
            order=self.order,
        )
        fields.update(changes)
        return EngineConfig(**fields)


def _run_layer(theory: Theory, compiled: CompiledTheory, scene: Scene, naive: bool):
    if naive:
        flags = fired_flags(theory, scene)
        out = apply_theory(theory, scene)
    else:
        flags = compiled.fired_flags(scene)
        out = frozenset(r.consequent for r in theory.rules if flags[r.id])
    return flags, out


def maneuver_stage(cfg: EngineConfig, scene: Scene, *, naive: bool = False):
    """Maneuver layer plus the parameter-layer transformation.

    Returns ``(layer_trace, parameter_scene)``. Errors carry the partial trace.
    """
    man_c, _ = cfg._compiled
    flags, out = _run_layer(cfg.maneuver_theory, man_c, transform_man(scene), naive)
    resolved = resolve_maneuver(out, cfg.order)
    trace = LayerTrace("maneuver", scene, flags, out, resolved)
    if not out:
        raise NoBehaviourError("no maneuver rule fired", trace=InferenceTrace((trace,)))
    try:
        par_scene = transform_par(resolved, cfg.parameter_schema)
    except RuleEngineError as exc:
        exc.trace = InferenceTrace((trace,))
        raise
    trace = LayerTrace("maneuver", scene, flags, out, resolved, par_scene)
    return trace, par_scene


def infer(cfg: EngineConfig, scene: Scene, *, naive: bool = False):
    """The driving policy. Returns ``(behaviour, trace)``."""
    man_trace, par_scene = maneuver_stage(cfg, scene, naive=naive)
    _, par_c = cfg._compiled
    flags, out = _run_layer(cfg.parameter_theory, par_c, par_scene, naive)
    partial = LayerTrace("parameter", par_scene, flags, out)
    try:
        behaviour = resolve_par(out)
    except RuleEngineError as exc:
        exc.trace = InferenceTrace((man_trace, partial))
        raise
    par_trace = LayerTrace("parameter", par_scene, flags, out, behaviour)
    return behaviour, InferenceTrace((man_trace, par_trace))


def parameter_input(cfg: EngineConfig, scene: Scene) -> Scene:
    """The parameter-layer scene the engine derives from a maneuver-layer scene."""
    return maneuver_stage(cfg, scene)[1]
