"""Independent reference implementations used as test oracles.

Everything here works on plain Python data. Values are ``(tag, payload)``
pairs so that a boolean never equals a number; a scene is a ``dict`` from
``"Obj.Attr"`` strings to values; a constraint is a tuple; a behaviour is
``(maneuver, frozenset of (name, value))``.
Only the converters at the bottom touch library objects, and only through their
public attributes.
"""

from __future__ import annotations

UNDEF = ("u", None)
TRUE = ("b", True)

ORDER = ["Emergency-Stop", "Stop", "Yield", "Decelerate-To-Halt", "Pass-Obstacle",
         "Follow-Leader", "Track-Speed"]


class OracleError(Exception):
    pass


def lit(x):
    """Tag a plain Python literal; ``None`` is undefined."""
    if x is None:
        return UNDEF
    if type(x) is bool:
        return ("b", x)
    if type(x) in (int, float):
        return ("n", float(x))
    if type(x) is str:
        return ("s", x)
    raise TypeError(x)


def cmp(op: str, a, b) -> bool:
    if op == "=":
        return a == b
    if a[0] != "n" or b[0] != "n":
        return False
    return a[1] <= b[1] if op == "<=" else a[1] >= b[1]


def holds(c, scene: dict) -> bool:
    if c[0] == "true":
        return True
    if c[0] == "fv":
        _, f, op, v = c
        return cmp(op, scene[f], v)
    _, f, op, g = c
    return cmp(op, scene[f], scene[g])


def fires(antecedent, scene) -> bool:
    return all(holds(c, scene) for c in antecedent)


def apply_rules(rules, scene) -> set:
    """``rules``: list of ``(id, antecedent, behaviour)``."""
    return {b for _, a, b in rules if fires(a, scene)}


def resolve_man(bs, order=ORDER) -> set:
    if not bs:
        return set()
    best = min(order.index(m) for m, _ in bs)
    return {b for b in bs if order.index(b[0]) == best}


def merge(bs) -> dict:
    out: dict = {}
    for _, params in bs:
        for f, v in params:
            if f in out and UNDEF not in (out[f], v) and out[f] != v:
                raise OracleError("conflict")
            if f not in out or out[f] == UNDEF:
                out[f] = v
    return out


def t_par(resolved, par_features) -> dict:
    if not resolved:
        raise OracleError("empty")
    ms = {m for m, _ in resolved}
    if len(ms) != 1:
        raise OracleError("mixed")
    (m,) = ms
    params = merge(resolved)
    flag = f"Maneuver.{m}"
    if params.get(flag, UNDEF) not in (UNDEF, TRUE):
        raise OracleError("conflict")
    params[flag] = TRUE
    if set(params) - set(par_features):
        raise OracleError("schema")
    return {f: params.get(f, UNDEF) for f in par_features}


def resolve_par(bs):
    if not bs:
        raise OracleError("empty")
    ms = {m for m, _ in bs}
    if len(ms) != 1:
        raise OracleError("mixed")
    (m,) = ms
    return (m, frozenset(merge(bs).items()))


def policy(man_rules, par_rules, par_features, scene, order=ORDER):
    fired = apply_rules(man_rules, scene)
    if not fired:
        raise OracleError("no-behaviour")
    par_scene = t_par(resolve_man(fired, order), par_features)
    return resolve_par(apply_rules(par_rules, par_scene))


def layer_input(layer, man_rules, par_features, scene, order=ORDER):
    if layer == "maneuver":
        return scene
    fired = apply_rules(man_rules, scene)
    return t_par(resolve_man(fired, order), par_features)


def misclassified(layer, rules, man_rules, par_features, records, order=ORDER) -> set:
    """``records``: list of ``(scene, maneuver_label, final_label)``."""
    bad = set()
    for i, (scene, man_label, final_label) in enumerate(records):
        try:
            inp = layer_input(layer, man_rules, par_features, scene, order)
        except OracleError:
            bad.add(i)
            continue
        fired = apply_rules(rules, inp)
        if layer == "maneuver":
            if man_label not in resolve_man(fired, order):
                bad.add(i)
        else:
            try:
                if resolve_par(fired) != final_label:
                    bad.add(i)
            except OracleError:
                bad.add(i)
    return bad


def coverage(layer, rule, rules, man_rules, par_features, records, order=ORDER) -> set:
    _, antecedent, b = rule
    hits = set()
    for i, (scene, _, _) in enumerate(records):
        try:
            inp = layer_input(layer, man_rules, par_features, scene, order)
        except OracleError:
            continue
        if not fires(antecedent, inp):
            continue
        fired = apply_rules(rules, inp)
        contrib = resolve_man(fired, order) if layer == "maneuver" else fired
        if b in contrib:
            hits.add(i)
    return hits


# -- converters from library objects -----------------------------------------

def plain_value(v):
    kind = v.kind.value
    if kind == "undefined":
        return UNDEF
    return (kind[0], float(v.data) if kind == "number" else v.data)


def plain_scene(scene) -> dict:
    return {str(f): plain_value(v) for f, v in scene.items()}


def plain_constraint(c):
    name = type(c).__name__
    if name == "TrueConstraint":
        return ("true",)
    if name == "FeatureValue":
        return ("fv", str(c.lhs), c.op.value, plain_value(c.rhs))
    return ("ff", str(c.lhs), c.op.value, str(c.rhs))


def plain_behaviour(b):
    return (b.maneuver.value, frozenset((str(p.feature), plain_value(p.value)) for p in b.params))


def plain_rules(theory):
    return [(r.id, [plain_constraint(c) for c in r.antecedent], plain_behaviour(r.consequent))
            for r in theory.rules]


def plain_records(dataset):
    return [(plain_scene(ls.scene), plain_behaviour(ls.maneuver_label),
             plain_behaviour(ls.final_label)) for ls in dataset]
