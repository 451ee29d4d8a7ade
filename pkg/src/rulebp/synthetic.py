"""Random, label-consistent training problems.

A hidden teacher labels random scenes. Its maneuver is the most conservative
one whose trigger condition holds (``Track-Speed`` by default), and the
maneuver label carries True-valued flags for teacher sub-conditions. The final
label depends on the maneuver alone.

These choices make every generated dataset learnable by both layers:

* scenes are unique, and labels are a function of the scene;
* flags only ever take the value True, so merging the parameters of several
  resolved maneuver-layer behaviours never conflicts;
* two scenes resolved to the same maneuver always share their final label,
  whatever extra behaviours the learned maneuver theory lets through.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .dsl import Schemas
from .evaluator import compare
from .learning import LabelledScene
from .model import (
    DEFAULT_ORDER,
    UNDEFINED,
    Behaviour,
    ConservativenessOrder,
    Feature,
    FeatureKind,
    LayerSchema,
    Maneuver,
    Op,
    Scene,
    Theory,
    Value,
)

OBJECTS = ("Ego", "Road", "Lead", "Crosswalk", "Signal", "Obstacle")
SYMBOLS = ("Intersection", "Crosswalk", "Lane", "Junction")
MODES = ("Halt", "Creep", "Cruise", "Hold", "Swerve", "Follow", "Brake")


@dataclass
class SyntheticProblem:
    schemas: Schemas
    dataset: list[LabelledScene]
    order: ConservativenessOrder = DEFAULT_ORDER

    def empty_bases(self) -> tuple[Theory, Theory]:
        s = self.schemas
        return (
            Theory("maneuver", s.maneuver, s.parameter, ()),
            Theory("parameter", s.parameter, s.output, ()),
        )


def _random_value(rng: random.Random, kind: FeatureKind, undefined_rate: float) -> Value:
    if rng.random() < undefined_rate:
        return UNDEFINED
    if kind is FeatureKind.BOOLEAN:
        return Value.boolean(rng.random() < 0.5)
    if kind is FeatureKind.NUMBER:
        return Value.number(rng.randrange(0, 60, 5))
    return Value.symbol(rng.choice(SYMBOLS))


def _random_condition(rng, features, kinds, size):
    cond = []
    for feat in rng.sample(features, size):
        kind = kinds[feat]
        if kind is FeatureKind.NUMBER:
            cond.append((feat, rng.choice((Op.LE, Op.GE)), Value.number(rng.randrange(10, 50, 5))))
        else:
            cond.append((feat, Op.EQ, _random_value(rng, kind, 0.0)))
    return cond


def _holds(cond, scene: Scene) -> bool:
    return all(compare(op, scene[f], v) for f, op, v in cond)


def generate_problem(seed: int, n_scenes: int = 100, n_features: int = 12, *,
                     n_triggers: int = 6, flags_per_maneuver: int = 2,
                     undefined_rate: float = 0.1) -> SyntheticProblem:
    rng = random.Random(seed)
    features = [Feature(OBJECTS[i % len(OBJECTS)], f"Attr{i}") for i in range(n_features)]
    cycle = (FeatureKind.BOOLEAN, FeatureKind.NUMBER, FeatureKind.SYMBOL)
    kinds = {f: cycle[i % 3] for i, f in enumerate(features)}
    man_schema = LayerSchema("maneuver", tuple(kinds.items()))

    maneuvers = [m for m in Maneuver if m is not Maneuver.TRACK_SPEED]
    triggers = [
        (rng.choice(maneuvers), _random_condition(rng, features, kinds, rng.randint(1, 2)))
        for _ in range(n_triggers)
    ]
    flags = {
        m: [(Feature("Flag", f"{m.name.title().replace('_', '')}{j}"),
             _random_condition(rng, features, kinds, 1))
            for j in range(flags_per_maneuver)]
        for m in Maneuver
    }
    par_decl = [(m.feature, FeatureKind.BOOLEAN) for m in Maneuver]
    par_decl += [(f, FeatureKind.BOOLEAN) for m in Maneuver for f, _ in flags[m]]
    par_schema = LayerSchema("parameter", tuple(par_decl))
    out_schema = LayerSchema("output", (
        (Feature("Plan", "Mode"), FeatureKind.SYMBOL),
        (Feature("Plan", "Target"), FeatureKind.NUMBER),
    ))
    finals = {
        m: Behaviour.of(m, {"Plan.Mode": rng.choice(MODES), "Plan.Target": rng.randrange(0, 50, 5)})
        for m in Maneuver
    }

    seen = set()
    dataset = []
    attempts = 0
    while len(dataset) < n_scenes:
        attempts += 1
        if attempts > 100 * n_scenes:
            raise ValueError("could not draw enough distinct scenes; add features")
        data = {f: _random_value(rng, kinds[f], undefined_rate) for f in features}
        scene = Scene(man_schema, data)
        if scene in seen:
            continue
        seen.add(scene)
        active = [m for m, cond in triggers if _holds(cond, scene)] + [Maneuver.TRACK_SPEED]
        h = min(active, key=DEFAULT_ORDER.rank)
        params = {f: True for f, cond in flags[h] if _holds(cond, scene)}
        dataset.append(LabelledScene(scene, Behaviour.of(h, params), finals[h]))
    return SyntheticProblem(Schemas(man_schema, par_schema, out_schema), dataset)
