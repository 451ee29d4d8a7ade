"""Tooling for the knowledge-engineering cycle.

A discrepancy is a scene on which the engine's behaviour differs from the one
an expert wants. Diagnosis runs the engine forward on that scene, finds the
rules of the first failing layer that produced the unwanted result, and walks
each of them back into the training set through its coverage. The expert then
sanitizes the scene (keeps only the relevant features) and
:func:`engineering_step` adds it to the training set and relearns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .dsl import LabelConflictError, behaviour_to_json, dumps, scene_to_json, trace_to_json
from .errors import RuleEngineError, UnknownFeatureError
from .evaluator import (
    EngineConfig,
    InferenceTrace,
    infer,
    maneuver_stage,
    resolve_maneuver,
)
from .learning import (
    MANEUVER,
    PARAMETER,
    Heuristic,
    LabelledScene,
    LearnResult,
    contributors,
    coverage,
    learn_engine,
)
from .model import DEFAULT_ORDER, UNDEFINED, Behaviour, Feature, Scene


@dataclass(frozen=True)
class Discrepancy:
    found: bool
    actual: Behaviour | None
    error: RuleEngineError | None
    trace: InferenceTrace


def detect_discrepancy(cfg: EngineConfig, scene: Scene, desired: Behaviour) -> Discrepancy:
    """Run the engine on ``scene``; engine errors count as discrepancies."""
    try:
        actual, trace = infer(cfg, scene)
    except RuleEngineError as exc:
        return Discrepancy(True, None, exc, exc.trace or InferenceTrace())
    return Discrepancy(actual != desired, actual, None, trace)


@dataclass(frozen=True)
class DiscrepancyReport:
    scene: Scene
    desired: Behaviour
    actual: Behaviour | None
    error: RuleEngineError | None
    layer: str | None
    fired: dict[str, list[str]]
    conflicting: dict[str, list[tuple[int, Behaviour]]]
    no_producing_rule: bool
    trace: InferenceTrace = field(repr=False, default_factory=InferenceTrace)

    @property
    def found(self) -> bool:
        return self.layer is not None

    def to_json(self, order=DEFAULT_ORDER) -> dict:
        doc = {
            "discrepancy": self.found,
            "scene": scene_to_json(self.scene),
            "desired": behaviour_to_json(self.desired),
            "actual": behaviour_to_json(self.actual) if self.actual is not None else None,
            "error": self.error.to_json() if self.error is not None else None,
            "layer": self.layer,
            "fired": self.fired,
            "conflicting": {
                rid: [{"index": i, "label": behaviour_to_json(b)} for i, b in hits]
                for rid, hits in self.conflicting.items()
            },
            "no_producing_rule": self.no_producing_rule,
        }
        doc["trace"] = trace_to_json(self.trace, order)
        return doc

    def dumps(self, order=DEFAULT_ORDER) -> str:
        return dumps(self.to_json(order))


def _maneuver_ok(resolved, desired: Behaviour, label: Behaviour | None) -> bool:
    if label is not None:
        return label in resolved
    return any(b.maneuver is desired.maneuver for b in resolved)


def _wrong(b: Behaviour, desired: Behaviour, label: Behaviour | None) -> bool:
    if label is not None:
        return b != label
    return b.maneuver is not desired.maneuver


def find_conflicting_scenes(cfg: EngineConfig, dataset, discrepancy: Scene,
                            desired: Behaviour, *,
                            maneuver_label: Behaviour | None = None) -> DiscrepancyReport:
    """Rules of the first failing layer that steer ``discrepancy`` away from
    ``desired``, each mapped to the training scenes it covers.

    ``maneuver_label`` is the desired maneuver-layer output. Without it the
    maneuver layer is judged on the maneuver of ``desired`` alone.
    """
    dataset = list(dataset)
    found = detect_discrepancy(cfg, discrepancy, desired)
    if not found.found:
        raise ValueError("the engine already yields the desired behaviour on this scene")
    man_theory, par_theory = cfg.maneuver_theory, cfg.parameter_theory

    # forward: replay the maneuver layer, which never raises before resolution
    man_c, par_c = cfg._compiled
    flags = man_c.fired_flags(discrepancy)
    out = frozenset(r.consequent for r in man_theory.rules if flags[r.id])
    resolved = resolve_maneuver(out, cfg.order)
    fired = {MANEUVER: [rid for rid, f in flags.items() if f]}

    if not _maneuver_ok(resolved, desired, maneuver_label):
        layer, theory, layer_flags, contrib = MANEUVER, man_theory, flags, resolved
        label = maneuver_label
    else:
        try:
            _, par_scene = maneuver_stage(cfg, discrepancy)
        except RuleEngineError:
            layer, theory, layer_flags, contrib = MANEUVER, man_theory, flags, resolved
            label = maneuver_label
        else:
            pflags = par_c.fired_flags(par_scene)
            pout = frozenset(r.consequent for r in par_theory.rules if pflags[r.id])
            fired[PARAMETER] = [rid for rid, f in pflags.items() if f]
            layer, theory, layer_flags = PARAMETER, par_theory, pflags
            contrib = contributors(PARAMETER, pout, cfg.order)
            label = desired

    culprits = [
        r for r in theory.rules
        if layer_flags[r.id] and r.consequent in contrib
        and _wrong(r.consequent, desired, label)
    ]
    # backward: each culprit's coverage over the training set
    conflicting = {
        r.id: [(i, dataset[i].label(layer)) for i in sorted(coverage(r, theory, layer, cfg,
                                                                      dataset))]
        for r in culprits
    }
    producing = any(layer_flags[r.id] and not _wrong(r.consequent, desired, label)
                    for r in theory.rules)
    return DiscrepancyReport(
        discrepancy, desired, found.actual, found.error, layer, fired, conflicting,
        not producing, found.trace,
    )


def sanitize_scene(scene: Scene, relevant: Iterable) -> Scene:
    """Keep the ``relevant`` features and set every other one to undefined."""
    keep = {Feature.of(f) for f in relevant}
    for f in sorted(keep, key=str):
        if f not in scene.schema:
            raise UnknownFeatureError(f"unknown feature {f} for {scene.schema.layer_id} schema")
    data = {f: (v if f in keep else UNDEFINED) for f, v in scene.items()}
    return Scene(scene.schema, data)


@dataclass(frozen=True)
class EngineeringReport:
    cured: bool
    dataset: list
    result: LearnResult
    discrepancy: Discrepancy

    def to_json(self) -> dict:
        d = self.discrepancy
        return {
            "cured": self.cured,
            "dataset_size": len(self.dataset),
            "maneuver_rules": len(self.result.maneuver),
            "parameter_rules": len(self.result.parameter),
            "iterations": self.result.iterations,
            "bad_rules": self.result.bad_rules,
            "actual": behaviour_to_json(d.actual) if d.actual is not None else None,
            "error": d.error.to_json() if d.error is not None else None,
        }


def engineering_step(cfg: EngineConfig, dataset, sanitized: LabelledScene, seed=0, *,
                     original: Scene | None = None,
                     heuristic: Heuristic = Heuristic.LAPLACE,
                     **options) -> tuple[EngineConfig, EngineeringReport]:
    """Append ``sanitized`` to the training set and relearn from the current theories.

    ``original`` is the unsanitized discrepancy scene, checked afterwards
    against ``sanitized.final_label``; it defaults to the sanitized scene.
    The input dataset is not modified.
    """
    old = list(dataset)
    for i, ls in enumerate(old):
        if ls.scene == sanitized.scene and (
            ls.maneuver_label != sanitized.maneuver_label
            or ls.final_label != sanitized.final_label
        ):
            raise LabelConflictError(i, len(old))
    new_dataset = old + [sanitized]
    result = learn_engine(new_dataset, cfg.maneuver_theory, cfg.parameter_theory, cfg.order,
                          seed, heuristic, **options)
    new_cfg = EngineConfig(result.maneuver, result.parameter, cfg.order)
    target = original if original is not None else sanitized.scene
    after = detect_discrepancy(new_cfg, target, sanitized.final_label)
    return new_cfg, EngineeringReport(not after.found, new_dataset, result, after)


__all__ = [
    "Discrepancy",
    "DiscrepancyReport",
    "EngineeringReport",
    "detect_discrepancy",
    "engineering_step",
    "find_conflicting_scenes",
    "sanitize_scene",
]
