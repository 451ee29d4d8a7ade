"""Learning and maintaining rule theories from labelled scenes.

The learner is a separate-and-conquer refinement loop run per layer: while
some training scene is misclassified, either add the most general rule for its
label or specialise a rule that wrongly wins on it by appending one constraint
generated from the scenes that rule covers.

Heuristics for choosing the constraint, with ``p``/``n`` the label-matching and
label-differing scenes the refined rule fires on and ``p0``/``n0`` the same
counts for the unrefined rule:

* ``laplace``: ``(p + 1) / (p + n + 2)``
* ``precision``: ``p / (p + n)``, 0 when nothing fires
* ``coverage_difference``: ``(p - p0) + (n0 - n)``
* ``rate_difference``: ``p / p0 - n / n0`` (a zero denominator makes its term 0)

The two difference measures follow the usual textbook definitions with the
parent rule's coverage as the reference population.

Internally every constraint and antecedent is reduced to an ``int`` bitset
over the training scenes; :func:`coverage`, :func:`misclassified` and
:func:`score_constraint` are plain re-evaluations kept as reference
implementations.
"""

from __future__ import annotations

import logging
import random
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .errors import RuleEngineError, SchemaError
from .evaluator import (
    EngineConfig,
    apply_theory,
    eval_antecedent,
    eval_constraint,
    parameter_input,
    resolve_maneuver,
    resolve_par,
    transform_man,
)
from .model import (
    DEFAULT_ORDER,
    MOST_GENERAL,
    Antecedent,
    Behaviour,
    ConservativenessOrder,
    FeatureFeature,
    FeatureValue,
    Op,
    Property,
    Rule,
    Scene,
    Theory,
    TrueConstraint,
    ValueKind,
)

log = logging.getLogger(__name__)

MANEUVER = "maneuver"
PARAMETER = "parameter"
LAYERS = (MANEUVER, PARAMETER)
ALL_OPS = (Op.EQ, Op.LE, Op.GE)
DEFAULT_MAX_ITERATIONS = 10**6


class Heuristic(str, Enum):
    LAPLACE = "laplace"
    PRECISION = "precision"
    COVERAGE_DIFFERENCE = "coverage_difference"
    RATE_DIFFERENCE = "rate_difference"


class LearningError(RuleEngineError):
    kind = "learning-error"


class BadBaseRules(LearningError):
    """A rule that wrongly wins on a scene cannot be specialised any further."""

    kind = "bad-base-rules"

    def __init__(self, rule: Rule, layer: str):
        self.rule = rule
        self.layer = layer
        super().__init__(
            f"{layer} rule {rule.id!r} exhausted every candidate constraint; "
            "remove it from the base rules"
        )


class IterationBudgetExceeded(LearningError):
    kind = "iteration-budget"


class UntransformableScene(LearningError):
    """The maneuver theory gives no usable parameter-layer input for a scene."""

    kind = "untransformable-scene"


@dataclass(frozen=True)
class LabelledScene:
    scene: Scene
    maneuver_label: Behaviour
    final_label: Behaviour

    def __post_init__(self):
        if self.maneuver_label.maneuver is not self.final_label.maneuver:
            raise ValueError(
                f"labels disagree on the maneuver: {self.maneuver_label.maneuver} "
                f"vs {self.final_label.maneuver}"
            )

    def label(self, layer: str) -> Behaviour:
        return self.maneuver_label if layer == MANEUVER else self.final_label


def _check_layer(layer):
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}")


def layer_input(layer: str, cfg: EngineConfig, scene: Scene) -> Scene:
    """The scene a layer sees for a training scene (identity for the maneuver layer)."""
    if layer == MANEUVER:
        return transform_man(scene)
    return parameter_input(cfg, scene)


def layer_inputs(layer: str, cfg: EngineConfig, dataset) -> list[Scene | None]:
    """Transformed training scenes; ``None`` where the transformation fails."""
    out = []
    for ls in dataset:
        try:
            out.append(layer_input(layer, cfg, ls.scene))
        except RuleEngineError:
            out.append(None)
    return out


def contributors(layer: str, fired: frozenset[Behaviour],
                 order: ConservativenessOrder = DEFAULT_ORDER) -> frozenset[Behaviour]:
    """Behaviours of ``fired`` that make it into the layer's resolved result.

    Maneuver layer: the conservativeness filter. Parameter layer: every fired
    behaviour, since resolution takes the union of all their parameters.
    """
    if layer == MANEUVER:
        return resolve_maneuver(fired, order)
    return frozenset(fired)


def resolves_to_label(layer: str, fired, label: Behaviour,
                      order: ConservativenessOrder = DEFAULT_ORDER) -> bool:
    if layer == MANEUVER:
        return label in resolve_maneuver(fired, order)
    try:
        return resolve_par(fired) == label
    except RuleEngineError:
        return False


def coverage(r: Rule, t: Theory, layer: str, cfg: EngineConfig, dataset) -> frozenset[int]:
    """Indices of the training scenes that trigger ``r`` within theory ``t``."""
    _check_layer(layer)
    hits = set()
    for i, inp in enumerate(layer_inputs(layer, cfg, dataset)):
        if inp is None or not eval_antecedent(r.antecedent, inp):
            continue
        if r.consequent in contributors(layer, apply_theory(t, inp), cfg.order):
            hits.add(i)
    return frozenset(hits)


def misclassified(t: Theory, layer: str, cfg: EngineConfig, dataset) -> frozenset[int]:
    """Indices whose layer label is not what the layer resolves to."""
    _check_layer(layer)
    bad = set()
    for i, (ls, inp) in enumerate(zip(dataset, layer_inputs(layer, cfg, dataset))):
        if inp is None or not resolves_to_label(layer, apply_theory(t, inp), ls.label(layer),
                                                cfg.order):
            bad.add(i)
    return frozenset(bad)


def generate_constraints(props: Iterable[Property], ops=ALL_OPS, *,
                         feature_feature: bool = False) -> tuple:
    """Constraints that each hold on the property they were made from.

    ``=`` for every property (undefined included); ``<=``/``>=`` for numbers.
    With ``feature_feature`` also relate pairs of features whose observed values
    satisfy the operator.
    """
    ops = tuple(ops)
    props = list(dict.fromkeys(props))
    out: dict = {}
    for p in props:
        if Op.EQ in ops:
            out[FeatureValue(p.feature, Op.EQ, p.value)] = None
        if p.value.kind is ValueKind.NUMBER:
            for op in (Op.LE, Op.GE):
                if op in ops:
                    out[FeatureValue(p.feature, op, p.value)] = None
    if feature_feature:
        for i, a in enumerate(props):
            for b in props[i + 1:]:
                if a.feature == b.feature or a.value.is_undefined or b.value.is_undefined:
                    continue
                numeric = a.value.kind is ValueKind.NUMBER and b.value.kind is ValueKind.NUMBER
                if Op.EQ in ops and a.value == b.value:
                    out[FeatureFeature(a.feature, Op.EQ, b.feature)] = None
                if numeric and Op.LE in ops and a.value.data <= b.value.data:
                    out[FeatureFeature(a.feature, Op.LE, b.feature)] = None
                if numeric and Op.GE in ops and a.value.data >= b.value.data:
                    out[FeatureFeature(a.feature, Op.GE, b.feature)] = None
    return tuple(out)


def heuristic_value(heuristic: Heuristic, p: int, n: int, p0: int, n0: int) -> float:
    h = Heuristic(heuristic)
    if h is Heuristic.LAPLACE:
        return (p + 1) / (p + n + 2)
    if h is Heuristic.PRECISION:
        return p / (p + n) if p + n else 0.0
    if h is Heuristic.COVERAGE_DIFFERENCE:
        return float((p - p0) + (n0 - n))
    return (p / p0 if p0 else 0.0) - (n / n0 if n0 else 0.0)


def _counts(antecedent: Antecedent, consequent: Behaviour, inputs, labels):
    p = n = 0
    for inp, label in zip(inputs, labels):
        if inp is not None and eval_antecedent(antecedent, inp):
            if label == consequent:
                p += 1
            else:
                n += 1
    return p, n


def score_constraint(c, r: Rule, dataset, layer: str, cfg: EngineConfig,
                     heuristic: Heuristic = Heuristic.LAPLACE) -> float:
    """Score of appending ``c`` to ``r``, counted by direct evaluation."""
    _check_layer(layer)
    inputs = layer_inputs(layer, cfg, dataset)
    labels = [ls.label(layer) for ls in dataset]
    p0, n0 = _counts(r.antecedent, r.consequent, inputs, labels)
    p, n = _counts(r.antecedent.conjoin(c), r.consequent, inputs, labels)
    return heuristic_value(heuristic, p, n, p0, n0)


@dataclass(frozen=True)
class CandidatePool:
    constraints: tuple
    source_properties: tuple = ()


@dataclass
class LearnerState:
    layer: str
    rules: list[Rule]
    bad_rules: dict = field(default_factory=dict)
    rng_seed: object = 0
    heuristic: Heuristic = Heuristic.LAPLACE
    iterations: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = random.Random(f"{self.rng_seed}/{self.layer}")

    def theory(self, base: Theory) -> Theory:
        return base.with_rules(self.rules)


@dataclass(frozen=True)
class IterationRecord:
    """What one outer-loop iteration did, for observers."""

    iteration: int
    misclassified: int
    scene: int
    action: str  # "general", "refined" or "bad"
    parent: Rule | None = None
    child: Rule | None = None
    bad_count: int = 0


class _LayerIndex:
    """Bitsets over the training scenes for constraints and antecedents."""

    def __init__(self, inputs: list[Scene], labels: list[Behaviour]):
        self.inputs = inputs
        self.labels = labels
        self.n = len(inputs)
        self.full = (1 << self.n) - 1
        self._cmask: dict = {}
        self._amask: dict = {}
        self._columns: dict = {}
        self._label_mask: dict = {}
        for i, b in enumerate(labels):
            self._label_mask[b] = self._label_mask.get(b, 0) | (1 << i)

    def label_mask(self, b: Behaviour) -> int:
        return self._label_mask.get(b, 0)

    def _column(self, feature):
        col = self._columns.get(feature)
        if col is None:
            eq: dict = {}
            for i, scene in enumerate(self.inputs):
                v = scene.assignment[feature]
                eq[v] = eq.get(v, 0) | (1 << i)
            nums = sorted((v.data, m) for v, m in eq.items() if v.kind is ValueKind.NUMBER)
            keys = [x for x, _ in nums]
            le, acc = [], 0
            for _, m in nums:
                acc |= m
                le.append(acc)
            ge, acc = [0] * len(nums), 0
            for j in range(len(nums) - 1, -1, -1):
                acc |= nums[j][1]
                ge[j] = acc
            col = (eq, keys, le, ge)
            self._columns[feature] = col
        return col

    def cmask(self, c) -> int:
        m = self._cmask.get(c)
        if m is not None:
            return m
        if isinstance(c, TrueConstraint):
            m = self.full
        elif isinstance(c, FeatureValue):
            eq, keys, le, ge = self._column(c.lhs)
            if c.op is Op.EQ:
                m = eq.get(c.rhs, 0)
            elif c.rhs.kind is not ValueKind.NUMBER:
                m = 0
            elif c.op is Op.LE:
                j = bisect_right(keys, c.rhs.data) - 1
                m = le[j] if j >= 0 else 0
            else:
                j = bisect_left(keys, c.rhs.data)
                m = ge[j] if j < len(keys) else 0
        else:
            m = 0
            for i, scene in enumerate(self.inputs):
                if eval_constraint(c, scene):
                    m |= 1 << i
        self._cmask[c] = m
        return m

    def amask(self, antecedent: Antecedent) -> int:
        m = self._amask.get(antecedent.key)
        if m is None:
            m = self.full
            for c in antecedent:
                m &= self.cmask(c)
            self._amask[antecedent.key] = m
        return m

    def counts(self, mask: int, consequent: Behaviour) -> tuple[int, int]:
        p = (mask & self.label_mask(consequent)).bit_count()
        return p, mask.bit_count() - p


def _bits(m: int):
    while m:
        low = m & -m
        yield low.bit_length() - 1
        m ^= low


def _pick(scored: dict, e: int, index: _LayerIndex, rng: random.Random,
          seed: int | None = None):
    """Best-scoring candidate within the first non-empty preference tier.

    Tiers: holds on the rule's seed scene and excludes scene ``e``; excludes
    ``e``; anything. Ties are broken with ``rng`` in generation order.
    """
    bit = 1 << e
    excluding = [(c, s) for c, s in scored.items() if not index.cmask(c) & bit]
    pool = excluding
    if seed is not None:
        sbit = 1 << seed
        pool = [(c, s) for c, s in excluding if index.cmask(c) & sbit] or excluding
    if not pool:
        pool = list(scored.items())
    best = max(s for _, s in pool)
    ties = [c for c, s in pool if s == best]
    return ties[0] if len(ties) == 1 else rng.choice(ties)


def get_constraint(pool: CandidatePool, r: Rule, e: int, dataset, layer: str,
                   cfg: EngineConfig, state: LearnerState, seed: int | None = None):
    """Choose the constraint to append to ``r`` for misclassified scene index ``e``.

    ``seed`` is the index of the scene ``r`` was created for, if any.
    """
    _check_layer(layer)
    candidates = [c for c in pool.constraints if c not in r.antecedent]
    if not candidates:
        raise ValueError("empty candidate pool")
    inputs = layer_inputs(layer, cfg, dataset)
    if any(inp is None for inp in inputs):
        raise UntransformableScene("some training scenes have no parameter-layer input")
    index = _LayerIndex(inputs, [ls.label(layer) for ls in dataset])
    base = index.amask(r.antecedent)
    p0, n0 = index.counts(base, r.consequent)
    scored = {}
    for c in candidates:
        p, n = index.counts(base & index.cmask(c), r.consequent)
        scored[c] = heuristic_value(state.heuristic, p, n, p0, n0)
    return _pick(scored, e, index, state.rng, seed)


@dataclass
class _Snapshot:
    contributors: list
    correct: list


class RuleLearner:
    """Rule update for one layer.

    ``observer(state, record)`` is called after every outer-loop iteration.
    """

    def __init__(self, dataset, base: Theory, layer: str, cfg: EngineConfig, seed=0,
                 heuristic: Heuristic = Heuristic.LAPLACE, *,
                 max_iterations: int = DEFAULT_MAX_ITERATIONS, workers: int = 1,
                 feature_feature: bool = False,
                 observer: Callable[[LearnerState, IterationRecord], None] | None = None):
        _check_layer(layer)
        self.dataset = list(dataset)
        self.base = base
        self.layer = layer
        self.cfg = cfg
        self.order = cfg.order
        self.max_iterations = max_iterations
        self.workers = max(1, int(workers))
        self.feature_feature = feature_feature
        self.observer = observer
        self.state = LearnerState(layer, list(base.rules), rng_seed=seed,
                                  heuristic=Heuristic(heuristic))
        self._ids = {r.id for r in base.rules}
        self._next_id = 0
        self._resolution_cache: dict = {}
        # rule key -> index of the scene whose general rule it descends from
        self._seeds: dict = {}

    # -- helpers ---------------------------------------------------------------

    def _new_id(self) -> str:
        prefix = "m" if self.layer == MANEUVER else "p"
        while True:
            self._next_id += 1
            rid = f"{prefix}{self._next_id}"
            if rid not in self._ids:
                self._ids.add(rid)
                return rid

    def _check_labels(self):
        out_schema = self.base.output_schema
        for i, ls in enumerate(self.dataset):
            for p in ls.label(self.layer).params:
                try:
                    out_schema.check_property(p.feature, p.value)
                except RuleEngineError as exc:
                    raise SchemaError(f"label of training scene {i}: {exc}") from None

    def _inputs(self) -> list[Scene]:
        if self.layer == PARAMETER and self.cfg.parameter_schema != self.base.schema:
            raise SchemaError("base parameter theory schema differs from the engine's")
        inputs = []
        for i, ls in enumerate(self.dataset):
            try:
                inputs.append(layer_input(self.layer, self.cfg, ls.scene))
            except RuleEngineError as exc:
                raise UntransformableScene(
                    f"training scene {i} has no parameter-layer input: {exc}"
                ) from None
        features = self.base.schema.features
        for i, inp in enumerate(inputs):
            if inp.schema is not self.base.schema and any(f not in inp.assignment
                                                          for f in features):
                raise SchemaError(f"training scene {i} does not match the {self.layer} schema")
        return inputs

    def _resolve(self, fired: frozenset):
        hit = self._resolution_cache.get(fired)
        if hit is None:
            contrib = contributors(self.layer, fired, self.order)
            if self.layer == MANEUVER:
                resolved = contrib
            else:
                try:
                    resolved = resolve_par(fired)
                except RuleEngineError:
                    resolved = None
            hit = (contrib, resolved)
            self._resolution_cache[fired] = hit
        return hit

    def _snapshot(self) -> _Snapshot:
        index = self.index
        by_consequent: dict = {}
        for r in self.state.rules:
            b = r.consequent
            by_consequent[b] = by_consequent.get(b, 0) | index.amask(r.antecedent)
        fired = [[] for _ in range(index.n)]
        for b, m in by_consequent.items():
            for i in _bits(m):
                fired[i].append(b)
        contrib, correct = [], []
        for i, bs in enumerate(fired):
            c, resolved = self._resolve(frozenset(bs))
            label = index.labels[i]
            contrib.append(c)
            if self.layer == MANEUVER:
                correct.append(label in resolved)
            else:
                correct.append(resolved == label)
        return _Snapshot(contrib, correct)

    def _score_all(self, candidates, r: Rule) -> dict:
        index = self.index
        base = index.amask(r.antecedent)
        p0, n0 = index.counts(base, r.consequent)
        h = self.state.heuristic

        def score(chunk):
            return [
                heuristic_value(h, *index.counts(base & index.cmask(c), r.consequent), p0, n0)
                for c in chunk
            ]

        if self.workers > 1 and len(candidates) >= 2 * self.workers:
            # warm the shared caches first so threads only read them
            for c in candidates:
                index.cmask(c)
            size = -(-len(candidates) // self.workers)
            chunks = [candidates[i:i + size] for i in range(0, len(candidates), size)]
            with ThreadPoolExecutor(self.workers) as pool:
                scores = [s for part in pool.map(score, chunks) for s in part]
        else:
            scores = score(candidates)
        return dict(zip(candidates, scores))

    # -- the algorithm ---------------------------------------------------------------

    def run(self) -> Theory:
        self._check_labels()
        inputs = self._inputs()
        self.index = _LayerIndex(inputs, [ls.label(self.layer) for ls in self.dataset])
        state = self.state
        index = self.index
        while True:
            snap = self._snapshot()
            eps = [i for i, ok in enumerate(snap.correct) if not ok]
            if not eps:
                break
            if state.iterations >= self.max_iterations:
                raise IterationBudgetExceeded(
                    f"{self.layer} layer still misclassifies {len(eps)} scenes after "
                    f"{state.iterations} iterations; the labels may be inconsistent"
                )
            state.iterations += 1
            e = state.rng.choice(eps)
            label = index.labels[e]
            bit = 1 << e
            firing = [r for r in state.rules if index.amask(r.antecedent) & bit]
            if not any(r.consequent == label for r in firing):
                rule = Rule(self._new_id(), MOST_GENERAL, label)
                state.rules.append(rule)
                self._seeds[rule.key] = e
                self._notify(len(eps), e, "general", None, rule)
                continue
            contrib = snap.contributors[e]
            culprits = [r for r in firing if r.consequent in contrib and r.consequent != label]
            r = state.rng.choice(culprits)
            child = self._refine(r, e, snap)
            if index.amask(child.antecedent):
                state.rules.append(child)
                if r.key in self._seeds:
                    self._seeds[child.key] = self._seeds[r.key]
                self._notify(len(eps), e, "refined", r, child)
            else:
                state.bad_rules[child.key] = child
                self._notify(len(eps), e, "bad", r, child)
        return state.theory(self.base)

    def _refine(self, r: Rule, e: int, snap: _Snapshot) -> Rule:
        index, state = self.index, self.state
        covered = [i for i in _bits(index.amask(r.antecedent)) if r.consequent in
                   snap.contributors[i]]
        seed = self._seeds.get(r.key)
        if seed is not None and seed not in covered and index.amask(r.antecedent) >> seed & 1:
            # a shadowed seed still fires r; keep its properties available
            covered.append(seed)
        props: dict = {}
        for i in covered:
            for f, v in index.inputs[i].items():
                props[Property(f, v)] = None
        candidates = [
            c for c in generate_constraints(props, feature_feature=self.feature_feature)
            if c not in r.antecedent
        ]
        state.rules.remove(r)
        taken = {x.key for x in state.rules}
        remaining = self._score_all(candidates, r)
        while True:
            if not remaining:
                raise BadBaseRules(r, self.layer)
            c = _pick(remaining, e, index, state.rng, seed)
            del remaining[c]
            antecedent = r.antecedent.conjoin(c)
            key = (antecedent.key, r.consequent)
            if key not in taken and key not in state.bad_rules:
                return Rule(self._new_id(), antecedent, r.consequent)

    def _notify(self, n_eps, e, action, parent, child):
        if self.observer is not None:
            record = IterationRecord(self.state.iterations, n_eps, e, action, parent, child,
                                     len(self.state.bad_rules))
            self.observer(self.state, record)


def rule_update(dataset, base: Theory, layer: str, cfg: EngineConfig, seed=0,
                heuristic: Heuristic = Heuristic.LAPLACE, **options) -> Theory:
    """Refine ``base`` until no training scene is misclassified on ``layer``.

    For the parameter layer, ``cfg.maneuver_theory`` produces the layer inputs.
    Raises :class:`BadBaseRules` or :class:`IterationBudgetExceeded`.
    """
    return RuleLearner(dataset, base, layer, cfg, seed, heuristic, **options).run()


@dataclass(frozen=True)
class LearnResult:
    maneuver: Theory
    parameter: Theory
    iterations: dict
    bad_rules: dict

    @property
    def theories(self) -> tuple[Theory, Theory]:
        return self.maneuver, self.parameter


def learn_engine(dataset, base_man: Theory, base_par: Theory,
                 order: ConservativenessOrder = DEFAULT_ORDER, seed=0,
                 heuristic: Heuristic = Heuristic.LAPLACE, **options) -> LearnResult:
    """Maneuver layer first, then the parameter layer on top of the new maneuver theory."""
    dataset = list(dataset)
    man_learner = RuleLearner(dataset, base_man, MANEUVER,
                              EngineConfig(base_man, base_par, order), seed, heuristic,
                              **options)
    man = man_learner.run()
    par_learner = RuleLearner(dataset, base_par, PARAMETER,
                              EngineConfig(man, base_par, order), seed, heuristic, **options)
    par = par_learner.run()
    log.info("learned %d maneuver and %d parameter rules", len(man), len(par))
    return LearnResult(
        man, par,
        {MANEUVER: man_learner.state.iterations, PARAMETER: par_learner.state.iterations},
        {MANEUVER: len(man_learner.state.bad_rules), PARAMETER: len(par_learner.state.bad_rules)},
    )


def rule_engine_update(dataset, base_man: Theory, base_par: Theory,
                       order: ConservativenessOrder = DEFAULT_ORDER, seed=0,
                       heuristic: Heuristic = Heuristic.LAPLACE, **options):
    """Returns the updated ``(maneuver_theory, parameter_theory)``."""
    return learn_engine(dataset, base_man, base_par, order, seed, heuristic, **options).theories
