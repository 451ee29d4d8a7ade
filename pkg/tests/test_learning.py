import random

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

import oracles
from rulebp.dsl import serialize_rule_document
from rulebp.evaluator import EngineConfig, infer
from rulebp.fixtures import (
    B1,
    B3,
    B6,
    MANEUVER_RULES,
    MANEUVER_SCHEMA,
    MANEUVER_THEORY,
    PARAMETER_RULES,
    PARAMETER_THEORY,
    SCENE_S,
    worked_example_config,
)
from rulebp.learning import (
    MANEUVER,
    PARAMETER,
    BadBaseRules,
    CandidatePool,
    Heuristic,
    IterationBudgetExceeded,
    LabelledScene,
    LearnerState,
    RuleLearner,
    UntransformableScene,
    coverage,
    generate_constraints,
    get_constraint,
    heuristic_value,
    learn_engine,
    misclassified,
    rule_engine_update,
    rule_update,
    score_constraint,
)
from rulebp.model import (
    MOST_GENERAL,
    TRUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    Feature,
    FeatureFeature,
    FeatureValue,
    LayerSchema,
    Op,
    Property,
    Rule,
    Scene,
    Theory,
    Value,
)
from rulebp.synthetic import generate_problem

from strategies import MAN_SCHEMA, PAR_SCHEMA, man_behaviours, maneuver_theories, scenes

F = Feature.parse
N = Value.number
S_DATA = [LabelledScene(SCENE_S, B3, B6)]
EMPTY_MAN = MANEUVER_THEORY.with_rules([])
EMPTY_PAR = PARAMETER_THEORY.with_rules([])


def fv(name, op, value):
    return FeatureValue(F(name), op, Value.of(value))


class TestCoverage:
    def test_track_speed_default_is_shadowed(self):
        cfg = worked_example_config()
        r = MANEUVER_RULES[0]
        assert r.antecedent == Antecedent([TRUE]) and r.consequent == B1
        assert coverage(r, MANEUVER_THEORY, MANEUVER, cfg, S_DATA) == frozenset()

    def test_stop_line_rule_covers_s(self):
        cfg = worked_example_config()
        assert coverage(MANEUVER_RULES[3], MANEUVER_THEORY, MANEUVER, cfg, S_DATA) == {0}

    def test_parameter_rule(self):
        cfg = worked_example_config()
        (b6_rule,) = [r for r in PARAMETER_RULES if r.consequent == B6]
        assert coverage(b6_rule, PARAMETER_THEORY, PARAMETER, cfg, S_DATA) == {0}

    def test_empty_dataset(self):
        cfg = worked_example_config()
        for r in MANEUVER_RULES:
            assert coverage(r, MANEUVER_THEORY, MANEUVER, cfg, []) == frozenset()

    def test_unknown_layer(self):
        with pytest.raises(ValueError):
            coverage(MANEUVER_RULES[0], MANEUVER_THEORY, "middle", worked_example_config(), [])


class TestGenerateConstraints:
    def test_number(self):
        got = generate_constraints([Property(F("Ego.Speed"), N(35))])
        assert set(got) == {fv("Ego.Speed", op, 35) for op in Op}

    def test_undefined(self):
        got = generate_constraints([Property(F("Ego.At"), UNDEFINED)])
        assert got == (fv("Ego.At", Op.EQ, None),)

    def test_empty(self):
        assert generate_constraints([]) == ()

    def test_restricted_ops(self):
        got = generate_constraints([Property(F("Ego.Speed"), N(35))], (Op.EQ,))
        assert got == (fv("Ego.Speed", Op.EQ, 35),)

    def test_feature_feature(self):
        props = [Property(F("Ego.Speed"), N(35)), Property(F("Road.SpeedLimit"), N(50)),
                 Property(F("Ego.At"), UNDEFINED)]
        got = generate_constraints(props, feature_feature=True)
        ff = {c for c in got if isinstance(c, FeatureFeature)}
        assert ff == {FeatureFeature(F("Ego.Speed"), Op.LE, F("Road.SpeedLimit"))}

    @given(st.lists(st.tuples(st.sampled_from(MAN_SCHEMA.features), st.data()), max_size=6),
           st.booleans())
    def test_every_constraint_holds_on_its_source(self, pairs, ff):
        props = [Property(f, d.draw(scenes()).assignment[f]) for f, d in pairs]
        scene_data = {}
        for p in props:
            scene_data.setdefault(p.feature, p.value)
        for c in generate_constraints(props, feature_feature=ff):
            if isinstance(c, FeatureValue):
                assert Property(c.lhs, c.rhs) in props
                if c.op is not Op.EQ:
                    assert c.rhs.kind.value == "number"
            elif isinstance(c, FeatureFeature):
                assert c.lhs in scene_data and c.rhs in scene_data


def speed_dataset():
    """Five scenes over one number feature; labels Stop except speed 7."""
    schema = LayerSchema.build("maneuver", {"Ego.Speed": "number"})
    stop, yield_ = Behaviour.of("Stop"), Behaviour.of("Yield")
    rows = [(0, stop), (5, stop), (10, stop), (7, yield_), (20, stop)]
    data = [LabelledScene(Scene(schema, {"Ego.Speed": v}), b, b) for v, b in rows]
    par = LayerSchema.build("parameter", {"Maneuver.Stop": "boolean", "Maneuver.Yield": "boolean"})
    out = LayerSchema.build("output", {"Plan.Mode": "symbol"})
    man = Theory("maneuver", schema, par, ())
    cfg = EngineConfig(man, Theory("parameter", par, out, ()))
    return data, man, cfg, stop


class TestScoreConstraint:
    def brute(self, c, r, data):
        """Count p and n by direct oracle evaluation."""
        ante = [oracles.plain_constraint(x) for x in r.antecedent] + [oracles.plain_constraint(c)]
        p = n = 0
        for ls in data:
            if oracles.fires(ante, oracles.plain_scene(ls.scene)):
                if ls.maneuver_label == r.consequent:
                    p += 1
                else:
                    n += 1
        return p, n

    def test_laplace_three_and_one(self):
        data, man, cfg, stop = speed_dataset()
        r = Rule("m1", MOST_GENERAL, stop)
        c = fv("Ego.Speed", Op.LE, 10)
        assert self.brute(c, r, data) == (3, 1)
        assert score_constraint(c, r, data, MANEUVER, cfg) == pytest.approx(4 / 6, abs=1e-4)
        assert score_constraint(c, r, data, MANEUVER, cfg, Heuristic.PRECISION) == 0.75
        # reference p0 = 4, n0 = 1
        assert score_constraint(c, r, data, MANEUVER, cfg,
                                Heuristic.COVERAGE_DIFFERENCE) == -1
        assert score_constraint(c, r, data, MANEUVER, cfg,
                                Heuristic.RATE_DIFFERENCE) == pytest.approx(-0.25)

    def test_fires_nowhere(self):
        data, man, cfg, stop = speed_dataset()
        r = Rule("m1", MOST_GENERAL, stop)
        c = fv("Ego.Speed", Op.GE, 100)
        assert score_constraint(c, r, data, MANEUVER, cfg) == 0.5
        assert score_constraint(c, r, data, MANEUVER, cfg, Heuristic.PRECISION) == 0

    def test_all_matching(self):
        data, man, cfg, stop = speed_dataset()
        r = Rule("m1", MOST_GENERAL, stop)
        c = fv("Ego.Speed", Op.LE, 5)
        assert score_constraint(c, r, data, MANEUVER, cfg, Heuristic.PRECISION) == 1

    @pytest.mark.parametrize("h,p,n,p0,n0,want", [
        ("laplace", 0, 0, 0, 0, 0.5),
        ("precision", 0, 0, 3, 3, 0.0),
        ("coverage_difference", 2, 1, 4, 3, 0.0),
        ("rate_difference", 2, 0, 4, 0, 0.5),
    ])
    def test_formulas(self, h, p, n, p0, n0, want):
        assert heuristic_value(Heuristic(h), p, n, p0, n0) == pytest.approx(want)

    @settings(max_examples=50)
    @given(st.integers(0, 25), st.sampled_from(list(Heuristic)))
    def test_matches_brute_force(self, limit, h):
        data, man, cfg, stop = speed_dataset()
        r = Rule("m1", MOST_GENERAL, stop)
        c = fv("Ego.Speed", Op.LE, limit)
        p, n = self.brute(c, r, data)
        p0, n0 = self.brute(TRUE, r, data)
        assert score_constraint(c, r, data, MANEUVER, cfg, h) == pytest.approx(
            heuristic_value(h, p, n, p0, n0))


class TestGetConstraint:
    def setup_method(self):
        self.data, self.man, self.cfg, self.stop = speed_dataset()
        self.r = Rule("m1", MOST_GENERAL, self.stop)

    def pick(self, constraints, seed=0):
        state = LearnerState(MANEUVER, [self.r], rng_seed=seed)
        return get_constraint(CandidatePool(tuple(constraints)), self.r, 3, self.data,
                              MANEUVER, self.cfg, state)

    def test_singleton(self):
        c = fv("Ego.Speed", Op.LE, 5)
        assert self.pick([c]) == c

    def test_argmax(self):
        good = fv("Ego.Speed", Op.LE, 5)  # laplace 3/4
        worse = fv("Ego.Speed", Op.EQ, 20)  # laplace 2/3
        assert self.pick([worse, good]) == good
        assert self.pick([good, worse]) == good

    def test_ties_depend_only_on_seed(self):
        ties = [fv("Ego.Speed", Op.EQ, v) for v in (0, 5, 10, 20)]
        for seed in range(5):
            assert self.pick(ties, seed) == self.pick(ties, seed)
        assert len({self.pick(ties, seed) for seed in range(20)}) > 1

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            self.pick([])


class TestMisclassified:
    def test_empty_theory(self):
        cfg = worked_example_config()
        data = [LabelledScene(SCENE_S, B3, B6), LabelledScene(
            Scene(MANEUVER_SCHEMA, {f: None for f in MANEUVER_SCHEMA.features}), B1,
            Behaviour.of("Track-Speed"))]
        assert misclassified(EMPTY_MAN, MANEUVER, cfg, data) == {0, 1}

    def test_worked_example(self):
        cfg = worked_example_config()
        assert misclassified(MANEUVER_THEORY, MANEUVER, cfg, S_DATA) == frozenset()
        assert misclassified(PARAMETER_THEORY, PARAMETER, cfg, S_DATA) == frozenset()

    def test_wrong_rule_everywhere(self):
        data, man, cfg, stop = speed_dataset()
        wrong = man.with_rules([Rule("m1", MOST_GENERAL, Behaviour.of("Yield"))])
        # Yield is labelled on scene 3 only
        assert misclassified(wrong, MANEUVER, cfg, data) == {0, 1, 2, 4}
        cfg2 = worked_example_config()
        wrong2 = MANEUVER_THEORY.with_rules([Rule("m1", MOST_GENERAL, B1)])
        assert misclassified(wrong2, MANEUVER, cfg2, S_DATA) == {0}


@st.composite
def labelled_datasets(draw, max_size=6):
    rows = draw(st.lists(scenes(MAN_SCHEMA), min_size=1, max_size=max_size,
                         unique=True))
    out = []
    for scene in rows:
        man = draw(man_behaviours())
        out.append(LabelledScene(scene, man, Behaviour(man.maneuver, frozenset())))
    return out


def random_config(man, par_rules):
    par = Theory("parameter", PAR_SCHEMA, LayerSchema.build("output", {"Ego.Speed": "any"}),
                 par_rules)
    return EngineConfig(man, par)


class TestAgainstOracle:
    @settings(max_examples=150)
    @given(maneuver_theories(), labelled_datasets())
    def test_maneuver_layer(self, theory, data):
        cfg = random_config(theory, ())
        records = oracles.plain_records(data)
        rules = oracles.plain_rules(theory)
        pf = [str(f) for f in PAR_SCHEMA.features]
        assert set(misclassified(theory, MANEUVER, cfg, data)) == oracles.misclassified(
            "maneuver", rules, rules, pf, records)
        for r, pr in zip(theory.rules, rules):
            assert set(coverage(r, theory, MANEUVER, cfg, data)) == oracles.coverage(
                "maneuver", pr, rules, rules, pf, records)

    @settings(max_examples=150)
    @given(maneuver_theories(), labelled_datasets(), st.data())
    def test_parameter_layer(self, man, data, draw):
        maneuvers = sorted({ls.final_label.maneuver for ls in data}, key=lambda m: m.value)
        antecedents = [Antecedent([FeatureValue(m.feature, Op.EQ, Value.boolean(True))])
                       for m in maneuvers]
        par_rules = [Rule(f"p{i}", a, Behaviour(m, frozenset()))
                     for i, (a, m) in enumerate(zip(antecedents, maneuvers))]
        if draw.draw(st.booleans()):
            par_rules.append(Rule("px", MOST_GENERAL, Behaviour.of("Stop")))
        cfg = random_config(man, par_rules)
        par = cfg.parameter_theory
        records = oracles.plain_records(data)
        mrules, prules = oracles.plain_rules(man), oracles.plain_rules(par)
        pf = [str(f) for f in PAR_SCHEMA.features]
        assert set(misclassified(par, PARAMETER, cfg, data)) == oracles.misclassified(
            "parameter", prules, mrules, pf, records)
        for r, pr in zip(par.rules, prules):
            assert set(coverage(r, par, PARAMETER, cfg, data)) == oracles.coverage(
                "parameter", pr, prules, mrules, pf, records)


class TestRuleUpdate:
    def test_empty_base_single_scene(self):
        cfg = worked_example_config()
        learner = RuleLearner(S_DATA, EMPTY_MAN, MANEUVER, cfg)
        theory = learner.run()
        assert [(r.antecedent, r.consequent) for r in theory.rules] == [(MOST_GENERAL, B3)]
        assert learner.state.iterations == 1
        assert misclassified(theory, MANEUVER, cfg, S_DATA) == frozenset()

    def test_parameter_layer_from_empty(self):
        cfg = worked_example_config()
        theory = rule_update(S_DATA, EMPTY_PAR, PARAMETER, cfg)
        assert [r.consequent for r in theory.rules] == [B6]

    def test_correct_base_is_unchanged(self):
        cfg = worked_example_config()
        assert rule_update(S_DATA, MANEUVER_THEORY, MANEUVER, cfg) == MANEUVER_THEORY
        assert rule_engine_update(S_DATA, MANEUVER_THEORY, PARAMETER_THEORY) == (
            MANEUVER_THEORY, PARAMETER_THEORY)

    def test_exhausted_base_rule(self):
        props = [Property(f, v) for f, v in SCENE_S.items()]
        everything = Antecedent(generate_constraints(props))
        aberrant = Rule("m9", everything, B3)
        cfg = worked_example_config()
        data = [LabelledScene(SCENE_S, B1, Behaviour.of("Track-Speed"))]
        with pytest.raises(BadBaseRules) as info:
            rule_update(data, EMPTY_MAN.with_rules([aberrant]), MANEUVER, cfg)
        assert info.value.rule == aberrant
        assert info.value.layer == MANEUVER

    def test_iteration_budget(self):
        cfg = worked_example_config()
        data = [LabelledScene(SCENE_S, B3, B6), LabelledScene(SCENE_S, B1, Behaviour.of(
            "Track-Speed"))]
        with pytest.raises((IterationBudgetExceeded, BadBaseRules)):
            rule_update(data, EMPTY_MAN, MANEUVER, cfg, max_iterations=50)

    def test_untransformable_scene(self):
        cfg = EngineConfig(EMPTY_MAN, EMPTY_PAR)
        with pytest.raises(UntransformableScene):
            rule_update(S_DATA, EMPTY_PAR, PARAMETER, cfg)

    def test_empty_dataset_returns_base(self):
        cfg = worked_example_config()
        assert rule_update([], MANEUVER_THEORY, MANEUVER, cfg) == MANEUVER_THEORY


def small_problem(seed):
    return generate_problem(seed, 30 + seed % 40, 10 + seed % 6)


class TestLearnEngine:
    def test_deterministic(self):
        prob = generate_problem(11, 120, 14)
        bm, bp = prob.empty_bases()
        a = learn_engine(prob.dataset, bm, bp, prob.order, seed=3)
        b = learn_engine(prob.dataset, bm, bp, prob.order, seed=3)
        c = learn_engine(prob.dataset, bm, bp, prob.order, seed=3, workers=4)
        text = serialize_rule_document(EngineConfig(a.maneuver, a.parameter))
        assert text == serialize_rule_document(EngineConfig(b.maneuver, b.parameter))
        assert text == serialize_rule_document(EngineConfig(c.maneuver, c.parameter))

    def test_inputs_are_not_mutated(self):
        prob = small_problem(5)
        bm, bp = prob.empty_bases()
        snapshot = list(prob.dataset)
        learn_engine(prob.dataset, bm, bp, prob.order, seed=1)
        assert prob.dataset == snapshot
        assert len(bm) == 0 and len(bp) == 0

    @settings(max_examples=15, deadline=None,
              suppress_health_check=[HealthCheck.too_slow])
    @given(st.integers(0, 10_000), st.sampled_from(list(Heuristic)))
    def test_converges_and_reproduces_labels(self, seed, h):
        prob = small_problem(seed)
        bm, bp = prob.empty_bases()
        res = learn_engine(prob.dataset, bm, bp, prob.order, seed, h)
        cfg = EngineConfig(res.maneuver, res.parameter, prob.order)
        mrules, prules = oracles.plain_rules(res.maneuver), oracles.plain_rules(res.parameter)
        pf = [str(f) for f in prob.schemas.parameter.features]
        records = oracles.plain_records(prob.dataset)
        assert oracles.misclassified("maneuver", mrules, mrules, pf, records) == set()
        assert oracles.misclassified("parameter", prules, mrules, pf, records) == set()
        for ls in prob.dataset:
            assert infer(cfg, ls.scene)[0] == ls.final_label

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_loop_invariants(self, seed):
        prob = small_problem(seed)
        bm, bp = prob.empty_bases()
        cfg = EngineConfig(bm, bp, prob.order)
        seen = {"bad": 0}

        def observer(state, record):
            assert record.bad_count >= seen["bad"]
            seen["bad"] = record.bad_count
            keys = {r.key for r in state.rules}
            assert not keys & set(state.bad_rules)
            if record.action == "general":
                assert record.child.antecedent == MOST_GENERAL
            else:
                assert record.parent.antecedent.key < record.child.antecedent.key
                assert record.child.consequent == record.parent.consequent

        RuleLearner(prob.dataset, bm, MANEUVER, cfg, seed, observer=observer).run()


def test_budget_default_is_large():
    from rulebp.learning import DEFAULT_MAX_ITERATIONS
    assert DEFAULT_MAX_ITERATIONS == 10**6


def test_random_is_seeded_per_layer():
    a = LearnerState(MANEUVER, [], rng_seed=4).rng.random()
    assert a == random.Random("4/maneuver").random()
